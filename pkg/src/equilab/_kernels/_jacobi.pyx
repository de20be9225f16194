# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled one-sided Jacobi sweep kernel.

Mirrors jacobi_py.jacobi_sweeps exactly (same rotation decisions, same
traversal order); the only differences are rounding from the scalar
accumulation order.
"""

from libc.math cimport sqrt, fabs, copysign


def jacobi_sweeps(double[:, ::1] bt, double[:, ::1] vt,
                  double rel_tol, double abs_tol, int max_sweeps):
    """Orthogonalize the rows of bt in place; accumulate rotations in vt.

    Returns (sweeps_done, converged).  See jacobi_py.jacobi_sweeps for the
    contract; bt rows are the working columns of the matrix under
    factorization and vt starts as the identity.
    """
    cdef Py_ssize_t m = bt.shape[0]
    cdef Py_ssize_t n = bt.shape[1]
    cdef Py_ssize_t mv = vt.shape[1]
    cdef Py_ssize_t i, j, k
    cdef int sweep
    cdef double alpha, beta, gamma, ag, zeta, t, c, s, x, y
    cdef bint rotated

    for sweep in range(max_sweeps):
        rotated = False
        for i in range(m - 1):
            for j in range(i + 1, m):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(n):
                    x = bt[i, k]
                    y = bt[j, k]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                ag = fabs(gamma)
                if ag <= abs_tol and ag <= rel_tol * sqrt(alpha) * sqrt(beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                if fabs(zeta) > 1e150:
                    t = 1.0 / (2.0 * zeta)
                else:
                    t = copysign(1.0, zeta) / (fabs(zeta) + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for k in range(n):
                    x = bt[i, k]
                    y = bt[j, k]
                    bt[i, k] = c * x - s * y
                    bt[j, k] = s * x + c * y
                for k in range(mv):
                    x = vt[i, k]
                    y = vt[j, k]
                    vt[i, k] = c * x - s * y
                    vt[j, k] = s * x + c * y
                rotated = True
        if not rotated:
            return sweep + 1, True
    return max_sweeps, False
