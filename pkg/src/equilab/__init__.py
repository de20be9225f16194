"""equilab: a desk-scale laboratory for weight equilibration.

Submodules:
    densela   validated matrices, Jacobi SVD, condition numbers
    precond   diagonal preconditioners and equilibration transforms
    quadlab   gradient descent on quadratic objectives, mode analysis
    net       small dense/conv networks with conditioning and normalizers
    hesslab   finite-difference Hessians and curvature comparisons
    bench     config-driven experiment harness and CLI
"""

__version__ = "0.1.0"
