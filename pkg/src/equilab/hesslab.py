"""Finite-difference Hessians and curvature-conditioning comparisons.

The Hessian of a loss is estimated column by column from central
differences of the analytic gradient, symmetrized, and condition numbers
are taken over the numerically surviving spectrum (singular values above
rank_tol * sigma_max), since reparametrized losses have exact null
directions (one radial direction per equilibrated row) that would make
the strict condition number meaningless.

fd_hessian_loss_only is an independent second-difference estimator that
never touches the gradient code; it exists to cross-check fd_hessian.
"""

import logging
from dataclasses import dataclass

import numpy as np

from equilab import densela
from equilab.errors import DimensionError, EmptyResultError, GradientCheckError
from equilab.net.network import Network
from equilab.net.train import loss_and_gradients, train

log = logging.getLogger(__name__)

MAX_HESSIAN_DIM = 2000
_EPS = np.finfo(np.float64).eps
FD_STEP_SCALE = _EPS ** (1.0 / 3.0)  # ~6.06e-6, optimal for central differences

CSV_HEADER = "seed,phase,kappa_plain,kappa_eq,rank_ok_plain,rank_ok_eq"


def fd_step_sizes(theta):
    """Per-coordinate central-difference steps: cbrt(eps) * max(1, |theta_i|)."""
    return FD_STEP_SCALE * np.maximum(1.0, np.abs(theta))


def gradient_self_check(loss_fn, grad_fn, theta, tol=1e-5, n_dirs=5):
    """Verify grad_fn against directional central differences of loss_fn.

    Directions are fixed by an internal seed so the check is
    deterministic.  Raises GradientCheckError beyond tol (relative).
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = np.asarray(grad_fn(theta), dtype=np.float64)
    if g.shape != theta.shape:
        raise DimensionError(f"gradient shape {g.shape} != theta shape {theta.shape}")
    rng = np.random.default_rng(np.random.SeedSequence((0x5E1F, theta.size)))
    h = FD_STEP_SCALE * max(1.0, float(np.max(np.abs(theta))))
    gnorm = float(np.linalg.norm(g))
    for k in range(n_dirs):
        d = rng.standard_normal(theta.size)
        d /= np.linalg.norm(d)
        fd = (loss_fn(theta + h * d) - loss_fn(theta - h * d)) / (2.0 * h)
        an = float(g @ d)
        scale = max(abs(fd), abs(an), 1e-8 * max(gnorm, 1.0))
        if abs(fd - an) > tol * scale:
            raise GradientCheckError(
                f"direction {k}: analytic {an!r} vs central FD {fd!r} "
                f"(relative error {abs(fd - an) / scale:.3e} > {tol:g})")


@dataclass(frozen=True)
class HessianEstimate:
    """Symmetrized central-difference Hessian.

    asymmetry is ||H_raw - H_raw^T||_F measured before symmetrization,
    kept as a quality signal; grad_norm is ||grad(theta)||_2.
    """

    h: np.ndarray
    theta: np.ndarray
    step_sizes: np.ndarray
    grad_norm: float
    asymmetry: float

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def relative_asymmetry(self):
        hnorm = float(np.linalg.norm(self.h))
        return self.asymmetry / hnorm if hnorm > 0 else 0.0


def fd_hessian(loss_fn, grad_fn, theta, self_check=True, self_check_tol=1e-5):
    """Central-difference Hessian from the analytic gradient.

    H[:, i] = (grad(theta + h_i e_i) - grad(theta - h_i e_i)) / (2 h_i),
    then symmetrized as (H + H^T) / 2.  Dimension is capped at 2000.
    When self_check is set (the default) the gradient is first validated
    against finite differences of the loss at theta.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1).copy()
    n = theta.size
    if n < 1 or n > MAX_HESSIAN_DIM:
        raise DimensionError(f"theta size {n} outside [1, {MAX_HESSIAN_DIM}]")
    if not np.isfinite(theta).all():
        raise DimensionError("theta contains non-finite entries")
    if self_check:
        gradient_self_check(loss_fn, grad_fn, theta, tol=self_check_tol)
    steps = fd_step_sizes(theta)
    h_raw = np.empty((n, n))
    for i in range(n):
        e = theta[i]
        theta[i] = e + steps[i]
        gp = np.asarray(grad_fn(theta), dtype=np.float64)
        theta[i] = e - steps[i]
        gm = np.asarray(grad_fn(theta), dtype=np.float64)
        theta[i] = e
        h_raw[:, i] = (gp - gm) / (2.0 * steps[i])
    asym = float(np.linalg.norm(h_raw - h_raw.T))
    h = 0.5 * (h_raw + h_raw.T)
    gnorm = float(np.linalg.norm(np.asarray(grad_fn(theta), dtype=np.float64)))
    return HessianEstimate(h=h, theta=theta, step_sizes=steps,
                           grad_norm=gnorm, asymmetry=asym)


def fd_hessian_loss_only(loss_fn, theta):
    """Hessian from second differences of the loss alone (no gradient).

    H_ii = (f(+h_i) - 2 f(0) + f(-h_i)) / h_i^2 and
    H_ij = (f(+i+j) - f(+i-j) - f(-i+j) + f(-i-j)) / (4 h_i h_j),
    with h_i = sqrt-of-eps-scaled steps.  Noisier than fd_hessian; used as
    an independent cross-check.
    """
    theta = np.asarray(theta, dtype=np.float64).reshape(-1).copy()
    n = theta.size
    if n < 1 or n > MAX_HESSIAN_DIM:
        raise DimensionError(f"theta size {n} outside [1, {MAX_HESSIAN_DIM}]")
    steps = (_EPS ** 0.25) * np.maximum(1.0, np.abs(theta))
    f0 = loss_fn(theta)
    h = np.empty((n, n))

    def probe(i, si, j, sj):
        t = theta.copy()
        t[i] += si * steps[i]
        t[j] += sj * steps[j]
        return loss_fn(t)

    for i in range(n):
        h[i, i] = (probe(i, 1, i, 0) - 2.0 * f0 + probe(i, -1, i, 0)) / steps[i] ** 2
        for j in range(i + 1, n):
            val = (probe(i, 1, j, 1) - probe(i, 1, j, -1)
                   - probe(i, -1, j, 1) + probe(i, -1, j, -1)) / (4.0 * steps[i] * steps[j])
            h[i, j] = val
            h[j, i] = val
    return h


@dataclass(frozen=True)
class KappaSummary:
    """Condition number of a Hessian over its surviving spectrum.

    full_rank is the strict verdict at rank_tol; kappa is sigma_max over
    the smallest surviving singular value (equal to the strict condition
    number when full_rank).  n_surviving counts retained directions.
    """

    kappa: float
    full_rank: bool
    n_surviving: int
    sigma_max: float
    sigma_min_surviving: float
    rank_tol: float


def hessian_kappa(h, rank_tol=1e-8):
    """Spectrum-aware condition number for (estimated) Hessians.

    rank_tol defaults to 1e-8, well above the finite-difference noise
    floor.  Accepts a HessianEstimate or a raw square matrix.
    """
    if isinstance(h, HessianEstimate):
        h = h.h
    arr = densela._validated(h, "hessian")
    if arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"hessian must be square, got {arr.shape}")
    sig = densela.svd(arr).sigma
    s_max = float(sig[0])
    if s_max == 0.0:
        return KappaSummary(kappa=float("nan"), full_rank=False, n_surviving=0,
                            sigma_max=0.0, sigma_min_surviving=0.0, rank_tol=rank_tol)
    keep = sig > rank_tol * s_max
    n_keep = int(np.count_nonzero(keep))
    s_min = float(sig[keep][-1])
    return KappaSummary(kappa=s_max / s_min, full_rank=bool(keep.all()),
                        n_surviving=n_keep, sigma_max=s_max,
                        sigma_min_surviving=s_min, rank_tol=rank_tol)


def net_loss_functions(net, x, y, loss="mse"):
    """(loss_fn, grad_fn) over the flat parameter vector of a network.

    The closures own a private clone, so the caller's net is untouched.
    Evaluation uses eval mode (deterministic, running statistics for any
    batch norm).
    """
    worker = net.clone()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def loss_fn(theta):
        worker.set_params_vector(theta)
        val, _ = loss_and_gradients(worker, x, y, loss=loss, training=False)
        return val

    def grad_fn(theta):
        worker.set_params_vector(theta)
        _, grads = loss_and_gradients(worker, x, y, loss=loss, training=False)
        return worker.grads_to_vector(grads)

    return loss_fn, grad_fn


@dataclass(frozen=True)
class KappaComparison:
    """One theta: curvature conditioning of plain vs equilibrated loss."""

    seed: int
    phase: str  # "init" or "snapshot"
    kappa_plain: float
    kappa_eq: float
    rank_ok_plain: bool
    rank_ok_eq: bool
    n_surviving_plain: int
    n_surviving_eq: int

    @property
    def satisfied(self):
        """kappa ordering with a 1e-6 relative allowance."""
        return self.kappa_eq <= self.kappa_plain * (1.0 + 1e-6)

    def csv_row(self):
        return (f"{self.seed},{self.phase},{self.kappa_plain!r},{self.kappa_eq!r},"
                f"{self.rank_ok_plain},{self.rank_ok_eq}")


@dataclass(frozen=True)
class CurvatureSweepSummary:
    n_points: int
    n_comparable: int
    n_satisfied: int
    n_skipped: int
    rank_tol: float

    @property
    def fraction_satisfied(self):
        return self.n_satisfied / self.n_comparable if self.n_comparable else float("nan")


def compare_curvature_at(net, x, y, theta, loss="mse", rank_tol=1e-8,
                         conditioned="all"):
    """KappaSummary pair (plain, equilibrated) at one parameter vector."""
    plain_f, plain_g = net_loss_functions(net, x, y, loss=loss)
    eq_net = net.with_conditioning("equilibrate_reparam", which=conditioned)
    eq_f, eq_g = net_loss_functions(eq_net, x, y, loss=loss)
    hp = fd_hessian(plain_f, plain_g, theta)
    he = fd_hessian(eq_f, eq_g, theta)
    return hessian_kappa(hp, rank_tol=rank_tol), hessian_kappa(he, rank_tol=rank_tol)


def compare_curvature_sweep(specs, x, y, *, loss="mse", n_points=40, seed=0,
                     rank_tol=1e-8, conditioned="all",
                     snapshot_fracs=(0.25, 0.5, 0.75),
                     reference_epochs=40, reference_lr=0.05,
                     reference_batch=16, input_shape=None):
    """Sample parameter points and compare plain vs equilibrated curvature.

    Half the points are fresh seeded initializations; the other half are
    snapshots of reference SGD runs of the plain network, taken at the
    given epoch fractions.  Returns (comparisons, summary).  Points where
    either side has no surviving spectrum, or where the FD gradient
    self-check fails, are skipped and counted.
    """
    if n_points < 1:
        raise DimensionError("n_points must be >= 1")
    base = Network(specs, seed=seed, input_shape=input_shape)
    if base.parameter_count() > MAX_HESSIAN_DIM:
        raise DimensionError(
            f"{base.parameter_count()} parameters exceed the Hessian cap {MAX_HESSIAN_DIM}")
    n_init = (n_points + 1) // 2
    n_snap = n_points - n_init

    thetas = []
    for i in range(n_init):
        net_i = Network(specs, seed=int(np.random.SeedSequence((seed, 10, i)).generate_state(1)[0]),
                        input_shape=input_shape)
        thetas.append(("init", i, net_i.get_params_vector()))

    snaps_per_run = len(snapshot_fracs)
    run = -1
    collected = 0
    while collected < n_snap:
        run += 1
        run_seed = int(np.random.SeedSequence((seed, 20, run)).generate_state(1)[0])
        net_r = Network(specs, seed=run_seed, input_shape=input_shape)
        marks = sorted(set(max(1, int(round(f * reference_epochs)))
                           for f in snapshot_fracs))
        done = 0
        for m_i, mark in enumerate(marks):
            train(net_r, x, y, loss=loss, lr=reference_lr, epochs=mark - done,
                  batch_size=reference_batch, seed=run_seed + m_i,
                  record_kappa=False)
            thetas.append(("snapshot", run * snaps_per_run + m_i,
                           net_r.get_params_vector()))
            collected += 1
            done = mark
            if collected >= n_snap:
                break

    comparisons = []
    n_skipped = 0
    for phase, idx, theta in thetas:
        try:
            kp, ke = compare_curvature_at(base, x, y, theta, loss=loss,
                                          rank_tol=rank_tol, conditioned=conditioned)
        except GradientCheckError as exc:
            log.warning("skipping %s point %d: %s", phase, idx, exc)
            n_skipped += 1
            continue
        if kp.n_surviving == 0 or ke.n_surviving == 0:
            log.warning("skipping %s point %d: empty surviving spectrum", phase, idx)
            n_skipped += 1
            continue
        comparisons.append(KappaComparison(
            seed=idx, phase=phase,
            kappa_plain=kp.kappa, kappa_eq=ke.kappa,
            rank_ok_plain=kp.full_rank, rank_ok_eq=ke.full_rank,
            n_surviving_plain=kp.n_surviving, n_surviving_eq=ke.n_surviving))
    if not comparisons:
        raise EmptyResultError(
            "no comparable points: every sampled theta was rank deficient or "
            "failed the gradient self-check")
    n_sat = sum(1 for c in comparisons if c.satisfied)
    summary = CurvatureSweepSummary(n_points=len(thetas), n_comparable=len(comparisons),
                              n_satisfied=n_sat, n_skipped=n_skipped, rank_tol=rank_tol)
    return comparisons, summary
