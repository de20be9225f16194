import numpy as np
import pytest

from equilab import hesslab
from equilab.errors import (DimensionError, EmptyResultError,
                            GradientCheckError)
from equilab.net import DenseSpec, Network
from equilab.net.data import teacher_student_regression


def quad_fns(a, b):
    def loss(t):
        return float(0.5 * t @ a @ t + b @ t)

    def grad(t):
        return a @ t + b

    return loss, grad


def spd(dim, kappa, seed):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    s = np.geomspace(kappa, 1.0, dim)
    return (q * s) @ q.T, rng.standard_normal(dim)


class TestSelfCheck:
    def test_exact_gradient_passes(self):
        a, b = spd(6, 100.0, 0)
        loss, grad = quad_fns(a, b)
        hesslab.gradient_self_check(loss, grad, np.ones(6))

    def test_wrong_gradient_raises(self):
        a, b = spd(6, 100.0, 1)
        loss, grad = quad_fns(a, b)
        with pytest.raises(GradientCheckError):
            hesslab.gradient_self_check(loss, lambda t: 1.5 * grad(t), np.ones(6))

    def test_shape_mismatch(self):
        loss, grad = quad_fns(*spd(4, 10.0, 2))
        with pytest.raises(DimensionError):
            hesslab.gradient_self_check(loss, lambda t: grad(t)[:2], np.ones(4))

    def test_step_sizes(self):
        t = np.array([0.0, 0.5, -3.0])
        np.testing.assert_allclose(
            hesslab.fd_step_sizes(t),
            hesslab.FD_STEP_SCALE * np.array([1.0, 1.0, 3.0]))


class TestFdHessian:
    def test_recovers_quadratic_exactly(self):
        a, b = spd(8, 1e3, 3)
        loss, grad = quad_fns(a, b)
        est = hesslab.fd_hessian(loss, grad, np.zeros(8))
        assert np.linalg.norm(est.h - a) <= 1e-8 * np.linalg.norm(a)
        assert est.relative_asymmetry < 1e-9
        assert est.grad_norm == pytest.approx(np.linalg.norm(b), rel=1e-12)

    def test_loss_only_cross_check(self):
        a, b = spd(5, 50.0, 4)
        loss, grad = quad_fns(a, b)
        rng = np.random.default_rng(5)
        theta = rng.standard_normal(5)
        h_grad = hesslab.fd_hessian(loss, grad, theta).h
        h_loss = hesslab.fd_hessian_loss_only(loss, theta)
        assert np.linalg.norm(h_loss - h_grad) <= 1e-5 * np.linalg.norm(h_grad)

    def test_validation(self):
        loss, grad = quad_fns(*spd(3, 10.0, 6))
        with pytest.raises(DimensionError):
            hesslab.fd_hessian(loss, grad, np.array([1.0, np.inf, 0.0]))
        with pytest.raises(DimensionError):
            hesslab.fd_hessian(loss, grad, np.zeros(hesslab.MAX_HESSIAN_DIM + 1))

    def test_bad_gradient_caught_by_default(self):
        a, b = spd(4, 10.0, 7)
        loss, grad = quad_fns(a, b)
        with pytest.raises(GradientCheckError):
            hesslab.fd_hessian(loss, lambda t: 2.0 * grad(t), np.ones(4))


class TestHessianKappa:
    def test_known_spd_spectrum(self):
        h = np.diag([100.0, 10.0, 1.0])
        ks = hesslab.hessian_kappa(h)
        assert ks.kappa == pytest.approx(100.0, rel=1e-12)
        assert ks.full_rank and ks.n_surviving == 3

    def test_rank_deficient_uses_surviving_spectrum(self):
        h = np.diag([100.0, 10.0, 1e-12])
        ks = hesslab.hessian_kappa(h, rank_tol=1e-8)
        assert not ks.full_rank
        assert ks.n_surviving == 2
        assert ks.kappa == pytest.approx(10.0, rel=1e-12)

    def test_zero_matrix(self):
        ks = hesslab.hessian_kappa(np.zeros((3, 3)))
        assert np.isnan(ks.kappa) and ks.n_surviving == 0

    def test_accepts_estimate_and_rejects_nonsquare(self):
        a, b = spd(4, 10.0, 8)
        est = hesslab.fd_hessian(*quad_fns(a, b), np.zeros(4))
        assert hesslab.hessian_kappa(est).kappa == pytest.approx(10.0, rel=1e-6)
        with pytest.raises(DimensionError):
            hesslab.hessian_kappa(np.zeros((2, 3)))


class TestNetLossFunctions:
    def test_matches_training_loss_and_leaves_net_alone(self):
        x, y, _ = teacher_student_regression(32, seed=0, widths=(2, 4, 1))
        net = Network([DenseSpec(2, 4, activation="tanh"), DenseSpec(4, 1)],
                      seed=1)
        theta0 = net.get_params_vector()
        loss_fn, grad_fn = hesslab.net_loss_functions(net, x, y)
        pred = net.forward(x)
        assert loss_fn(theta0) == pytest.approx(float(np.mean((pred - y) ** 2)),
                                                rel=1e-12)
        hesslab.gradient_self_check(loss_fn, grad_fn, theta0)
        loss_fn(theta0 * 2.0)  # moves only the private clone
        np.testing.assert_array_equal(net.get_params_vector(), theta0)


class TestCompare:
    def test_reparam_side_has_null_directions(self):
        # equilibrating the (4, 1) output weight pins each scalar row to
        # +-1, so those 4 coordinates are exact null directions of the
        # reparametrized loss at every theta
        x, y, _ = teacher_student_regression(48, seed=2, widths=(2, 4, 1))
        net = Network([DenseSpec(2, 4, activation="tanh"), DenseSpec(4, 1)],
                      seed=3)
        kp, ke = hesslab.compare_curvature_at(net, x, y,
                                              net.get_params_vector(),
                                              conditioned=[1])
        assert kp.n_surviving - ke.n_surviving >= 4
        assert not ke.full_rank
        assert np.isfinite(ke.kappa)

    def test_satisfied_allowance(self):
        base = dict(seed=0, phase="init", rank_ok_plain=True, rank_ok_eq=True,
                    n_surviving_plain=3, n_surviving_eq=3)
        ok = hesslab.KappaComparison(kappa_plain=10.0, kappa_eq=10.0, **base)
        bad = hesslab.KappaComparison(kappa_plain=10.0,
                                      kappa_eq=10.0 * (1 + 2e-6), **base)
        assert ok.satisfied and not bad.satisfied

    def test_csv_row_matches_header(self):
        c = hesslab.KappaComparison(seed=1, phase="snapshot", kappa_plain=2.0,
                                    kappa_eq=1.5, rank_ok_plain=True,
                                    rank_ok_eq=False, n_surviving_plain=5,
                                    n_surviving_eq=4)
        assert len(c.csv_row().split(",")) == len(hesslab.CSV_HEADER.split(","))

    def test_sweep_small_run(self):
        x, y, _ = teacher_student_regression(48, seed=0, widths=(2, 3, 1),
                                             kappa=100.0)
        comps, summary = hesslab.compare_curvature_sweep(
            [DenseSpec(2, 3, activation="tanh"), DenseSpec(3, 1)], x, y,
            n_points=4, seed=0, reference_epochs=4, conditioned=[0])
        assert summary.n_points == 4
        assert summary.n_comparable == len(comps)
        assert summary.n_comparable + summary.n_skipped == 4
        phases = {c.phase for c in comps}
        assert phases <= {"init", "snapshot"}
        assert 0.0 <= summary.fraction_satisfied <= 1.0

    def test_all_points_skipped_raises(self, monkeypatch):
        def boom(*a, **kw):
            raise GradientCheckError("forced")

        monkeypatch.setattr(hesslab, "compare_curvature_at", boom)
        x, y, _ = teacher_student_regression(32, seed=0, widths=(2, 3, 1))
        with pytest.raises(EmptyResultError):
            hesslab.compare_curvature_sweep(
                [DenseSpec(2, 3, activation="tanh"), DenseSpec(3, 1)], x, y,
                n_points=2, seed=0, reference_epochs=2)

    def test_parameter_cap(self):
        x = np.zeros((4, 60))
        y = np.zeros((4, 40))
        with pytest.raises(DimensionError):
            hesslab.compare_curvature_sweep([DenseSpec(60, 40)], x, y, n_points=1)
