"""Experiment drivers behind the CLI.

Every driver takes a resolved ExperimentConfig plus an output directory,
writes CSV/SVG artifacts through atomic renames, and returns a RunManifest.
Determinism contract: rerunning with the same (config, seed) reproduces all
CSV and SVG files byte for byte.  Wall-clock numbers therefore never enter
those files; they are reported in the manifest only.

Trials and arms each derive a private RNG stream from (seed, index), so the
results do not depend on execution order.
"""

import hashlib
import io
import re
import time

import numpy as np

import equilab
from equilab import densela, precond, quadlab
from equilab import hesslab
from equilab.bench.config import ExperimentConfig
from equilab.bench.manifest import RunManifest, atomic_write_text
from equilab.bench.svgplot import LineSeries, emit_svg
from equilab.errors import ConfigError, EquilabError, RankDeficientError
from equilab.net.data import teacher_student_regression, two_moons
from equilab.net.layers import DenseSpec
from equilab.net.network import Network
from equilab.net.train import train

# training-comparison arms: name -> (hidden normalization tag, conditioning)
# conditioning "bn_e" resolves through the bn_e_mode config switch
ARMS = {
    "none": ("none", "none"),
    "bn": ("batch_norm", "none"),
    "bn+ws": ("batch_norm+weight_standardization", "none"),
    "bn+w": ("batch_norm+weight_normalization", "none"),
    "bn+e": ("batch_norm", "bn_e"),
    "e-static": ("none", "equilibrate_static"),
    "e-reparam": ("none", "equilibrate_reparam"),
}


def list_arms():
    return tuple(ARMS)


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _arm_filename(arm):
    return re.sub(r"[+\-]", "_", arm)


def _write_trace_csv(trace, path):
    # traces stream to any writer; buffer so the on-disk write is atomic
    buf = io.StringIO()
    trace.to_csv(buf)
    atomic_write_text(path, buf.getvalue())


def _finish(manifest, out_dir, t0):
    manifest.wall_time_total = time.perf_counter() - t0
    manifest.finished = _now()
    manifest.add_file(f"{out_dir}/manifest.json")
    manifest.write(out_dir)
    return manifest


def _start_manifest(cfg: ExperimentConfig) -> RunManifest:
    return RunManifest(kind=cfg.kind, config_hash=cfg.config_hash, seed=cfg.seed,
                       version=equilab.__version__, started=_now())


def scale_first_layer_rows(net, seed, spread):
    """Imbalance the first layer in place: fan-in rows scaled by factors
    geomspace(spread, 1), shuffled by a stream derived from seed.

    This is the desk-scale lever for an ill-conditioned starting point:
    oversized rows raise kappa(W) at init, which equilibration removes by
    construction while the plain arm has to train its way out.  spread 1
    is a no-op.
    """
    if spread < 1.0:
        raise ConfigError(f"init_row_spread must be >= 1, got {spread!r}")
    if spread == 1.0:
        return net
    w = net.layers[0].w
    scales = np.geomspace(spread, 1.0, w.shape[0])
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    rng.shuffle(scales)
    w *= scales[:, None]
    return net


# ---------------------------------------------------------------------------
# train_compare


def _task_data(cfg):
    p = cfg.params
    if p["task"] == "teacher_regression":
        x, y, _ = teacher_student_regression(
            p["n_samples"], seed=cfg.seed, widths=tuple(p["widths"]),
            kappa=p["teacher_kappa"], noise=p["noise"], activation=p["activation"])
        return x, y, "mse", "identity"
    x, y = two_moons(p["n_samples"], noise=max(p["noise"], 1e-12), seed=cfg.seed)
    return x, y, "bce", "sigmoid_output"


def _shared_init_digest(net):
    # hash only w and b: normalization arms add their own gamma/beta/g
    # parameters, which are not part of the shared starting point
    h = hashlib.sha256()
    for layer in net.layers:
        h.update(np.ascontiguousarray(layer.w).tobytes())
        h.update(np.ascontiguousarray(layer.b).tobytes())
    return h.hexdigest()


def _arm_network(cfg, arm, out_activation):
    """Fresh network for one arm, sharing raw init weights across arms."""
    if arm not in ARMS:
        raise ConfigError(f"unknown arm {arm!r}; expected one of {list(ARMS)}")
    p = cfg.params
    widths = [int(w) for w in p["widths"]]
    norm, cond = ARMS[arm]
    if cond == "bn_e":
        if p["bn_e_mode"] not in ("reparam", "static"):
            raise ConfigError(f"bn_e_mode must be 'reparam' or 'static', got {p['bn_e_mode']!r}")
        cond = "equilibrate_" + p["bn_e_mode"]
    specs = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        specs.append(DenseSpec(widths[i], widths[i + 1],
                               activation=out_activation if last else p["activation"],
                               normalization="none" if last else norm))
    net = Network(specs, seed=100 + cfg.seed)
    scale_first_layer_rows(net, cfg.seed, p["init_row_spread"])
    shared = _shared_init_digest(net)
    if cond != "none":
        net = net.with_conditioning(cond, which="hidden")
    return net, shared


def _first_epoch_at(losses, threshold):
    hits = np.flatnonzero(np.asarray(losses) <= threshold)
    return int(hits[0]) if hits.size else None


def max_nondiverging_lr(cfg, arm, lr_grid):
    """Largest grid lr at which the arm's full run stays finite, or None."""
    x, y, loss, out_act = _task_data(cfg)
    p = cfg.params
    best = None
    for lr in lr_grid:
        net, _ = _arm_network(cfg, arm, out_act)
        trace = train(net, x, y, loss=loss, lr=float(lr), momentum=p["momentum"],
                      epochs=p["epochs"], batch_size=p["batch_size"], seed=cfg.seed,
                      record_kappa=False)
        if not trace.diverged and np.isfinite(trace.train_loss[-1]):
            best = float(lr)
    return best


def run_train_compare(cfg: ExperimentConfig, out_dir) -> RunManifest:
    manifest = _start_manifest(cfg)
    t0 = time.perf_counter()
    p = cfg.params
    x, y, loss, out_act = _task_data(cfg)
    eval_data = (x, y)

    traces = {}
    shared_digests = {}
    for arm in p["arms"]:
        net, shared = _arm_network(cfg, arm, out_act)
        shared_digests[arm] = shared
        traces[arm] = train(net, x, y, loss=loss, lr=p["lr"], momentum=p["momentum"],
                            epochs=p["epochs"], batch_size=p["batch_size"],
                            seed=cfg.seed, eval_data=eval_data)

    # cross-arm fairness: identical raw init and identical data order
    digests = set(shared_digests.values())
    data_digests = {t.data_digest for t in traces.values()}
    assert len(digests) <= 1, f"arms started from different weights: {shared_digests}"
    assert len(data_digests) <= 1, "arms saw different data"

    series = []
    rows = ["arm,diverged,epochs_run,final_train_loss,final_eval_loss,final_accuracy,"
            "epochs_to_plain_final,kappa_w1_first,kappa_w1_last"]
    plain_final = None
    if "none" in traces and not traces["none"].diverged:
        plain_final = float(traces["none"].train_loss[-1])
    for arm in p["arms"]:
        t = traces[arm]
        path = f"{out_dir}/train_{_arm_filename(arm)}.csv"
        _write_trace_csv(t, path)
        manifest.add_file(path)
        manifest.diverged[arm] = bool(t.diverged)
        manifest.wall_time_per_step[arm] = float(np.mean(t.wall_time_per_step))
        epochs = np.arange(len(t.train_loss), dtype=float)
        series.append(LineSeries(arm, tuple(epochs), tuple(float(v) for v in t.train_loss)))
        reach = _first_epoch_at(t.train_loss, plain_final) if plain_final is not None else None
        acc = "" if t.accuracy is None else repr(float(t.accuracy[-1]))
        rows.append(",".join([
            arm, str(t.diverged).lower(), str(len(t.train_loss)),
            repr(float(t.train_loss[-1])), repr(float(t.eval_loss[-1])), acc,
            "" if reach is None else str(reach),
            repr(float(t.kappa_weights[0, 0])), repr(float(t.kappa_weights[-1, 0])),
        ]))

    summary_path = f"{out_dir}/summary.csv"
    atomic_write_text(summary_path, "\r\n".join(rows) + "\r\n")
    manifest.add_file(summary_path)

    svg_path = f"{out_dir}/train_loss.svg"
    emit_svg(series, title=f"training loss ({p['task']})", xlabel="epoch",
             ylabel="train loss", log_y=(loss == "mse"), path=svg_path)
    manifest.add_file(svg_path)

    if p["lr_grid"]:
        grid = [float(v) for v in p["lr_grid"]]
        rows = ["arm,max_nondiverging_lr"]
        for arm in p["arms"]:
            best = max_nondiverging_lr(cfg, arm, grid)
            rows.append(f"{arm},{'' if best is None else repr(best)}")
        sweep_path = f"{out_dir}/lr_sweep.csv"
        atomic_write_text(sweep_path, "\r\n".join(rows) + "\r\n")
        manifest.add_file(sweep_path)

    return _finish(manifest, out_dir, t0)


# ---------------------------------------------------------------------------
# vds


def _imbalanced_matrix(rng, size):
    a = rng.standard_normal((size, size))
    a *= 10.0 ** rng.uniform(-3.0, 3.0, size=size)[:, None]
    return a


def run_vds(cfg: ExperimentConfig, out_dir) -> RunManifest:
    """Row equilibration against random competing diagonals, per trial."""
    manifest = _start_manifest(cfg)
    t0 = time.perf_counter()
    trials, size = cfg["trials"], cfg["size"]
    if trials < 1:
        raise ConfigError("vds needs trials >= 1")
    root = float(np.sqrt(size))
    rows = ["trial,kappa_a,kappa_ea,kappa_pa,ratio,unrelaxed_ok,relaxed_ok"]
    excluded = 0
    n_unrelaxed = n_relaxed = n_done = 0
    max_ratio = 0.0
    for t in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, t)))
        a = _imbalanced_matrix(rng, size)
        diag = 10.0 ** rng.uniform(-3.0, 3.0, size=size)
        try:
            kappa_a = densela.condition_number(a)
            kappa_ea, kappa_pa = precond.vds_trial(a, diag)
        except RankDeficientError:
            excluded += 1
            continue
        ratio = kappa_ea / kappa_pa
        unrelaxed = bool(kappa_ea <= kappa_pa * (1.0 + 1e-9))
        relaxed = bool(kappa_ea <= root * kappa_pa * (1.0 + 1e-9))
        n_done += 1
        n_unrelaxed += unrelaxed
        n_relaxed += relaxed
        max_ratio = max(max_ratio, ratio)
        rows.append(f"{t},{kappa_a!r},{kappa_ea!r},{kappa_pa!r},{ratio!r},"
                    f"{str(unrelaxed).lower()},{str(relaxed).lower()}")
    trials_path = f"{out_dir}/vds_trials.csv"
    atomic_write_text(trials_path, "\r\n".join(rows) + "\r\n")
    manifest.add_file(trials_path)
    summary = [
        "trials,excluded_rank_deficient,max_ratio,fraction_unrelaxed,fraction_relaxed",
        f"{trials},{excluded},{max_ratio!r},"
        f"{0.0 if n_done == 0 else n_unrelaxed / n_done!r},"
        f"{0.0 if n_done == 0 else n_relaxed / n_done!r}",
    ]
    summary_path = f"{out_dir}/summary.csv"
    atomic_write_text(summary_path, "\r\n".join(summary) + "\r\n")
    manifest.add_file(summary_path)
    manifest.notes["fraction_relaxed"] = 0.0 if n_done == 0 else n_relaxed / n_done
    return _finish(manifest, out_dir, t0)


# ---------------------------------------------------------------------------
# quad


def _spd_problem(seed, dim, kappa):
    # well-conditioned SPD core with imbalanced symmetric row/column scales,
    # so diagonal scaling has conditioning to win back
    rng = np.random.default_rng(np.random.SeedSequence((seed, 11)))
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    core = (q * rng.uniform(1.0, 2.0, size=dim)) @ q.T
    s = np.geomspace(np.sqrt(kappa), 1.0, dim)
    rng.shuffle(s)
    a = core * np.outer(s, s)
    a = 0.5 * (a + a.T)
    b = rng.standard_normal(dim)
    theta0 = rng.standard_normal(dim)
    return quadlab.QuadraticProblem(a, b), theta0


def _quad_scaling(kind, a):
    """Symmetric diagonal scaling d for the DAD arm of an SPD quadratic."""
    if kind == "row_equilibration":
        return 1.0 / np.sqrt(np.sqrt(densela.row_norms2(a)))
    if kind == "jacobi":
        return 1.0 / np.sqrt(np.diag(a))
    raise ConfigError(f"unknown quad preconditioner {kind!r}")


def run_quad(cfg: ExperimentConfig, out_dir) -> RunManifest:
    """GD on one SPD quadratic, plain vs diagonally scaled arms.

    SPD structure is preserved by scaling symmetrically: the arm solves
    the problem with matrix DAD and data Db in u = inv(D) theta.  Each arm
    steps at eta = rho * 2/sigma_1 of its own operator; progress is scored
    as excess loss of the original problem at the mapped-back iterates, so
    curves are directly comparable.
    """
    manifest = _start_manifest(cfg)
    t0 = time.perf_counter()
    p = cfg.params
    problem, theta0 = _spd_problem(cfg.seed, p["dim"], p["kappa"])
    loss_star = problem.loss(problem.theta_star)

    arms = [("none", np.ones(problem.n))]
    for kind in p["preconditioners"]:
        arms.append((kind, _quad_scaling(kind, problem.a)))

    series = []
    rows = ["arm,kappa,eta,diverged,iters_to_tolerance,final_excess"]
    for name, d in arms:
        a_arm = problem.a * np.outer(d, d)
        a_arm = 0.5 * (a_arm + a_arm.T)
        prob = quadlab.QuadraticProblem(a_arm, d * problem.b)
        eta = p["rho"] * quadlab.max_stable_lr(prob)
        trace = quadlab.run_gd(prob, theta0 / d, eta, p["iters"])
        excess = np.array([problem.loss(d * u) - loss_star for u in trace.iterates])
        excess = np.maximum(excess, 0.0)
        hit = np.flatnonzero(excess <= p["tolerance"])
        iters_to = int(hit[0]) if hit.size else -1
        rows.append(f"{name},{prob.kappa!r},{eta!r},{str(trace.diverged).lower()},"
                    f"{iters_to},{float(excess[-1])!r}")
        manifest.diverged[name] = bool(trace.diverged)
        path = f"{out_dir}/quad_{_arm_filename(name)}.csv"
        _write_trace_csv(trace, path)
        manifest.add_file(path)
        series.append(LineSeries(name, tuple(range(len(excess))),
                                 tuple(float(v) for v in excess)))
    summary_path = f"{out_dir}/summary.csv"
    atomic_write_text(summary_path, "\r\n".join(rows) + "\r\n")
    manifest.add_file(summary_path)
    svg_path = f"{out_dir}/quad_excess.svg"
    emit_svg(series, title="excess loss under GD", xlabel="iteration",
             ylabel="excess loss", log_y=True, path=svg_path)
    manifest.add_file(svg_path)
    return _finish(manifest, out_dir, t0)


# ---------------------------------------------------------------------------
# hessian_compare


def run_hessian_compare(cfg: ExperimentConfig, out_dir) -> RunManifest:
    manifest = _start_manifest(cfg)
    t0 = time.perf_counter()
    p = cfg.params
    widths = tuple(int(w) for w in p["widths"])
    x, y, _ = teacher_student_regression(p["n_samples"], seed=cfg.seed, widths=widths,
                                         kappa=p["teacher_kappa"],
                                         activation=p["activation"])
    specs = []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        specs.append(DenseSpec(widths[i], widths[i + 1],
                               activation="identity" if last else p["activation"]))
    comparisons, summary = hesslab.compare_curvature_sweep(
        specs, x, y, n_points=p["n_points"], seed=cfg.seed,
        rank_tol=p["rank_tol"], conditioned=p["conditioned"])
    rows = [hesslab.CSV_HEADER] + [c.csv_row() for c in comparisons]
    comp_path = f"{out_dir}/kappa_comparisons.csv"
    atomic_write_text(comp_path, "\r\n".join(rows) + "\r\n")
    manifest.add_file(comp_path)
    srow = ["n_points,n_comparable,n_satisfied,n_skipped,fraction_satisfied",
            f"{summary.n_points},{summary.n_comparable},{summary.n_satisfied},"
            f"{summary.n_skipped},{summary.fraction_satisfied!r}"]
    summary_path = f"{out_dir}/summary.csv"
    atomic_write_text(summary_path, "\r\n".join(srow) + "\r\n")
    manifest.add_file(summary_path)
    manifest.notes["fraction_satisfied"] = summary.fraction_satisfied
    return _finish(manifest, out_dir, t0)


# ---------------------------------------------------------------------------
# cond_report


def run_cond_report(cfg: ExperimentConfig, out_dir, matrix_file=None) -> RunManifest:
    manifest = _start_manifest(cfg)
    t0 = time.perf_counter()
    path = matrix_file or cfg["matrix_file"]
    if not path:
        raise ConfigError("cond_report needs a matrix file")
    mat = densela.read_matrix_text(path)
    rows = [precond.CSV_HEADER]
    for kind in cfg["kinds"]:
        rows.append(precond.conditioning_report(mat, kind, seed=cfg.seed).csv_row())
    out_path = f"{out_dir}/cond_report.csv"
    atomic_write_text(out_path, "\r\n".join(rows) + "\r\n")
    manifest.add_file(out_path)
    return _finish(manifest, out_dir, t0)


RUNNERS = {
    "vds": run_vds,
    "quad": run_quad,
    "train_compare": run_train_compare,
    "hessian_compare": run_hessian_compare,
    "cond_report": run_cond_report,
}


def run_experiment(cfg: ExperimentConfig, out_dir, **kwargs) -> RunManifest:
    if cfg.kind not in RUNNERS:
        raise ConfigError(f"no runner for kind {cfg.kind!r}")
    return RUNNERS[cfg.kind](cfg, out_dir, **kwargs)
