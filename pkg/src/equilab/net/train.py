"""Minibatch SGD with optional momentum, loss functions, and run traces.

The shuffle stream depends only on (seed, epoch, n_samples), never on the
network, so arms sharing a seed see identical batch boundaries; the trace
records digests of the initial parameters and of the data order so that
fairness can be asserted instead of assumed.

Wall-clock timings live only on the in-memory trace (and in run
manifests); CSV output is fully deterministic for a given config/seed.
"""

import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from equilab.errors import DimensionError, NonFiniteActivationError, NonFiniteError
from equilab.net.network import Network, _sigmoid

LOSSES = ("mse", "bce")
DIVERGENCE_NORM = 1e12


def mse_loss(pred, y):
    """Mean squared error over all output entries; returns (loss, dpred)."""
    d = pred - y
    return float(np.mean(d * d)), 2.0 * d / d.size


def bce_loss(z, y):
    """Binary cross entropy on logits, in the stable max(z,0)-z*y+log1p(exp(-|z|))
    form; returns (loss, dz)."""
    val = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(np.mean(val)), (_sigmoid(z) - y) / z.size


def evaluate(net, x, y, loss="mse"):
    """Full-batch eval-mode loss (and accuracy for bce)."""
    out = net.forward(x, training=False)
    if loss == "mse":
        val, _ = mse_loss(out, y)
        return val, None
    val, _ = bce_loss(out, y)
    acc = float(np.mean((out > 0.0) == (y > 0.5)))
    return val, acc


def loss_and_gradients(net, x, y, loss="mse", training=True):
    """Forward + backward; returns (loss_value, per-layer grad dicts)."""
    if loss not in LOSSES:
        raise DimensionError(f"unknown loss {loss!r}")
    out, caches = net.forward_with_caches(x, training=training)
    fn = mse_loss if loss == "mse" else bce_loss
    val, dout = fn(out, np.asarray(y, dtype=np.float64))
    grads = net.backward(dout, caches)
    return val, grads


@dataclass
class TrainTrace:
    """Per-epoch history of one training run.

    Arrays all have length epochs_completed; kappa columns are nan where a
    weight matrix was numerically rank deficient.  wall_time_per_step is
    measured and therefore excluded from to_csv output.
    """

    train_loss: np.ndarray
    eval_loss: np.ndarray
    accuracy: np.ndarray | None
    wall_time_per_step: np.ndarray
    kappa_weights: np.ndarray      # (epochs, n_layers)
    kappa_effective: np.ndarray    # (epochs, n_layers)
    diverged: bool
    diverged_at: int | None
    init_digest: str
    data_digest: str
    seed: int
    lr: float
    extras: dict = field(default_factory=dict)

    @property
    def epochs_completed(self):
        return len(self.train_loss)

    def to_csv(self, path):
        n_layers = self.kappa_weights.shape[1] if self.kappa_weights.size else 0
        cols = ["epoch", "train_loss", "eval_loss"]
        if self.accuracy is not None:
            cols.append("accuracy")
        cols += [f"kappa_w{i}" for i in range(n_layers)]
        cols += [f"kappa_eff{i}" for i in range(n_layers)]
        lines = [",".join(cols)]
        for e in range(self.epochs_completed):
            row = [str(e), repr(float(self.train_loss[e])), repr(float(self.eval_loss[e]))]
            if self.accuracy is not None:
                row.append(repr(float(self.accuracy[e])))
            row += [repr(float(v)) for v in self.kappa_weights[e]]
            row += [repr(float(v)) for v in self.kappa_effective[e]]
            lines.append(",".join(row))
        payload = "\r\n".join(lines) + "\r\n"
        if hasattr(path, "write"):
            path.write(payload)
        else:
            with open(path, "w", encoding="ascii", newline="") as fh:
                fh.write(payload)


def params_digest(net):
    h = hashlib.sha256()
    for layer in net.layers:
        for _, arr in layer.param_items():
            h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def train(net, x, y, *, loss="mse", lr=0.01, momentum=0.0, epochs=10,
          batch_size=32, seed=0, eval_data=None, record_kappa=True):
    """Train net in place with minibatch SGD; returns a TrainTrace.

    Divergence (non-finite activations/loss, or parameter norm beyond
    1e12) stops the run at the end of the offending batch and flags the
    trace instead of raising.
    """
    if loss not in LOSSES:
        raise DimensionError(f"unknown loss {loss!r}")
    if lr <= 0 or not np.isfinite(lr):
        raise DimensionError(f"lr must be positive and finite, got {lr!r}")
    if epochs < 1 or batch_size < 1:
        raise DimensionError("epochs and batch_size must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise NonFiniteError("training data contains non-finite values")
    n = x.shape[0]
    if y.shape[0] != n:
        raise DimensionError(f"{n} inputs vs {y.shape[0]} targets")
    ex, ey = eval_data if eval_data is not None else (x, y)

    has_bn = any(layer.batch_norm for layer in net.layers)
    init_digest = params_digest(net)
    data_hash = hashlib.sha256()

    velocity = None
    if momentum:
        velocity = [{name: np.zeros_like(arr) for name, arr in layer.param_items()}
                    for layer in net.layers]

    tl, el, acc, wts = [], [], [], []
    kw, keff = [], []
    diverged = False
    diverged_at = None

    # untimed warmup so allocator effects do not skew the first timings
    warm = min(n, max(2, batch_size))
    for _ in range(2):
        loss_and_gradients(net.clone(), x[:warm], y[:warm], loss=loss)

    for epoch in range(epochs):
        rng = np.random.default_rng(np.random.SeedSequence((seed, n, epoch)))
        perm = rng.permutation(n)
        data_hash.update(perm.astype(np.int64).tobytes())
        batch_losses = []
        batch_sizes = []
        step_times = []
        for start in range(0, n, batch_size):
            idx = perm[start:start + batch_size]
            if has_bn and idx.size < 2:
                continue  # batch norm cannot use a singleton remainder
            t0 = time.perf_counter()
            try:
                val, grads = loss_and_gradients(net, x[idx], y[idx], loss=loss)
            except NonFiniteActivationError:
                diverged = True
                diverged_at = epoch
                break
            if not np.isfinite(val):
                diverged = True
                diverged_at = epoch
                break
            for li, layer in enumerate(net.layers):
                for name, arr in layer.param_items():
                    g = grads[li].get(name)
                    if g is None:
                        continue
                    g = np.asarray(g).reshape(arr.shape)
                    if velocity is not None:
                        v = velocity[li][name]
                        v *= momentum
                        v += g
                        g = v
                    arr -= lr * g
            step_times.append(time.perf_counter() - t0)
            batch_losses.append(val)
            batch_sizes.append(idx.size)
            pmax = max(float(np.max(np.abs(arr)))
                       for layer in net.layers for _, arr in layer.param_items())
            if not np.isfinite(pmax) or pmax > DIVERGENCE_NORM:
                diverged = True
                diverged_at = epoch
                break
        if diverged:
            break
        tl.append(float(np.average(batch_losses, weights=batch_sizes)))
        ev, a = evaluate(net, ex, ey, loss=loss)
        el.append(ev)
        if a is not None:
            acc.append(a)
        wts.append(float(np.mean(step_times)))
        if record_kappa:
            kw.append(net.weight_condition_numbers(effective=False))
            keff.append(net.weight_condition_numbers(effective=True))
        else:
            kw.append([float("nan")] * len(net.layers))
            keff.append([float("nan")] * len(net.layers))

    return TrainTrace(
        train_loss=np.array(tl),
        eval_loss=np.array(el),
        accuracy=np.array(acc) if loss == "bce" else None,
        wall_time_per_step=np.array(wts),
        kappa_weights=np.array(kw) if kw else np.zeros((0, len(net.layers))),
        kappa_effective=np.array(keff) if keff else np.zeros((0, len(net.layers))),
        diverged=diverged,
        diverged_at=diverged_at,
        init_digest=init_digest,
        data_digest=data_hash.hexdigest(),
        seed=int(seed),
        lr=float(lr),
    )
