"""Network container: a validated stack of layers with shared plumbing.

Handles shape chaining (including conv -> dense flattening), Glorot
initialization from a single seed, flat parameter-vector access for the
Hessian tooling, checkpointing, and whole-network static conditioning.
"""

import json

import numpy as np

from equilab import densela
from equilab.errors import DimensionError, RankDeficientError
from equilab.net import layers as L

CHECKPOINT_VERSION = 1


def _spec_to_dict(spec):
    d = {"kind": spec.kind}
    for f in spec.__dataclass_fields__:
        d[f] = getattr(spec, f)
    return d


def _spec_from_dict(d):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "dense":
        return L.DenseSpec(**d)
    if kind == "conv2d":
        return L.Conv2dSpec(**d)
    raise DimensionError(f"unknown layer kind {kind!r}")


class Network:
    """Feed-forward stack x -> phi(x W + b) -> ... built from layer specs.

    Dense layers consume 2-d batches (rows are samples); conv layers
    consume (N, C, H, W).  A conv entry requires input_shape=(C, H, W) so
    shapes can be validated at construction.  The final activation must be
    identity, or sigmoid_output for nets trained with BCE.
    """

    def __init__(self, specs, seed=0, input_shape=None):
        if not specs:
            raise DimensionError("a network needs at least one layer")
        self.specs = tuple(specs)
        self.seed = int(seed)
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        last = self.specs[-1].activation
        if last not in ("identity", "sigmoid_output"):
            raise DimensionError(
                f"final activation must be identity or sigmoid_output, got {last!r}")
        self._validate_chain()
        rng = np.random.default_rng(np.random.SeedSequence(self.seed))
        self.layers = [L.build_layer(s, rng) for s in self.specs]

    def _validate_chain(self):
        if self.specs[0].kind == "conv2d" and self.input_shape is None:
            raise DimensionError("input_shape=(C, H, W) is required for a conv entry")
        shape = self.input_shape  # (C,H,W) or None for dense entry
        for i, s in enumerate(self.specs):
            if s.kind == "conv2d":
                if shape is None:
                    raise DimensionError(f"layer {i}: conv after flattened dense output")
                c, h, w = shape
                if c != s.in_channels:
                    raise DimensionError(f"layer {i}: expects {s.in_channels} channels, "
                                         f"chain provides {c}")
                oh = L.conv_out_size(h, s.kernel_size, s.stride, s.padding)
                ow = L.conv_out_size(w, s.kernel_size, s.stride, s.padding)
                shape = (s.out_channels, oh, ow)
            else:
                width = int(np.prod(shape)) if shape is not None else s.in_dim
                if width != s.in_dim:
                    raise DimensionError(f"layer {i}: expects {s.in_dim} features, "
                                         f"chain provides {width}")
                # everything after the first dense layer stays flat
                prev_out = s.in_dim
                for j, s2 in enumerate(self.specs[i:]):
                    if s2.kind != "dense":
                        raise DimensionError("conv layers cannot follow dense layers")
                    if s2.in_dim != prev_out:
                        raise DimensionError(
                            f"layer {i + j}: in_dim {s2.in_dim} != previous width {prev_out}")
                    prev_out = s2.out_dim
                return
        # all-conv network: output stays 4-d

    def _prepare(self, x, layer_kind):
        if layer_kind == "conv2d" and x.ndim == 2:
            c, h, w = self.input_shape
            return x.reshape(x.shape[0], c, h, w)
        if layer_kind == "dense" and x.ndim == 4:
            return x.reshape(x.shape[0], -1)
        return x

    def forward(self, x, training=False):
        out, _ = self.forward_with_caches(x, training, keep=False)
        return out

    def forward_with_caches(self, x, training, keep=True):
        x = np.asarray(x, dtype=np.float64)
        caches = []
        for i, layer in enumerate(self.layers):
            x = self._prepare(x, layer.spec.kind)
            x, cache = layer.forward(x, training)
            L.check_finite(x, i, "activation")
            caches.append(cache if keep else None)
        return x, caches

    def backward(self, grad_out, caches):
        """Backprop a gradient w.r.t. the network output; returns per-layer
        grad dicts aligned with self.layers."""
        grads = [None] * len(self.layers)
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g, grads[i] = layer.backward(g, caches[i])
            # undo the flatten/reshape done on the way forward
            if layer.spec.kind == "dense" and i > 0:
                prev = self.layers[i - 1]
                if prev.spec.kind == "conv2d" and g.ndim == 2:
                    c, h, w = self._shape_after(i - 1)
                    g = g.reshape(g.shape[0], c, h, w)
        return grads

    def _shape_after(self, layer_index):
        shape = self.input_shape
        for s in self.specs[: layer_index + 1]:
            if s.kind == "conv2d":
                c, h, w = shape
                oh = L.conv_out_size(h, s.kernel_size, s.stride, s.padding)
                ow = L.conv_out_size(w, s.kernel_size, s.stride, s.padding)
                shape = (s.out_channels, oh, ow)
            else:
                shape = (s.out_dim,)
        return shape

    # -- parameter vector interface -------------------------------------

    def parameter_count(self):
        return sum(arr.size for layer in self.layers for _, arr in layer.param_items())

    def get_params_vector(self):
        return np.concatenate(
            [arr.reshape(-1) for layer in self.layers for _, arr in layer.param_items()])

    def set_params_vector(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.parameter_count():
            raise DimensionError(f"parameter vector of length {theta.size}, "
                                 f"expected {self.parameter_count()}")
        pos = 0
        for layer in self.layers:
            for name, arr in layer.param_items():
                chunk = theta[pos:pos + arr.size].reshape(arr.shape)
                setattr(layer, name, chunk.copy())
                pos += arr.size

    def grads_to_vector(self, grads):
        out = []
        for layer, gdict in zip(self.layers, grads):
            for name, arr in layer.param_items():
                g = gdict.get(name)
                out.append(np.zeros(arr.size) if g is None else np.asarray(g).reshape(-1))
        return np.concatenate(out)

    # -- conditioning -----------------------------------------------------

    def clone(self):
        twin = Network(self.specs, seed=self.seed, input_shape=self.input_shape)
        twin.set_params_vector(self.get_params_vector())
        for mine, theirs in zip(self.layers, twin.layers):
            for name, arr in mine.buffer_items():
                getattr(theirs, name)[...] = arr
        return twin

    def with_conditioning(self, conditioning, which="hidden"):
        """Twin network with the conditioning tag switched on selected
        layers, parameters copied over.

        which: "hidden" (all but the last layer), "all", or an explicit
        list of layer indices.  For static conditioning the copied weights
        are re-equilibrated at construction.
        """
        if which == "hidden":
            idx = set(range(len(self.specs) - 1))
        elif which == "all":
            idx = set(range(len(self.specs)))
        else:
            idx = set(int(i) for i in which)
        new_specs = []
        for i, s in enumerate(self.specs):
            if i in idx:
                d = _spec_to_dict(s)
                d["conditioning"] = conditioning
                new_specs.append(_spec_from_dict(d))
            else:
                new_specs.append(s)
        twin = Network(new_specs, seed=self.seed, input_shape=self.input_shape)
        # conditioning tags add no parameters, so the vectors line up
        twin.set_params_vector(self.get_params_vector())
        if conditioning == "equilibrate_static":
            for i in idx:
                twin.layers[i].apply_static_conditioning()
        return twin

    def weight_condition_numbers(self, effective=False, rank_tol=1e-12):
        """kappa of each layer's weight (or effective weight) in the
        output-major view; numerically rank deficient entries come back as
        nan."""
        out = []
        for layer in self.layers:
            m = layer.effective_weight() if effective else layer._output_major(layer.w)
            try:
                out.append(densela.condition_number(m, rank_tol=rank_tol))
            except RankDeficientError:
                out.append(float("nan"))
        return out

    def predict_proba(self, x):
        """Sigmoid of the output logits (for sigmoid_output nets)."""
        z = self.forward(x, training=False)
        return _sigmoid(z)

    # -- checkpointing ----------------------------------------------------

    def save(self, path):
        arch = {
            "format_version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "input_shape": self.input_shape,
            "specs": [_spec_to_dict(s) for s in self.specs],
        }
        arrays = {"arch": np.frombuffer(json.dumps(arch).encode("ascii"), dtype=np.uint8)}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.param_items() + layer.buffer_items():
                arrays[f"layer{i}/{name}"] = arr
        with open(path, "wb") as fh:  # keep the exact path (savez appends .npz)
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            arch = json.loads(bytes(data["arch"]).decode("ascii"))
            if arch.get("format_version") != CHECKPOINT_VERSION:
                raise DimensionError(
                    f"unsupported checkpoint version {arch.get('format_version')!r}")
            specs = [_spec_from_dict(d) for d in arch["specs"]]
            shape = arch["input_shape"]
            net = cls(specs, seed=arch["seed"],
                      input_shape=tuple(shape) if shape else None)
            for i, layer in enumerate(net.layers):
                for name, arr in layer.param_items() + layer.buffer_items():
                    setattr(layer, name, data[f"layer{i}/{name}"].copy())
        return net


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def condition_weights(net, mode="static", which="all"):
    """Return a conditioned twin of net.

    mode "static" rewrites each selected weight as its row-equilibrated
    version once; mode "reparam" switches the layers to the reparametrized
    forward pass that re-equilibrates on every evaluation.
    """
    if mode == "static":
        return net.with_conditioning("equilibrate_static", which=which)
    if mode == "reparam":
        return net.with_conditioning("equilibrate_reparam", which=which)
    raise DimensionError(f"unknown conditioning mode {mode!r}")
