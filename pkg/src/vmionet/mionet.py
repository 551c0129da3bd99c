"""Multi-input operator network with hand-derived gradients.

Several branch MLPs (one of which may be a single bias-free linear map) and
a trunk MLP share a final width p; the output at a disk point y is the sum
over the p ranks of the product of all branch outputs with the trunk output,
plus an optional scalar bias (off by default). Gradients are exact
reverse-mode, written out for this fixed architecture; training is plain
minibatch Adam on the mean-squared error.

Parameters live in one flat float64 vector; the per-layer weight matrices
are reshaped views into it, so the optimizer updates the vector in place and
the layout (and therefore every checkpoint) is deterministic.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .sampling import derive_rng

CHECKPOINT_MAGIC = b"VMIONET1"

ACT_RELU = "relu"
ACT_IDENTITY = "identity"


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient encountered."""


@dataclass(frozen=True)
class MLPSpec:
    """Shape of one branch or trunk network.

    linear_only networks are a single weight matrix: no bias, no activation,
    exactly two layer sizes.
    """

    layer_sizes: tuple
    activation: str = ACT_RELU
    bias: bool = True
    linear_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s <= 0 for s in self.layer_sizes):
            raise ValueError("layer_sizes must be >= 2 positive entries")
        if self.activation not in (ACT_RELU, ACT_IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.linear_only and (len(self.layer_sizes) != 2 or self.bias):
            raise ValueError("linear_only requires exactly two layer sizes and no bias")

    @property
    def in_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_width(self) -> int:
        return self.layer_sizes[-1]

    def parameter_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + (sizes[i + 1] if self.bias else 0)
                   for i in range(len(sizes) - 1))

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation,
                "bias": self.bias, "linear_only": self.linear_only}

    @classmethod
    def from_dict(cls, d: dict) -> "MLPSpec":
        return cls(tuple(d["layer_sizes"]), d["activation"], d["bias"],
                   d["linear_only"])


class MIONetModel:
    """Branch nets + trunk net + rank-p combination over one flat parameter vector."""

    def __init__(self, branch_specs, trunk_spec: MLPSpec, output_bias: bool = False):
        self.branch_specs = list(branch_specs)
        self.trunk_spec = trunk_spec
        self.output_bias_enabled = bool(output_bias)
        if trunk_spec.in_width != 2:
            raise ValueError("trunk input width must be 2 (disk coordinates)")
        self.p = trunk_spec.out_width
        for i, spec in enumerate(self.branch_specs):
            if spec.out_width != self.p:
                raise ValueError(f"branch {i} final width {spec.out_width} != p={self.p}")
        self._layout = self._build_layout()
        self._flat = np.zeros(self._layout[-1][2].stop if self._layout else 0)
        self._bind_views()

    def _build_layout(self):
        layout = []
        offset = 0

        def add(name, shape):
            nonlocal offset
            size = int(np.prod(shape))
            layout.append((name, shape, slice(offset, offset + size)))
            offset += size

        specs = self.branch_specs + [self.trunk_spec]
        names = [f"branch{i}" for i in range(len(self.branch_specs))] + ["trunk"]
        for name, spec in zip(names, specs):
            sizes = spec.layer_sizes
            for l in range(len(sizes) - 1):
                add(f"{name}.w{l}", (sizes[l], sizes[l + 1]))
                if spec.bias:
                    add(f"{name}.b{l}", (sizes[l + 1],))
        if self.output_bias_enabled:
            add("output_bias", (1,))
        return layout

    def _bind_views(self):
        views = {name: self._flat[sl].reshape(shape)
                 for name, shape, sl in self._layout}
        self._views = views
        self.branches = []
        for i, spec in enumerate(self.branch_specs):
            layers = []
            for l in range(len(spec.layer_sizes) - 1):
                w = views[f"branch{i}.w{l}"]
                b = views.get(f"branch{i}.b{l}")
                layers.append((w, b))
            self.branches.append(layers)
        self.trunk = []
        for l in range(len(self.trunk_spec.layer_sizes) - 1):
            self.trunk.append((views[f"trunk.w{l}"], views.get(f"trunk.b{l}")))

    @property
    def output_bias(self) -> float:
        return float(self._views["output_bias"][0]) if self.output_bias_enabled else 0.0

    def parameter_count(self) -> int:
        return self._flat.size

    def parameter_vector(self) -> np.ndarray:
        return self._flat.copy()

    def set_parameter_vector(self, values) -> None:
        values = np.asarray(values, dtype=float)
        if values.shape != self._flat.shape:
            raise ValueError("parameter vector has wrong length")
        self._flat[:] = values

    def layout(self):
        """(name, shape, slice) triples in flat-vector order."""
        return list(self._layout)


def init_model(branch_specs, trunk_spec, seed=0, output_bias=False) -> MIONetModel:
    """He-uniform init for ReLU layers, Glorot-uniform for linear ones; seeded."""
    model = MIONetModel(branch_specs, trunk_spec, output_bias)
    specs = model.branch_specs + [model.trunk_spec]
    names = [f"branch{i}" for i in range(len(model.branch_specs))] + ["trunk"]
    for net_idx, (name, spec) in enumerate(zip(names, specs)):
        sizes = spec.layer_sizes
        n_layers = len(sizes) - 1
        for l in range(n_layers):
            fan_in, fan_out = sizes[l], sizes[l + 1]
            hidden_relu = spec.activation == ACT_RELU and l < n_layers - 1
            limit = np.sqrt(6.0 / fan_in) if hidden_relu \
                else np.sqrt(6.0 / (fan_in + fan_out))
            rng = derive_rng(seed, "init", net_idx, l)
            model._views[f"{name}.w{l}"][:] = rng.uniform(-limit, limit,
                                                          size=(fan_in, fan_out))
    return model


# -- forward / backward --------------------------------------------------------


def _mlp_forward(layers, spec: MLPSpec, x, want_cache=False):
    h = x
    cache = [] if want_cache else None
    n = len(layers)
    for l, (w, b) in enumerate(layers):
        pre = h @ w
        if b is not None:
            pre = pre + b
        if want_cache:
            cache.append((h, pre))
        if spec.activation == ACT_RELU and l < n - 1:
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return (h, cache) if want_cache else h


def _mlp_backward(layers, spec: MLPSpec, cache, dout, grad_slots):
    """Accumulate layer gradients into grad_slots (list of (dW, db))."""
    n = len(layers)
    dh = dout
    for l in range(n - 1, -1, -1):
        h_in, pre = cache[l]
        if spec.activation == ACT_RELU and l < n - 1:
            dpre = dh * (pre > 0.0)  # subgradient 0 at exactly 0
        else:
            dpre = dh
        dw, db = grad_slots[l]
        dw += h_in.T @ dpre
        if db is not None:
            db += dpre.sum(axis=0)
        if l > 0:
            dh = dpre @ layers[l][0].T
    return dh


def _canonical_inputs(model: MIONetModel, branch_inputs):
    xs = []
    batch = None
    single = True
    for i, (x, spec) in enumerate(zip(branch_inputs, model.branch_specs)):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        else:
            single = False
        if x.shape[1] != spec.in_width:
            raise ValueError(f"branch {i} input width {x.shape[1]}, "
                             f"expected {spec.in_width}")
        if batch is None:
            batch = x.shape[0]
        elif x.shape[0] != batch:
            raise ValueError("branch inputs disagree on batch size")
        xs.append(x)
    if len(xs) != len(model.branch_specs):
        raise ValueError("wrong number of branch inputs")
    return xs, single


def _check_disk_points(y):
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != 2:
        raise ValueError("trunk points must have shape (K, 2)")
    r = np.hypot(y[:, 0], y[:, 1])
    if np.any(r > 1.0 + 1e-6):
        warnings.warn("trunk points outside the closed unit disk", stacklevel=3)
    return y


def forward(model: MIONetModel, branch_inputs, y) -> np.ndarray:
    """Network output at disk points y.

    branch_inputs[i] is (d_i,) for a single task or (B, d_i) for a batch;
    y is (K, 2), shared across the batch. Returns (K,) or (B, K).
    """
    xs, single = _canonical_inputs(model, branch_inputs)
    y = _check_disk_points(y)
    gs = [_mlp_forward(model.branches[i], model.branch_specs[i], xs[i])
          for i in range(len(xs))]
    t = _mlp_forward(model.trunk, model.trunk_spec, y)
    prod = gs[0].copy()
    for g in gs[1:]:
        prod *= g
    out = prod @ t.T + model.output_bias
    return out[0] if single else out


def backward(model: MIONetModel, branch_inputs, y, upstream) -> np.ndarray:
    """Gradient of sum(upstream * output) w.r.t. the flat parameter vector."""
    _, grad = _forward_backward(model, branch_inputs, y, upstream)
    return grad


def _forward_backward(model: MIONetModel, branch_inputs, y, upstream):
    """Cached forward plus reverse pass.

    `upstream` is either an array matching the output or a callable mapping
    the output to the upstream (used to fuse the loss gradient without a
    second forward sweep).
    """
    xs, single = _canonical_inputs(model, branch_inputs)
    y = _check_disk_points(y)

    caches = []
    gs = []
    for i, x in enumerate(xs):
        g, cache = _mlp_forward(model.branches[i], model.branch_specs[i], x,
                                want_cache=True)
        gs.append(g)
        caches.append(cache)
    t, t_cache = _mlp_forward(model.trunk, model.trunk_spec, y, want_cache=True)
    prod = gs[0].copy()
    for g in gs[1:]:
        prod *= g
    out = prod @ t.T + model.output_bias

    if callable(upstream):
        up = np.asarray(upstream(out), dtype=float)
    else:
        up = np.asarray(upstream, dtype=float)
        if single and up.ndim == 1:
            up = up[None, :]
    if up.shape != out.shape:
        raise ValueError("upstream shape does not match output")

    grad = np.zeros_like(model._flat)
    slots = {name: grad[sl].reshape(shape) for name, shape, sl in model._layout}

    dt = up.T @ prod                      # (K, p)
    dprod = up @ t                        # (B, p)
    for i in range(len(xs)):
        others = None
        for j in range(len(xs)):
            if j == i:
                continue
            others = gs[j].copy() if others is None else others * gs[j]
        dg = dprod if others is None else dprod * others
        slot = [(slots[f"branch{i}.w{l}"], slots.get(f"branch{i}.b{l}"))
                for l in range(len(model.branches[i]))]
        _mlp_backward(model.branches[i], model.branch_specs[i], caches[i], dg, slot)
    trunk_slot = [(slots[f"trunk.w{l}"], slots.get(f"trunk.b{l}"))
                  for l in range(len(model.trunk))]
    _mlp_backward(model.trunk, model.trunk_spec, t_cache, dt, trunk_slot)
    if model.output_bias_enabled:
        slots["output_bias"][0] = up.sum()
    return (out[0] if single else out), grad


def mse_loss(pred, target) -> float:
    """Mean squared difference over all (task, point) pairs."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.size == 0:
        raise ValueError("empty prediction batch")
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean((pred - target) ** 2))


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second gradient moments plus step counter."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, n: int, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One Adam update with bias correction; params updated in place."""
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("divergence: non-finite gradient")
    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grads**2
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# -- training --------------------------------------------------------------------


@dataclass
class TrainingData:
    """Branch inputs, targets and the shared trunk points for one dataset view."""

    branch_inputs: list            # list of (N, d_i)
    targets: np.ndarray            # (N, K)
    trunk_points: np.ndarray       # (K, 2)

    def __post_init__(self):
        self.branch_inputs = [np.asarray(b, dtype=float) for b in self.branch_inputs]
        self.targets = np.asarray(self.targets, dtype=float)
        self.trunk_points = np.asarray(self.trunk_points, dtype=float)
        n = self.targets.shape[0]
        if any(b.shape[0] != n for b in self.branch_inputs):
            raise ValueError("branch inputs and targets disagree on task count")

    @property
    def task_count(self) -> int:
        return self.targets.shape[0]


@dataclass
class TrainConfig:
    lr: float = 1e-3
    iterations: int = 50_000
    batch_size: int = 16
    seed: int = 0
    record_every: int = 100
    checkpoint_interval: int = 0          # 0 disables periodic checkpoints
    checkpoint_path: str | None = None
    meta: dict = field(default_factory=dict)


def train(model: MIONetModel, data: TrainingData, cfg: TrainConfig):
    """Minibatch Adam over tasks; returns (model, loss history).

    Each batch element is one task with all its evaluation points. The loss
    history holds (iteration, minibatch MSE) every cfg.record_every
    iterations plus the final iteration; identical seeds give identical
    histories and final parameters.
    """
    rng = derive_rng(cfg.seed, "train-batch")
    state = AdamState.for_params(model.parameter_count(), lr=cfg.lr)
    n = data.task_count
    history = []
    for it in range(1, cfg.iterations + 1):
        idx = rng.integers(0, n, size=cfg.batch_size)
        xs = [b[idx] for b in data.branch_inputs]
        tgt = data.targets[idx]
        out, grad = _forward_backward_mse(model, xs, data.trunk_points, tgt)
        loss = mse_loss(out, tgt)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"divergence: non-finite loss at iteration {it} "
                "(last checkpoint retained)")
        adam_step(model._flat, grad, state)
        if it % cfg.record_every == 0 or it == cfg.iterations:
            history.append((it, loss))
        if (cfg.checkpoint_interval and cfg.checkpoint_path
                and it % cfg.checkpoint_interval == 0):
            save_checkpoint(cfg.checkpoint_path, model, iteration=it, loss=loss,
                            seed=cfg.seed, meta=cfg.meta)
    return model, history


def _forward_backward_mse(model, xs, y, targets):
    """Fused pass: batch output plus gradient of the batch MSE."""
    return _forward_backward(
        model, xs, y, lambda out: (2.0 / out.size) * (out - targets))


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(path, model: MIONetModel, iteration=0, loss=None, seed=None,
                    meta=None) -> None:
    """Versioned binary checkpoint: magic, JSON header, float64 LE blob."""
    header = {
        "format": CHECKPOINT_MAGIC.decode(),
        "branch_specs": [s.to_dict() for s in model.branch_specs],
        "trunk_spec": model.trunk_spec.to_dict(),
        "output_bias_enabled": model.output_bias_enabled,
        "iteration": int(iteration),
        "loss": None if loss is None else float(loss),
        "seed": None if seed is None else int(seed),
        "param_count": model.parameter_count(),
        "layout": [[name, list(shape)] for name, shape, _ in model.layout()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint64(len(blob)).tobytes())
        fh.write(blob)
        fh.write(model._flat.astype("<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Load a checkpoint; returns (model, header)."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a {CHECKPOINT_MAGIC.decode()} checkpoint")
        (hlen,) = np.frombuffer(fh.read(8), dtype="<u8")
        header = json.loads(fh.read(int(hlen)).decode("utf-8"))
        blob = fh.read()
    model = MIONetModel([MLPSpec.from_dict(d) for d in header["branch_specs"]],
                        MLPSpec.from_dict(header["trunk_spec"]),
                        header["output_bias_enabled"])
    params = np.frombuffer(blob, dtype="<f8")
    model.set_parameter_vector(params)
    return model, header
