"""Multi-head self-attention prototype generator.

For one class with support stack ``X`` (``K x d_model``) the generator computes,
per head ``h``::

    Z_h = softmax_rows(X W_Q[h] (X W_K[h])^T / sqrt(d_k)) X W_V[h]

then mixes heads with ``Z* = concat_h(Z_h) W_O`` and refines every support
vector with a residual branch, ``G = layer_norm(dropout(X + Z* W_FC))``.
The prototype is the mean of the rows of ``G``.  No positional encoding is
used, so the prototype does not depend on support order.

All N classes of an episode are processed together as ``N`` row groups of
size ``K``; attention never crosses group boundaries.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .densemath import LAYER_NORM_EPS, Tape, backward
from .errors import CheckpointError, ShapeError

FORMAT_VERSION = 1
_MAGIC = "protogen-checkpoint"


@dataclass(frozen=True)
class AttentionConfig:
    n_heads: int
    d_model: int
    d_k: int
    d_v: int
    dropout_rate: float = 0.1
    layer_norm_eps: float = LAYER_NORM_EPS

    def __post_init__(self):
        if self.n_heads < 1:
            raise ValueError("n_heads must be >= 1")
        if self.d_model < 1 or self.d_k < 1 or self.d_v < 1:
            raise ValueError("d_model, d_k and d_v must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if not self.layer_norm_eps > 0:
            raise ValueError("layer_norm_eps must be > 0")

    @classmethod
    def default(cls, d_model, n_heads=4, dropout_rate=0.1):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        d_head = d_model // n_heads
        return cls(n_heads, d_model, d_head, d_head, dropout_rate)

    def shapes(self):
        """Ordered ``name -> shape`` for every learnable array."""
        out = {}
        for h in range(self.n_heads):
            out[f"W_Q.{h}"] = (self.d_model, self.d_k)
            out[f"W_K.{h}"] = (self.d_model, self.d_k)
            out[f"W_V.{h}"] = (self.d_model, self.d_v)
        out["W_O"] = (self.d_v * self.n_heads, self.d_model)
        out["W_FC"] = (self.d_model, self.d_model)
        out["gamma"] = (self.d_model,)
        out["beta"] = (self.d_model,)
        return out


@dataclass
class GeneratorParams:
    config: AttentionConfig
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = self.config.shapes()
        if set(self.arrays) != set(expected):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise ShapeError(f"parameter names do not match config (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            a = np.ascontiguousarray(self.arrays[name], dtype=np.float64)
            if a.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            self.arrays[name] = a

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.config.shapes())

    def copy(self):
        return GeneratorParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def equals(self, other):
        return self.config == other.config and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.names()
        )


def init_params(config, seed):
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in config.shapes().items():
        if name == "gamma":
            arrays[name] = np.ones(shape)
        elif name == "beta":
            arrays[name] = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return GeneratorParams(config, arrays)


def dropout_mask(rng, shape, rate):
    """Inverted-dropout mask: zeros with probability ``rate``, else ``1/(1-rate)``."""
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def forward(tape, nodes, x, k, config, train=False, rng=None, trace=None):
    """Record the generator on ``tape`` for a ``(n*k, d_model)`` support stack.

    ``nodes`` maps parameter names to tape tensors.  Returns ``(prototypes,
    refined)`` tensors of shapes ``(n, d_model)`` and ``(n*k, d_model)``.
    If ``trace`` is a dict, per-head attention matrices are appended to
    ``trace["attention"]``.
    """
    if x.shape[1] != config.d_model:
        raise ShapeError(f"support dimension {x.shape[1]} != d_model {config.d_model}")
    scale = 1.0 / math.sqrt(config.d_k)
    heads = []
    for h in range(config.n_heads):
        q = tape.matmul(x, nodes[f"W_Q.{h}"])
        kk = tape.matmul(x, nodes[f"W_K.{h}"])
        v = tape.matmul(x, nodes[f"W_V.{h}"])
        attn = tape.softmax_rows(tape.scale(tape.block_scores(q, kk, k), scale))
        if trace is not None:
            trace.setdefault("attention", []).append(attn.value)
        heads.append(tape.block_attend(attn, v, k))
    z = heads[0] if len(heads) == 1 else tape.concat_cols(heads)
    mixed = tape.matmul(z, nodes["W_O"])
    u = tape.add(x, tape.matmul(mixed, nodes["W_FC"]))
    if train and config.dropout_rate > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        u = tape.mask(u, dropout_mask(rng, u.shape, config.dropout_rate))
    refined = tape.layer_norm(u, nodes["gamma"], nodes["beta"], config.layer_norm_eps)
    return tape.group_mean(refined, k), refined


def _as_support_stack(supports, d_model):
    s = np.asarray(supports, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[1] < 1:
        raise ShapeError(f"supports must be (K, d) or (N, K, d), got {s.shape}")
    if s.shape[2] != d_model:
        raise ShapeError(f"support dimension {s.shape[2]} != d_model {d_model}")
    return s


def record(params, supports, train=False, rng=None, trace=None):
    """Set up a tape with ``params`` as leaves and run :func:`forward`.

    ``supports`` is ``(N, K, d_model)``.  Returns ``(tape, prototypes,
    refined)`` ready for a loss to be appended.
    """
    cfg = params.config
    s = _as_support_stack(supports, cfg.d_model)
    n, k, d = s.shape
    tape = Tape()
    nodes = {name: tape.param(params[name], name=name) for name in params.names()}
    x = tape.constant(np.ascontiguousarray(s.reshape(n * k, d)))
    protos, refined = forward(tape, nodes, x, k, cfg, train=train, rng=rng, trace=trace)
    return tape, protos, refined


def generate_prototypes(params, supports, mode="eval", rng=None, trace=None):
    """Prototypes for a whole episode: ``(N, K, d) -> (N, d), (N, K, d)``."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    s = _as_support_stack(supports, params.config.d_model)
    _, protos, refined = record(params, s, train=(mode == "train"), rng=rng, trace=trace)
    return protos.value, refined.value.reshape(s.shape)


def generate_prototype(params, supports, mode="eval", rng=None, trace=None):
    """Prototype of one class from its ``(K, d_model)`` support vectors.

    Returns ``(prototype, refined)`` where ``refined`` holds the K refined
    support vectors whose mean is the prototype.
    """
    s = np.asarray(supports, dtype=np.float64)
    if s.ndim != 2:
        raise ShapeError(f"supports must be (K, d), got {s.shape}")
    protos, refined = generate_prototypes(params, s[None], mode=mode, rng=rng, trace=trace)
    return protos[0], refined[0]


def loss_and_grads(params, supports, targets, train=False, rng=None, squared=False):
    """Mean (optionally squared) Euclidean distance to ``targets`` and its gradients."""
    tape, protos, _ = record(params, supports, train=train, rng=rng)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != protos.shape:
        raise ShapeError(f"targets {t.shape} do not match prototypes {protos.shape}")
    diff = tape.sub(protos, tape.constant(t))
    loss = tape.mean(tape.row_norms(diff, squared=squared))
    grads = backward(tape, loss)
    return float(loss.value), grads


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

_CONFIG_KEYS = ("n_heads", "d_model", "d_k", "d_v", "dropout_rate", "layer_norm_eps")


def save_params(params, path):
    cfg = params.config
    lines = [_MAGIC, f"format_version {FORMAT_VERSION}"]
    for key in _CONFIG_KEYS:
        lines.append(f"config {key} {format(getattr(cfg, key), '.17g')}")
    for name in params.names():
        a = params[name]
        rows, cols = (1, a.shape[0]) if a.ndim == 1 else a.shape
        lines.append(f"matrix {name} {a.ndim} {rows} {cols}")
        for row in a.reshape(rows, cols).tolist():
            lines.append(" ".join(format(v, ".17g") for v in row))
    lines.append("end")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path, expected_config=None):
    """Read a checkpoint written by :func:`save_params`.

    With ``expected_config`` the embedded configuration must agree on every
    shape-determining field, otherwise :class:`ShapeError` is raised.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    it = iter(enumerate(lines, start=1))

    def nxt(what):
        for lineno, line in it:
            if line.strip():
                return lineno, line.strip()
        raise CheckpointError(f"{path}: truncated checkpoint (expected {what})")

    _, magic = nxt("header")
    if magic != _MAGIC:
        raise CheckpointError(f"{path}: not a protogen checkpoint")
    lineno, ver = nxt("format_version")
    parts = ver.split()
    if len(parts) != 2 or parts[0] != "format_version":
        raise CheckpointError(f"{path}:{lineno}: expected format_version")
    if parts[1] != str(FORMAT_VERSION):
        raise CheckpointError(
            f"{path}: unsupported checkpoint format_version {parts[1]} (expected {FORMAT_VERSION})"
        )

    raw = {}
    for key in _CONFIG_KEYS:
        lineno, line = nxt(f"config {key}")
        parts = line.split()
        if len(parts) != 3 or parts[0] != "config" or parts[1] != key:
            raise CheckpointError(f"{path}:{lineno}: expected 'config {key} <value>'")
        raw[key] = parts[2]
    try:
        cfg = AttentionConfig(
            n_heads=int(raw["n_heads"]),
            d_model=int(raw["d_model"]),
            d_k=int(raw["d_k"]),
            d_v=int(raw["d_v"]),
            dropout_rate=float(raw["dropout_rate"]),
            layer_norm_eps=float(raw["layer_norm_eps"]),
        )
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid config: {exc}") from None

    if expected_config is not None:
        for key in ("n_heads", "d_model", "d_k", "d_v"):
            got, want = getattr(cfg, key), getattr(expected_config, key)
            if got != want:
                raise ShapeError(f"{path}: checkpoint {key}={got} but runtime config has {key}={want}")

    arrays = {}
    for name, shape in cfg.shapes().items():
        lineno, line = nxt(f"matrix {name}")
        parts = line.split()
        if len(parts) != 5 or parts[0] != "matrix" or parts[1] != name:
            raise CheckpointError(f"{path}:{lineno}: expected matrix header for {name}")
        ndim, rows, cols = (int(p) for p in parts[2:])
        want = (1, shape[0]) if len(shape) == 1 else shape
        if ndim != len(shape) or (rows, cols) != want:
            raise ShapeError(f"{path}:{lineno}: {name} has shape {(rows, cols)}, config implies {shape}")
        data = np.empty((rows, cols))
        for r in range(rows):
            lineno, line = nxt(f"row {r} of {name}")
            try:
                vals = [float(v) for v in line.split()]
            except ValueError:
                raise CheckpointError(f"{path}:{lineno}: bad number in {name}") from None
            if len(vals) != cols:
                raise CheckpointError(f"{path}:{lineno}: {name} row has {len(vals)} values, expected {cols}")
            data[r] = vals
        arrays[name] = data.reshape(shape)
    lineno, line = nxt("end")
    if line != "end":
        raise CheckpointError(f"{path}:{lineno}: expected 'end'")
    try:
        return GeneratorParams(cfg, arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
