"""Dense float64 linear algebra with a small reverse-mode gradient tape.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  The free
functions (:func:`matmul`, :func:`softmax_rows`, :func:`layer_norm`) validate
their inputs and dispatch to :mod:`protogen.kernels`.

Gradients are obtained by recording a forward pass on a :class:`Tape`::

    tape = Tape()
    w = tape.param(np.eye(2), name="w")
    y = tape.matmul(tape.constant(x), w)
    loss = tape.sum(y)
    grads = backward(tape, loss)      # {"w": array}
"""

import numpy as np

from . import kernels
from .errors import ShapeError, UsageError

LAYER_NORM_EPS = 1e-5


def as_matrix(a, name="matrix"):
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


def _shape(a):
    return "x".join(str(s) for s in np.shape(a))


def matmul(a, b):
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {_shape(a)} @ {_shape(b)}")
    return kernels.matmul(a, b)


def softmax_rows(m):
    m = as_matrix(m, "m")
    if m.size == 0:
        raise ShapeError("softmax_rows needs a nonempty matrix")
    return kernels.softmax_rows(m)


def layer_norm(v, gamma, beta, eps=LAYER_NORM_EPS):
    """Normalise ``v`` to zero mean and unit (population) variance, then scale.

    ``v`` may be a single vector or a matrix, in which case every row is
    normalised independently.  Constant input maps to ``beta``.
    """
    v = np.asarray(v, dtype=np.float64)
    gamma = np.ascontiguousarray(gamma, dtype=np.float64)
    beta = np.ascontiguousarray(beta, dtype=np.float64)
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    x = as_matrix(np.atleast_2d(v), "v")
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm dimension mismatch: v {_shape(v)}, gamma {_shape(gamma)}, "
            f"beta {_shape(beta)}"
        )
    y, _, _ = kernels.layer_norm_rows(x, gamma, beta, float(eps))
    return y[0] if v.ndim == 1 else y


# --------------------------------------------------------------------------
# gradient tape
# --------------------------------------------------------------------------

class Tensor:
    """A value recorded on a tape.  ``grad`` is filled in by :func:`backward`."""

    __slots__ = ("value", "grad", "name", "tape", "is_param")

    def __init__(self, value, tape, name=None, is_param=False):
        self.value = value
        self.grad = None
        self.name = name
        self.tape = tape
        self.is_param = is_param

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.value.shape}>"


def _accum(t, g):
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, order="C")
    else:
        t.grad += g


class Tape:
    """Ordered record of primitive operations for one forward/backward pair.

    A tape is single-use: after :func:`backward` has run it refuses further
    recording or a second backward pass.
    """

    def __init__(self):
        self._ops = []
        self._params = []
        self._done = False

    def __len__(self):
        return len(self._ops)

    @property
    def params(self):
        return list(self._params)

    def _check_open(self):
        if self._done:
            raise UsageError("tape already consumed by backward()")

    def _own(self, *ts):
        for t in ts:
            if not isinstance(t, Tensor) or t.tape is not self:
                raise UsageError("operand was not recorded on this tape")

    def _record(self, value, inputs, back):
        out = Tensor(value, self)
        self._ops.append((back, inputs, out))
        return out

    # -- leaves -------------------------------------------------------------

    def param(self, value, name=None):
        self._check_open()
        t = Tensor(np.array(value, dtype=np.float64), self, name=name, is_param=True)
        self._params.append(t)
        return t

    def constant(self, value):
        self._check_open()
        return Tensor(np.asarray(value, dtype=np.float64), self)

    # -- primitive ops -------------------------------------------------------

    def matmul(self, a, b):
        self._own(a, b)
        out = matmul(a.value, b.value)

        def back(g):
            _accum(a, kernels.matmul(g, np.ascontiguousarray(b.value.T)))
            _accum(b, kernels.matmul(np.ascontiguousarray(a.value.T), g))

        return self._record(out, (a, b), back)

    def add(self, a, b):
        self._own(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"add shape mismatch: {_shape(a.value)} + {_shape(b.value)}")

        def back(g):
            _accum(a, g)
            _accum(b, g)

        return self._record(a.value + b.value, (a, b), back)

    def sub(self, a, b):
        self._own(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"sub shape mismatch: {_shape(a.value)} - {_shape(b.value)}")

        def back(g):
            _accum(a, g)
            _accum(b, -g)

        return self._record(a.value - b.value, (a, b), back)

    def scale(self, a, c):
        self._own(a)
        c = float(c)
        return self._record(a.value * c, (a,), lambda g: _accum(a, g * c))

    def mask(self, a, m):
        """Elementwise product with a constant array (dropout masks)."""
        self._own(a)
        m = np.asarray(m, dtype=np.float64)
        return self._record(a.value * m, (a,), lambda g: _accum(a, g * m))

    def softmax_rows(self, a):
        self._own(a)
        y = softmax_rows(a.value)
        return self._record(y, (a,), lambda g: _accum(a, kernels.softmax_rows_backward(y, g)))

    def layer_norm(self, x, gamma, beta, eps=LAYER_NORM_EPS):
        self._own(x, gamma, beta)
        xv = as_matrix(x.value, "x")
        if gamma.shape != (xv.shape[1],) or beta.shape != (xv.shape[1],):
            raise ShapeError(
                f"layer_norm dimension mismatch: x {_shape(xv)}, gamma "
                f"{_shape(gamma.value)}, beta {_shape(beta.value)}"
            )
        y, xhat, inv_std = kernels.layer_norm_rows(xv, gamma.value, beta.value, float(eps))

        def back(g):
            gx, gg, gb = kernels.layer_norm_rows_backward(g, xhat, inv_std, gamma.value)
            _accum(x, gx)
            _accum(gamma, gg)
            _accum(beta, gb)

        return self._record(y, (x, gamma, beta), back)

    def concat_cols(self, parts):
        self._own(*parts)
        widths = [p.shape[1] for p in parts]
        out = np.ascontiguousarray(np.concatenate([p.value for p in parts], axis=1))

        def back(g):
            start = 0
            for p, w in zip(parts, widths):
                _accum(p, g[:, start:start + w])
                start += w

        return self._record(out, tuple(parts), back)

    def block_scores(self, a, b, k):
        """Per-group ``A_g @ B_g.T`` over row groups of size ``k``."""
        self._own(a, b)
        if a.shape != b.shape or a.shape[0] % k:
            raise ShapeError(f"block_scores shape mismatch: {_shape(a.value)}, {_shape(b.value)}, k={k}")
        out = kernels.block_scores(a.value, b.value, k)

        def back(g):
            _accum(a, kernels.block_attend(g, b.value, k))
            _accum(b, kernels.block_attend(kernels.block_transpose(g, k), a.value, k))

        return self._record(out, (a, b), back)

    def block_attend(self, p, v, k):
        """Per-group ``P_g @ V_g`` where ``P`` is ``(n*k, k)``."""
        self._own(p, v)
        if p.shape[1] != k or p.shape[0] != v.shape[0] or p.shape[0] % k:
            raise ShapeError(f"block_attend shape mismatch: {_shape(p.value)}, {_shape(v.value)}, k={k}")
        out = kernels.block_attend(p.value, v.value, k)

        def back(g):
            _accum(p, kernels.block_scores(g, v.value, k))
            _accum(v, kernels.block_attend(kernels.block_transpose(p.value, k), g, k))

        return self._record(out, (p, v), back)

    def group_mean(self, x, k):
        """Mean over consecutive row groups of size ``k``: ``(n*k, d) -> (n, d)``."""
        self._own(x)
        if x.shape[0] % k:
            raise ShapeError(f"group_mean: {x.shape[0]} rows not divisible by k={k}")
        out = kernels.group_mean(x.value, k)
        return self._record(out, (x,), lambda g: _accum(x, np.repeat(g, k, axis=0) / k))

    def row_norms(self, x, squared=False):
        self._own(x)
        sq = (x.value * x.value).sum(axis=1)
        if squared:
            return self._record(sq, (x,), lambda g: _accum(x, 2.0 * g[:, None] * x.value))
        n = np.sqrt(sq)

        def back(g):
            safe = np.where(n > 0, n, 1.0)
            coef = np.where(n > 0, g / safe, 0.0)
            _accum(x, coef[:, None] * x.value)

        return self._record(n, (x,), back)

    def sum(self, x):
        self._own(x)
        shape = x.shape
        return self._record(np.asarray(x.value.sum()), (x,), lambda g: _accum(x, np.full(shape, float(g))))

    def mean(self, x):
        self._own(x)
        shape = x.shape
        n = x.value.size
        return self._record(np.asarray(x.value.mean()), (x,), lambda g: _accum(x, np.full(shape, float(g) / n)))

    def sumsq(self, x):
        self._own(x)
        return self._record(np.asarray((x.value * x.value).sum()), (x,), lambda g: _accum(x, 2.0 * float(g) * x.value))


def backward(tape, loss, seed=1.0):
    """Propagate ``seed * d(loss)`` back through ``tape``.

    Returns a dict mapping each named parameter to its gradient (zeros for
    parameters the loss does not depend on).  Every recorded op is visited
    exactly once, newest first.
    """
    if not isinstance(tape, Tape):
        raise UsageError("backward() needs a Tape")
    if tape._done:
        raise UsageError("backward() already ran on this tape")
    if not tape._ops:
        raise UsageError("backward() called before any forward op was recorded")
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise UsageError("loss was not produced on this tape")
    if loss.value.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")
    if not any(out is loss for _, _, out in tape._ops):
        raise UsageError("loss is a leaf; record a forward pass first")

    tape._done = True
    loss.grad = np.full(loss.value.shape, float(seed))
    for back, _inputs, out in reversed(tape._ops):
        if out.grad is None:
            continue
        back(out.grad)

    grads = {}
    for i, p in enumerate(tape._params):
        key = p.name if p.name is not None else f"param{i}"
        grads[key] = p.grad if p.grad is not None else np.zeros_like(p.value)
    return grads
