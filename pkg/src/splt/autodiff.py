"""Dense-tensor numeric backend with reverse-mode automatic differentiation.

Arrays are plain numpy ndarrays (float64 by default, float32 available for
speed); the differentiation machinery is a flat tape of recorded primitive
applications.  Every primitive appends one node to the active tape, so the
tape is topologically ordered by construction and a single reverse sweep
computes exact gradients for all reachable parameters.

Scope is deliberately small: exactly the primitives needed by the sequence
models in this package (matmul, softmax, layer norm, gelu, elementwise
arithmetic, reshaping/stacking/slicing, and a straight-through sampling node),
plus a decoupled-weight-decay Adam optimizer and a linear-warmup schedule.
No GPU, no threads, no graph optimizations.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf as _erf

DEFAULT_DTYPE = np.float64

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Form of the gelu nonlinearity used by this backend; recorded in checkpoint
# metadata so trained parameters are tied to the activation that produced them.
GELU_FORM = "exact-erf"


class Tensor:
    """A dense array plus gradient metadata.

    ``data`` is always a numpy ndarray.  ``grad`` is filled in by
    ``Tape.backward`` for leaf tensors created with ``requires_grad=True``
    (model parameters); everything else keeps ``grad=None``.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are promoted to constants of matching dtype.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    """Wrap a scalar/array as a constant Tensor, matching ``like``'s dtype."""
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype))


class _Node:
    """One recorded primitive application: inputs, output, and its vjp."""

    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output: Tensor, inputs: tuple, vjp):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of primitive applications for one backward pass.

    Use as a context manager around the forward computation, then call
    ``backward(loss)`` exactly once.  Nodes are appended in execution order,
    so every node's inputs precede it and the reverse sweep visits each node
    at most once.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False
        self._output_ids: set[int] = set()

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(param) into ``.grad`` of every reachable leaf.

        ``loss`` must be a scalar recorded on this tape.  Calling backward a
        second time on the same tape is rejected; re-record the forward pass
        instead.
        """
        if self.consumed:
            raise RuntimeError("tape already consumed; re-record the forward pass before calling backward again")
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self.consumed = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            contribs = node.vjp(gout)
            for inp, g in zip(node.inputs, contribs):
                if g is None or not inp.requires_grad:
                    continue
                if id(inp) in self._output_ids:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + g
                    else:
                        grads[key] = g
                else:
                    # Leaf parameter: accumulate into .grad.
                    if inp.grad is None:
                        inp.grad = np.array(g, copy=True)
                    else:
                        inp.grad = inp.grad + g


_ACTIVE_TAPE: Tape | None = None
_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _record(out: Tensor, inputs: tuple, vjp) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is None or not _GRAD_ENABLED:
        out.requires_grad = False
        return out
    if any(i.requires_grad for i in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, inputs, vjp))
        tape._output_ids.add(id(out))
    else:
        out.requires_grad = False
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source operand."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise and structural primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data + b.data)

    def vjp(g):
        return (_sum_to_shape(g, a.data.shape), _sum_to_shape(g, b.data.shape))

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data - b.data)

    def vjp(g):
        return (_sum_to_shape(g, a.data.shape), _sum_to_shape(-g, b.data.shape))

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data * b.data)

    def vjp(g):
        ga = _sum_to_shape(g * b.data, a.data.shape) if a.requires_grad else None
        gb = _sum_to_shape(g * a.data, b.data.shape) if b.requires_grad else None
        return (ga, gb)

    return _record(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    out = Tensor(a.data / b.data)

    def vjp(g):
        ga = _sum_to_shape(g / b.data, a.data.shape) if a.requires_grad else None
        gb = _sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape) if b.requires_grad else None
        return (ga, gb)

    return _record(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _record(out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient passes where a >= floor."""
    out = Tensor(np.maximum(a.data, floor))
    mask = (a.data >= floor).astype(a.data.dtype)
    return _record(out, (a,), lambda g: (g * mask,))


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.data.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(old_shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(a.data.transpose(axes))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing.  Gradient scatters back into a zero array."""
    out = Tensor(a.data[idx])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _record(out, (a,), vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _record(out, tensors, vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Arithmetic mean, built from sum and a constant scale."""
    if axis is None:
        n = a.data.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for d in ax:
            n *= a.data.shape[d]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# Dense algebra and network primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy-style batching on leading axes.

    Backward: dA = dC @ B^T, dB = A^T @ dC, with broadcast axes summed out.
    """
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul requires ndim >= 2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _sum_to_shape(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
        if b.requires_grad:
            gb = _sum_to_shape(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)
        return (ga, gb)

    return _record(out, (a, b), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``.

    Inputs containing NaN are rejected.  -inf entries are allowed and map to
    exact zeros, which is what the attention mask relies on.
    """
    m = np.max(x.data, axis=axis, keepdims=True)
    # NaN propagates through max, so scanning the (much smaller) max array
    # detects NaN anywhere in the input without a second full pass.
    if np.isnan(m).any():
        raise ValueError("softmax input contains NaN")
    z = np.exp(x.data - m)
    denom = z.sum(axis=axis, keepdims=True)
    p = z / denom
    out = Tensor(p)

    def vjp(g):
        inner = (g * p).sum(axis=axis, keepdims=True)
        return (p * (g - inner),)

    return _record(out, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if x.data.shape[-1] < 1:
        raise ValueError("layer_norm needs a non-empty normalization axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def vjp(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = _sum_to_shape(g * xhat, gain.data.shape)
        if bias.requires_grad:
            gbias = _sum_to_shape(g, bias.data.shape)
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (dxhat - m1 - xhat * m2)
        return (gx, ggain, gbias)

    return _record(out, (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    """Exact gelu, x * Phi(x); derivative Phi(x) + x * phi(x)."""
    phi_cdf = 0.5 * (1.0 + _erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * phi_cdf)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (phi_cdf + x.data * pdf),)

    return _record(out, (x,), vjp)


def straight_through_sample(probs: Tensor, rng: np.random.Generator) -> Tensor:
    """Sample one-hot categorical codes, routing gradients to the probabilities.

    ``probs`` has shape (..., c) with rows summing to 1.  The forward value is
    an exact one-hot array; the backward rule passes the incoming gradient to
    ``probs`` unchanged, i.e. the output behaves like
    ``one_hot(sample) + probs - stop_gradient(probs)``.
    """
    p = probs.data
    cum = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1] + (1,), dtype=np.float64).astype(p.dtype)
    idx = np.minimum((u > cum).sum(axis=-1), p.shape[-1] - 1)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    out = Tensor(onehot)
    return _record(out, (probs,), lambda g: (g,))


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments plus hyperparameters, keyed by parameter name.

    ``decay_params`` lists the parameter names that receive (decoupled) weight
    decay; when None, decay applies to every parameter.  The step counter
    increases by exactly one per ``adam_step`` call.
    """

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_params: frozenset | None = None
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    The decay term (param <- param - lr * wd * param) is applied separately
    from the adaptive update and only to ``state.decay_params``.  Non-finite
    gradients reject the whole step.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient for parameter {name!r}; step rejected")
        if g.shape != params[name].data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} shape {params[name].data.shape}")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if state.weight_decay != 0.0 and (state.decay_params is None or name in state.decay_params):
            p.data -= state.lr * state.weight_decay * p.data
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def lr_schedule(step: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to ``base_lr`` over ``warmup_steps``, constant after."""
    if warmup_steps < 1:
        raise ValueError("warmup_steps must be >= 1")
    return base_lr * min(1.0, step / warmup_steps)


def zero_grad(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.grad for name, p in params.items() if p.grad is not None}


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
