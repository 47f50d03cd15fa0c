"""Minimal reverse-mode differentiation engine on float64 numpy arrays.

Values are computed eagerly at node construction (which is the topological
order of the expression DAG), so `forward` amounts to reading the root value.
`backward` walks the DAG in reverse topological order and accumulates
vector-Jacobian products into the `.grad` of every node that requires
gradients.

Primitives keep their adjoint next to the forward rule; compound operations
(cosine similarity, L2 norm, the losses in other modules) are compositions of
primitives and inherit exact adjoints. Every op checks its output for
non-finite values and raises NumericError naming the offending op.

No in-place mutation of any array reachable from a live node.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, UsageError

Array = np.ndarray

# Names of primitive ops with registered adjoints; the gradient test suite
# iterates over this registry.
PRIMITIVES: dict[str, Callable[[np.random.Generator], "Tensor"]] = {}


def _check_finite(value: Array, op: str) -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """A DAG node: float64 value, optional gradient, and adjoint closures."""

    __slots__ = ("value", "grad", "op", "parents", "vjps", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        _check_finite(self.value, "leaf")
        self.grad: Array | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.vjps: tuple[Callable[[Array], Array], ...] = ()
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph walking ------------------------------------------------------

    def _topo(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all grad-requiring nodes."""
        if self.value.size != 1:
            raise UsageError(
                f"backward requires a scalar root, got shape {self.value.shape}"
            )
        order = self._topo()
        adjoint: dict[int, Array] = {id(self): np.ones_like(self.value)}
        for node in reversed(order):
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            for parent, vjp in zip(node.parents, node.vjps):
                if not (parent.requires_grad or parent.parents):
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + contrib
                else:
                    adjoint[key] = contrib

    # -- operator sugar -----------------------------------------------------

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

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def forward(root: Tensor) -> Array:
    """Value of the (eagerly evaluated) DAG rooted at `root`."""
    return np.array(root.value)


def _node(op: str, value: Array, parents: Sequence[Tensor], vjps) -> Tensor:
    _check_finite(value, op)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.requires_grad = False
    if any(p.requires_grad or p.parents for p in parents):
        out.op = op
        out.parents = tuple(parents)
        out.vjps = tuple(vjps)
    else:
        out.op = op
        out.parents = ()
        out.vjps = ()
    return out


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic primitives ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "add",
        a.value + b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "sub",
        a.value - b.value,
        (a, b),
        (lambda g: _unbroadcast(g, a.value.shape), lambda g: _unbroadcast(-g, b.value.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node("neg", -a.value, (a,), (lambda g: -g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        "mul",
        a.value * b.value,
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.value.shape),
            lambda g: _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.value / b.value
    return _node(
        "div",
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g / b.value, a.value.shape),
            lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    """np.matmul semantics with broadcasting over leading batch dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim == 1:
        return reshape(matmul(reshape(a, (1, -1)), b), b.value.shape[:-2] + b.value.shape[-1:])
    if b.value.ndim == 1:
        return reshape(matmul(a, reshape(b, (-1, 1))), a.value.shape[:-1])

    def vjp_a(g: Array) -> Array:
        return _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.value.shape)

    def vjp_b(g: Array) -> Array:
        return _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.value.shape)

    return _node("matmul", np.matmul(a.value, b.value), (a, b), (vjp_a, vjp_b))


# -- shape primitives ---------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _node(
        "reshape",
        a.value.reshape(shape),
        (a,),
        (lambda g: g.reshape(a.value.shape),),
    )


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.value.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(
        "transpose",
        np.transpose(a.value, axes),
        (a,),
        (lambda g: np.transpose(g, inverse),),
    )


# -- pointwise primitives ------------------------------------------------------


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _node("relu", np.where(mask, a.value, 0.0), (a,), (lambda g: g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return _node("exp", out, (a,), (lambda g: g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node("log", out, (a,), (lambda g: g / a.value,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.value)
    return _node("sqrt", out, (a,), (lambda g: g / (2.0 * out),))


# -- reductions ----------------------------------------------------------------


def _restore_reduced(g: Array, shape: tuple[int, ...], axis, keepdims: bool) -> Array:
    if not keepdims:
        if axis is None:
            g = np.asarray(g).reshape((1,) * len(shape))
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = tuple(ax % len(shape) for ax in axes)
            kept = list(g.shape)
            for ax in sorted(axes):
                kept.insert(ax, 1)
            g = g.reshape(kept)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _node(
        "sum",
        np.sum(a.value, axis=axis, keepdims=keepdims),
        (a,),
        (lambda g: _restore_reduced(g, a.value.shape, axis, keepdims).copy(),),
    )


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.mean(a.value, axis=axis, keepdims=keepdims)
    count = a.value.size / max(out.size, 1)
    return _node(
        "mean",
        out,
        (a,),
        (lambda g: _restore_reduced(g, a.value.shape, axis, keepdims) / count,),
    )


# -- softmax -------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g: Array) -> Array:
        return s * (g - np.sum(g * s, axis=axis, keepdims=True))

    return _node("softmax", s, (a,), (vjp,))


# -- convolutions --------------------------------------------------------------


def conv1d(x, w, stride: int = 1) -> Tensor:
    """Temporal convolution with same-padding.

    x: (..., C_in, T, J), w: (C_out, C_in, K) with K odd. The T axis is
    convolved independently per joint; stride 1 preserves T.
    """
    x, w = as_tensor(x), as_tensor(w)
    co, ci, k = w.value.shape
    if k % 2 == 0:
        raise ConfigError(f"temporal kernel size must be odd, got {k}")
    if x.value.shape[-3] != ci:
        raise ConfigError(
            f"conv1d channel mismatch: input has {x.value.shape[-3]}, kernel expects {ci}"
        )
    pad = (k - 1) // 2
    t = x.value.shape[-2]
    t_out = (t + 2 * pad - k) // stride + 1
    pad_spec = [(0, 0)] * (x.value.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.value, pad_spec)
    out = np.zeros(x.value.shape[:-3] + (co, t_out, x.value.shape[-1]), dtype=np.float64)
    taps = []
    for tap in range(k):
        xk = xp[..., :, tap : tap + (t_out - 1) * stride + 1 : stride, :]
        taps.append(xk)
        out += np.einsum("oi,...itj->...otj", w.value[:, :, tap], xk)

    def vjp_x(g: Array) -> Array:
        gxp = np.zeros_like(xp)
        for tap in range(k):
            gxp[..., :, tap : tap + (t_out - 1) * stride + 1 : stride, :] += np.einsum(
                "oi,...otj->...itj", w.value[:, :, tap], g
            )
        return gxp[..., :, pad : pad + t, :]

    def vjp_w(g: Array) -> Array:
        gw = np.zeros_like(w.value)
        j = g.shape[-1]
        g3 = g.reshape(-1, co, t_out, j)
        for tap in range(k):
            gw[:, :, tap] = np.einsum(
                "botj,bitj->oi", g3, taps[tap].reshape(-1, ci, t_out, j)
            )
        return gw

    return _node("conv1d", out, (x, w), (vjp_x, vjp_w))


def conv2d(x, w, stride: int = 1) -> Tensor:
    """2D convolution with same-padding (odd kernels), strided.

    x: (..., C_in, H, W), w: (C_out, C_in, KH, KW).
    """
    x, w = as_tensor(x), as_tensor(w)
    co, ci, kh, kw = w.value.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel dims must be odd, got {kh}x{kw}")
    if x.value.shape[-3] != ci:
        raise ConfigError(
            f"conv2d channel mismatch: input has {x.value.shape[-3]}, kernel expects {ci}"
        )
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, wd = x.value.shape[-2], x.value.shape[-1]
    h_out = (h + 2 * ph - kh) // stride + 1
    w_out = (wd + 2 * pw - kw) // stride + 1
    pad_spec = [(0, 0)] * (x.value.ndim - 2) + [(ph, ph), (pw, pw)]
    xp = np.pad(x.value, pad_spec)
    out = np.zeros(x.value.shape[:-3] + (co, h_out, w_out), dtype=np.float64)
    taps: list[Array] = []
    for ta in range(kh):
        for tb in range(kw):
            xk = xp[
                ...,
                :,
                ta : ta + (h_out - 1) * stride + 1 : stride,
                tb : tb + (w_out - 1) * stride + 1 : stride,
            ]
            taps.append(xk)
            out += np.einsum("oi,...ihw->...ohw", w.value[:, :, ta, tb], xk)

    def vjp_x(g: Array) -> Array:
        gxp = np.zeros_like(xp)
        for ta in range(kh):
            for tb in range(kw):
                gxp[
                    ...,
                    :,
                    ta : ta + (h_out - 1) * stride + 1 : stride,
                    tb : tb + (w_out - 1) * stride + 1 : stride,
                ] += np.einsum("oi,...ohw->...ihw", w.value[:, :, ta, tb], g)
        return gxp[..., :, ph : ph + h, pw : pw + wd]

    def vjp_w(g: Array) -> Array:
        gw = np.zeros_like(w.value)
        g4 = g.reshape(-1, co, h_out, w_out)
        idx = 0
        for ta in range(kh):
            for tb in range(kw):
                gw[:, :, ta, tb] = np.einsum(
                    "bohw,bihw->oi", g4, taps[idx].reshape(-1, ci, h_out, w_out)
                )
                idx += 1
        return gw

    return _node("conv2d", out, (x, w), (vjp_x, vjp_w))


# -- compound ops (compositions, exact adjoints by construction) ---------------

NORM_GUARD = 1e-12  # added to each norm so cosine stays finite at zero vectors


def l2norm(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return sqrt(reduce_sum(mul(a, a), axis=axis, keepdims=keepdims))


def cosine_similarity(a, b) -> Tensor:
    """Cosine of the angle between two vectors, norm-guarded near zero."""
    a, b = as_tensor(a), as_tensor(b)
    dot = reduce_sum(mul(a, b))
    return div(dot, mul(add(l2norm(a), NORM_GUARD), add(l2norm(b), NORM_GUARD)))


def normalize(a, axis: int = -1) -> Tensor:
    """Rows scaled to unit L2 norm along `axis` (norm-guarded near zero)."""
    a = as_tensor(a)
    return div(a, add(l2norm(a, axis=axis, keepdims=True), NORM_GUARD))


def log_softmax(a, axis: int = -1) -> Tensor:
    """Numerically safe log of softmax; the max shift is a constant, so the
    gradient is unchanged."""
    a = as_tensor(a)
    shift = np.max(a.value, axis=axis, keepdims=True)
    z = sub(a, shift)
    return sub(z, log(reduce_sum(exp(z), axis=axis, keepdims=True)))


def cross_entropy(scores, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(scores).

    scores: (B, C) Tensor or array; labels: (B,) integer array.
    """
    scores = as_tensor(scores)
    labels = np.asarray(labels, dtype=np.int64)
    if len(scores.shape) != 2:
        raise UsageError(f"cross_entropy expects (B, C) scores, got shape {scores.shape}")
    if labels.shape != (scores.shape[0],):
        raise UsageError(
            f"cross_entropy labels shape {labels.shape} does not match batch {scores.shape[0]}"
        )
    onehot = np.eye(scores.shape[1])[labels]
    picked = reduce_sum(mul(log_softmax(scores, axis=-1), onehot), axis=-1)
    return neg(reduce_mean(picked))


# -- gradient checking ----------------------------------------------------------


def gradcheck(f, x, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps one array (or a list of arrays) to a scalar Tensor; the error at
    each coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    xs = [np.array(v, dtype=np.float64) for v in (x if isinstance(x, (list, tuple)) else [x])]
    leaves = [Tensor(v.copy(), requires_grad=True) for v in xs]
    out = f(*leaves)
    if not isinstance(out, Tensor) or out.value.size != 1:
        raise UsageError("gradcheck target must return a scalar Tensor")
    out.backward()

    def eval_at(mutated: list[Array]) -> float:
        return float(f(*[Tensor(v) for v in mutated]).value)

    worst = 0.0
    for i, base in enumerate(xs):
        analytic = leaves[i].grad
        if analytic is None:
            analytic = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            saved = base[idx]
            base[idx] = saved + eps
            hi = eval_at(xs)
            base[idx] = saved - eps
            lo = eval_at(xs)
            base[idx] = saved
            numeric = (hi - lo) / (2.0 * eps)
            if not np.isfinite(numeric):
                raise NumericError(f"finite differences overflowed at index {idx}")
            err = abs(float(analytic[idx]) - numeric) / max(1.0, abs(float(analytic[idx])))
            worst = max(worst, err)
    return worst


# -- primitive registry for the gradient test suite -----------------------------


def _reg(name: str):
    def decorator(builder):
        PRIMITIVES[name] = builder
        return builder

    return decorator


@_reg("add")
def _case_add(rng):
    return lambda a, b: reduce_sum(mul(add(a, b), add(a, b))), [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))]


@_reg("sub")
def _case_sub(rng):
    return lambda a, b: reduce_sum(mul(sub(a, b), sub(a, b))), [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))]


@_reg("neg")
def _case_neg(rng):
    return lambda a: reduce_sum(mul(neg(a), neg(a))), [rng.standard_normal((5,))]


@_reg("mul")
def _case_mul(rng):
    return lambda a, b: reduce_sum(mul(a, b)), [rng.standard_normal((3, 2)), rng.standard_normal((3, 1))]


@_reg("div")
def _case_div(rng):
    return lambda a, b: reduce_sum(div(a, b)), [
        rng.standard_normal((3, 3)),
        rng.uniform(0.5, 2.0, (3, 3)),
    ]


@_reg("matmul")
def _case_matmul(rng):
    return lambda a, b: reduce_sum(mul(matmul(a, b), matmul(a, b))), [
        rng.standard_normal((2, 3, 4)),
        rng.standard_normal((4, 2)),
    ]


@_reg("reshape")
def _case_reshape(rng):
    return lambda a: reduce_sum(mul(reshape(a, (6,)), reshape(a, (6,)))), [rng.standard_normal((2, 3))]


@_reg("transpose")
def _case_transpose(rng):
    return lambda a: reduce_sum(mul(transpose(a, (1, 0, 2)), transpose(a, (1, 0, 2)))), [
        rng.standard_normal((2, 3, 2))
    ]


@_reg("relu")
def _case_relu(rng):
    # offset keeps points away from the kink
    x = rng.standard_normal((4, 3))
    x = np.where(np.abs(x) < 0.1, x + 0.3, x)
    return lambda a: reduce_sum(mul(relu(a), relu(a))), [x]


@_reg("exp")
def _case_exp(rng):
    return lambda a: reduce_sum(exp(a)), [rng.standard_normal((3, 3))]


@_reg("log")
def _case_log(rng):
    return lambda a: reduce_sum(log(a)), [rng.uniform(0.5, 3.0, (3, 3))]


@_reg("sqrt")
def _case_sqrt(rng):
    return lambda a: reduce_sum(sqrt(a)), [rng.uniform(0.5, 3.0, (4,))]


@_reg("sum")
def _case_sum(rng):
    return lambda a: reduce_sum(mul(reduce_sum(a, axis=1), reduce_sum(a, axis=1))), [
        rng.standard_normal((3, 4))
    ]


@_reg("mean")
def _case_mean(rng):
    return lambda a: reduce_sum(mul(reduce_mean(a, axis=(1, 2)), reduce_mean(a, axis=(1, 2)))), [
        rng.standard_normal((2, 3, 4))
    ]


@_reg("softmax")
def _case_softmax(rng):
    w = rng.standard_normal((3, 4))
    return lambda a: reduce_sum(mul(softmax(a, axis=-1), Tensor(w))), [rng.standard_normal((3, 4))]


@_reg("conv1d")
def _case_conv1d(rng):
    return lambda x, w: reduce_sum(mul(conv1d(x, w), conv1d(x, w))), [
        rng.standard_normal((2, 5, 3)),
        rng.standard_normal((3, 2, 3)),
    ]


@_reg("conv2d")
def _case_conv2d(rng):
    return lambda x, w: reduce_sum(mul(conv2d(x, w, stride=2), conv2d(x, w, stride=2))), [
        rng.standard_normal((2, 5, 6)),
        rng.standard_normal((3, 2, 3, 3)),
    ]


def primitive_case(name: str, rng: np.random.Generator):
    """Build (callable, inputs) for a registered primitive's gradcheck."""
    return PRIMITIVES[name](rng)
