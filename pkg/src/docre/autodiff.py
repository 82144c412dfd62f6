"""Dense float64 tensors with a tape-based reverse-mode gradient record.

Operations only record onto a :class:`Tape` while one is active and at least
one input needs a gradient, so inference outside a tape costs no bookkeeping::

    w = Parameter(np.ones(3), name="w")
    with Tape() as tape:
        loss = w.sum()
    tape.backward(loss)      # w.grad == [1, 1, 1]
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

BCE_EPS = 1e-12
COSINE_EPS = 1e-12


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class BackwardError(RuntimeError):
    pass


_active_tapes: list["Tape"] = []


def _active() -> "Tape | None":
    return _active_tapes[-1] if _active_tapes else None


class Tensor:
    __slots__ = ("data", "node", "tape")

    def __init__(self, data, *, _tape: "Tape | None" = None, _node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = _tape
        self.node = _node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def requires_grad(self) -> bool:
        return self.node is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self):
        return tsum(self)

    def mean(self):
        return mean(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


class Parameter(Tensor):
    """A named leaf whose gradient is accumulated by :meth:`Tape.backward`."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.float64))
        self.name = name
        self.grad = np.zeros_like(self.data)

    @property
    def requires_grad(self) -> bool:
        return True

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Append-only computation record.

    Nodes are appended in execution order, which is a topological order, so
    the backward sweep is a reverse scan.
    """

    def __init__(self):
        self.kinds: list[str] = []
        self.inputs: list[tuple[Tensor, ...]] = []
        self.backwards: list[Callable[[np.ndarray], Sequence[np.ndarray | None]]] = []
        self.done = False

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.kinds)

    def record(self, kind, out, inputs, backward) -> int:
        self.kinds.append(kind)
        self.inputs.append(tuple(inputs))
        self.backwards.append(backward)
        return len(self.kinds) - 1

    def clear(self) -> None:
        self.kinds.clear()
        self.inputs.clear()
        self.backwards.clear()
        self.done = False

    def backward(self, loss: Tensor) -> None:
        if self.done:
            raise BackwardError("backward already ran on this tape; clear() it before reuse")
        if loss.tape is not self or loss.node is None:
            raise BackwardError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise BackwardError(f"loss must be a scalar, got shape {loss.shape}")
        self.done = True
        grads: dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
        for i in range(loss.node, -1, -1):
            g = grads.pop(i, None)
            if g is None:
                continue
            for inp, gi in zip(self.inputs[i], self.backwards[i](g)):
                if gi is None:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += gi
                elif inp.tape is self and inp.node is not None:
                    if inp.node in grads:
                        grads[inp.node] = grads[inp.node] + gi
                    else:
                        grads[inp.node] = gi


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(t: Tensor) -> bool:
    return isinstance(t, Parameter) or t.node is not None


def _make(kind: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite values produced by {kind}")
    tape = _active()
    if tape is None or not any(_needs_grad(t) for t in inputs):
        return Tensor(out)
    t = Tensor(out, _tape=tape)
    t.node = tape.record(kind, t, inputs, backward)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = sigmoid_array(a.data)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    m = a.data > 0
    return _make("relu", a.data * m, (a,), lambda g: (g * m,))


def dropout(a, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make("dropout", a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    """Matrix product. Leading batch dimensions are allowed on ``a`` (and on
    ``b`` when they match)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
        b.ndim > 2 and b.shape[:-2] != a.shape[:-2]
    ):
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        if gb.ndim > bd.ndim:
            gb = gb.reshape(-1, *bd.shape).sum(axis=0)
        return ga, gb

    return _make("matmul", ad @ bd, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def index(a, key) -> Tensor:
    """Basic or integer-array indexing; gradients scatter-add back."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, key, g)
        return (out,)

    return _make("index", np.array(a.data[key]), (a,), backward)


def take_rows(a, rows) -> Tensor:
    """Row gather along axis 0, e.g. an embedding lookup."""
    return index(a, np.asarray(rows, dtype=np.intp))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    return _make("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence[Tensor]) -> Tensor:
    return concat([reshape(t, (1, *t.shape)) for t in tensors], axis=0)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", np.asarray(a.data.sum(axis=axis)), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return scale(tsum(a), 1.0 / a.data.size)


# ---------------------------------------------------------------- reductions


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make("softmax", y, (a,), backward)


def logsumexp_rows(m) -> Tensor:
    """Column-wise ``log(sum_i exp(m[i, j]))`` over the k rows of ``m``."""
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"logsumexp_rows expects a k x d matrix, got {m.shape}")
    if m.shape[0] == 0:
        raise ShapeError("logsumexp_rows: empty pool (k = 0)")
    mx = m.data.max(axis=0)
    e = np.exp(m.data - mx)
    s = e.sum(axis=0)
    w = e / s
    return _make("logsumexp_rows", mx + np.log(s), (m,), lambda g: (w * g,))


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = x.shape[-1]

    def backward(g):
        gx = g * gd
        dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        return (dx, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, beta.shape))

    return _make("layer_norm", xhat * gd + beta.data, (a, gamma, beta), backward)


# ---------------------------------------------------------------- similarity and losses


def cosine_matrix(a, b) -> Tensor:
    """All-pairs cosine similarity between rows of ``a`` [n x d] and ``b`` [m x d].

    A row whose norm is below ``COSINE_EPS`` yields similarity 0 and receives
    no gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    na = np.sqrt((ad * ad).sum(axis=1))
    nb = np.sqrt((bd * bd).sum(axis=1))
    oka, okb = na >= COSINE_EPS, nb >= COSINE_EPS
    ia = np.where(oka, 1.0 / np.where(oka, na, 1.0), 0.0)
    ib = np.where(okb, 1.0 / np.where(okb, nb, 1.0), 0.0)
    ua, ub = ad * ia[:, None], bd * ib[:, None]
    c = np.clip(ua @ ub.T, -1.0, 1.0)

    def backward(g):
        # d cos / d a_i = (u_b - c u_a) / |a_i|
        ga = (g @ ub - (g * c).sum(axis=1)[:, None] * ua) * ia[:, None]
        gb = (g.T @ ua - (g * c).sum(axis=0)[:, None] * ub) * ib[:, None]
        return ga, gb

    return _make("cosine", c, (a, b), backward)


def cosine_similarity(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape or a.shape[0] < 1:
        raise ShapeError(f"cosine: incompatible shapes {a.shape} and {b.shape}")
    return reshape(cosine_matrix(reshape(a, (1, -1)), reshape(b, (1, -1))), ())


def bilinear(x, y, w, b) -> Tensor:
    """Batched bilinear form ``out[p, r] = x[p] @ w[r] @ y[p] + b[r]``."""
    x, y, w, b = (as_tensor(t) for t in (x, y, w, b))
    if (x.ndim != 2 or y.shape != (x.shape[0], w.shape[2]) or w.ndim != 3
            or w.shape[1] != x.shape[1] or b.shape != (w.shape[0],)):
        raise ShapeError(f"bilinear: shapes {x.shape}, {y.shape}, {w.shape}, {b.shape}")
    xd, yd, wd = x.data, y.data, w.data
    xw = np.einsum("pi,rij->prj", xd, wd)  # [P, R, j]
    out = np.einsum("prj,pj->pr", xw, yd) + b.data

    def backward(g):
        gx = np.einsum("pr,rij,pj->pi", g, wd, yd, optimize=True)
        gy = np.einsum("pr,prj->pj", g, xw)
        gw = np.einsum("pr,pi,pj->rij", g, xd, yd, optimize=True)
        return gx, gy, gw, g.sum(axis=0)

    return _make("bilinear", out, (x, y, w, b), backward)


def bce(p, y) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against 0/1 targets ``y``.

    ``p`` is clamped to ``[BCE_EPS, 1 - BCE_EPS]``; clamped entries get no gradient.
    """
    p = as_tensor(p)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeError(f"bce: prediction shape {p.shape} vs target shape {y.shape}")
    pc = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)
    n = max(p.data.size, 1)
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).sum() / n

    def backward(g):
        return (g * inside * (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n,)

    return _make("bce", np.asarray(loss), (p,), backward)
