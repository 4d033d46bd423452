"""Dense float64 tensors with reverse-mode automatic differentiation.

Shapes are kept deliberately small: scalars (rank 0), vectors (rank 1) and
matrices (rank 2, batch axis first). Binary operations broadcast a vector or
scalar operand along the leading axis of a matrix operand and nothing else.
All data is contiguous row-major float64.

Tensors are immutable once forward-evaluated; graph construction and backward
are single-threaded per training run.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

EPS_FLOOR = 1e-10

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context (evaluation, optimizer steps)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy-backed value participating in the autodiff graph.

    `grad` accumulates only on leaf tensors created with `requires_grad=True`
    (parameters and explicitly tracked inputs); intermediate adjoints live in
    per-backward scratch buffers so repeated `backward` calls accumulate
    cleanly on the leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], Sequence[np.ndarray]] | None = None
        self._op = "leaf"

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._bw is None

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.data.shape})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


# -- graph construction ---------------------------------------------------------


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], bw) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite result in op '{op}'")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
        out._op = op
    return out


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return
    # scalar against anything
    if sa == () or sb == ():
        return
    # vector against the trailing axis of a matrix (leading-axis broadcast)
    if len(sa) == 2 and sb == sa[1:]:
        return
    if len(sb) == 2 and sa == sb[1:]:
        return
    raise DimensionError(f"{op}: shapes {sa} and {sb} are not broadcastable")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce `grad` back to `shape` after leading-axis broadcasting."""
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # vector broadcast along the leading axis: sum it out
    return grad.sum(axis=0)


def _binary(op: str, a: Tensor, b: Tensor, data, da, db) -> Tensor:
    def bw(g: np.ndarray):
        return (
            _unbroadcast(da(g), a.data.shape),
            _unbroadcast(db(g), b.data.shape),
        )

    return _make(data, op, (a, b), bw)


# -- elementwise ops ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    return _binary("add", a, b, a.data + b.data, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    return _binary("sub", a, b, a.data - b.data, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data
    with np.errstate(over="ignore"):
        out = ad * bd
    return _binary("mul", a, b, out, lambda g: g * bd, lambda g: g * ad)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Division with the epsilon floor applied to the denominator magnitude."""
    _broadcast_check(a, b, "div")
    bd = b.data
    safe = np.where(np.abs(bd) < EPS_FLOOR, np.where(bd < 0, -EPS_FLOOR, EPS_FLOOR), bd)
    inside = np.abs(bd) >= EPS_FLOOR
    ad = a.data
    return _binary(
        "div",
        a,
        b,
        ad / safe,
        lambda g: g / safe,
        lambda g: np.where(inside, -g * ad / (safe * safe), 0.0),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, "exp", (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    """Natural log with inputs floored at EPS_FLOOR (clamp, do not error)."""
    x = np.maximum(a.data, EPS_FLOOR)
    inside = a.data >= EPS_FLOOR
    return _make(np.log(x), "log", (a,), lambda g: (np.where(inside, g / x, 0.0),))


def sqrt(a: Tensor) -> Tensor:
    x = np.maximum(a.data, EPS_FLOOR)
    inside = a.data >= EPS_FLOOR
    out = np.sqrt(x)
    return _make(out, "sqrt", (a,), lambda g: (np.where(inside, g / (2.0 * out), 0.0),))


def square(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(over="ignore"):
        out = ad * ad
    return _make(out, "square", (a,), lambda g: (2.0 * g * ad,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return _make(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = _stable_sigmoid(x)
    return _make(out, "softplus", (a,), lambda g: (g * sig,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient passes only inside the range."""
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), "clip", (a,), lambda g: (g * inside,))


# -- matrix ops -------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul: expected rank-2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def bw(g: np.ndarray):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, "matmul", (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected rank-2, got {a.data.shape}")
    return _make(np.ascontiguousarray(a.data.T), "transpose", (a,), lambda g: (g.T,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate rank-2 tensors along axis 1."""
    parts = list(parts)
    if not parts:
        raise ContractError("concat_cols: empty input")
    rows = parts[0].data.shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[0] != rows:
            raise DimensionError("concat_cols: operands must share the batch axis")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g: np.ndarray):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), "concat", tuple(parts), bw)


def row(a: Tensor, i: int) -> Tensor:
    """Select row `i` of a rank-2 tensor as a vector."""
    if a.data.ndim != 2:
        raise DimensionError(f"row: expected rank-2, got {a.data.shape}")
    if not 0 <= i < a.data.shape[0]:
        raise DimensionError(f"row: index {i} out of range for {a.data.shape}")

    def bw(g: np.ndarray):
        full = np.zeros_like(a.data)
        full[i] = g
        return (full,)

    return _make(a.data[i].copy(), "row", (a,), bw)


def reshape_col(a: Tensor) -> Tensor:
    """View a batch vector (B,) as a single column (B, 1)."""
    if a.data.ndim != 1:
        raise DimensionError(f"reshape_col: expected rank-1, got {a.data.shape}")
    return _make(a.data.reshape(-1, 1), "reshape_col", (a,), lambda g: (g.reshape(-1),))


# -- reductions ---------------------------------------------------------------------


def _check_axis(a: Tensor, axis: int | None, op: str) -> None:
    if axis is None:
        if a.data.size == 0:
            raise DimensionError(f"{op}: empty reduction")
        return
    if axis < 0 or axis >= a.data.ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for shape {a.data.shape}")
    if a.data.shape[axis] == 0:
        raise DimensionError(f"{op}: empty reduction axis {axis}")


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    _check_axis(a, axis, "sum")
    shape = a.data.shape

    def bw(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(a.data.sum(axis=axis), "sum", (a,), bw)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    _check_axis(a, axis, "mean")
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def bw(g: np.ndarray):
        if axis is None:
            return (np.broadcast_to(g / n, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _make(a.data.mean(axis=axis), "mean", (a,), bw)


def logsumexp(a: Tensor, axis: int | None = None) -> Tensor:
    """Max-shifted log-sum-exp; never overflows for finite input."""
    _check_axis(a, axis, "logsumexp")
    x = a.data
    if axis is None:
        m = x.max()
        e = np.exp(x - m)
        s = e.sum()
        out = np.asarray(m + np.log(s))
        soft = e / s

        def bw(g: np.ndarray):
            return (g * soft,)

    else:
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        s = e.sum(axis=axis, keepdims=True)
        out = np.squeeze(m + np.log(s), axis=axis)
        soft = e / s

        def bw(g: np.ndarray):
            return (np.expand_dims(g, axis) * soft,)

    return _make(out, "logsumexp", (a,), bw)


_ELEMENTWISE = {
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "neg": neg,
    "square": square,
    "sqrt": sqrt,
}

_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Dispatch-by-name front door for the elementwise op set."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"elementwise: '{op}' needs two operands")
        return _BINARY[op](a, b)
    if op in _ELEMENTWISE:
        if b is not None:
            raise ContractError(f"elementwise: '{op}' is unary")
        return _ELEMENTWISE[op](a)
    raise ContractError(f"elementwise: unknown op '{op}'")


def reduce(op: str, a: Tensor, axis: int | None = None) -> Tensor:
    if op == "sum":
        return sum_(a, axis)
    if op == "mean":
        return mean(a, axis)
    if op == "logsumexp":
        return logsumexp(a, axis)
    raise ContractError(f"reduce: unknown op '{op}'")


# -- backward pass -----------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable requires-grad leaf.

    Repeated calls without zeroing add up; adjoints of interior nodes are
    scratch state local to each call.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if node._bw is None:
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            continue
        parent_grads = node._bw(g)
        for parent, pg in zip(node._parents, parent_grads):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = np.array(pg, dtype=np.float64, copy=True)


# -- symmetric eigendecomposition ----------------------------------------------------


def _jacobi_eigh(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi sweeps; returns eigenvalues (descending) and eigenvectors."""
    a = mat.copy()
    d = a.shape[0]
    v = np.eye(d)
    if d == 1:
        return a.reshape(1).copy(), v
    max_sweeps = 100 * d * d
    scale = max(np.abs(np.diag(a)).max(), 1.0)
    converged = False
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off <= 1e-14 * scale:
            converged = True
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                vp = c * v[:, p] - s * v[:, q]
                vq = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = vp, vq
    else:
        converged = False
    if not converged:
        off = np.sqrt(np.sum(np.triu(a, 1) ** 2))
        if off > 1e-10 * scale:
            raise NumericError(f"sym_eig: Jacobi iteration did not converge (off={off:.3e})")
    lam = np.diag(a).copy()
    idx = np.argsort(-lam, kind="stable")
    return lam[idx], np.ascontiguousarray(v[:, idx])


def sym_eig(a: Tensor) -> tuple[Tensor, Tensor]:
    """Eigendecomposition of a symmetric matrix (eigenvalues descending).

    Both outputs are differentiable with respect to the input; contributions
    from the eigenvalue and eigenvector paths accumulate independently into
    the adjoint of `a`.
    """
    mat = a.data
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"sym_eig: expected square matrix, got {mat.shape}")
    d = mat.shape[0]
    if d > 256:
        raise ContractError(f"sym_eig: dimension {d} exceeds the 256 desk-scale guard")
    asym = np.abs(mat - mat.T).max()
    if asym > 1e-8:
        raise ContractError(f"sym_eig: input not symmetric (max asymmetry {asym:.3e})")
    lam, vec = _jacobi_eigh(0.5 * (mat + mat.T))

    def bw_lam(g: np.ndarray):
        da = vec @ np.diag(g) @ vec.T
        return (0.5 * (da + da.T),)

    def bw_vec(g: np.ndarray):
        diff = lam[None, :] - lam[:, None]
        small = np.abs(diff) < 1e-12
        safe = np.where(small, 1.0, diff)
        f = np.where(small, 0.0, 1.0 / safe)
        da = vec @ (f * (vec.T @ g)) @ vec.T
        return (0.5 * (da + da.T),)

    lam_t = _make(lam, "sym_eig.values", (a,), bw_lam)
    vec_t = _make(vec, "sym_eig.vectors", (a,), bw_vec)
    return lam_t, vec_t
