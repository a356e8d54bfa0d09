"""Reverse-mode gradient engine over float64 numpy arrays.

The engine exists to make every training-loss gradient exact and checkable:
losses are built from the primitives below, each of which carries a
hand-derived vector-Jacobian product, and :func:`finite_diff_check` verifies
any composition against central finite differences.

Shape discipline: elementwise operations require identical shapes, except
that either operand may be a scalar (explicitly supported scalar*tensor);
row-vector addition is its own documented primitive.  Anything else raises
:class:`ShapeError` rather than silently broadcasting.

All computation is 64-bit.  Values are treated as immutable once wrapped in
a :class:`Var`; gradient evaluation for one loss is single-threaded, and
independent losses may be evaluated concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Var",
    "ShapeError",
    "GradientError",
    "ParamVector",
    "add",
    "mul",
    "div",
    "neg",
    "matmul",
    "mv",
    "add_rowvec",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "sum_all",
    "sum_rows",
    "pick",
    "rows",
    "take",
    "concat1d",
    "stack_rows",
    "l2_normalize",
    "dot",
    "mean_rows",
    "logsumexp",
    "grad",
    "value_and_grad",
    "value_of",
    "finite_diff_check",
    "GradCheckReport",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GradientError(RuntimeError):
    """Loss evaluation produced a non-finite value."""


class Var:
    """A node in the gradient graph: a float64 array plus how to push grads back."""

    __slots__ = ("value", "grad", "_vjps")

    def __init__(self, value, _vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._vjps = _vjps

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_as_var(other)))

    def __rsub__(self, other):
        return add(_as_var(other), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_var(other), self)


def _as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x, dtype=np.float64))


def value_of(x) -> np.ndarray:
    """Plain float64 array behind a Var (or of a raw array)."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _is_scalar(v: Var) -> bool:
    return v.value.ndim == 0


def _sum_to_scalar(g) -> np.ndarray:
    return np.asarray(np.sum(g), dtype=np.float64)


def _check_elementwise(op: str, a: Var, b: Var) -> None:
    if a.value.shape != b.value.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} do not match")


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_elementwise("add", a, b)
    vjp_a = _sum_to_scalar if (_is_scalar(a) and not _is_scalar(b)) else (lambda g: g)
    vjp_b = _sum_to_scalar if (_is_scalar(b) and not _is_scalar(a)) else (lambda g: g)
    return Var(a.value + b.value, ((a, vjp_a), (b, vjp_b)))


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_elementwise("mul", a, b)
    av, bv = a.value, b.value

    def vjp_a(g):
        ga = g * bv
        return _sum_to_scalar(ga) if (_is_scalar(a) and not _is_scalar(b)) else ga

    def vjp_b(g):
        gb = g * av
        return _sum_to_scalar(gb) if (_is_scalar(b) and not _is_scalar(a)) else gb

    return Var(av * bv, ((a, vjp_a), (b, vjp_b)))


def div(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_elementwise("div", a, b)
    av, bv = a.value, b.value

    def vjp_a(g):
        ga = g / bv
        return _sum_to_scalar(ga) if (_is_scalar(a) and not _is_scalar(b)) else ga

    def vjp_b(g):
        gb = -g * av / (bv * bv)
        return _sum_to_scalar(gb) if (_is_scalar(b) and not _is_scalar(a)) else gb

    return Var(av / bv, ((a, vjp_a), (b, vjp_b)))


def neg(a) -> Var:
    a = _as_var(a)
    return Var(-a.value, ((a, lambda g: -g),))


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value
    return Var(av @ bv, ((a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)))


def mv(a, x) -> Var:
    """Matrix (n,m) times vector (m,) -> (n,)."""
    a, x = _as_var(a), _as_var(x)
    if a.value.ndim != 2 or x.value.ndim != 1 or a.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"mv: incompatible shapes {a.value.shape} @ {x.value.shape}")
    av, xv = a.value, x.value
    return Var(av @ xv, ((a, lambda g: np.outer(g, xv)), (x, lambda g: av.T @ g)))


def add_rowvec(m, v) -> Var:
    """Add vector v (c,) to every row of m (r,c).  The one documented broadcast."""
    m, v = _as_var(m), _as_var(v)
    if m.value.ndim != 2 or v.value.ndim != 1 or m.value.shape[1] != v.value.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {m.value.shape} + {v.value.shape}")
    return Var(m.value + v.value, ((m, lambda g: g), (v, lambda g: g.sum(axis=0))))


def tanh(a) -> Var:
    a = _as_var(a)
    y = np.tanh(a.value)
    return Var(y, ((a, lambda g: g * (1.0 - y * y)),))


def exp(a) -> Var:
    a = _as_var(a)
    y = np.exp(a.value)
    return Var(y, ((a, lambda g: g * y),))


def log(a) -> Var:
    a = _as_var(a)
    return Var(np.log(a.value), ((a, lambda g: g / a.value),))


def sqrt(a) -> Var:
    a = _as_var(a)
    y = np.sqrt(a.value)
    return Var(y, ((a, lambda g: g / (2.0 * y)),))


def sum_all(a) -> Var:
    a = _as_var(a)
    shape = a.value.shape
    return Var(np.sum(a.value), ((a, lambda g: np.full(shape, float(g))),))


def sum_rows(m) -> Var:
    """Sum a (r,c) matrix over its rows -> (c,)."""
    m = _as_var(m)
    if m.value.ndim != 2:
        raise ShapeError(f"sum_rows: expected 2-d input, got shape {m.value.shape}")
    r = m.value.shape[0]
    return Var(m.value.sum(axis=0), ((m, lambda g: np.broadcast_to(g, (r, g.shape[0])).copy()),))


def pick(v, i: int) -> Var:
    """Element i of a vector, as a scalar."""
    v = _as_var(v)
    if v.value.ndim != 1:
        raise ShapeError(f"pick: expected 1-d input, got shape {v.value.shape}")
    n = v.value.shape[0]
    if not (0 <= i < n):
        raise IndexError(f"pick: index {i} out of range for length {n}")

    def vjp(g):
        out = np.zeros(n)
        out[i] = float(g)
        return out

    return Var(v.value[i], ((v, vjp),))


def rows(m, idx) -> Var:
    """Gather rows of a (r,c) matrix -> (len(idx), c)."""
    m = _as_var(m)
    if m.value.ndim != 2:
        raise ShapeError(f"rows: expected 2-d input, got shape {m.value.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("rows: index list must be 1-d and non-empty")
    if idx.min() < 0 or idx.max() >= m.value.shape[0]:
        raise IndexError(f"rows: indices out of range for {m.value.shape[0]} rows")
    shape = m.value.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return out

    return Var(m.value[idx], ((m, vjp),))


def take(v, idx) -> Var:
    """Gather elements of a vector -> (len(idx),).  Repeats allowed."""
    v = _as_var(v)
    if v.value.ndim != 1:
        raise ShapeError(f"take: expected 1-d input, got shape {v.value.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take: index list must be 1-d and non-empty")
    if idx.min() < 0 or idx.max() >= v.value.shape[0]:
        raise IndexError(f"take: indices out of range for length {v.value.shape[0]}")
    n = v.value.shape[0]

    def vjp(g):
        out = np.zeros(n)
        np.add.at(out, idx, g)
        return out

    return Var(v.value[idx], ((v, vjp),))


def concat1d(parts) -> Var:
    """Concatenate 1-d vectors end to end."""
    parts = [_as_var(p) for p in parts]
    if not parts:
        raise ShapeError("concat1d: empty input")
    if any(p.value.ndim != 1 for p in parts):
        raise ShapeError("concat1d: inputs must be 1-d vectors")
    offsets = np.cumsum([0] + [p.value.shape[0] for p in parts])
    vjps = tuple(
        (p, (lambda g, a=offsets[i], b=offsets[i + 1]: g[a:b])) for i, p in enumerate(parts)
    )
    return Var(np.concatenate([p.value for p in parts]), vjps)


def stack_rows(vs) -> Var:
    """Stack k vectors of equal length into a (k, c) matrix."""
    vs = [_as_var(v) for v in vs]
    if not vs:
        raise ShapeError("stack_rows: empty input")
    c = vs[0].value.shape
    if any(v.value.ndim != 1 or v.value.shape != c for v in vs):
        raise ShapeError("stack_rows: inputs must be 1-d vectors of equal length")
    vjps = tuple((v, (lambda g, i=i: g[i])) for i, v in enumerate(vs))
    return Var(np.stack([v.value for v in vs]), vjps)


def l2_normalize(x) -> Var:
    """Normalize a vector (or each row of a matrix) to unit L2 norm.

    Zero rows map to zero rather than NaN; their gradient is zero (there is
    no preferred direction to ascend).  A zero output therefore marks a
    degenerate input.
    """
    x = _as_var(x)
    if x.value.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize: expected 1-d or 2-d input, got {x.value.shape}")
    v = np.atleast_2d(x.value)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    y2 = v / safe
    nonzero = (norms > 0.0).astype(np.float64)
    y = y2[0] if x.value.ndim == 1 else y2

    def vjp(g):
        g2 = np.atleast_2d(g)
        inner = np.sum(g2 * y2, axis=1, keepdims=True)
        out = nonzero * (g2 - y2 * inner) / safe
        return out[0] if x.value.ndim == 1 else out

    return Var(y, ((x, vjp),))


def dot(u, v) -> Var:
    """Inner product of two vectors (composite: sum of elementwise product)."""
    u, v = _as_var(u), _as_var(v)
    if u.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ShapeError(f"dot: shapes {u.value.shape} and {v.value.shape}")
    return sum_all(mul(u, v))


def mean_rows(m) -> Var:
    m = _as_var(m)
    if m.value.ndim != 2:
        raise ShapeError(f"mean_rows: expected 2-d input, got shape {m.value.shape}")
    return mul(sum_rows(m), 1.0 / m.value.shape[0])


def logsumexp(v) -> Var:
    """log(sum(exp(v))) for a vector, max-shifted for stability.

    The shift is a detached constant, so the gradient is exactly that of the
    unshifted expression.
    """
    v = _as_var(v)
    if v.value.ndim != 1:
        raise ShapeError(f"logsumexp: expected 1-d input, got shape {v.value.shape}")
    c = float(np.max(v.value))
    return add(log(sum_all(exp(add(v, -c)))), c)


def _backward(root: Var) -> None:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._vjps:
            stack.append((parent, False))
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._vjps:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


@dataclass
class ParamVector:
    """Named parameter segments, each a float64 array.

    Segments keep insertion order; the flattened view concatenates them in
    that order, giving a bijection onto all parameters.  Instances are
    treated as immutable: updates go through ``axpy`` which returns a new
    vector, so snapshots are isolated for free.
    """

    segments: dict

    def __post_init__(self):
        named = {}
        for name, arr in self.segments.items():
            if name in named:
                raise ValueError(f"duplicate segment name {name!r}")
            named[str(name)] = np.array(arr, dtype=np.float64)
        self.segments = named

    def names(self):
        return list(self.segments.keys())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.segments[name]

    def total_count(self) -> int:
        return int(sum(a.size for a in self.segments.values()))

    def copy(self) -> "ParamVector":
        return ParamVector({k: v.copy() for k, v in self.segments.items()})

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.segments.values()])

    def axpy(self, alpha: float, other: "ParamVector") -> "ParamVector":
        """self + alpha * other, as a new ParamVector."""
        if self.names() != other.names():
            raise ValueError("ParamVector segment structures differ")
        return ParamVector(
            {k: self.segments[k] + alpha * other.segments[k] for k in self.segments}
        )

    def allclose(self, other: "ParamVector", atol: float = 0.0) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self.segments[k], other.segments[k], rtol=0.0, atol=atol)
            for k in self.segments
        )


def value_and_grad(loss_fn, at: ParamVector):
    """Loss value and its exact gradient in one evaluation.

    ``loss_fn`` receives a dict mapping segment names to Var leaves and must
    return a scalar Var built from this module's primitives.  A non-finite
    loss raises :class:`GradientError` instead of propagating silently.
    Segments the loss never touches get zero gradients.
    """
    leaves = {name: Var(arr) for name, arr in at.segments.items()}
    out = loss_fn(leaves)
    if not isinstance(out, Var) or out.value.ndim != 0:
        raise ValueError("loss_fn must return a scalar Var")
    if not np.isfinite(out.value):
        raise GradientError(f"loss evaluated to a non-finite value ({out.value})")
    _backward(out)
    g = ParamVector(
        {
            name: (leaf.grad if leaf.grad is not None else np.zeros(leaf.value.shape))
            for name, leaf in leaves.items()
        }
    )
    return float(out.value), g


def grad(loss_fn, at: ParamVector) -> ParamVector:
    """Exact gradient of a scalar loss with respect to every segment."""
    return value_and_grad(loss_fn, at)[1]


def _eval_loss(loss_fn, at: ParamVector) -> float:
    out = loss_fn({name: Var(arr) for name, arr in at.segments.items()})
    return float(out.value)


@dataclass
class GradCheckReport:
    """Per-segment comparison of analytic gradients against central differences."""

    step: float
    tol: float
    max_rel_error: float
    per_segment: dict
    flagged: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.flagged

    def summary(self) -> str:
        lines = [
            f"{name}: max rel error {err:.3e}" for name, err in self.per_segment.items()
        ]
        status = "OK" if self.passed else f"{len(self.flagged)} coordinate(s) over tol"
        lines.append(f"overall {self.max_rel_error:.3e} ({status})")
        return "\n".join(lines)


def finite_diff_check(loss_fn, at: ParamVector, step: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare grad() against central finite differences, coordinate by coordinate.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-12).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    analytic = grad(loss_fn, at)
    per_segment = {}
    flagged = []
    max_rel = 0.0
    for name in at.names():
        base = at.segments[name]
        seg_max = 0.0
        flat = base.reshape(-1)
        a_flat = analytic.segments[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            plus = at.copy()
            plus.segments[name].reshape(-1)[i] = orig + step
            minus = at.copy()
            minus.segments[name].reshape(-1)[i] = orig - step
            numeric = (_eval_loss(loss_fn, plus) - _eval_loss(loss_fn, minus)) / (2.0 * step)
            a = float(a_flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
            seg_max = max(seg_max, rel)
            if rel > tol:
                flagged.append((name, i, a, numeric, rel))
        per_segment[name] = seg_max
        max_rel = max(max_rel, seg_max)
    return GradCheckReport(step=step, tol=tol, max_rel_error=max_rel, per_segment=per_segment, flagged=flagged)
