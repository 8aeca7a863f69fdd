"""Reverse-mode differentiation over a closed set of 2-D array primitives.

Everything the learning stack trains (attention layers, the Q-network MLP, the
weighted TD loss) is expressed through the operations in this module, each
carrying a hand-written vector-Jacobian product. Keeping the vocabulary small
and rank-2 only is what makes the analytic gradients exhaustively checkable
against central finite differences.

Values are float64 arrays of rank exactly 2; vectors travel as ``(n, 1)`` or
``(1, n)``. Every op takes the tape as its first argument; pass ``tape=None``
to evaluate without recording. The unrecorded path is how target-network and
greedy-action evaluations stay outside gradient flow.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "Tape", "Var", "backward", "stable_softmax", "neighborhood_softmax",
    "xavier_uniform", "matmul", "transpose", "reshape", "add", "sub",
    "add_rowvec", "add_colvec", "mul_rowvec", "mul_colvec", "scale", "cmul",
    "square", "leaky_relu", "relu", "elu", "softmax_rows", "concat_rows",
    "concat_cols", "take_rows", "take_cols", "row_sums", "sum_all",
]


class Var:
    """A rank-2 float64 value with a lazily allocated gradient accumulator."""

    __slots__ = ("value", "_grad")

    def __init__(self, value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"Var requires a rank-2 array, got shape {arr.shape}")
        self.value = arr
        self._grad = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> np.ndarray:
        """Accumulated gradient; zeros if nothing has flowed here."""
        if self._grad is None:
            return np.zeros_like(self.value)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Var(shape={self.value.shape})"


class Tape:
    """Ordered record of backward closures, walked in reverse by backward()."""

    __slots__ = ("_ops",)

    def __init__(self):
        self._ops: list = []

    def __len__(self) -> int:
        return len(self._ops)


def backward(tape: Tape, loss: Var) -> None:
    """Seed d(loss)/d(loss) = 1 and push adjoints back through the tape.

    The loss must be a (1, 1) value. Walking an empty tape is legal and leaves
    every gradient at zero.
    """
    if loss.value.shape != (1, 1):
        raise ValueError(f"backward needs a scalar (1, 1) loss, got {loss.value.shape}")
    loss._grad = np.ones((1, 1))
    for fn in reversed(tape._ops):
        fn()


def _acc(v: Var, delta: np.ndarray) -> None:
    # delta may alias the output gradient or a view; own a copy on first set.
    if v._grad is None:
        v._grad = np.array(delta)
    else:
        v._grad += delta


def _acc_own(v: Var, delta: np.ndarray) -> None:
    # caller guarantees delta is freshly allocated
    if v._grad is None:
        v._grad = delta
    else:
        v._grad += delta


def stable_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax, safe for arbitrarily large logits."""
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def neighborhood_softmax(scores: Mapping[int, float]) -> dict[int, float]:
    """Normalize a set of logits keyed by neighbor id into weights summing to 1."""
    if not scores:
        raise ValueError("softmax over an empty neighborhood")
    ids = list(scores)
    p = stable_softmax(np.array([scores[i] for i in ids], dtype=np.float64))
    return {i: float(w) for i, w in zip(ids, p)}


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Glorot-uniform draw for a (rows, cols) parameter."""
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


# ---------------------------------------------------------------------------
# primitives


def matmul(tape: Tape | None, a: Var, b: Var) -> Var:
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")
    out = Var(a.value @ b.value)
    if tape is not None:
        def back(a=a, b=b, out=out):
            g = out._grad
            if g is None:
                return
            _acc_own(a, g @ b.value.T)
            _acc_own(b, a.value.T @ g)
        tape._ops.append(back)
    return out


def transpose(tape: Tape | None, a: Var) -> Var:
    out = Var(a.value.T)
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc(a, g.T)
        tape._ops.append(back)
    return out


def reshape(tape: Tape | None, a: Var, rows: int, cols: int) -> Var:
    out = Var(a.value.reshape(rows, cols))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc(a, g.reshape(a.value.shape))
        tape._ops.append(back)
    return out


def add(tape: Tape | None, a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")
    out = Var(a.value + b.value)
    if tape is not None:
        def back(a=a, b=b, out=out):
            g = out._grad
            if g is None:
                return
            _acc(a, g)
            _acc(b, g)
        tape._ops.append(back)
    return out


def sub(tape: Tape | None, a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ValueError(f"sub shape mismatch: {a.value.shape} vs {b.value.shape}")
    out = Var(a.value - b.value)
    if tape is not None:
        def back(a=a, b=b, out=out):
            g = out._grad
            if g is None:
                return
            _acc(a, g)
            _acc_own(b, -g)
        tape._ops.append(back)
    return out


def add_rowvec(tape: Tape | None, a: Var, v: Var) -> Var:
    """a + v with v a (1, c) row broadcast down the rows of a."""
    if v.value.shape != (1, a.value.shape[1]):
        raise ValueError(f"add_rowvec needs (1, {a.value.shape[1]}), got {v.value.shape}")
    out = Var(a.value + v.value)
    if tape is not None:
        def back(a=a, v=v, out=out):
            g = out._grad
            if g is None:
                return
            _acc(a, g)
            _acc_own(v, g.sum(axis=0, keepdims=True))
        tape._ops.append(back)
    return out


def add_colvec(tape: Tape | None, a: Var, v: Var) -> Var:
    """a + v with v a (r, 1) column broadcast across the columns of a."""
    if v.value.shape != (a.value.shape[0], 1):
        raise ValueError(f"add_colvec needs ({a.value.shape[0]}, 1), got {v.value.shape}")
    out = Var(a.value + v.value)
    if tape is not None:
        def back(a=a, v=v, out=out):
            g = out._grad
            if g is None:
                return
            _acc(a, g)
            _acc_own(v, g.sum(axis=1, keepdims=True))
        tape._ops.append(back)
    return out


def mul_rowvec(tape: Tape | None, a: Var, v: Var) -> Var:
    if v.value.shape != (1, a.value.shape[1]):
        raise ValueError(f"mul_rowvec needs (1, {a.value.shape[1]}), got {v.value.shape}")
    out = Var(a.value * v.value)
    if tape is not None:
        def back(a=a, v=v, out=out):
            g = out._grad
            if g is None:
                return
            _acc_own(a, g * v.value)
            _acc_own(v, (g * a.value).sum(axis=0, keepdims=True))
        tape._ops.append(back)
    return out


def mul_colvec(tape: Tape | None, a: Var, v: Var) -> Var:
    if v.value.shape != (a.value.shape[0], 1):
        raise ValueError(f"mul_colvec needs ({a.value.shape[0]}, 1), got {v.value.shape}")
    out = Var(a.value * v.value)
    if tape is not None:
        def back(a=a, v=v, out=out):
            g = out._grad
            if g is None:
                return
            _acc_own(a, g * v.value)
            _acc_own(v, (g * a.value).sum(axis=1, keepdims=True))
        tape._ops.append(back)
    return out


def scale(tape: Tape | None, a: Var, c: float) -> Var:
    out = Var(a.value * c)
    if tape is not None:
        def back(a=a, out=out, c=c):
            g = out._grad
            if g is not None:
                _acc_own(a, g * c)
        tape._ops.append(back)
    return out


def cmul(tape: Tape | None, a: Var, arr: np.ndarray) -> Var:
    """Elementwise product with a constant array; no gradient flows to arr."""
    if arr.shape != a.value.shape:
        raise ValueError(f"cmul shape mismatch: {a.value.shape} vs {arr.shape}")
    out = Var(a.value * arr)
    if tape is not None:
        def back(a=a, out=out, arr=arr):
            g = out._grad
            if g is not None:
                _acc_own(a, g * arr)
        tape._ops.append(back)
    return out


def square(tape: Tape | None, a: Var) -> Var:
    out = Var(a.value * a.value)
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc_own(a, 2.0 * a.value * g)
        tape._ops.append(back)
    return out


def leaky_relu(tape: Tape | None, a: Var, slope: float = 0.2) -> Var:
    out = Var(np.where(a.value >= 0.0, a.value, slope * a.value))
    if tape is not None:
        def back(a=a, out=out, slope=slope):
            g = out._grad
            if g is not None:
                _acc_own(a, g * np.where(a.value >= 0.0, 1.0, slope))
        tape._ops.append(back)
    return out


def relu(tape: Tape | None, a: Var) -> Var:
    out = Var(np.maximum(a.value, 0.0))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc_own(a, g * (a.value > 0.0))
        tape._ops.append(back)
    return out


def elu(tape: Tape | None, a: Var) -> Var:
    out = Var(np.where(a.value > 0.0, a.value, np.expm1(a.value)))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                # below zero d/dx expm1(x) = expm1(x) + 1, reuse the forward value
                _acc_own(a, g * np.where(a.value > 0.0, 1.0, out.value + 1.0))
        tape._ops.append(back)
    return out


def softmax_rows(tape: Tape | None, a: Var) -> Var:
    """Independent max-subtracted softmax along every row."""
    if a.value.shape[1] == 0:
        raise ValueError("softmax over zero columns")
    out = Var(stable_softmax(a.value, axis=1))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is None:
                return
            y = out.value
            _acc_own(a, y * (g - (g * y).sum(axis=1, keepdims=True)))
        tape._ops.append(back)
    return out


def concat_rows(tape: Tape | None, parts: Sequence[Var]) -> Var:
    if not parts:
        raise ValueError("concat_rows of nothing")
    out = Var(np.concatenate([p.value for p in parts], axis=0))
    if tape is not None:
        def back(parts=tuple(parts), out=out):
            g = out._grad
            if g is None:
                return
            r = 0
            for p in parts:
                n = p.value.shape[0]
                _acc(p, g[r:r + n])
                r += n
        tape._ops.append(back)
    return out


def concat_cols(tape: Tape | None, parts: Sequence[Var]) -> Var:
    if not parts:
        raise ValueError("concat_cols of nothing")
    out = Var(np.concatenate([p.value for p in parts], axis=1))
    if tape is not None:
        def back(parts=tuple(parts), out=out):
            g = out._grad
            if g is None:
                return
            c = 0
            for p in parts:
                n = p.value.shape[1]
                _acc(p, g[:, c:c + n])
                c += n
        tape._ops.append(back)
    return out


def take_rows(tape: Tape | None, a: Var, idx) -> Var:
    """Gather rows by integer index; duplicates allowed (gradient scatter-adds)."""
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[idx])
    if tape is not None:
        def back(a=a, out=out, idx=idx):
            g = out._grad
            if g is None:
                return
            d = np.zeros_like(a.value)
            np.add.at(d, idx, g)
            _acc_own(a, d)
        tape._ops.append(back)
    return out


def take_cols(tape: Tape | None, a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[:, idx])
    if tape is not None:
        def back(a=a, out=out, idx=idx):
            g = out._grad
            if g is None:
                return
            d = np.zeros_like(a.value)
            np.add.at(d.T, idx, g.T)
            _acc_own(a, d)
        tape._ops.append(back)
    return out


def row_sums(tape: Tape | None, a: Var) -> Var:
    """Sum across columns, returning an (r, 1) column."""
    out = Var(a.value.sum(axis=1, keepdims=True))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc_own(a, np.repeat(g, a.value.shape[1], axis=1))
        tape._ops.append(back)
    return out


def sum_all(tape: Tape | None, a: Var) -> Var:
    out = Var(np.array([[a.value.sum()]]))
    if tape is not None:
        def back(a=a, out=out):
            g = out._grad
            if g is not None:
                _acc_own(a, np.full(a.value.shape, g[0, 0]))
        tape._ops.append(back)
    return out
