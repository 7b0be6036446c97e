"""Dense float64 tensors with a recording tape for reverse-mode differentiation.

Every operation is a method on :class:`Tape`. The tape appends one node per
executed op, in execution order, so the node list is already topologically
sorted; ``Tape.backward`` walks it once in reverse. Gradients propagate
through a per-pass scratch map and are only committed to ``Tensor.grad`` on
tensors with ``requires_grad=True``, where they accumulate (add, never
overwrite) until ``zero_grad``.

Storage is row-major float64 throughout. There is no general broadcasting;
the only shape-bending ops are the explicit ``add_rowvec`` (bias row added to
every row) and ``layernorm`` (per-row affine with 1-D gain/bias), which keeps
every backward rule auditable.

Tensors are immutable after construction except for the grad slot. A tape and
the tensors recorded on it belong to one thread for the duration of a
forward/backward pass; independent passes on independent tapes are safe to
run concurrently.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Sequence

import numpy as np

from . import backend
from .errors import ContractError, DegenerateRowWarning, InputError, ShapeError

DEGENERATE_NORM_EPS = 1e-12
LAYERNORM_EPS = 1e-5


def _as_f64(values) -> np.ndarray:
    if (
        type(values) is np.ndarray
        and values.dtype == np.float64
        and (values.ndim == 0 or values.flags["C_CONTIGUOUS"])
    ):
        return values
    arr = np.asarray(values, dtype=np.float64)
    # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tensor:
    """A dense value with an optional gradient slot.

    ``data`` is a C-contiguous float64 ndarray (0-, 1- or 2-dimensional here;
    nothing in the package needs more). ``grad``, when present, has the same
    shape. Only leaves created with ``requires_grad=True`` ever receive a
    committed gradient.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_f64(values)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "backward")

    def __init__(self, out: Tensor, backward: Callable):
        self.out = out
        self.backward = backward


def _check_2d(name: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name} expects a 2-D tensor, got shape {t.shape}")


class Tape:
    """Ordered record of executed operations; every op is a method here."""

    def __init__(self):
        self._nodes: list[_Node] = []

    @property
    def nodes(self) -> list[_Node]:
        return self._nodes

    def _record(self, values, backward: Callable) -> Tensor:
        out = Tensor(values)
        self._nodes.append(_Node(out, backward))
        return out

    # ------------------------------------------------------------------ leaves

    def const(self, values) -> Tensor:
        """Wrap raw values as a non-differentiable tensor (no node recorded)."""
        return Tensor(values)

    # -------------------------------------------------------------- arithmetic

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

        def bwd(g, accum):
            accum(a, g, False)
            accum(b, g, False)

        return self._record(a.data + b.data, bwd)

    def add_rowvec(self, a: Tensor, v: Tensor) -> Tensor:
        """Add the 1-D row ``v`` to every row of 2-D ``a`` (explicit bias op)."""
        _check_2d("add_rowvec", a)
        if v.data.ndim != 1 or v.shape[0] != a.shape[1]:
            raise ShapeError(f"add_rowvec: row {v.shape} does not fit {a.shape}")

        def bwd(g, accum):
            accum(a, g, False)
            accum(v, g.sum(axis=0), True)

        return self._record(a.data + v.data, bwd)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

        def bwd(g, accum):
            accum(a, g * b.data, True)
            accum(b, g * a.data, True)

        return self._record(a.data * b.data, bwd)

    def scale(self, a: Tensor, c: float) -> Tensor:
        c = float(c)

        def bwd(g, accum):
            if c == 0.0:
                return  # an exactly-zero factor contributes nothing upstream
            accum(a, g * c, True)

        return self._record(a.data * c, bwd)

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        """Matrix product; backward is dA = dC @ B^T, dB = A^T @ dC."""
        _check_2d("matmul", a)
        _check_2d("matmul", b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}"
            )

        def bwd(g, accum):
            accum(a, g @ b.data.T, True)
            accum(b, a.data.T @ g, True)

        return self._record(a.data @ b.data, bwd)

    def transpose(self, a: Tensor) -> Tensor:
        _check_2d("transpose", a)

        def bwd(g, accum):
            accum(a, g.T.copy())

        return self._record(np.ascontiguousarray(a.data.T), bwd)

    # ------------------------------------------------------------- elementwise

    def gelu(self, a: Tensor) -> Tensor:
        """tanh-form GELU."""

        def bwd(g, accum):
            accum(a, backend.gelu_bwd(a.data, g), True)

        return self._record(backend.gelu_fwd(a.data), bwd)

    def exp(self, a: Tensor) -> Tensor:
        out_data = np.exp(a.data)

        def bwd(g, accum):
            accum(a, g * out_data, True)

        return self._record(out_data, bwd)

    def log(self, a: Tensor) -> Tensor:
        if (a.data <= 0.0).any():
            raise InputError("log: input must be strictly positive")

        def bwd(g, accum):
            accum(a, g / a.data, True)

        return self._record(np.log(a.data), bwd)

    # -------------------------------------------------------------- reductions

    def sum(self, a: Tensor) -> Tensor:
        def bwd(g, accum):
            accum(a, np.full(a.shape, float(g)), True)

        return self._record(a.data.sum(), bwd)

    def mean(self, a: Tensor) -> Tensor:
        size = a.data.size

        def bwd(g, accum):
            accum(a, np.full(a.shape, float(g) / size), True)

        return self._record(a.data.mean(), bwd)

    def logsumexp_rows(self, a: Tensor) -> Tensor:
        """Per-row log(sum(exp(row))), max-shifted; returns a 1-D tensor."""
        _check_2d("logsumexp_rows", a)
        m = a.data.max(axis=1)
        e = np.exp(a.data - m[:, None])
        s = e.sum(axis=1)
        softmax = e / s[:, None]

        def bwd(g, accum):
            accum(a, softmax * g[:, None], True)

        return self._record(m + np.log(s), bwd)

    # ------------------------------------------------------------ row shuffles

    def row_gather(self, a: Tensor, indices: Sequence[int]) -> Tensor:
        """Select rows by index; duplicate indices accumulate in the backward."""
        _check_2d("row_gather", a)
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1:
            raise ShapeError("row_gather: indices must be a flat sequence")
        if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
            raise ContractError(
                f"row_gather: index out of range for {a.shape[0]} rows"
            )

        def bwd(g, accum):
            da = np.zeros_like(a.data)
            np.add.at(da, idx, g)
            accum(a, da, True)

        return self._record(a.data[idx], bwd)

    def row_concat(self, parts: Sequence[Tensor]) -> Tensor:
        """Stack 2-D tensors with equal column counts along rows."""
        if not parts:
            raise ShapeError("row_concat: need at least one tensor")
        for p in parts:
            _check_2d("row_concat", p)
        cols = {p.shape[1] for p in parts}
        if len(cols) != 1:
            raise ShapeError(f"row_concat: column counts differ: {sorted(cols)}")
        sizes = [p.shape[0] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bwd(g, accum):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                accum(p, g[lo:hi], False)

        return self._record(np.concatenate([p.data for p in parts], axis=0), bwd)

    def col_slice(self, a: Tensor, lo: int, hi: int) -> Tensor:
        """Contiguous column range [lo, hi) of a 2-D tensor."""
        _check_2d("col_slice", a)
        if not 0 <= lo < hi <= a.shape[1]:
            raise ShapeError(
                f"col_slice: range [{lo}, {hi}) invalid for {a.shape[1]} columns"
            )

        def bwd(g, accum):
            da = np.zeros_like(a.data)
            da[:, lo:hi] = g
            accum(a, da, True)

        return self._record(a.data[:, lo:hi], bwd)

    def col_concat(self, parts: Sequence[Tensor]) -> Tensor:
        """Stack 2-D tensors with equal row counts along columns."""
        if not parts:
            raise ShapeError("col_concat: need at least one tensor")
        for p in parts:
            _check_2d("col_concat", p)
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise ShapeError(f"col_concat: row counts differ: {sorted(rows)}")
        sizes = [p.shape[1] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def bwd(g, accum):
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                accum(p, g[:, lo:hi], False)

        return self._record(np.concatenate([p.data for p in parts], axis=1), bwd)

    # ------------------------------------------------------- normalized layers

    def softmax_rows(self, a: Tensor) -> Tensor:
        """Row-stochastic softmax (stabilized by row-max subtraction)."""
        _check_2d("softmax_rows", a)
        y = backend.softmax_rows_fwd(a.data)

        def bwd(g, accum):
            accum(a, backend.softmax_rows_bwd(y, g), True)

        return self._record(y, bwd)

    def layernorm(self, a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
        """Per-row zero-mean unit-variance normalization with affine gain/bias."""
        _check_2d("layernorm", a)
        d = a.shape[1]
        if gain.shape != (d,) or bias.shape != (d,):
            raise ShapeError(
                f"layernorm: gain {gain.shape} / bias {bias.shape} do not fit "
                f"width {d}"
            )
        y, xhat, rstd = backend.layernorm_fwd(
            a.data, gain.data, bias.data, LAYERNORM_EPS
        )

        def bwd(g, accum):
            dx, dgain, dbias = backend.layernorm_bwd(xhat, rstd, gain.data, g)
            accum(a, dx, True)
            accum(gain, dgain, True)
            accum(bias, dbias, True)

        return self._record(y, bwd)

    def l2_normalize_rows(self, a: Tensor) -> Tensor:
        """Scale each row to unit Euclidean norm.

        Rows with norm below ``DEGENERATE_NORM_EPS`` pass through unchanged
        and raise :class:`DegenerateRowWarning` (their backward is identity).
        """
        _check_2d("l2_normalize_rows", a)
        norms = np.sqrt((a.data * a.data).sum(axis=1))
        degenerate = norms < DEGENERATE_NORM_EPS
        if degenerate.any():
            warnings.warn(
                f"{int(degenerate.sum())} zero-norm row(s) passed through "
                "l2_normalize_rows unchanged",
                DegenerateRowWarning,
                stacklevel=2,
            )
        safe = np.where(degenerate, 1.0, norms)
        y = a.data / safe[:, None]

        def bwd(g, accum):
            inner = (y * g).sum(axis=1, keepdims=True)
            da = (g - y * inner) / safe[:, None]
            da[degenerate] = g[degenerate]
            accum(a, da, True)

        return self._record(y, bwd)

    # ---------------------------------------------------------------- backward

    def backward(self, loss: Tensor) -> None:
        """Propagate d(loss)/d(leaf) into every requires_grad leaf.

        The loss must be a scalar produced through this tape. Each node is
        visited exactly once, in reverse execution order. Repeated calls
        without ``zero_grad`` accumulate into leaf gradients.
        """
        if loss.data.size != 1:
            raise ContractError(
                f"backward: loss must be scalar, got shape {loss.shape}"
            )
        scratch: dict[int, np.ndarray] = {}
        leaves: dict[int, Tensor] = {}

        def accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
            # ``owned`` marks arrays freshly allocated by the caller, safe to
            # keep without copying; unowned arrays may alias other gradients
            key = id(t)
            held = scratch.get(key)
            if held is None:
                scratch[key] = g if owned else g.copy()
                if t.requires_grad:
                    leaves[key] = t
            else:
                held += g

        accum(loss, np.ones_like(loss.data), True)
        for node in reversed(self._nodes):
            g = scratch.get(id(node.out))
            if g is None:
                continue  # no gradient reached this subgraph
            node.backward(g, accum)
        for key, leaf in leaves.items():
            if leaf.grad is None:
                leaf.grad = scratch[key]
            else:
                leaf.grad += scratch[key]


def gradcheck(
    f: Callable[[Tape], Tensor],
    leaves: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` must deterministically build a scalar from the given leaves on the
    tape it receives. Returns the maximum over all leaf coordinates of
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    if eps <= 0.0:
        raise ContractError("gradcheck: eps must be positive")
    for leaf in leaves:
        leaf.zero_grad()
    tape = Tape()
    out = f(tape)
    tape.backward(out)

    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f(Tape()).item()
            flat[i] = orig - eps
            f_minus = f(Tape()).item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst


def sqrt_d_scale(d_head: int) -> float:
    """Attention score scale 1/sqrt(d_head)."""
    return 1.0 / math.sqrt(d_head)
