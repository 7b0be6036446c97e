"""Per-head attention rollout and maximum-attended region selection.

Rollout multiplies each head's attention-weight matrices across layers, in
layer order, giving one representative matrix per head; the class-token row
of that matrix scores how much the global representation attends to each
patch. Each head nominates its argmax patch; duplicates across heads are
collapsed (first-occurrence order) unless configured otherwise.

Rollout works on the plain weight matrices softmax(QK^T/sqrt(d)), not the
value-weighted layer outputs: a cross-layer product and an attended-to
argmax are only defined on the N x N row-stochastic weights.

Selection is hard and non-differentiable; gradients reach the encoder
through the gathered rows of reduce_sequence and through the attention
weights' own use inside the encoder, never through the argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .encoders import AttentionStack, EncodedSequence
from .errors import ContractError


@dataclass
class RolloutResult:
    per_head_final: np.ndarray  # (heads, N, N), product across layers
    per_head_class_row: np.ndarray  # (heads, N-1), class row minus class column


@dataclass
class RegionSelection:
    head_argmax: list[int]  # one patch index per head, before dedup
    selected: list[int]  # deduplicated, first-occurrence order
    scores: np.ndarray  # (len(selected), heads) rollout class-row scores


def rollout(stack: AttentionStack, residual: bool = False) -> RolloutResult:
    """Multiply each head's attention matrices across layers (layer order).

    With ``residual=True`` every layer matrix is first mixed with identity,
    0.5*A + 0.5*I, before the product (residual-aware variant, off by
    default).
    """
    try:
        arrays = stack.as_array()
    except ValueError as exc:
        raise ContractError(f"attention stack is ragged: {exc}") from exc
    if arrays.ndim != 4 or arrays.shape[0] == 0:
        raise ContractError("rollout needs a non-empty attention stack")
    n_layers, n_heads, n, m = arrays.shape
    if n != m:
        raise ContractError(f"attention matrices must be square, got {n}x{m}")
    if residual:
        arrays = 0.5 * arrays + 0.5 * np.eye(n)
    finals = np.empty((n_heads, n, n))
    for k in range(n_heads):
        acc = arrays[0, k]
        for layer in range(1, n_layers):
            acc = acc @ arrays[layer, k]
        finals[k] = acc
    return RolloutResult(
        per_head_final=finals,
        per_head_class_row=np.ascontiguousarray(finals[:, 0, 1:]),
    )


def select_regions(result: RolloutResult, keep_duplicates: bool = False) -> RegionSelection:
    """Pick each head's maximum-attended patch from the rollout class row.

    Ties break toward the lowest index. Duplicate picks across heads are
    removed, keeping the first (head-order) occurrence; ``keep_duplicates``
    preserves repeats for ablation, in which case ``selected`` may repeat.
    """
    rows = result.per_head_class_row
    head_argmax = [int(np.argmax(row)) for row in rows]
    if keep_duplicates:
        selected = list(head_argmax)
    else:
        selected = list(dict.fromkeys(head_argmax))
    scores = np.array([[rows[k][p] for k in range(rows.shape[0])] for p in selected])
    return RegionSelection(head_argmax=head_argmax, selected=selected, scores=scores)


def reduce_sequence(tape: Tape, encoded: EncodedSequence, selection: RegionSelection) -> Tensor:
    """Gather [class token; selected patch rows] from the encoded sequence.

    Patch index p lives at sequence row p + 1. The gather stays on the tape,
    so the kept rows remain differentiable back into the encoder.
    """
    n_rows = encoded.tokens.shape[0]
    for p in selection.selected:
        if p < 0 or p + 1 >= n_rows:
            raise ContractError(
                f"selected patch {p} out of range for sequence of {n_rows} rows"
            )
    indices = [0] + [p + 1 for p in selection.selected]
    return tape.row_gather(encoded.tokens, indices)
