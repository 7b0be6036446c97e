"""Zero-shot scoring, ranking metrics, and selection hit-rates.

Classification is prompt-based: an image is scored against a finding's
positive and negative text prompts, and the two similarities feed a
two-way softmax at the global temperature. AUROC is the Mann-Whitney U
statistic normalized by n_pos * n_neg, with ties counted half. Confusion
metrics binarize at a fixed threshold (0.5 by default).

Metrics that are undefined on a slice (single-class labels, empty case
sets) are reported as absent (None) and excluded from macro averages;
imputing 0 would silently deflate small evaluations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import Tape
from .errors import DegenerateMetricWarning, UndefinedMetricError

METRIC_NAMES = ("specificity", "precision", "recall", "f1", "auroc")


@dataclass(frozen=True)
class PromptPair:
    finding_id: int
    pos_tokens: tuple[int, ...]
    neg_tokens: tuple[int, ...]


def probability_from_sims(s_pos: float, s_neg: float, temperature: float) -> float:
    """Two-prompt softmax probability, computed as a stable sigmoid."""
    z = (s_pos - s_neg) / temperature
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def zero_shot_score(model, image: np.ndarray, prompt: PromptPair) -> float:
    """Probability that the image matches the prompt's positive side."""
    tape = Tape()
    v = model.encode_image(tape, image).global_embedding.data[0]
    t_pos = model.encode_text(tape, prompt.pos_tokens).global_embedding.data[0]
    t_neg = model.encode_text(tape, prompt.neg_tokens).global_embedding.data[0]
    return probability_from_sims(
        float(v @ t_pos), float(v @ t_neg), model.cfg.temperature_global
    )


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUROC with average ranks, so ties count 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise UndefinedMetricError("scores and labels must be equal-length vectors")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC undefined with {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class ThresholdMetrics(NamedTuple):
    specificity: float
    precision: float
    recall: float
    f1: float


def threshold_metrics(
    scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5
) -> ThresholdMetrics:
    """Confusion-matrix metrics after binarizing at ``score >= threshold``.

    Zero-denominator metrics come back as 0.0 with a
    :class:`DegenerateMetricWarning` naming the metric.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    tn = int((~pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())

    def ratio(num, den, name):
        if den == 0:
            warnings.warn(
                f"{name} has a zero denominator; reporting 0",
                DegenerateMetricWarning,
                stacklevel=3,
            )
            return 0.0
        return num / den

    specificity = ratio(tn, tn + fp, "specificity")
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    f1 = ratio(2.0 * precision * recall, precision + recall, "f1")
    return ThresholdMetrics(specificity, precision, recall, f1)


@dataclass
class FindingMetrics:
    finding_id: int
    n_pos: int
    n_neg: int
    specificity: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    auroc: float | None = None


@dataclass
class MetricReport:
    threshold: float
    per_finding: dict[int, FindingMetrics] = field(default_factory=dict)

    def macro(self, name: str) -> float | None:
        """Unweighted mean over findings where the metric is defined."""
        values = [
            getattr(m, name)
            for m in self.per_finding.values()
            if getattr(m, name) is not None
        ]
        if not values:
            return None
        return float(sum(values) / len(values))

    def to_kv_text(self) -> str:
        lines = [f"threshold = {self.threshold!r}"]
        for fid in sorted(self.per_finding):
            m = self.per_finding[fid]
            lines.append(f"finding{fid}.n_pos = {m.n_pos}")
            lines.append(f"finding{fid}.n_neg = {m.n_neg}")
            for name in METRIC_NAMES:
                value = getattr(m, name)
                rendered = "absent" if value is None else repr(value)
                lines.append(f"finding{fid}.{name} = {rendered}")
        for name in METRIC_NAMES:
            value = self.macro(name)
            rendered = "absent" if value is None else repr(value)
            lines.append(f"macro.{name} = {rendered}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["finding,metric,value"]
        for fid in sorted(self.per_finding):
            m = self.per_finding[fid]
            for name in METRIC_NAMES:
                value = getattr(m, name)
                rows.append(
                    f"{fid},{name},{'absent' if value is None else repr(value)}"
                )
        for name in METRIC_NAMES:
            value = self.macro(name)
            rows.append(f"macro,{name},{'absent' if value is None else repr(value)}")
        return "\n".join(rows) + "\n"


def build_report(
    outcomes: dict[int, tuple[Sequence[float], Sequence[int]]],
    threshold: float = 0.5,
) -> MetricReport:
    """Assemble per-finding metrics from {finding: (scores, labels)}."""
    report = MetricReport(threshold=threshold)
    for fid, (scores, labels) in sorted(outcomes.items()):
        y = np.asarray(labels)
        m = FindingMetrics(
            finding_id=fid, n_pos=int((y == 1).sum()), n_neg=int((y == 0).sum())
        )
        try:
            m.auroc = auroc(scores, labels)
        except UndefinedMetricError:
            m.auroc = None
        if m.n_pos > 0 and m.n_neg > 0:
            tm = threshold_metrics(scores, labels, threshold)
            m.specificity, m.precision, m.recall, m.f1 = tm
        report.per_finding[fid] = m
    return report


# ------------------------------------------------------- selection hit-rates


def selection_outcomes(model, eval_pairs) -> list[tuple[bool, bool]]:
    """Per (pair, present finding) case: (planted patch selected, ranked #1).

    Ranking uses the pair's own text through the fusion module.
    """
    from .crossmodal import rank_regions

    cases = []
    for pair in eval_pairs:
        if not pair.planted_patches:
            continue
        tape = Tape()
        enc = model.encode_pair(tape, pair.image, pair.tokens)
        selected = set(enc.selection.selected)
        ranked = rank_regions(enc.local, enc.selection)
        top_patch = ranked[0][0] if ranked else None
        for planted in pair.planted_patches.values():
            cases.append((planted in selected, planted == top_patch))
    return cases


def selection_hit_rate(model, eval_pairs) -> float | None:
    """Fraction of (pair, present finding) cases whose planted patch was
    selected; None when the corpus slice has no planted findings."""
    cases = selection_outcomes(model, eval_pairs)
    if not cases:
        return None
    return sum(hit for hit, _ in cases) / len(cases)


def rank1_hit_rate(model, eval_pairs) -> float | None:
    """Fraction of cases whose planted patch was the top-ranked region."""
    cases = selection_outcomes(model, eval_pairs)
    if not cases:
        return None
    return sum(top for _, top in cases) / len(cases)
