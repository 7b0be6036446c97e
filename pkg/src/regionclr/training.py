"""Training loop, Adam optimizer, evaluation, heatmap export, gradient check.

Determinism contract: parameter initialization draws from
default_rng([seed, 1]) and the batch at step s from default_rng([seed, 2, s]),
so two runs with the same seed and corpus produce bit-identical checkpoints,
and a (seed, step) pair pins the full batch stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .crossmodal import renormalized_region_scores
from .data import (
    default_findings,
    holdout_split,
    load_corpus,
)
from .errors import ConfigError, NumericalError
from .fileio import write_bytes_atomic, write_text_atomic
from .metrics import (
    MetricReport,
    PromptPair,
    build_report,
    probability_from_sims,
    rank1_hit_rate,
    selection_hit_rate,
    selection_outcomes,
)
from .model import Model
from .objectives import combine, global_contrastive, local_contrastive
from .params import ParamStore


class Adam:
    """Standard Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, store: ParamStore, lr: float, beta1: float, beta2: float, eps: float):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue  # untouched by this loss; moments stay zero
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def batch_indices(seed: int, step: int, n: int, k: int) -> np.ndarray:
    return np.random.default_rng([seed, 2, step]).choice(n, size=k, replace=False)


@dataclass
class TrainResult:
    model: Model
    history: list[tuple[int, float, float, float]]  # step, global, local, total
    checkpoint_path: str
    log_path: str


def run_log_path(checkpoint_path) -> str:
    return str(checkpoint_path) + ".log"


def train(cfg: RunConfig, global_loss_only: bool = False) -> TrainResult:
    """Run the configured number of steps and write checkpoint plus run log.

    ``global_loss_only`` drops the local term from the loss while still
    computing the local embeddings (ablation hook; the config's
    local_loss_weight = 0 must produce the same checkpoint bit for bit).
    """
    cfg.validate()
    cfg.validate_paths(need_corpus=True)
    corpus = load_corpus(cfg.corpus_path)
    eval_only = (
        frozenset({cfg.zero_shot_finding}) if cfg.zero_shot_finding >= 0 else frozenset()
    )
    train_pairs, _ = holdout_split(corpus, cfg.train_fraction, cfg.seed, eval_only)
    if cfg.batch_size > len(train_pairs):
        raise ConfigError(
            f"batch_size {cfg.batch_size} exceeds the {len(train_pairs)} "
            "training pairs"
        )

    model = Model(cfg)
    adam = Adam(model.params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    history: list[tuple[int, float, float, float]] = []
    log_lines: list[str] = []

    for step in range(cfg.steps):
        idx = batch_indices(cfg.seed, step, len(train_pairs), cfg.batch_size)
        batch_pairs = [train_pairs[int(i)] for i in idx]
        tape = Tape()
        batch, _ = model.embed_batch(tape, batch_pairs)
        g_loss = global_contrastive(
            tape, batch.global_image, batch.global_text, cfg.temperature_global
        )
        l_loss = local_contrastive(
            tape,
            batch.local_image,
            batch.local_text,
            cfg.temperature_local,
            symmetric=cfg.symmetric_local,
        )
        total = (
            g_loss
            if global_loss_only
            else combine(tape, g_loss, l_loss, cfg.local_loss_weight)
        )
        g_val, l_val, t_val = g_loss.item(), l_loss.item(), total.item()
        if not (math.isfinite(g_val) and math.isfinite(l_val) and math.isfinite(t_val)):
            save_checkpoint(cfg.checkpoint_path, model.params, cfg, step)
            write_text_atomic(
                run_log_path(cfg.checkpoint_path), "\n".join(log_lines) + "\n"
            )
            raise NumericalError(
                f"non-finite loss at step {step}; last-good parameters saved "
                f"to {cfg.checkpoint_path}"
            )
        history.append((step, g_val, l_val, t_val))
        log_lines.append(f"{step}\t{g_val!r}\t{l_val!r}\t{t_val!r}")
        model.params.zero_grad()
        tape.backward(total)
        adam.step()

    save_checkpoint(cfg.checkpoint_path, model.params, cfg, cfg.steps)
    write_text_atomic(run_log_path(cfg.checkpoint_path), "\n".join(log_lines) + "\n")
    return TrainResult(
        model=model,
        history=history,
        checkpoint_path=str(cfg.checkpoint_path),
        log_path=run_log_path(cfg.checkpoint_path),
    )


def model_from_checkpoint(checkpoint_path) -> Model:
    data = load_checkpoint(checkpoint_path)
    model = Model(data.config)
    model.params.load_values(data.values)
    return model


def default_prompts(patch_size: int = 8) -> list[PromptPair]:
    return [
        PromptPair(f.finding_id, tuple(f.pos_template), tuple(f.neg_template))
        for f in default_findings(patch_size)
    ]


@dataclass
class EvalResult:
    report: MetricReport
    hit_rate: float | None
    rank1_hit_rate: float | None
    n_eval_pairs: int
    zero_shot_finding: int

    def to_kv_text(self) -> str:
        lines = [self.report.to_kv_text().rstrip("\n")]
        for key, value in (
            ("selection.hit_rate", self.hit_rate),
            ("selection.rank1_hit_rate", self.rank1_hit_rate),
        ):
            lines.append(f"{key} = {'absent' if value is None else repr(value)}")
        lines.append(f"eval.n_pairs = {self.n_eval_pairs}")
        lines.append(f"eval.zero_shot_finding = {self.zero_shot_finding}")
        return "\n".join(lines) + "\n"


def evaluate(
    checkpoint_path,
    corpus_path=None,
    prompts: list[PromptPair] | None = None,
) -> EvalResult:
    """Score the evaluation split of the corpus with a trained checkpoint.

    Read-only: parameters are never mutated. The split is recomputed from
    the checkpointed config, so it matches the one used in training.
    """
    model = model_from_checkpoint(checkpoint_path)
    cfg = model.cfg
    corpus = load_corpus(corpus_path if corpus_path is not None else cfg.corpus_path)
    eval_only = (
        frozenset({cfg.zero_shot_finding}) if cfg.zero_shot_finding >= 0 else frozenset()
    )
    _, eval_pairs = holdout_split(corpus, cfg.train_fraction, cfg.seed, eval_only)
    if prompts is None:
        prompts = default_prompts(cfg.patch_size)

    # one text encode per prompt side, one image encode per pair
    prompt_embs: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for prompt in prompts:
        tape = Tape()
        pos = model.encode_text(tape, prompt.pos_tokens).global_embedding.data[0]
        neg = model.encode_text(tape, prompt.neg_tokens).global_embedding.data[0]
        prompt_embs[prompt.finding_id] = (pos.copy(), neg.copy())

    outcomes: dict[int, tuple[list[float], list[int]]] = {
        p.finding_id: ([], []) for p in prompts
    }
    for pair in eval_pairs:
        tape = Tape()
        v = model.encode_image(tape, pair.image).global_embedding.data[0]
        for prompt in prompts:
            pos, neg = prompt_embs[prompt.finding_id]
            score = probability_from_sims(
                float(v @ pos), float(v @ neg), cfg.temperature_global
            )
            outcomes[prompt.finding_id][0].append(score)
            outcomes[prompt.finding_id][1].append(
                1 if prompt.finding_id in pair.present_findings else 0
            )

    report = build_report(outcomes, threshold=cfg.decision_threshold)
    cases = selection_outcomes(model, eval_pairs)
    hit = sum(h for h, _ in cases) / len(cases) if cases else None
    rank1 = sum(t for _, t in cases) / len(cases) if cases else None
    return EvalResult(
        report=report,
        hit_rate=hit,
        rank1_hit_rate=rank1,
        n_eval_pairs=len(eval_pairs),
        zero_shot_finding=cfg.zero_shot_finding,
    )


# --------------------------------------------------------------- heatmap io


def _pgm_bytes(image01: np.ndarray) -> bytes:
    h, w = image01.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    body = np.clip(np.rint(image01 * 255.0), 0, 255).astype(np.uint8).tobytes()
    return header + body


def export_heatmap(
    checkpoint_path,
    pair_index: int,
    finding_id: int,
    out_prefix,
    corpus_path=None,
) -> tuple[str, str]:
    """Write <prefix>.csv (per-region scores) and <prefix>.pgm (overlay).

    CSV columns: patch index, grid row, grid column, one rollout class-row
    score per head, and the renormalized fusion attention score for the
    prompt. The graymap brightens each selected patch toward white in
    proportion to its attention score; unselected patches are untouched.
    """
    model = model_from_checkpoint(checkpoint_path)
    cfg = model.cfg
    corpus = load_corpus(corpus_path if corpus_path is not None else cfg.corpus_path)
    if not 0 <= pair_index < len(corpus):
        raise ConfigError(f"pair index {pair_index} outside corpus of {len(corpus)}")
    prompts = {p.finding_id: p for p in default_prompts(cfg.patch_size)}
    if finding_id not in prompts:
        raise ConfigError(f"no prompt for finding {finding_id}")
    pair = corpus[pair_index]
    prompt = prompts[finding_id]

    tape = Tape()
    image_seq = model.encode_image(tape, pair.image)
    rollout_result, selection = model.select(image_seq)
    from .crossmodal import CrossModalInput
    from .regions import reduce_sequence

    reduced = reduce_sequence(tape, image_seq, selection)
    text_seq = model.encode_text(tape, prompt.pos_tokens)
    local = model.fusion.fuse(tape, CrossModalInput.build(reduced, text_seq.tokens))
    scores = renormalized_region_scores(local)

    grid = cfg.image_size // cfg.patch_size
    heads = rollout_result.per_head_class_row.shape[0]
    rows = ["patch_index,row,col," + ",".join(f"rollout_head_{k}" for k in range(heads)) + ",interp_score"]
    for j, patch in enumerate(selection.selected):
        r, c = divmod(patch, grid)
        rollout_scores = ",".join(
            repr(float(rollout_result.per_head_class_row[k][patch]))
            for k in range(heads)
        )
        rows.append(f"{patch},{r},{c},{rollout_scores},{repr(float(scores[j]))}")
    csv_path = str(out_prefix) + ".csv"
    write_text_atomic(csv_path, "\n".join(rows) + "\n")

    overlay = pair.image.copy()
    ps = cfg.patch_size
    for j, patch in enumerate(selection.selected):
        r, c = divmod(patch, grid)
        block = overlay[r * ps : (r + 1) * ps, c * ps : (c + 1) * ps]
        s = float(scores[j])
        block += s * (1.0 - block)  # brighten toward white by the score
    pgm_path = str(out_prefix) + ".pgm"
    write_bytes_atomic(pgm_path, _pgm_bytes(overlay))
    return csv_path, pgm_path


# -------------------------------------------------------------- gradient cmd


def gradcheck_config() -> RunConfig:
    """Smallest full-pipeline configuration for finite-difference checking."""
    return RunConfig(
        image_size=8,
        patch_size=4,
        image_d_model=8,
        image_layers=2,
        image_heads=2,
        text_d_model=8,
        text_layers=2,
        text_heads=2,
        vocab_size=8,
        max_context=8,
        fusion_layers=1,
        fusion_heads=2,
        batch_size=2,
        steps=1,
        seed=0,
    )


def full_objective_gradcheck(cfg: RunConfig, eps: float = 1e-5) -> float:
    """Max relative finite-difference error through the combined objective.

    Builds a fixed 2-pair batch (tiny images with one planted motif each,
    short token strings) and differentiates the full pipeline with respect
    to every parameter.
    """
    if cfg.image_d_model > 8:
        raise ConfigError("gradcheck needs a tiny config (d_model <= 8)")
    model = Model(cfg)
    rng = np.random.default_rng(1234)
    images = [
        np.clip(rng.random((cfg.image_size, cfg.image_size)), 0.0, 1.0)
        for _ in range(cfg.batch_size)
    ]
    token_sets = [
        [int(t) for t in rng.integers(0, cfg.vocab_size, size=3)]
        for _ in range(cfg.batch_size)
    ]

    class _Item:
        def __init__(self, image, tokens):
            self.image = image
            self.tokens = tokens

    items = [_Item(im, tk) for im, tk in zip(images, token_sets)]

    def f(tape: Tape) -> Tensor:
        batch, _ = model.embed_batch(tape, items)
        g = global_contrastive(
            tape, batch.global_image, batch.global_text, cfg.temperature_global
        )
        l = local_contrastive(
            tape, batch.local_image, batch.local_text, cfg.temperature_local
        )
        return combine(tape, g, l, cfg.local_loss_weight)

    return gradcheck(f, model.params.tensors(), eps=eps)
