"""Synthetic paired image/text corpus with planted, recoverable findings.

Each pair is a noisy gray image plus a token sequence naming exactly the
findings planted in the image. A finding is a fixed patch-sized motif
stamped (elementwise max, so it shines over the noise) into one uniformly
random patch; the patch index is recorded as ground truth for region
selection.

The default catalog factorizes four findings over two visual attributes,
orientation x texture:

    0  horizontal solid bar    tokens (HORIZONTAL, SOLID)
    1  vertical solid bar      tokens (VERTICAL, SOLID)
    2  horizontal dashed bar   tokens (HORIZONTAL, DASHED)
    3  vertical dashed bar     tokens (VERTICAL, DASHED)

Every template token of finding 3 also appears in the templates of findings
1 and 2, which makes finding 3 a usable zero-shot target: holding its pairs
out of training leaves a prompt that is a novel composition of trained
tokens. Negative prompts prepend the NO token, which training sees in the
no-finding template.

Generation is a pure function of (seed, pair index): pair i draws all its
randomness from default_rng([seed, i]), so corpora are reproducible and can
be generated in parallel by index.

Corpus file format (line-delimited text, one record per pair, three
tab-separated fields):

    field 1: image pixels, flat row-major, space-separated decimal floats
    field 2: token ids, space-separated integers
    field 3: planted findings as "finding:patch" integer pairs,
             space-separated; empty when no finding is present

Floats are written with repr, so a load/save round trip is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError

# token ids shared by templates; the rest of the vocabulary stays free
NO = 0
FINDING_WORD = 1
HORIZONTAL = 2
VERTICAL = 3
SOLID = 4
DASHED = 5

NO_FINDING_TEMPLATE = (NO, FINDING_WORD)

DEFAULT_VOCAB_SIZE = 32
PRESENCE_PROBABILITY = 0.5


@dataclass(frozen=True)
class FindingSpec:
    finding_id: int
    name: str
    motif: np.ndarray  # (patch, patch) intensities in [0, 1]
    pos_template: tuple[int, ...]
    neg_template: tuple[int, ...]


@dataclass(frozen=True)
class SyntheticPair:
    image: np.ndarray  # (side, side) grays in [0, 1]
    tokens: tuple[int, ...]
    present_findings: frozenset[int]
    planted_patches: dict[int, int]  # finding id -> patch index


def _bar_motif(patch_size: int, vertical: bool, dashed: bool) -> np.ndarray:
    lo = patch_size // 4
    hi = patch_size - lo
    motif = np.zeros((patch_size, patch_size))
    if vertical:
        motif[:, lo:hi] = 1.0
        if dashed:
            motif[1::2, :] = 0.0
    else:
        motif[lo:hi, :] = 1.0
        if dashed:
            motif[:, 1::2] = 0.0
    return motif


def default_findings(patch_size: int = 8) -> list[FindingSpec]:
    specs = []
    combos = [
        ("horizontal solid bar", False, False, (HORIZONTAL, SOLID)),
        ("vertical solid bar", True, False, (VERTICAL, SOLID)),
        ("horizontal dashed bar", False, True, (HORIZONTAL, DASHED)),
        ("vertical dashed bar", True, True, (VERTICAL, DASHED)),
    ]
    for fid, (name, vert, dash, template) in enumerate(combos):
        specs.append(
            FindingSpec(
                finding_id=fid,
                name=name,
                motif=_bar_motif(patch_size, vert, dash),
                pos_template=template,
                neg_template=(NO,) + template,
            )
        )
    return specs


def validate_findings(
    findings: list[FindingSpec], noise_sigma: float, patch_size: int
) -> None:
    """Check motif ranges, template sanity, and pairwise distinguishability.

    The minimum pairwise motif L2 distance must exceed 3 * noise_sigma *
    patch_size so motifs stay separable under the configured noise.
    """
    if not findings:
        raise ConfigError("need at least one finding")
    ids = [f.finding_id for f in findings]
    if len(set(ids)) != len(ids):
        raise ConfigError("finding ids must be unique")
    for f in findings:
        if f.motif.shape != (patch_size, patch_size):
            raise ConfigError(
                f"finding {f.finding_id} motif shape {f.motif.shape} does not "
                f"match patch size {patch_size}"
            )
        if f.motif.min() < 0.0 or f.motif.max() > 1.0:
            raise ConfigError(f"finding {f.finding_id} motif outside [0, 1]")
        if tuple(f.pos_template) == tuple(f.neg_template):
            raise ConfigError(
                f"finding {f.finding_id} positive and negative templates match"
            )
    required = 3.0 * noise_sigma * patch_size
    for i, a in enumerate(findings):
        for b in findings[i + 1 :]:
            dist = float(np.linalg.norm(a.motif - b.motif))
            if dist <= required:
                raise ConfigError(
                    f"motifs {a.finding_id} and {b.finding_id} are too close "
                    f"(L2 {dist:.3f} <= {required:.3f}) for noise sigma "
                    f"{noise_sigma}"
                )


def generate(
    seed: int,
    n_pairs: int,
    findings: list[FindingSpec],
    noise_sigma: float,
    image_size: int = 32,
    patch_size: int = 8,
) -> list[SyntheticPair]:
    """Draw a corpus of paired images and texts with planted findings.

    Per pair, each finding is independently present with probability 0.5;
    present findings occupy distinct uniformly random patches. The text is
    the concatenation of the present findings' templates in shuffled order,
    or the no-finding template.
    """
    if n_pairs < 1:
        raise ConfigError("n_pairs must be at least 1")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be non-negative")
    if image_size % patch_size != 0:
        raise ConfigError("image_size must divide by patch_size")
    grid = image_size // patch_size
    n_patches = grid * grid
    if len(findings) > n_patches:
        raise ConfigError(
            f"{len(findings)} findings cannot occupy distinct patches of "
            f"{n_patches}"
        )
    validate_findings(findings, noise_sigma, patch_size)

    pairs = []
    for index in range(n_pairs):
        rng = np.random.default_rng([seed, index])
        image = np.clip(rng.normal(0.0, noise_sigma, (image_size, image_size)), 0.0, 1.0)
        present = [f for f, hit in zip(findings, rng.random(len(findings)) < PRESENCE_PROBABILITY) if hit]
        patches = rng.choice(n_patches, size=len(present), replace=False)
        planted: dict[int, int] = {}
        for spec, patch in zip(present, patches):
            r, c = divmod(int(patch), grid)
            block = image[
                r * patch_size : (r + 1) * patch_size,
                c * patch_size : (c + 1) * patch_size,
            ]
            np.maximum(block, spec.motif, out=block)
            planted[spec.finding_id] = int(patch)
        if present:
            order = rng.permutation(len(present))
            tokens: tuple[int, ...] = ()
            for j in order:
                tokens += tuple(present[int(j)].pos_template)
        else:
            tokens = NO_FINDING_TEMPLATE
        pairs.append(
            SyntheticPair(
                image=image,
                tokens=tokens,
                present_findings=frozenset(planted),
                planted_patches=planted,
            )
        )
    return pairs


def tokens_to_findings(
    tokens: tuple[int, ...], findings: list[FindingSpec]
) -> frozenset[int]:
    """Parse a corpus text back to the set of findings it names."""
    if tuple(tokens) == NO_FINDING_TEMPLATE:
        return frozenset()
    found = []
    pos = 0
    while pos < len(tokens):
        for spec in findings:
            width = len(spec.pos_template)
            if tuple(tokens[pos : pos + width]) == tuple(spec.pos_template):
                found.append(spec.finding_id)
                pos += width
                break
        else:
            raise InputError(f"unparsable token stream at offset {pos}: {tokens}")
    return frozenset(found)


def holdout_split(
    pairs: list[SyntheticPair],
    train_fraction: float,
    seed: int,
    eval_only_findings: frozenset[int] = frozenset(),
) -> tuple[list[SyntheticPair], list[SyntheticPair]]:
    """Deterministic disjoint exhaustive split.

    Pairs containing any finding in ``eval_only_findings`` are forced into
    the evaluation side, so those findings' templates never appear in
    training text; the remaining pairs are shuffled and split at
    ``train_fraction``.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie strictly between 0 and 1")
    eval_only = frozenset(eval_only_findings)
    forced = [p for p in pairs if p.present_findings & eval_only]
    rest = [p for p in pairs if not (p.present_findings & eval_only)]
    order = np.random.default_rng([seed, 0xBEEF]).permutation(len(rest))
    shuffled = [rest[int(i)] for i in order]
    n_train = int(round(train_fraction * len(shuffled)))
    train = shuffled[:n_train]
    evaluation = shuffled[n_train:] + forced
    if not train or not evaluation:
        raise ConfigError(
            f"split left an empty side: {len(train)} train, "
            f"{len(evaluation)} eval"
        )
    return train, evaluation


# ----------------------------------------------------------------- corpus io


def _format_pair(pair: SyntheticPair) -> str:
    pixels = " ".join(repr(float(v)) for v in pair.image.reshape(-1))
    tokens = " ".join(str(t) for t in pair.tokens)
    planted = " ".join(
        f"{fid}:{patch}" for fid, patch in sorted(pair.planted_patches.items())
    )
    return f"{pixels}\t{tokens}\t{planted}"


def save_corpus(pairs: list[SyntheticPair], path) -> None:
    from .fileio import write_text_atomic

    lines = [_format_pair(p) for p in pairs]
    write_text_atomic(path, "\n".join(lines) + "\n")


def load_corpus(path) -> list[SyntheticPair]:
    text = Path(path).read_text()
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ConfigError(
                f"{path}:{lineno}: expected 3 tab-separated fields, got "
                f"{len(fields)}"
            )
        pixels = np.array([float(v) for v in fields[0].split()])
        side = int(round(len(pixels) ** 0.5))
        if side * side != len(pixels):
            raise ConfigError(f"{path}:{lineno}: image is not square")
        tokens = tuple(int(t) for t in fields[1].split())
        planted: dict[int, int] = {}
        if fields[2]:
            for item in fields[2].split():
                fid, patch = item.split(":")
                planted[int(fid)] = int(patch)
        pairs.append(
            SyntheticPair(
                image=pixels.reshape(side, side),
                tokens=tokens,
                present_findings=frozenset(planted),
                planted_patches=planted,
            )
        )
    if not pairs:
        raise ConfigError(f"{path}: corpus is empty")
    return pairs
