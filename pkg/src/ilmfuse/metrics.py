"""Word error rate, relative reductions, and fusion-weight grid tuning.

WER is computed over whitespace words after detokenizing word pieces:
pieces prefixed with the "▁" marker begin a new word, everything
else continues the current word.  Corpus WER pools edit counts over all
utterances rather than averaging per-utterance rates.
"""

from dataclasses import dataclass

from ilmfuse.beam import (
    FusionModels,
    PreparedUtterance,
    ScoringContext,
    decode_utterance,
)
from ilmfuse.errors import ContractError
from ilmfuse.fusion import FusionConfig

__all__ = [
    "WORD_BOUNDARY",
    "WerCounts",
    "wer",
    "corpus_wer",
    "relative_werr",
    "detokenize",
    "TuneResult",
    "tune_weights",
]

WORD_BOUNDARY = "▁"


@dataclass(frozen=True)
class WerCounts:
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int

    @property
    def edits(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ContractError("WER is undefined for an empty reference")
        return self.edits / self.ref_words

    def __add__(self, other: "WerCounts") -> "WerCounts":
        return WerCounts(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_words + other.ref_words,
        )


def wer(reference, hypothesis) -> WerCounts:
    """Levenshtein alignment counts with a deterministic preference.

    Among minimal-cost alignments the one with fewer substitutions, then
    fewer insertions, is chosen.  Empty references are allowed here (the
    counts are still defined); the .wer property is what needs words.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    n, m = len(ref), len(hyp)
    # dp[j] = (cost, substitutions, insertions) for ref[:i] -> hyp[:j]
    prev = [(j, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0)] + [None] * m
        for j in range(1, m + 1):
            dc, ds, di = prev[j]
            best = (dc + 1, ds, di)  # deletion
            ic, is_, ii = cur[j - 1]
            cand = (ic + 1, is_, ii + 1)  # insertion
            if cand < best:
                best = cand
            sc, ss, si = prev[j - 1]
            if ref[i - 1] == hyp[j - 1]:
                cand = (sc, ss, si)
            else:
                cand = (sc + 1, ss + 1, si)
            if cand < best:
                best = cand
            cur[j] = best
        prev = cur
    cost, subs, ins = prev[m]
    return WerCounts(subs, ins, cost - subs - ins, n)


def corpus_wer(pairs):
    """Pooled WER over (reference, hypothesis) word-sequence pairs.

    Returns (corpus wer, per-utterance WerCounts list).
    """
    table = []
    total = WerCounts(0, 0, 0, 0)
    for reference, hypothesis in pairs:
        counts = wer(reference, hypothesis)
        table.append(counts)
        total = total + counts
    if total.ref_words == 0:
        raise ContractError("corpus WER needs at least one non-empty reference")
    return total.edits / total.ref_words, table


def relative_werr(baseline_wer: float, method_wer: float) -> float:
    """Relative WER reduction in percent, positive when the method is better."""
    if baseline_wer <= 0:
        raise ContractError("relative reduction needs a positive baseline WER")
    return 100.0 * (baseline_wer - method_wer) / baseline_wer


def detokenize(pieces) -> list:
    """Join word pieces into words; a boundary-marked piece starts a word."""
    words = []
    for piece in pieces:
        if piece.startswith(WORD_BOUNDARY):
            words.append(piece[len(WORD_BOUNDARY):])
        elif words:
            words[-1] += piece
        else:
            words.append(piece)
    return [w for w in words if w]


@dataclass(frozen=True)
class TuneResult:
    """Full tuning surface plus the dev-WER argmin."""

    method: str
    lm_grid: tuple
    sub_grid: tuple
    surface: tuple  # rows of (lm_weight, sub_weight, wer)
    best_lm_weight: float
    best_sub_weight: float
    best_wer: float


def tune_weights(
    dev_set,
    models: FusionModels,
    method: str,
    lm_grid,
    sub_grid,
    beam: int = 8,
    max_symbols_per_frame: int = 5,
    max_len: int = 100,
) -> TuneResult:
    """Grid search (lm_weight, sub_weight) minimizing pooled dev WER.

    dev_set: iterable of (reference word-piece tokens, feature matrix).
    Ties prefer the smaller (lm_weight, sub_weight) pair; shallow_fusion
    and baseline collapse the sub axis to {0}.
    """
    if method == "baseline":
        raise ContractError("tuning the baseline is meaningless; it has no weights")
    lm_values = tuple(dict.fromkeys(float(x) for x in lm_grid))
    sub_values = tuple(dict.fromkeys(float(x) for x in sub_grid))
    if not lm_values or not sub_values:
        raise ContractError("tuning grids must be non-empty")
    if method == "shallow_fusion":
        sub_values = (0.0,)
    grid = [(lw, sw) for lw in lm_values for sw in sub_values]
    configs = {point: FusionConfig(method, *point) for point in grid}

    context = ScoringContext(models)
    refs = []
    hyps = {point: [] for point in grid}
    for ref_tokens, features in dev_set:
        refs.append(detokenize(ref_tokens))
        prepared = PreparedUtterance(models, features)
        for point in grid:
            result = decode_utterance(
                features,
                models,
                configs[point],
                beam=beam,
                max_symbols_per_frame=max_symbols_per_frame,
                max_len=max_len,
                nbest=1,
                context=context,
                prepared=prepared,
            )
            best = result.nbest[0].tokens
            hyps[point].append(detokenize(models.e2e.vocab.tokens[i] for i in best))
    if not refs:
        raise ContractError("tuning needs at least one dev utterance")

    surface = []
    best_point = None
    best_wer = None
    for point in sorted(grid):
        rate, _ = corpus_wer(zip(refs, hyps[point]))
        surface.append((point[0], point[1], rate))
        if best_wer is None or rate < best_wer:
            best_point, best_wer = point, rate
    return TuneResult(
        method=method,
        lm_grid=lm_values,
        sub_grid=sub_values,
        surface=tuple(surface),
        best_lm_weight=best_point[0],
        best_sub_weight=best_point[1],
        best_wer=best_wer,
    )
