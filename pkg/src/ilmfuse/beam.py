"""Beam search with fused scoring, exhaustive oracles, and a greedy reference.

Transducer search is frame-synchronous: within a frame, hypotheses emit up
to max_symbols_per_frame labels through repeated expansion rounds, a blank
moves a hypothesis to the next frame, and hypotheses that reach the frame
boundary with identical label sequences merge by log-sum-exp of their e2e
scores (the LM components depend only on the labels, so they are equal
across merged paths; the fused score is re-derived from the merged parts).
Each round prunes the union of boundary and still-active hypotheses to the
beam width, which makes beam=1 coincide with greedy decoding.

Attention-decoder search is label-synchronous: every unfinished hypothesis
expands over the whole vocabulary, the end-of-sequence candidate freezes a
hypothesis, and finished hypotheses compete with unfinished ones for beam
slots.  At max_len only end-of-sequence expansions are allowed.

Hypothesis ranking always uses (fused score desc, token ids lexicographic)
so decoding is deterministic; fused scores are derived from cumulative
component sums with the same arithmetic everywhere, letting the exhaustive
oracles reproduce beam scores bit-for-bit on the attention decoder.

All label-prefix computations (prediction network, external and internal
LMs) are memoized in a ScoringContext, which can be shared across
utterances and across weight settings during grid tuning.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from ilmfuse import kernels
from ilmfuse.aed import AedModel
from ilmfuse.errors import ConfigError, ContractError
from ilmfuse.fusion import FusionConfig, fused_total, validate_config
from ilmfuse.lm import AedIlmScorer, LmModel, LmScorer
from ilmfuse.rnnt import RnntModel

__all__ = [
    "FusionModels",
    "NBestEntry",
    "DecodeResult",
    "ScoringContext",
    "PreparedUtterance",
    "beam_search_rnnt",
    "beam_search_aed",
    "exhaustive_search_rnnt",
    "exhaustive_search_aed",
    "greedy_decode_rnnt",
    "decode_utterance",
]


@dataclass(frozen=True)
class FusionModels:
    """The end-to-end model plus whichever external LMs the method needs."""

    e2e: object
    target_lm: LmModel | None = None
    source_lm: LmModel | None = None

    def __post_init__(self):
        for role in ("target_lm", "source_lm"):
            lm = getattr(self, role)
            if lm is not None and lm.vocab.tokens != self.e2e.vocab.tokens:
                raise ConfigError(f"{role.replace('_', ' ')} vocabulary does not match the e2e model")

    def roles_present(self):
        roles = set()
        if self.target_lm is not None:
            roles.add("target_lm")
        if self.source_lm is not None:
            roles.add("source_lm")
        return roles


@dataclass(frozen=True)
class NBestEntry:
    """One ranked hypothesis with its score decomposition."""

    tokens: tuple
    fused: float
    e2e: float
    ext_lm: float
    sub_lm: float


@dataclass(frozen=True)
class DecodeResult:
    nbest: tuple
    seconds: float


class _ChainCache:
    """Memoizes (log-dist, pending-state) per label prefix for a step scorer."""

    def __init__(self, scorer):
        self._scorer = scorer
        self._memo = {}

    def entry(self, tokens: tuple):
        memo = self._memo
        hit = memo.get(tokens)
        if hit is not None:
            return hit
        if () not in memo:
            memo[()] = self._scorer.step(self._scorer.start())
        for i in range(len(tokens)):
            prefix = tokens[: i + 1]
            if prefix in memo:
                continue
            _, pending = memo[tokens[:i]]
            state = self._scorer.advance(pending, tokens[i])
            memo[prefix] = self._scorer.step(state)
        return memo[tokens]

    def log_dist(self, tokens: tuple) -> np.ndarray:
        return self.entry(tokens)[0]


class _DecoderChain:
    """Step-scorer view of the attention decoder for one fixed utterance."""

    def __init__(self, model: AedModel, enc, keys):
        self._model = model
        self._enc = enc
        self._keys = keys

    def start(self):
        return self._model.start_decoder(self._enc)

    def step(self, state):
        logits, pending = self._model.decoder_step(state, self._enc, self._keys)
        return kernels.log_softmax(logits), pending

    def advance(self, pending, token):
        return self._model.with_token(pending, token)


class ScoringContext:
    """Label-prefix memoization shared across utterances and weight settings.

    Everything cached here depends only on the token prefix, never on the
    acoustics, so one context can serve a whole tuning grid.
    """

    def __init__(self, models: FusionModels):
        self.models = models
        self._ext = _ChainCache(LmScorer(models.target_lm)) if models.target_lm else None
        self._src = _ChainCache(LmScorer(models.source_lm)) if models.source_lm else None
        if isinstance(models.e2e, RnntModel):
            self._pred = {}
            self._rnnt_ilm = {}
            self._aed_ilm = None
        else:
            self._pred = None
            self._rnnt_ilm = None
            self._aed_ilm = _ChainCache(AedIlmScorer(models.e2e))

    def pred_entry(self, tokens: tuple):
        """(PredictionState, joint pred-side vector) for a label prefix."""
        memo = self._pred
        hit = memo.get(tokens)
        if hit is not None:
            return hit
        model = self.models.e2e
        if () not in memo:
            state = model.start_prediction()
            memo[()] = (state, model.pred_side(state.output))
        for i in range(len(tokens)):
            prefix = tokens[: i + 1]
            if prefix in memo:
                continue
            parent_state, _ = memo[tokens[:i]]
            _, state = model.prediction_step(tokens[i], parent_state)
            memo[prefix] = (state, model.pred_side(state.output))
        return memo[tokens]

    def ext_dist(self, tokens: tuple) -> np.ndarray:
        if self._ext is None:
            raise ConfigError("target LM required")
        return self._ext.log_dist(tokens)

    def src_dist(self, tokens: tuple) -> np.ndarray:
        if self._src is None:
            raise ConfigError("source LM required")
        return self._src.log_dist(tokens)

    def ilm_dist(self, tokens: tuple) -> np.ndarray:
        if self._rnnt_ilm is not None:
            hit = self._rnnt_ilm.get(tokens)
            if hit is None:
                state, _ = self.pred_entry(tokens)
                hit = self.models.e2e.ilm_log_step(state)
                self._rnnt_ilm[tokens] = hit
            return hit
        return self._aed_ilm.log_dist(tokens)

    def sub_dist(self, tokens: tuple, method: str) -> np.ndarray:
        if method == "density_ratio":
            return self.src_dist(tokens)
        return self.ilm_dist(tokens)


class PreparedUtterance:
    """Per-utterance acoustic precomputation reusable across weight settings."""

    def __init__(self, models: FusionModels, features):
        feats = np.asarray(features)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ContractError(f"decoding needs a (T>=1, d) feature matrix, got shape {feats.shape}")
        model = models.e2e
        self.enc = model.encode(feats)
        if isinstance(model, RnntModel):
            self.enc_sides = [model.enc_side(self.enc[t]) for t in range(self.enc.shape[0])]
            self.dec = None
        else:
            keys = model.encoder_keys(self.enc)
            self.dec = _ChainCache(_DecoderChain(model, self.enc, keys))

    @property
    def frames(self) -> int:
        return self.enc.shape[0]


@dataclass(slots=True)
class _Hyp:
    tokens: tuple
    e2e: float
    ext: float
    sub: float
    fused: float


def _nbest(hyps, config: FusionConfig, limit: int, started: float) -> DecodeResult:
    ranked = sorted(hyps, key=lambda h: (-h.fused, h.tokens))[:limit]
    entries = tuple(
        NBestEntry(h.tokens, h.fused, h.e2e, h.ext if config.uses_ext_lm else 0.0,
                   h.sub if config.uses_sub_lm else 0.0)
        for h in ranked
    )
    return DecodeResult(entries, time.perf_counter() - started)


def _check_search_args(models: FusionModels, config: FusionConfig, beam: int) -> None:
    validate_config(config, models.roles_present())
    if beam < 1:
        raise ContractError(f"beam width must be >= 1, got {beam}")


def beam_search_rnnt(
    features,
    models: FusionModels,
    config: FusionConfig,
    beam: int = 25,
    max_symbols_per_frame: int = 5,
    nbest: int | None = None,
    context: ScoringContext | None = None,
    prepared: PreparedUtterance | None = None,
) -> DecodeResult:
    """Frame-synchronous fused beam search over a transducer."""
    started = time.perf_counter()
    _check_search_args(models, config, beam)
    model = models.e2e
    if not isinstance(model, RnntModel):
        raise ConfigError("beam_search_rnnt needs a transducer e2e model")
    if max_symbols_per_frame < 1:
        raise ContractError(f"max_symbols_per_frame must be >= 1, got {max_symbols_per_frame}")
    ctx = context if context is not None else ScoringContext(models)
    utt = prepared if prepared is not None else PreparedUtterance(models, features)
    n_tokens = model.vocab.size
    blank = model.vocab.blank_id
    use_ext, use_sub = config.uses_ext_lm, config.uses_sub_lm

    root = _Hyp((), 0.0, 0.0, 0.0, 0.0)
    hyps = [root]
    for t in range(utt.frames):
        enc_side = utt.enc_sides[t]
        advanced: dict = {}
        active = hyps
        for round_no in range(max_symbols_per_frame + 1):
            candidates = []
            for h in active:
                _, pred_side = ctx.pred_entry(h.tokens)
                ld = kernels.log_softmax(model.joint_from_sides(enc_side, pred_side))
                moved_e2e = h.e2e + ld[blank]
                prev = advanced.get(h.tokens)
                if prev is None:
                    advanced[h.tokens] = _Hyp(
                        h.tokens, moved_e2e, h.ext, h.sub,
                        fused_total(moved_e2e, h.ext, h.sub, config),
                    )
                else:
                    merged = float(np.logaddexp(prev.e2e, moved_e2e))
                    advanced[h.tokens] = _Hyp(
                        h.tokens, merged, h.ext, h.sub,
                        fused_total(merged, h.ext, h.sub, config),
                    )
                if round_no < max_symbols_per_frame:
                    ext_d = ctx.ext_dist(h.tokens) if use_ext else None
                    sub_d = ctx.sub_dist(h.tokens, config.method) if use_sub else None
                    for v in range(n_tokens):
                        e2e = h.e2e + ld[v]
                        ext = h.ext + ext_d[v] if ext_d is not None else h.ext
                        sub = h.sub + sub_d[v] if sub_d is not None else h.sub
                        candidates.append(
                            _Hyp(h.tokens + (v,), e2e, ext, sub, fused_total(e2e, ext, sub, config))
                        )
            pool = [(h, 0) for h in advanced.values()] + [(h, 1) for h in candidates]
            pool.sort(key=lambda item: (-item[0].fused, item[0].tokens, item[1]))
            kept = pool[:beam]
            advanced = {h.tokens: h for h, kind in kept if kind == 0}
            active = [h for h, kind in kept if kind == 1]
            if not active:
                break
        hyps = sorted(advanced.values(), key=lambda h: (-h.fused, h.tokens))[:beam]
    return _nbest(hyps, config, nbest if nbest is not None else beam, started)


def greedy_decode_rnnt(features, model: RnntModel, max_symbols_per_frame: int = 5):
    """Independent argmax-per-step reference decoder (no LM, no beam).

    Returns (tokens, e2e log score).  Blank wins score ties, matching the
    beam's shorter-sequence-first tie rule.
    """
    enc = model.encode(features)
    n_tokens = model.vocab.size
    blank = model.vocab.blank_id
    state = model.start_prediction()
    tokens = []
    total = 0.0
    for t in range(enc.shape[0]):
        enc_side = model.enc_side(enc[t])
        emitted = 0
        while True:
            ld = kernels.log_softmax(model.joint_from_sides(enc_side, model.pred_side(state.output)))
            if emitted == max_symbols_per_frame:
                total += float(ld[blank])
                break
            best = int(np.argmax(ld[:n_tokens]))
            if ld[blank] >= ld[best]:
                total += float(ld[blank])
                break
            tokens.append(best)
            total += float(ld[best])
            _, state = model.prediction_step(best, state)
            emitted += 1
    return tuple(tokens), total


def beam_search_aed(
    features,
    models: FusionModels,
    config: FusionConfig,
    beam: int = 25,
    max_len: int = 100,
    nbest: int | None = None,
    context: ScoringContext | None = None,
    prepared: PreparedUtterance | None = None,
) -> DecodeResult:
    """Label-synchronous fused beam search over an attention decoder."""
    started = time.perf_counter()
    _check_search_args(models, config, beam)
    model = models.e2e
    if not isinstance(model, AedModel):
        raise ConfigError("beam_search_aed needs an attention encoder-decoder e2e model")
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")
    ctx = context if context is not None else ScoringContext(models)
    utt = prepared if prepared is not None else PreparedUtterance(models, features)
    n_tokens = model.vocab.size
    eos = model.vocab.eos_id
    use_ext, use_sub = config.uses_ext_lm, config.uses_sub_lm

    finished: list = []
    unfinished = [_Hyp((), 0.0, 0.0, 0.0, 0.0)]
    for step in range(max_len + 1):
        if not unfinished:
            break
        if finished and not (use_sub and config.sub_weight != 0.0):
            # every further step adds nonpositive mass, so a finished
            # hypothesis strictly above all unfinished ones is final
            if max(h.fused for h in finished) > max(h.fused for h in unfinished):
                break
        candidates = [(h, True) for h in finished]
        allowed = range(n_tokens) if step < max_len else (eos,)
        for h in unfinished:
            ld = utt.dec.log_dist(h.tokens)
            ext_d = ctx.ext_dist(h.tokens) if use_ext else None
            sub_d = ctx.sub_dist(h.tokens, config.method) if use_sub else None
            for v in allowed:
                e2e = h.e2e + ld[v]
                ext = h.ext + ext_d[v] if ext_d is not None else h.ext
                sub = h.sub + sub_d[v] if sub_d is not None else h.sub
                tokens = h.tokens if v == eos else h.tokens + (v,)
                candidates.append(
                    (_Hyp(tokens, e2e, ext, sub, fused_total(e2e, ext, sub, config)), v == eos)
                )
        candidates.sort(key=lambda item: (-item[0].fused, item[0].tokens, not item[1]))
        kept = candidates[:beam]
        finished = [h for h, done in kept if done]
        unfinished = [h for h, done in kept if not done]
    return _nbest(finished, config, nbest if nbest is not None else beam, started)


def _rnnt_enumeration_size(frames: int, n_tokens: int, u_cap: int) -> int:
    return n_tokens**u_cap * math.comb(frames + u_cap, u_cap)


def exhaustive_search_rnnt(
    features,
    models: FusionModels,
    config: FusionConfig,
    u_cap: int,
    context: ScoringContext | None = None,
) -> NBestEntry:
    """Score every label sequence up to u_cap and return the fused argmax.

    The e2e term is the full lattice posterior, the LM terms are
    sequence-level chains (no end-of-sequence bonus for a transducer).
    """
    validate_config(config, models.roles_present())
    model = models.e2e
    if not isinstance(model, RnntModel):
        raise ConfigError("exhaustive_search_rnnt needs a transducer e2e model")
    feats = np.asarray(features)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ContractError(f"decoding needs a (T>=1, d) feature matrix, got shape {feats.shape}")
    n_tokens = model.vocab.size
    budget = _rnnt_enumeration_size(feats.shape[0], n_tokens, u_cap)
    if budget > 10**6:
        raise ContractError(f"enumeration budget exceeded: {budget} > 1e6")
    ctx = context if context is not None else ScoringContext(models)
    use_ext, use_sub = config.uses_ext_lm, config.uses_sub_lm

    best: NBestEntry | None = None
    stack = [((), 0.0, 0.0)]
    while stack:
        tokens, ext, sub = stack.pop()
        e2e = model.sequence_logprob(feats, tokens)
        fused = fused_total(e2e, ext, sub, config)
        entry = NBestEntry(tokens, fused, e2e, ext if use_ext else 0.0, sub if use_sub else 0.0)
        if best is None or (-entry.fused, entry.tokens) < (-best.fused, best.tokens):
            best = entry
        if len(tokens) < u_cap:
            ext_d = ctx.ext_dist(tokens) if use_ext else None
            sub_d = ctx.sub_dist(tokens, config.method) if use_sub else None
            for v in range(n_tokens - 1, -1, -1):
                stack.append(
                    (
                        tokens + (v,),
                        ext + ext_d[v] if ext_d is not None else ext,
                        sub + sub_d[v] if sub_d is not None else sub,
                    )
                )
    return best


def exhaustive_search_aed(
    features,
    models: FusionModels,
    config: FusionConfig,
    max_len: int,
    context: ScoringContext | None = None,
    prepared: PreparedUtterance | None = None,
) -> NBestEntry:
    """Score every transcript up to max_len (end-of-sequence appended).

    Accumulates per-step components in search order, so its scores are
    bit-identical to an unpruned beam's.
    """
    validate_config(config, models.roles_present())
    model = models.e2e
    if not isinstance(model, AedModel):
        raise ConfigError("exhaustive_search_aed needs an attention encoder-decoder e2e model")
    if max_len < 0:
        raise ContractError(f"max_len must be >= 0, got {max_len}")
    n_tokens = model.vocab.size
    eos = model.vocab.eos_id
    count = sum((n_tokens - 1) ** k for k in range(max_len + 1))
    if count > 10**6:
        raise ContractError(f"enumeration budget exceeded: {count} > 1e6")
    ctx = context if context is not None else ScoringContext(models)
    utt = prepared if prepared is not None else PreparedUtterance(models, features)
    use_ext, use_sub = config.uses_ext_lm, config.uses_sub_lm

    best: NBestEntry | None = None
    stack = [((), 0.0, 0.0, 0.0)]
    while stack:
        tokens, e2e, ext, sub = stack.pop()
        ld = utt.dec.log_dist(tokens)
        ext_d = ctx.ext_dist(tokens) if use_ext else None
        sub_d = ctx.sub_dist(tokens, config.method) if use_sub else None
        fin_e2e = e2e + ld[eos]
        fin_ext = ext + ext_d[eos] if ext_d is not None else ext
        fin_sub = sub + sub_d[eos] if sub_d is not None else sub
        entry = NBestEntry(
            tokens,
            fused_total(fin_e2e, fin_ext, fin_sub, config),
            fin_e2e,
            fin_ext if use_ext else 0.0,
            fin_sub if use_sub else 0.0,
        )
        if best is None or (-entry.fused, entry.tokens) < (-best.fused, best.tokens):
            best = entry
        if len(tokens) < max_len:
            for v in range(n_tokens - 1, -1, -1):
                if v == eos:
                    continue
                stack.append(
                    (
                        tokens + (v,),
                        e2e + ld[v],
                        ext + ext_d[v] if ext_d is not None else ext,
                        sub + sub_d[v] if sub_d is not None else sub,
                    )
                )
    return best


def decode_utterance(
    features,
    models: FusionModels,
    config: FusionConfig,
    beam: int = 25,
    max_symbols_per_frame: int = 5,
    max_len: int = 100,
    nbest: int | None = None,
    context: ScoringContext | None = None,
    prepared: PreparedUtterance | None = None,
) -> DecodeResult:
    """Architecture dispatch for one utterance."""
    if isinstance(models.e2e, RnntModel):
        return beam_search_rnnt(
            features, models, config, beam, max_symbols_per_frame, nbest, context, prepared
        )
    return beam_search_aed(features, models, config, beam, max_len, nbest, context, prepared)
