"""Recurrent LM scoring and perplexity over token corpora.

An LM container runs embed -> LSTM stack -> bottleneck projection ->
output affine -> log softmax over the |V| regular tokens (eos included).
Perplexity is exp(-(sum of sequence log probs) / (number of scored
tokens)); the end-of-sequence term counts toward the denominator exactly
when the scorer produces it, and reports carry the token count so the
convention is visible.

``perplexity`` accepts any object with the SequenceScorer interface, so
the same code scores external LMs and both internal-LM estimates.
"""

import math
from dataclasses import dataclass

from ilmfuse import kernels
from ilmfuse.container import ModelContainer
from ilmfuse.errors import ContractError, ValidationError
from ilmfuse.kernels import LstmCellParams, LstmState

__all__ = [
    "LmState",
    "LmModel",
    "SequenceScorer",
    "LmScorer",
    "RnntIlmScorer",
    "AedIlmScorer",
    "perplexity",
]

PENDING_TOKEN = -1


@dataclass(frozen=True)
class LmState:
    layers: tuple
    last_token: int


class LmModel:
    """Inference wrapper over a validated LM container."""

    kind = "lm"

    def __init__(self, container: ModelContainer):
        if container.kind != "lm":
            raise ValidationError(f"expected an lm container, got kind {container.kind!r}")
        self.container = container
        self.vocab = container.vocab
        hp = container.hyperparams
        t = container.tensor
        self._embed = t("lm.embed")
        self._layers = [
            LstmCellParams(t(f"lm.l{i}.w_x"), t(f"lm.l{i}.w_h"), t(f"lm.l{i}.b"))
            for i in range(hp["layers"])
        ]
        self._proj_w, self._proj_b = t("lm.proj.w"), t("lm.proj.b")
        self._out_w, self._out_b = t("lm.out.w"), t("lm.out.b")

    def start_state(self) -> LmState:
        layers = tuple(LstmState.zeros(p.hidden_size) for p in self._layers)
        return LmState(layers, self.vocab.sos_id)

    def step(self, state: LmState):
        """Consume state's last token; returns (log probs over V, pending state)."""
        token = state.last_token
        if not (0 <= token < self.vocab.size):
            raise ContractError(f"token id {token} outside vocabulary of size {self.vocab.size}")
        h = self._embed[token]
        new_layers = []
        for params, layer_state in zip(self._layers, state.layers):
            h, new = kernels.lstm_cell_step(h, layer_state, params)
            new_layers.append(new)
        bottleneck = kernels.affine(h, self._proj_w, self._proj_b)
        log_dist = kernels.log_softmax(kernels.affine(bottleneck, self._out_w, self._out_b))
        return log_dist, LmState(tuple(new_layers), PENDING_TOKEN)

    @staticmethod
    def with_token(pending: LmState, token: int) -> LmState:
        return LmState(pending.layers, token)

    def sequence_logprob(self, labels, include_eos: bool = True) -> float:
        """Chain log probability; appends the eos term iff include_eos."""
        labels = [int(y) for y in labels]
        for y in labels:
            if not (0 <= y < self.vocab.size):
                raise ContractError(f"label id {y} outside vocabulary of size {self.vocab.size}")
        seq = labels + ([self.vocab.eos_id] if include_eos else [])
        state = self.start_state()
        total = 0.0
        for y in seq:
            log_dist, pending = self.step(state)
            total += float(log_dist[y])
            state = self.with_token(pending, y)
        return total


class SequenceScorer:
    """Per-step LM interface shared by external LMs and internal-LM estimates.

    Concrete scorers expose the vocabulary, whether an eos term is scored,
    and a step function threading an opaque state.
    """

    include_eos = True

    def start(self):
        raise NotImplementedError

    def step(self, state):
        """-> (log-probability vector over V, pending state)."""
        raise NotImplementedError

    def advance(self, pending, token: int):
        raise NotImplementedError

    def sequence_logprob(self, labels) -> float:
        seq = list(labels) + ([self.eos_id] if self.include_eos else [])
        state = self.start()
        total = 0.0
        for y in seq:
            log_dist, pending = self.step(state)
            total += float(log_dist[y])
            state = self.advance(pending, y)
        return total

    def scored_tokens(self, labels) -> int:
        return len(labels) + (1 if self.include_eos else 0)


class LmScorer(SequenceScorer):
    def __init__(self, model: LmModel, include_eos: bool = True):
        self.model = model
        self.include_eos = include_eos
        self.eos_id = model.vocab.eos_id

    def start(self):
        return self.model.start_state()

    def step(self, state):
        return self.model.step(state)

    def advance(self, pending, token):
        return LmModel.with_token(pending, token)


class RnntIlmScorer(SequenceScorer):
    """Internal LM of a transducer; token-only, no end-of-sequence concept."""

    include_eos = False

    def __init__(self, model):
        self.model = model
        self.eos_id = model.vocab.eos_id

    def start(self):
        return self.model.start_prediction()

    def step(self, state):
        return self.model.ilm_log_step(state), state

    def advance(self, pending, token):
        _, state = self.model.prediction_step(token, pending)
        return state


class AedIlmScorer(SequenceScorer):
    """Internal LM of an attention decoder; scores the eos step."""

    include_eos = True

    def __init__(self, model):
        self.model = model
        self.eos_id = model.vocab.eos_id

    def start(self):
        return self.model.ilm_start()

    def step(self, state):
        return self.model.ilm_step(state)

    def advance(self, pending, token):
        return self.model.ilm_with_token(pending, token)


def perplexity(corpus, scorer: SequenceScorer) -> dict:
    """Corpus perplexity under a per-step scorer.

    corpus: iterable of token-id sequences.  Returns a report dict with
    token_count (eos terms included when scored), total_logprob, and ppl.
    """
    total_logprob = 0.0
    token_count = 0
    sequences = 0
    for labels in corpus:
        labels = list(labels)
        total_logprob += scorer.sequence_logprob(labels)
        token_count += scorer.scored_tokens(labels)
        sequences += 1
    if sequences == 0:
        raise ContractError("perplexity of an empty corpus is undefined")
    if token_count == 0:
        raise ContractError("no tokens were scored; empty sequences need an eos-scoring model")
    return {
        "sequences": sequences,
        "token_count": token_count,
        "total_logprob": total_logprob,
        "ppl": math.exp(-total_logprob / token_count),
    }
