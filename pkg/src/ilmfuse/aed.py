"""Attention encoder-decoder inference and its internal LM.

The encoder is a bidirectional LSTM stack; both directions are
concatenated per frame, projected, and layer-normalized at every layer.
Decoding is label-synchronous: each step feeds the sum of the previous
token embedding and the previous attention context through the decoder
LSTM, reads token logits off the new top state, and only then attends
over the encoder outputs to produce the context for the next step.
Sequence scores always include a final end-of-sequence term.

The internal LM replaces the attention context with a zero vector and
never touches the encoder, so the decoder behaves as a plain RNN-LM over
tokens; its chain also scores the end-of-sequence step.
"""

from dataclasses import dataclass

import numpy as np

from ilmfuse import kernels
from ilmfuse.container import ModelContainer
from ilmfuse.errors import ContractError, DimensionError, ValidationError
from ilmfuse.kernels import LstmCellParams, LstmState

__all__ = ["AttentionState", "DecoderState", "IlmState", "AedModel"]

PENDING_TOKEN = -1


@dataclass(frozen=True)
class AttentionState:
    """Attention weights over T frames and the context they produced."""

    weights: np.ndarray
    context: np.ndarray


@dataclass(frozen=True)
class DecoderState:
    """Decoder LSTM states, attention carry-over, and last consumed token.

    A state returned by decoder_step has last_token = PENDING_TOKEN until
    the caller commits a token with with_token().
    """

    layers: tuple
    attention: AttentionState
    last_token: int


@dataclass(frozen=True)
class IlmState:
    """Internal-LM lineage: decoder LSTM states only, no attention."""

    layers: tuple
    last_token: int


class AedModel:
    """Inference wrapper over a validated attention encoder-decoder container."""

    kind = "aed"

    def __init__(self, container: ModelContainer):
        if container.kind != "aed":
            raise ValidationError(f"expected an aed container, got kind {container.kind!r}")
        self.container = container
        self.vocab = container.vocab
        hp = container.hyperparams
        self.feat_dim = hp["feat_dim"]
        self.enc_proj = hp["enc_proj"]
        t = container.tensor
        self._enc_layers = []
        for i in range(hp["enc_layers"]):
            self._enc_layers.append(
                (
                    LstmCellParams(t(f"enc.l{i}.fwd.w_x"), t(f"enc.l{i}.fwd.w_h"), t(f"enc.l{i}.fwd.b")),
                    LstmCellParams(t(f"enc.l{i}.bwd.w_x"), t(f"enc.l{i}.bwd.w_h"), t(f"enc.l{i}.bwd.b")),
                    t(f"enc.l{i}.proj.w"),
                    t(f"enc.l{i}.proj.b"),
                    t(f"enc.l{i}.ln.g"),
                    t(f"enc.l{i}.ln.b"),
                )
            )
        self._embed = t("dec.embed")
        self._dec_layers = [
            LstmCellParams(t(f"dec.l{i}.w_x"), t(f"dec.l{i}.w_h"), t(f"dec.l{i}.b"))
            for i in range(hp["dec_layers"])
        ]
        self._out_w, self._out_b = t("dec.out.w"), t("dec.out.b")
        self._attn_q, self._attn_k = t("attn.w_q"), t("attn.w_k")
        self._attn_b, self._attn_v = t("attn.b"), t("attn.v")

    # ---- encoder ----

    def encode(self, features) -> np.ndarray:
        feats = np.ascontiguousarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DimensionError(f"features must be (T>=1, d), got shape {feats.shape}")
        if feats.shape[1] != self.feat_dim:
            raise DimensionError(
                f"feature dim {feats.shape[1]} does not match model feat_dim {self.feat_dim}"
            )
        out = feats
        for fwd, bwd, pw, pb, ln_g, ln_b in self._enc_layers:
            n = out.shape[0]
            fwd_rows = []
            state = LstmState.zeros(fwd.hidden_size)
            for i in range(n):
                h, state = kernels.lstm_cell_step(out[i], state, fwd)
                fwd_rows.append(h)
            bwd_rows = [None] * n
            state = LstmState.zeros(bwd.hidden_size)
            for i in range(n - 1, -1, -1):
                h, state = kernels.lstm_cell_step(out[i], state, bwd)
                bwd_rows[i] = h
            out = np.stack(
                [
                    kernels.layer_norm(
                        kernels.affine(np.concatenate([f, b]), pw, pb), ln_g, ln_b
                    )
                    for f, b in zip(fwd_rows, bwd_rows)
                ]
            )
        return out

    def encoder_keys(self, enc: np.ndarray) -> np.ndarray:
        """Per-frame attention keys W_k h^enc_t, reused across decode steps."""
        return enc @ self._attn_k.T

    # ---- attention ----

    def attention_step(self, enc: np.ndarray, h_dec, keys=None):
        """Additive attention with the current decoder state as the query.

        Returns (weights over T, context vector).  With a single frame the
        weights are exactly [1.0] and the context is that frame.
        """
        if enc.ndim != 2 or enc.shape[0] < 1:
            raise DimensionError(f"encoder outputs must be (T>=1, d), got shape {enc.shape}")
        if keys is None:
            keys = self.encoder_keys(enc)
        query = kernels.affine(h_dec, self._attn_q, self._attn_b)
        energies = np.tanh(keys + query) @ self._attn_v
        weights = kernels.softmax(energies)
        context = (weights @ enc.astype(np.float64)).astype(np.float32)
        return weights.astype(np.float32), context

    # ---- decoder ----

    def start_decoder(self, enc: np.ndarray) -> DecoderState:
        """Initial state: zero LSTM states, uniform attention, zero context."""
        frames = enc.shape[0]
        uniform = np.full(frames, 1.0 / frames, dtype=np.float32)
        context = np.zeros(self.enc_proj, dtype=np.float32)
        layers = tuple(LstmState.zeros(p.hidden_size) for p in self._dec_layers)
        return DecoderState(layers, AttentionState(uniform, context), self.vocab.sos_id)

    def decoder_step(self, state: DecoderState, enc: np.ndarray, keys=None):
        """One decode step; returns (logits over V, pending next state).

        The decoder consumes embed(last token) + previous context, logits
        come from the new top hidden state, and attention with that state
        produces the context stored for the following step.
        """
        token = state.last_token
        if not (0 <= token < self.vocab.size):
            raise ContractError(f"token id {token} outside vocabulary of size {self.vocab.size}")
        x = self._embed[token] + state.attention.context
        new_layers = []
        h = x
        for params, layer_state in zip(self._dec_layers, state.layers):
            h, new = kernels.lstm_cell_step(h, layer_state, params)
            new_layers.append(new)
        logits = kernels.affine(h, self._out_w, self._out_b)
        weights, context = self.attention_step(enc, h, keys)
        pending = DecoderState(tuple(new_layers), AttentionState(weights, context), PENDING_TOKEN)
        return logits, pending

    @staticmethod
    def with_token(pending: DecoderState, token: int) -> DecoderState:
        return DecoderState(pending.layers, pending.attention, token)

    def _check_labels(self, labels) -> list:
        labels = [int(y) for y in labels]
        for y in labels:
            if not (0 <= y < self.vocab.size):
                raise ContractError(f"label id {y} outside vocabulary of size {self.vocab.size}")
        return labels

    def sequence_logprob(self, features, labels) -> float:
        """log P(labels ++ eos | features), one term per decoder step."""
        labels = self._check_labels(labels)
        enc = self.encode(features)
        keys = self.encoder_keys(enc)
        state = self.start_decoder(enc)
        total = 0.0
        for y in list(labels) + [self.vocab.eos_id]:
            logits, pending = self.decoder_step(state, enc, keys)
            total += float(kernels.log_softmax(logits)[y])
            state = self.with_token(pending, y)
        return total

    # ---- internal LM ----

    def ilm_start(self) -> IlmState:
        layers = tuple(LstmState.zeros(p.hidden_size) for p in self._dec_layers)
        return IlmState(layers, self.vocab.sos_id)

    def ilm_step(self, state: IlmState):
        """Decoder step with a zero context and no attention.

        Returns (log-probabilities over V, pending next state); the model
        acts as a plain token-level RNN-LM, independent of any features.
        """
        token = state.last_token
        if not (0 <= token < self.vocab.size):
            raise ContractError(f"token id {token} outside vocabulary of size {self.vocab.size}")
        h = self._embed[token]
        new_layers = []
        for params, layer_state in zip(self._dec_layers, state.layers):
            h, new = kernels.lstm_cell_step(h, layer_state, params)
            new_layers.append(new)
        log_dist = kernels.log_softmax(kernels.affine(h, self._out_w, self._out_b))
        return log_dist, IlmState(tuple(new_layers), PENDING_TOKEN)

    @staticmethod
    def ilm_with_token(pending: IlmState, token: int) -> IlmState:
        return IlmState(pending.layers, token)

    def ilm_sequence_logprob(self, labels) -> float:
        """Internal-LM chain log P(labels ++ eos); the eos step is scored."""
        labels = self._check_labels(labels)
        state = self.ilm_start()
        total = 0.0
        for y in list(labels) + [self.vocab.eos_id]:
            log_dist, pending = self.ilm_step(state)
            total += float(log_dist[y])
            state = self.ilm_with_token(pending, y)
        return total
