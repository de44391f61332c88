"""Transducer inference: encoder, prediction network, joint, lattice posterior.

The sequence posterior sums over blank-augmented alignments on a T x U
lattice.  Every alignment consumes exactly T frames via blank steps and
ends with the blank that consumes the final frame, so an utterance with
T frames and U labels has C(T+U-1, U) alignments.  The internal LM
(``ilm_*``) reuses the prediction network and joint but drops the
acoustic branch entirely (including its bias) and removes the blank row
before normalizing, turning the transducer into a token-only LM.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ilmfuse import kernels
from ilmfuse.container import ModelContainer
from ilmfuse.errors import ContractError, DimensionError, ValidationError
from ilmfuse.kernels import LstmCellParams, LstmState

__all__ = ["PredictionState", "RnntModel", "label_cap"]


def label_cap(frames: int) -> int:
    """Longest label sequence scoreable against `frames` acoustic frames."""
    return max(2 * frames, 4)


@dataclass(frozen=True)
class PredictionState:
    """Prediction-network state after consuming a token prefix.

    ``output`` is the projected top-layer vector for the consumed prefix,
    the h^pred that feeds the joint at this label position.
    """

    layers: tuple
    last_token: int
    output: np.ndarray


class _ProjectedLstmStack:
    """LSTM layers, each followed by layer norm then a linear projection."""

    def __init__(self, container: ModelContainer, prefix: str, n_layers: int):
        self.layers = []
        for i in range(n_layers):
            t = container.tensor
            self.layers.append(
                (
                    LstmCellParams(t(f"{prefix}.l{i}.w_x"), t(f"{prefix}.l{i}.w_h"), t(f"{prefix}.l{i}.b")),
                    t(f"{prefix}.l{i}.ln.g"),
                    t(f"{prefix}.l{i}.ln.b"),
                    t(f"{prefix}.l{i}.proj.w"),
                    t(f"{prefix}.l{i}.proj.b"),
                )
            )

    def zero_states(self):
        return tuple(LstmState.zeros(p.hidden_size) for p, *_ in self.layers)

    def step(self, x, states):
        new_states = []
        out = x
        for (params, ln_g, ln_b, pw, pb), state in zip(self.layers, states):
            h, new = kernels.lstm_cell_step(out, state, params)
            new_states.append(new)
            out = kernels.affine(kernels.layer_norm(h, ln_g, ln_b), pw, pb)
        return out, tuple(new_states)

    def forward(self, seq):
        states = self.zero_states()
        rows = []
        for t in range(seq.shape[0]):
            out, states = self.step(seq[t], states)
            rows.append(out)
        return np.stack(rows)


def _activation(name: str):
    if name == "tanh":
        return np.tanh
    return lambda v: np.maximum(v, np.float32(0))


class RnntModel:
    """Inference wrapper over a validated transducer container."""

    kind = "rnnt"

    def __init__(self, container: ModelContainer):
        if container.kind != "rnnt":
            raise ValidationError(f"expected an rnnt container, got kind {container.kind!r}")
        self.container = container
        self.vocab = container.vocab
        hp = container.hyperparams
        self.feat_dim = hp["feat_dim"]
        self._enc = _ProjectedLstmStack(container, "enc", hp["enc_layers"])
        self._pred = _ProjectedLstmStack(container, "pred", hp["pred_layers"])
        self._embed = container.tensor("pred.embed")
        t = container.tensor
        self._w_e, self._b_e = t("joint.W_e"), t("joint.b_e")
        self._w_p, self._b_p = t("joint.W_p"), t("joint.b_p")
        self._w_j, self._b_j = t("joint.W_j"), t("joint.b_j")
        self._act = _activation(hp["activation"])

    # ---- encoder ----

    def encode(self, features) -> np.ndarray:
        feats = np.ascontiguousarray(features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise DimensionError(f"features must be (T>=1, d), got shape {feats.shape}")
        if feats.shape[1] != self.feat_dim:
            raise DimensionError(
                f"feature dim {feats.shape[1]} does not match model feat_dim {self.feat_dim}"
            )
        return self._enc.forward(feats)

    # ---- prediction network ----

    def start_prediction(self) -> PredictionState:
        """State after consuming only the start-of-sequence token."""
        _, state = self.prediction_step(self.vocab.sos_id, None)
        return state

    def prediction_step(self, prev_token: int, state: PredictionState | None):
        """Consume one token; returns (h^pred, advanced state).

        ``state=None`` means the empty context (zero LSTM states); the
        blank id is not a token and is rejected.
        """
        if prev_token == self.vocab.blank_id:
            raise ContractError("blank is not an emittable token for the prediction network")
        if not (0 <= prev_token < self.vocab.size):
            raise ContractError(f"token id {prev_token} outside vocabulary of size {self.vocab.size}")
        layer_states = self._pred.zero_states() if state is None else state.layers
        out, new_states = self._pred.step(self._embed[prev_token], layer_states)
        return out, PredictionState(new_states, prev_token, out)

    # ---- joint ----

    def enc_side(self, h_enc_t) -> np.ndarray:
        return kernels.affine(h_enc_t, self._w_e, self._b_e)

    def pred_side(self, h_pred_u) -> np.ndarray:
        return kernels.affine(h_pred_u, self._w_p, self._b_p)

    def joint_from_sides(self, enc_side, pred_side) -> np.ndarray:
        return kernels.affine(self._act(enc_side + pred_side), self._w_j, self._b_j)

    def joint_step(self, h_enc_t, h_pred_u) -> np.ndarray:
        """Blank-augmented logits; the last row is the blank logit."""
        return self.joint_from_sides(self.enc_side(h_enc_t), self.pred_side(h_pred_u))

    def step_distribution(self, h_enc_t, h_pred_u) -> np.ndarray:
        return kernels.softmax(self.joint_step(h_enc_t, h_pred_u))

    def step_log_distribution(self, h_enc_t, h_pred_u) -> np.ndarray:
        return kernels.log_softmax(self.joint_step(h_enc_t, h_pred_u))

    # ---- sequence posterior ----

    def _check_labels(self, labels) -> list:
        labels = [int(y) for y in labels]
        for y in labels:
            if not (0 <= y < self.vocab.size):
                raise ContractError(f"label id {y} outside vocabulary of size {self.vocab.size}")
        return labels

    def _lattice_log_dists(self, enc, labels):
        """log distributions ld[t][u] over V+1 for every lattice context."""
        sides_e = [self.enc_side(enc[t]) for t in range(enc.shape[0])]
        sides_p = []
        state = None
        out, state = self.prediction_step(self.vocab.sos_id, state)
        sides_p.append(self.pred_side(out))
        for y in labels:
            out, state = self.prediction_step(y, state)
            sides_p.append(self.pred_side(out))
        return [
            [kernels.log_softmax(self.joint_from_sides(se, sp)) for sp in sides_p]
            for se in sides_e
        ]

    def sequence_logprob(self, features, labels) -> float:
        """log P(labels | features): forward DP over the alignment lattice.

        Grid cell (t, u) holds the log-mass of consuming t frames while
        emitting the first u labels; blank moves right on t, a label
        moves up on u, and label moves are impossible once every frame
        is consumed.  Summands are combined blank-term first.
        """
        labels = self._check_labels(labels)
        enc = self.encode(features)
        t_len, u_len = enc.shape[0], len(labels)
        if u_len > label_cap(t_len):
            raise ContractError(
                f"{u_len} labels exceeds the scoring cap {label_cap(t_len)} for {t_len} frames"
            )
        ld = self._lattice_log_dists(enc, labels)
        blank = self.vocab.blank_id
        neg_inf = float("-inf")
        alpha = np.full((t_len + 1, u_len + 1), neg_inf, dtype=np.float64)
        alpha[0, 0] = 0.0
        for t in range(t_len + 1):
            for u in range(u_len + 1):
                if t == 0 and u == 0:
                    continue
                terms = []
                if t >= 1:
                    terms.append(alpha[t - 1, u] + ld[t - 1][u][blank])
                if u >= 1 and t < t_len:
                    terms.append(alpha[t, u - 1] + ld[t][u - 1][labels[u - 1]])
                if len(terms) == 1:
                    alpha[t, u] = terms[0]
                elif terms:
                    alpha[t, u] = kernels.log_sum_exp(np.array(terms))
        return float(alpha[t_len, u_len])

    def bruteforce_logprob(self, features, labels) -> float:
        """Oracle path sum: enumerate all C(T+U-1, U) alignments explicitly."""
        labels = self._check_labels(labels)
        enc = self.encode(features)
        t_len, u_len = enc.shape[0], len(labels)
        if t_len + u_len > 14:
            raise ContractError(f"enumeration cap exceeded: T+U = {t_len + u_len} > 14")
        ld = self._lattice_log_dists(enc, labels)
        blank = self.vocab.blank_id
        steps = t_len + u_len
        path_logps = []
        # the final action is always the blank consuming the last frame
        for emit_positions in combinations(range(steps - 1), u_len):
            emit_set = set(emit_positions)
            t = u = 0
            logp = 0.0
            for i in range(steps):
                if i in emit_set:
                    logp += ld[t][u][labels[u]]
                    u += 1
                else:
                    logp += ld[t][u][blank]
                    t += 1
            path_logps.append(logp)
        assert len(path_logps) == math.comb(steps - 1, u_len)
        return kernels.log_sum_exp(np.array(path_logps, dtype=np.float64))

    # ---- internal LM ----

    def ilm_logits(self, h_pred_u) -> np.ndarray:
        """Joint logits with the acoustic branch (weights and bias) absent."""
        return kernels.affine(self._act(self.pred_side(h_pred_u)), self._w_j, self._b_j)

    def ilm_step(self, state: PredictionState) -> np.ndarray:
        """Next-token probabilities over V: blank row dropped, then softmax."""
        return kernels.softmax(self.ilm_logits(state.output)[: self.vocab.size])

    def ilm_log_step(self, state: PredictionState) -> np.ndarray:
        return kernels.log_softmax(self.ilm_logits(state.output)[: self.vocab.size])

    def ilm_sequence_logprob(self, labels) -> float:
        """Token-prior chain log P(labels) under the internal LM; no eos term."""
        labels = self._check_labels(labels)
        state = self.start_prediction()
        total = 0.0
        for y in labels:
            total += float(self.ilm_log_step(state)[y])
            _, state = self.prediction_step(y, state)
        return total
