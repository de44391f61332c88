"""Torch model definitions that mirror the inference engine's math.

Conventions shared with the consumer of the exported containers:
LSTM gate blocks are fused in (input, forget, cell, output) order; the
transducer encoder/prediction layers apply layer norm to the raw LSTM
state and then a linear projection; the attention encoder projects the
concatenated directions first and layer-normalizes the projection; the
decoder consumes embedding plus previous context, reads logits off the
new top state, then attends.  Each recurrent module keeps a single
trainable bias (the redundant second bias is pinned at zero) so the
exported fused bias is exactly the trained parameter.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

__all__ = [
    "SOS_ID",
    "EOS_ID",
    "RnntDims",
    "AedDims",
    "LmDims",
    "RnntNet",
    "AedNet",
    "LmNet",
    "export_rnnt",
    "export_aed",
    "export_lm",
]

SOS_ID = 0
EOS_ID = 1


def _pin_second_bias(module: nn.Module) -> None:
    for name, param in module.named_parameters():
        if name.startswith("bias_hh"):
            param.data.zero_()
            param.requires_grad_(False)


def _lstm(in_dim: int, hidden: int, bidirectional: bool = False) -> nn.LSTM:
    lstm = nn.LSTM(in_dim, hidden, num_layers=1, bidirectional=bidirectional)
    _pin_second_bias(lstm)
    return lstm


@dataclass(frozen=True)
class RnntDims:
    vocab_size: int = 64
    feat_dim: int = 10
    enc_layers: int = 2
    enc_hidden: int = 64
    enc_proj: int = 64
    embed_dim: int = 64
    pred_layers: int = 1
    pred_hidden: int = 64
    pred_proj: int = 64
    joint_dim: int = 64


@dataclass(frozen=True)
class AedDims:
    vocab_size: int = 64
    feat_dim: int = 10
    enc_layers: int = 2
    enc_hidden: int = 64
    enc_proj: int = 64
    embed_dim: int = 64
    dec_layers: int = 1
    dec_hidden: int = 64
    attn_dim: int = 64


@dataclass(frozen=True)
class LmDims:
    vocab_size: int = 64
    embed_dim: int = 64
    hidden: int = 64
    layers: int = 1


class RnntNet(nn.Module):
    """Transducer: projected LSTM encoder and prediction net plus a joint."""

    def __init__(self, dims: RnntDims):
        super().__init__()
        self.dims = dims
        self.enc_lstm = nn.ModuleList()
        self.enc_ln = nn.ModuleList()
        self.enc_proj = nn.ModuleList()
        in_dim = dims.feat_dim
        for _ in range(dims.enc_layers):
            self.enc_lstm.append(_lstm(in_dim, dims.enc_hidden))
            self.enc_ln.append(nn.LayerNorm(dims.enc_hidden))
            self.enc_proj.append(nn.Linear(dims.enc_hidden, dims.enc_proj))
            in_dim = dims.enc_proj
        self.embed = nn.Embedding(dims.vocab_size, dims.embed_dim)
        self.pred_lstm = nn.ModuleList()
        self.pred_ln = nn.ModuleList()
        self.pred_proj = nn.ModuleList()
        in_dim = dims.embed_dim
        for _ in range(dims.pred_layers):
            self.pred_lstm.append(_lstm(in_dim, dims.pred_hidden))
            self.pred_ln.append(nn.LayerNorm(dims.pred_hidden))
            self.pred_proj.append(nn.Linear(dims.pred_hidden, dims.pred_proj))
            in_dim = dims.pred_proj
        self.w_e = nn.Linear(dims.enc_proj, dims.joint_dim)
        self.w_p = nn.Linear(dims.pred_proj, dims.joint_dim)
        self.w_j = nn.Linear(dims.joint_dim, dims.vocab_size + 1)

    @property
    def blank_id(self) -> int:
        return self.dims.vocab_size

    def encode(self, feats: torch.Tensor) -> torch.Tensor:
        """(T, feat_dim) -> (T, enc_proj)."""
        out = feats.unsqueeze(1)
        for lstm, ln, proj in zip(self.enc_lstm, self.enc_ln, self.enc_proj):
            h, _ = lstm(out)
            out = proj(ln(h))
        return out.squeeze(1)

    def predict_all(self, labels: torch.Tensor) -> torch.Tensor:
        """Prediction outputs after sos and after each label: (U+1, pred_proj)."""
        sos = labels.new_full((1,), SOS_ID)
        tokens = torch.cat([sos, labels]) if labels.numel() else sos
        out = self.embed(tokens).unsqueeze(1)
        for lstm, ln, proj in zip(self.pred_lstm, self.pred_ln, self.pred_proj):
            h, _ = lstm(out)
            out = proj(ln(h))
        return out.squeeze(1)

    def lattice_logits(self, enc: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
        """Blank-augmented joint logits over the whole (T, U+1) grid."""
        enc_side = self.w_e(enc)
        pred_side = self.w_p(pred)
        hidden = torch.tanh(enc_side.unsqueeze(1) + pred_side.unsqueeze(0))
        return self.w_j(hidden)

    def joint_logits(self, h_enc: torch.Tensor, h_pred: torch.Tensor) -> torch.Tensor:
        return self.w_j(torch.tanh(self.w_e(h_enc) + self.w_p(h_pred)))

    def ilm_logits(self, h_pred: torch.Tensor) -> torch.Tensor:
        """Joint with the acoustic branch (weights and bias) removed."""
        return self.w_j(torch.tanh(self.w_p(h_pred)))[..., : self.dims.vocab_size]


class AedNet(nn.Module):
    """Bidirectional encoder, additive attention, single-stack decoder."""

    def __init__(self, dims: AedDims):
        super().__init__()
        if dims.enc_proj != dims.embed_dim:
            raise ValueError("decoder sums context and embedding, enc_proj must equal embed_dim")
        self.dims = dims
        self.enc_lstm = nn.ModuleList()
        self.enc_proj = nn.ModuleList()
        self.enc_ln = nn.ModuleList()
        in_dim = dims.feat_dim
        for _ in range(dims.enc_layers):
            self.enc_lstm.append(_lstm(in_dim, dims.enc_hidden, bidirectional=True))
            self.enc_proj.append(nn.Linear(2 * dims.enc_hidden, dims.enc_proj))
            self.enc_ln.append(nn.LayerNorm(dims.enc_proj))
            in_dim = dims.enc_proj
        self.embed = nn.Embedding(dims.vocab_size, dims.embed_dim)
        self.dec_cells = nn.ModuleList()
        in_dim = dims.embed_dim
        for _ in range(dims.dec_layers):
            cell = nn.LSTMCell(in_dim, dims.dec_hidden)
            _pin_second_bias(cell)
            self.dec_cells.append(cell)
            in_dim = dims.dec_hidden
        self.out = nn.Linear(dims.dec_hidden, dims.vocab_size)
        self.attn_q = nn.Linear(dims.dec_hidden, dims.attn_dim)
        self.attn_k = nn.Linear(dims.enc_proj, dims.attn_dim, bias=False)
        self.attn_v = nn.Parameter(torch.empty(dims.attn_dim))
        nn.init.uniform_(self.attn_v, -(dims.attn_dim**-0.5), dims.attn_dim**-0.5)

    def encode(self, feats: torch.Tensor) -> torch.Tensor:
        """(T, feat_dim) -> (T, enc_proj); directions concatenated per frame."""
        out = feats.unsqueeze(1)
        for lstm, proj, ln in zip(self.enc_lstm, self.enc_proj, self.enc_ln):
            h, _ = lstm(out)
            out = ln(proj(h))
        return out.squeeze(1)

    def attend(self, enc: torch.Tensor, keys: torch.Tensor, h_dec: torch.Tensor):
        energies = torch.tanh(keys + self.attn_q(h_dec)) @ self.attn_v
        weights = torch.softmax(energies, dim=0)
        return weights, weights @ enc

    def _zero_state(self, ref: torch.Tensor) -> list:
        return [
            (
                ref.new_zeros(self.dims.dec_hidden),
                ref.new_zeros(self.dims.dec_hidden),
            )
            for _ in self.dec_cells
        ]

    def decoder_scores(self, enc: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Teacher-forced step logits; row i scores the token after i inputs."""
        keys = self.attn_k(enc)
        states = self._zero_state(enc)
        context = enc.new_zeros(self.dims.enc_proj)
        rows = []
        sos = labels.new_full((1,), SOS_ID)
        tokens = torch.cat([sos, labels]) if labels.numel() else sos
        for token in tokens:
            h = self.embed(token) + context
            for i, cell in enumerate(self.dec_cells):
                hi, ci = cell(h.unsqueeze(0), tuple(s.unsqueeze(0) for s in states[i]))
                states[i] = (hi.squeeze(0), ci.squeeze(0))
                h = states[i][0]
            rows.append(self.out(h))
            _, context = self.attend(enc, keys, h)
        return torch.stack(rows)

    def ilm_scores(self, labels: torch.Tensor) -> torch.Tensor:
        """Decoder chain with a zero context and no attention."""
        states = self._zero_state(self.embed.weight)
        rows = []
        sos = labels.new_full((1,), SOS_ID)
        tokens = torch.cat([sos, labels]) if labels.numel() else sos
        for token in tokens:
            h = self.embed(token)
            for i, cell in enumerate(self.dec_cells):
                hi, ci = cell(h.unsqueeze(0), tuple(s.unsqueeze(0) for s in states[i]))
                states[i] = (hi.squeeze(0), ci.squeeze(0))
                h = states[i][0]
            rows.append(self.out(h))
        return torch.stack(rows)


class LmNet(nn.Module):
    """Recurrent LM: embed, LSTM stack, bottleneck projection, output affine."""

    def __init__(self, dims: LmDims):
        super().__init__()
        self.dims = dims
        self.embed = nn.Embedding(dims.vocab_size, dims.embed_dim)
        self.lstm = nn.ModuleList()
        in_dim = dims.embed_dim
        for _ in range(dims.layers):
            self.lstm.append(_lstm(in_dim, dims.hidden))
            in_dim = dims.hidden
        self.proj = nn.Linear(dims.hidden, dims.embed_dim)
        self.out = nn.Linear(dims.embed_dim, dims.vocab_size)

    def scores(self, tokens: torch.Tensor) -> torch.Tensor:
        """(B, L) int -> (B, L, V) logits."""
        out = self.embed(tokens).transpose(0, 1)
        for lstm in self.lstm:
            out, _ = lstm(out)
        return self.out(self.proj(out)).transpose(0, 1)


def _np(param: torch.Tensor) -> np.ndarray:
    return param.detach().cpu().numpy().astype(np.float32)


def _lstm_tensors(prefix: str, lstm: nn.LSTM, reverse: bool = False) -> dict:
    sfx = "_reverse" if reverse else ""
    return {
        f"{prefix}.w_x": _np(getattr(lstm, f"weight_ih_l0{sfx}")),
        f"{prefix}.w_h": _np(getattr(lstm, f"weight_hh_l0{sfx}")),
        f"{prefix}.b": _np(getattr(lstm, f"bias_ih_l0{sfx}"))
        + _np(getattr(lstm, f"bias_hh_l0{sfx}")),
    }


def export_rnnt(net: RnntNet) -> tuple:
    d = net.dims
    hyperparams = {
        "feat_dim": d.feat_dim,
        "enc_layers": d.enc_layers,
        "enc_hidden": d.enc_hidden,
        "enc_proj": d.enc_proj,
        "embed_dim": d.embed_dim,
        "pred_layers": d.pred_layers,
        "pred_hidden": d.pred_hidden,
        "pred_proj": d.pred_proj,
        "joint_dim": d.joint_dim,
        "activation": "tanh",
    }
    tensors = {}
    for i in range(d.enc_layers):
        tensors.update(_lstm_tensors(f"enc.l{i}", net.enc_lstm[i]))
        tensors[f"enc.l{i}.ln.g"] = _np(net.enc_ln[i].weight)
        tensors[f"enc.l{i}.ln.b"] = _np(net.enc_ln[i].bias)
        tensors[f"enc.l{i}.proj.w"] = _np(net.enc_proj[i].weight)
        tensors[f"enc.l{i}.proj.b"] = _np(net.enc_proj[i].bias)
    tensors["pred.embed"] = _np(net.embed.weight)
    for i in range(d.pred_layers):
        tensors.update(_lstm_tensors(f"pred.l{i}", net.pred_lstm[i]))
        tensors[f"pred.l{i}.ln.g"] = _np(net.pred_ln[i].weight)
        tensors[f"pred.l{i}.ln.b"] = _np(net.pred_ln[i].bias)
        tensors[f"pred.l{i}.proj.w"] = _np(net.pred_proj[i].weight)
        tensors[f"pred.l{i}.proj.b"] = _np(net.pred_proj[i].bias)
    tensors["joint.W_e"] = _np(net.w_e.weight)
    tensors["joint.b_e"] = _np(net.w_e.bias)
    tensors["joint.W_p"] = _np(net.w_p.weight)
    tensors["joint.b_p"] = _np(net.w_p.bias)
    tensors["joint.W_j"] = _np(net.w_j.weight)
    tensors["joint.b_j"] = _np(net.w_j.bias)
    return "rnnt", hyperparams, tensors


def export_aed(net: AedNet) -> tuple:
    d = net.dims
    hyperparams = {
        "feat_dim": d.feat_dim,
        "enc_layers": d.enc_layers,
        "enc_hidden": d.enc_hidden,
        "enc_proj": d.enc_proj,
        "embed_dim": d.embed_dim,
        "dec_layers": d.dec_layers,
        "dec_hidden": d.dec_hidden,
        "attn_dim": d.attn_dim,
    }
    tensors = {}
    for i in range(d.enc_layers):
        tensors.update(_lstm_tensors(f"enc.l{i}.fwd", net.enc_lstm[i]))
        tensors.update(_lstm_tensors(f"enc.l{i}.bwd", net.enc_lstm[i], reverse=True))
        tensors[f"enc.l{i}.proj.w"] = _np(net.enc_proj[i].weight)
        tensors[f"enc.l{i}.proj.b"] = _np(net.enc_proj[i].bias)
        tensors[f"enc.l{i}.ln.g"] = _np(net.enc_ln[i].weight)
        tensors[f"enc.l{i}.ln.b"] = _np(net.enc_ln[i].bias)
    tensors["dec.embed"] = _np(net.embed.weight)
    for i in range(d.dec_layers):
        cell = net.dec_cells[i]
        tensors[f"dec.l{i}.w_x"] = _np(cell.weight_ih)
        tensors[f"dec.l{i}.w_h"] = _np(cell.weight_hh)
        tensors[f"dec.l{i}.b"] = _np(cell.bias_ih) + _np(cell.bias_hh)
    tensors["dec.out.w"] = _np(net.out.weight)
    tensors["dec.out.b"] = _np(net.out.bias)
    tensors["attn.w_q"] = _np(net.attn_q.weight)
    tensors["attn.b"] = _np(net.attn_q.bias)
    tensors["attn.w_k"] = _np(net.attn_k.weight)
    tensors["attn.v"] = _np(net.attn_v)
    return "aed", hyperparams, tensors


def export_lm(net: LmNet) -> tuple:
    d = net.dims
    hyperparams = {"embed_dim": d.embed_dim, "hidden": d.hidden, "layers": d.layers}
    tensors = {"lm.embed": _np(net.embed.weight)}
    for i in range(d.layers):
        tensors.update(_lstm_tensors(f"lm.l{i}", net.lstm[i]))
    tensors["lm.proj.w"] = _np(net.proj.weight)
    tensors["lm.proj.b"] = _np(net.proj.bias)
    tensors["lm.out.w"] = _np(net.out.weight)
    tensors["lm.out.b"] = _np(net.out.bias)
    return "lm", hyperparams, tensors
