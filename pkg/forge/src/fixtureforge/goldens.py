"""Golden fixture emission: forward-pass cases computed by this framework.

Each golden is a self-contained JSON file naming a dispatch case, inline
inputs, the expected outputs, and an absolute tolerance.  Kernel-level
cases use dyadic-rational inputs (small integers over powers of two) so
their float32 arithmetic is exact regardless of summation order.  Model
cases reference an exported container by relative path, and their
expectations are computed from the exported tensors themselves with
step-by-step torch ops in the container contract's operation order.
Those chains run in float64, so the stored values approximate the exact
forward pass of the exported float32 weights; the per-case tolerance then
only has to absorb the consumer's own single-precision rounding instead
of the disagreement between two independent float32 evaluations.
"""

import json
import os

import numpy as np
import torch

from fixtureforge.corpora import stable_seed
from fixtureforge.models import EOS_ID, SOS_ID, export_aed, export_lm, export_rnnt

__all__ = ["emit_goldens", "GOLDEN_TOLERANCES"]

LN_EPS = 1e-5

GOLDEN_TOLERANCES = {
    "lstm_step_case1": 1e-6,
    "lstm_stack_case1": 1e-6,
    "affine_case1": 1e-7,
    "enc_case1": 1e-5,
    "pred_case1": 1e-5,
    "joint_case1": 1e-5,
    "stepdist_case1": 1e-6,
    "ilm_step_case1": 1e-6,
    "aed_enc_case1": 1e-5,
    "attn_case1": 1e-5,
    "aed_step_case1": 1e-5,
    "aed_ilm_case1": 1e-6,
    "lm_step_case1": 1e-6,
    "lm_corpus_case1": 1e-4,
}


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stable_seed(f"{seed}:golden:{name}"))


def _dyadic(rng: np.random.Generator, shape, denom: int = 8) -> np.ndarray:
    return (rng.integers(-8, 9, size=shape) / np.float32(denom)).astype(np.float32)


def _gauss(rng: np.random.Generator, shape, scale: float = 0.5) -> np.ndarray:
    return (scale * rng.standard_normal(shape)).astype(np.float32)


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z -= z.max()
    return z - np.log(np.exp(z).sum())


def _t(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))


def _rows64(matrix: np.ndarray) -> list:
    return [torch.from_numpy(row.astype(np.float64)) for row in matrix]


def _listify(value) -> object:
    if isinstance(value, torch.Tensor):
        value = value.detach().numpy()
    if isinstance(value, np.ndarray):
        return value.astype(np.float64).tolist()
    return float(value)


# ---- functional forwards over exported tensors ----


def _lstm_cell(x, h, c, w_x, w_h, b):
    n = h.shape[0]
    gates = w_x @ x + w_h @ h + b
    i = torch.sigmoid(gates[:n])
    f = torch.sigmoid(gates[n : 2 * n])
    g = torch.tanh(gates[2 * n : 3 * n])
    o = torch.sigmoid(gates[3 * n :])
    c_new = f * c + i * g
    return o * torch.tanh(c_new), c_new


def _layer_norm(x, gamma, beta):
    z = x.double()
    out = (z - z.mean()) / torch.sqrt(z.var(unbiased=False) + LN_EPS)
    return out * gamma.double() + beta.double()


class _Tensors:
    """Exported float32 tensors widened to float64 torch views."""

    def __init__(self, tensors: dict):
        self._t = {
            name: torch.from_numpy(arr.astype(np.float64)) for name, arr in tensors.items()
        }

    def __getitem__(self, name: str) -> torch.Tensor:
        return self._t[name]


def _run_cells(seq: list, w_x, w_h, b) -> list:
    hidden = w_h.shape[1]
    h = torch.zeros(hidden, dtype=w_h.dtype)
    c = torch.zeros(hidden, dtype=w_h.dtype)
    rows = []
    for x in seq:
        h, c = _lstm_cell(x, h, c, w_x, w_h, b)
        rows.append(h)
    return rows


def _projected_stack(t: _Tensors, prefix: str, n_layers: int, seq: list) -> list:
    """LSTM layers, each followed by layer norm then a linear projection."""
    for i in range(n_layers):
        rows = _run_cells(seq, t[f"{prefix}.l{i}.w_x"], t[f"{prefix}.l{i}.w_h"], t[f"{prefix}.l{i}.b"])
        seq = [
            t[f"{prefix}.l{i}.proj.w"] @ _layer_norm(h, t[f"{prefix}.l{i}.ln.g"], t[f"{prefix}.l{i}.ln.b"])
            + t[f"{prefix}.l{i}.proj.b"]
            for h in rows
        ]
    return seq


def _rnnt_encode(t: _Tensors, hp: dict, feats: np.ndarray) -> list:
    return _projected_stack(t, "enc", hp["enc_layers"], _rows64(feats))


def _rnnt_pred_out(t: _Tensors, hp: dict, prefix: list) -> torch.Tensor:
    tokens = [SOS_ID] + list(prefix)
    seq = [t["pred.embed"][tok] for tok in tokens]
    return _projected_stack(t, "pred", hp["pred_layers"], seq)[-1]


def _rnnt_joint(t: _Tensors, h_enc, h_pred) -> torch.Tensor:
    enc_side = t["joint.W_e"] @ h_enc + t["joint.b_e"]
    pred_side = t["joint.W_p"] @ h_pred + t["joint.b_p"]
    return t["joint.W_j"] @ torch.tanh(enc_side + pred_side) + t["joint.b_j"]


def _rnnt_ilm_logits(t: _Tensors, h_pred, vocab_size: int) -> torch.Tensor:
    pred_side = t["joint.W_p"] @ h_pred + t["joint.b_p"]
    return (t["joint.W_j"] @ torch.tanh(pred_side) + t["joint.b_j"])[:vocab_size]


def _aed_encode(t: _Tensors, hp: dict, feats: np.ndarray) -> list:
    seq = _rows64(feats)
    for i in range(hp["enc_layers"]):
        fwd = _run_cells(seq, t[f"enc.l{i}.fwd.w_x"], t[f"enc.l{i}.fwd.w_h"], t[f"enc.l{i}.fwd.b"])
        bwd = _run_cells(seq[::-1], t[f"enc.l{i}.bwd.w_x"], t[f"enc.l{i}.bwd.w_h"], t[f"enc.l{i}.bwd.b"])[::-1]
        seq = [
            _layer_norm(
                t[f"enc.l{i}.proj.w"] @ torch.cat([f, b]) + t[f"enc.l{i}.proj.b"],
                t[f"enc.l{i}.ln.g"],
                t[f"enc.l{i}.ln.b"],
            )
            for f, b in zip(fwd, bwd)
        ]
    return seq


def _aed_attend(t: _Tensors, enc_rows: list, h_dec) -> tuple:
    enc = torch.stack(enc_rows)
    keys = enc @ t["attn.w_k"].T
    query = t["attn.w_q"] @ h_dec + t["attn.b"]
    energies = torch.tanh(keys + query) @ t["attn.v"]
    weights = _softmax64(energies.numpy())
    context = weights @ enc.numpy()
    return weights, context


def _aed_dec_cells(t: _Tensors, hp: dict, x, states: list) -> tuple:
    h = x
    new_states = []
    for i in range(hp["dec_layers"]):
        prev_h, prev_c = states[i]
        h, c = _lstm_cell(h, prev_h, prev_c, t[f"dec.l{i}.w_x"], t[f"dec.l{i}.w_h"], t[f"dec.l{i}.b"])
        new_states.append((h, c))
    return h, new_states


def _aed_zero_states(hp: dict) -> list:
    return [
        (
            torch.zeros(hp["dec_hidden"], dtype=torch.float64),
            torch.zeros(hp["dec_hidden"], dtype=torch.float64),
        )
        for _ in range(hp["dec_layers"])
    ]


def _aed_step_logits(t: _Tensors, hp: dict, feats: np.ndarray, prefix: list) -> torch.Tensor:
    """Teacher-forced decoder logits for the step following the prefix."""
    enc_rows = _aed_encode(t, hp, feats)
    states = _aed_zero_states(hp)
    context = torch.zeros(hp["enc_proj"], dtype=torch.float64)
    logits = None
    for tok in [SOS_ID] + list(prefix):
        x = t["dec.embed"][tok] + context
        h, states = _aed_dec_cells(t, hp, x, states)
        logits = t["dec.out.w"] @ h + t["dec.out.b"]
        _, context_np = _aed_attend(t, enc_rows, h)
        context = torch.from_numpy(context_np)
    return logits


def _aed_ilm_logits(t: _Tensors, hp: dict, prefix: list) -> torch.Tensor:
    states = _aed_zero_states(hp)
    logits = None
    for tok in [SOS_ID] + list(prefix):
        h, states = _aed_dec_cells(t, hp, t["dec.embed"][tok], states)
        logits = t["dec.out.w"] @ h + t["dec.out.b"]
    return logits


def _lm_step_logits(t: _Tensors, hp: dict, prefix: list) -> list:
    """Output logits after each consumed token, starting from sos."""
    states = [
        (
            torch.zeros(hp["hidden"], dtype=torch.float64),
            torch.zeros(hp["hidden"], dtype=torch.float64),
        )
        for _ in range(hp["layers"])
    ]
    rows = []
    for tok in [SOS_ID] + list(prefix):
        h = t["lm.embed"][tok]
        for i in range(hp["layers"]):
            prev_h, prev_c = states[i]
            h, c = _lstm_cell(h, prev_h, prev_c, t[f"lm.l{i}.w_x"], t[f"lm.l{i}.w_h"], t[f"lm.l{i}.b"])
            states[i] = (h, c)
        bottleneck = t["lm.proj.w"] @ h + t["lm.proj.b"]
        rows.append(t["lm.out.w"] @ bottleneck + t["lm.out.b"])
    return rows


@torch.no_grad()
def _build_cases(rnnt_net, aed_net, lm_net, seed: int) -> list:
    _, rnnt_hp, rnnt_raw = export_rnnt(rnnt_net)
    _, aed_hp, aed_raw = export_aed(aed_net)
    _, lm_hp, lm_raw = export_lm(lm_net)
    rnnt, aed, lm = _Tensors(rnnt_raw), _Tensors(aed_raw), _Tensors(lm_raw)
    vocab_size = rnnt_net.dims.vocab_size
    cases = []

    rng = _rng(seed, "lstm_step")
    w_x, w_h, b = _dyadic(rng, (16, 4)), _dyadic(rng, (16, 4)), _dyadic(rng, (16,))
    x, h, c = _dyadic(rng, (4,), 4), _dyadic(rng, (4,), 4), _dyadic(rng, (4,), 4)
    h2, c2 = _lstm_cell(_t(x), _t(h), _t(c), _t(w_x), _t(w_h), _t(b))
    cases.append(
        {
            "name": "lstm_step_case1",
            "case": "lstm_step",
            "inputs": {
                "params": {"w_x": _listify(w_x), "w_h": _listify(w_h), "b": _listify(b)},
                "x": _listify(x),
                "h": _listify(h),
                "c": _listify(c),
            },
            "expect": {"h": _listify(h2), "c": _listify(c2)},
        }
    )

    rng = _rng(seed, "lstm_stack")
    layers = []
    for in_dim, hidden in [(4, 6), (6, 5)]:
        layers.append(
            {
                "w_x": _dyadic(rng, (4 * hidden, in_dim)),
                "w_h": _dyadic(rng, (4 * hidden, hidden)),
                "b": _dyadic(rng, (4 * hidden,)),
            }
        )
    sequence = _dyadic(rng, (5, 4), 4)
    seq = [_t(row) for row in sequence]
    for spec in layers:
        seq = _run_cells(seq, _t(spec["w_x"]), _t(spec["w_h"]), _t(spec["b"]))
    cases.append(
        {
            "name": "lstm_stack_case1",
            "case": "lstm_stack",
            "inputs": {
                "sequence": _listify(sequence),
                "layers": [{k: _listify(v) for k, v in spec.items()} for spec in layers],
            },
            "expect": {"outputs": _listify(torch.stack(seq))},
        }
    )

    rng = _rng(seed, "affine")
    w, x, b = _dyadic(rng, (7, 5)), _dyadic(rng, (5,), 4), _dyadic(rng, (7,))
    cases.append(
        {
            "name": "affine_case1",
            "case": "affine",
            "inputs": {"x": _listify(x), "w": _listify(w), "b": _listify(b)},
            "expect": {"out": _listify(_t(w) @ _t(x) + _t(b))},
        }
    )

    rng = _rng(seed, "enc")
    feats = _gauss(rng, (6, rnnt_hp["feat_dim"]))
    cases.append(
        {
            "name": "enc_case1",
            "case": "rnnt_encoder",
            "model": "models/rnnt.cont",
            "inputs": {"features": _listify(feats)},
            "expect": {"outputs": _listify(torch.stack(_rnnt_encode(rnnt, rnnt_hp, feats)))},
        }
    )

    cases.append(
        {
            "name": "pred_case1",
            "case": "rnnt_prediction",
            "model": "models/rnnt.cont",
            "inputs": {"prefix": [5, 17, 3]},
            "expect": {"output": _listify(_rnnt_pred_out(rnnt, rnnt_hp, [5, 17, 3]))},
        }
    )

    rng = _rng(seed, "joint")
    feats = _gauss(rng, (4, rnnt_hp["feat_dim"]))
    h_enc = _rnnt_encode(rnnt, rnnt_hp, feats)[2]
    logits = _rnnt_joint(rnnt, h_enc, _rnnt_pred_out(rnnt, rnnt_hp, [7, 12]))
    cases.append(
        {
            "name": "joint_case1",
            "case": "rnnt_joint",
            "model": "models/rnnt.cont",
            "inputs": {"features": _listify(feats), "frame": 2, "prefix": [7, 12]},
            "expect": {"logits": _listify(logits)},
        }
    )

    rng = _rng(seed, "stepdist")
    feats = _gauss(rng, (3, rnnt_hp["feat_dim"]))
    h_enc = _rnnt_encode(rnnt, rnnt_hp, feats)[1]
    logits = _rnnt_joint(rnnt, h_enc, _rnnt_pred_out(rnnt, rnnt_hp, [4]))
    cases.append(
        {
            "name": "stepdist_case1",
            "case": "rnnt_stepdist",
            "model": "models/rnnt.cont",
            "inputs": {"features": _listify(feats), "frame": 1, "prefix": [4]},
            "expect": {"probs": _listify(_softmax64(logits.numpy()))},
        }
    )

    ilm_logits = _rnnt_ilm_logits(rnnt, _rnnt_pred_out(rnnt, rnnt_hp, [6, 2]), vocab_size)
    cases.append(
        {
            "name": "ilm_step_case1",
            "case": "rnnt_ilm_step",
            "model": "models/rnnt.cont",
            "inputs": {"prefix": [6, 2]},
            "expect": {"probs": _listify(_softmax64(ilm_logits.numpy()))},
        }
    )

    rng = _rng(seed, "aed_enc")
    feats = _gauss(rng, (5, aed_hp["feat_dim"]))
    cases.append(
        {
            "name": "aed_enc_case1",
            "case": "aed_encoder",
            "model": "models/aed.cont",
            "inputs": {"features": _listify(feats)},
            "expect": {"outputs": _listify(torch.stack(_aed_encode(aed, aed_hp, feats)))},
        }
    )

    rng = _rng(seed, "attn")
    feats = _gauss(rng, (4, aed_hp["feat_dim"]))
    h_dec = _gauss(rng, (aed_hp["dec_hidden"],))
    weights, context = _aed_attend(
        aed, _aed_encode(aed, aed_hp, feats), torch.from_numpy(h_dec.astype(np.float64))
    )
    cases.append(
        {
            "name": "attn_case1",
            "case": "aed_attention",
            "model": "models/aed.cont",
            "inputs": {"features": _listify(feats), "h_dec": _listify(h_dec)},
            "expect": {"weights": _listify(weights), "context": _listify(context)},
        }
    )

    rng = _rng(seed, "aed_step")
    feats = _gauss(rng, (4, aed_hp["feat_dim"]))
    cases.append(
        {
            "name": "aed_step_case1",
            "case": "aed_decoder_step",
            "model": "models/aed.cont",
            "inputs": {"features": _listify(feats), "prefix": [3, 8]},
            "expect": {"logits": _listify(_aed_step_logits(aed, aed_hp, feats, [3, 8]))},
        }
    )

    ilm_last = _aed_ilm_logits(aed, aed_hp, [9, 20])
    cases.append(
        {
            "name": "aed_ilm_case1",
            "case": "aed_ilm_step",
            "model": "models/aed.cont",
            "inputs": {"prefix": [9, 20]},
            "expect": {"log_probs": _listify(_log_softmax64(ilm_last.numpy()))},
        }
    )

    prefix = [2, 33]
    lm_logits = _lm_step_logits(lm, lm_hp, prefix)[-1]
    cases.append(
        {
            "name": "lm_step_case1",
            "case": "lm_step",
            "model": "models/lm_target.cont",
            "inputs": {"prefix": prefix},
            "expect": {"log_probs": _listify(_log_softmax64(lm_logits.numpy()))},
        }
    )

    corpus = [[5, 9, 4], [30], [7, 7, 7, 7]]
    total = 0.0
    for sent in corpus:
        rows = _lm_step_logits(lm, lm_hp, sent)
        targets = sent + [EOS_ID]
        for step, target in enumerate(targets):
            total += float(_log_softmax64(rows[step].numpy())[target])
    cases.append(
        {
            "name": "lm_corpus_case1",
            "case": "lm_corpus_logprob",
            "model": "models/lm_target.cont",
            "inputs": {"corpus": corpus},
            "expect": {"total": total},
        }
    )
    return cases


def emit_goldens(out_dir: str, rnnt, aed, lm, seed: int) -> list:
    """Write one JSON file per golden case; returns the written names."""
    golden_dir = os.path.join(out_dir, "goldens")
    os.makedirs(golden_dir, exist_ok=True)
    names = []
    for case in _build_cases(rnnt, aed, lm, seed):
        case["tolerance"] = GOLDEN_TOLERANCES[case["name"]]
        ordered = {
            "name": case["name"],
            "case": case["case"],
            "tolerance": case["tolerance"],
        }
        if "model" in case:
            ordered["model"] = case["model"]
        ordered["inputs"] = case["inputs"]
        ordered["expect"] = case["expect"]
        path = os.path.join(golden_dir, f"{case['name']}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(ordered, fh, indent=1)
            fh.write("\n")
        names.append(case["name"])
    return names
