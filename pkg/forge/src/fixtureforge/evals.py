"""Forge-side sanity evaluations: greedy decoding, WER, and LM perplexity.

These checks run on the training framework's own forward passes; they
gate fixture export (a model that cannot transcribe its own training
domain is not worth shipping) and quantify the domain split.
"""

import math

import torch

from fixtureforge.models import EOS_ID, SOS_ID

__all__ = ["greedy_rnnt_decode", "edit_distance", "corpus_wer", "lm_corpus_ppl"]


def _pred_step(net, token: int, states):
    x = net.embed(torch.tensor([token])).view(1, 1, -1)
    out = x
    new_states = []
    for i, (lstm, ln, proj) in enumerate(zip(net.pred_lstm, net.pred_ln, net.pred_proj)):
        out, state = lstm(out, states[i] if states is not None else None)
        new_states.append(state)
        out = proj(ln(out))
    return out.view(-1), new_states


@torch.no_grad()
def greedy_rnnt_decode(net, feats: torch.Tensor, max_symbols: int = 3) -> list:
    """Frame-synchronous greedy transducer decoding; returns token ids."""
    enc = net.encode(feats)
    out, states = _pred_step(net, SOS_ID, None)
    tokens = []
    for t in range(enc.shape[0]):
        for _ in range(max_symbols):
            logits = net.joint_logits(enc[t], out)
            top = int(torch.argmax(logits).item())
            if top == net.blank_id:
                break
            tokens.append(top)
            out, states = _pred_step(net, top, states)
    return tokens


def edit_distance(ref: list, hyp: list) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def corpus_wer(pairs: list) -> float:
    """pairs: (reference words, hypothesis words); edits over reference words."""
    edits = sum(edit_distance(ref, hyp) for ref, hyp in pairs)
    ref_words = sum(len(ref) for ref, _ in pairs)
    if ref_words == 0:
        raise ValueError("corpus WER needs at least one non-empty reference")
    return edits / ref_words


@torch.no_grad()
def lm_corpus_ppl(net, sentences: list) -> float:
    """Perplexity over id sentences; every sequence scores its eos step."""
    total, count = 0.0, 0
    for sent in sentences:
        inputs = torch.tensor([[SOS_ID] + sent], dtype=torch.long)
        log_probs = torch.log_softmax(net.scores(inputs)[0].double(), dim=-1)
        targets = sent + [EOS_ID]
        for step, target in enumerate(targets):
            total += float(log_probs[step, target])
        count += len(targets)
    return math.exp(-total / count)
