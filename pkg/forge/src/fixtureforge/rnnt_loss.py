"""Differentiable transducer sequence log-probability.

Forward DP over the (T+1) x (U+1) alignment grid: a blank move consumes
a frame, a label move emits a token, label moves are impossible once all
frames are consumed, and every alignment ends with the blank that
consumes the final frame.  The grid is swept along anti-diagonals, whose
cells depend only on the previous diagonal, so each sweep is a vector
operation and the whole loss stays autograd-friendly.  Impossible cells
carry a large negative constant instead of -inf; their linear-space
contribution is exactly zero and no NaN can leak into gradients.
"""

import torch

__all__ = ["BIG_NEG", "transducer_logprob", "rnnt_utterance_loss"]

BIG_NEG = -1.0e9


def transducer_logprob(log_probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """log P(labels | lattice) from per-cell log distributions.

    log_probs: (T, U+1, V+1) log-softmaxed joint outputs, blank last.
    labels: (U,) int64.
    """
    t_len, u_rows, _ = log_probs.shape
    u_len = int(labels.shape[0])
    if u_rows != u_len + 1:
        raise ValueError(f"lattice has {u_rows} label rows, labels need {u_len + 1}")
    blank_lp = log_probs[:, :, -1]
    if u_len:
        gather_idx = labels.view(1, u_len, 1).expand(t_len, u_len, 1)
        label_lp = log_probs[:, :u_len, :].gather(2, gather_idx).squeeze(2)
    else:
        label_lp = log_probs.new_zeros((t_len, 0))

    neg = log_probs.new_tensor(BIG_NEG)
    ts = torch.arange(t_len + 1)
    # prev[t] holds the cell (t, d-1-t) of the previous anti-diagonal.
    prev = torch.cat([log_probs.new_zeros(1), neg.expand(t_len)])
    for d in range(1, t_len + u_len + 1):
        us = d - ts
        valid = (us >= 0) & (us <= u_len)
        # blank into (t, u) from (t-1, u), scoring frame t-1 at row u
        shifted = torch.cat([neg.view(1), prev[:-1]])
        b_t = (ts - 1).clamp(0, t_len - 1)
        b_u = us.clamp(0, u_len)
        blank_term = shifted + blank_lp[b_t, b_u]
        blank_term = torch.where(valid & (ts >= 1), blank_term, neg)
        # label into (t, u) from (t, u-1); impossible once t == T
        if u_len:
            l_t = ts.clamp(0, t_len - 1)
            l_u = (us - 1).clamp(0, u_len - 1)
            label_term = prev + label_lp[l_t, l_u]
            label_term = torch.where(valid & (us >= 1) & (ts < t_len), label_term, neg)
            cur = torch.logaddexp(blank_term, label_term)
        else:
            cur = blank_term
        prev = torch.where(valid, cur, neg)
    return prev[t_len]


def rnnt_utterance_loss(net, feats: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Negative sequence log-probability for one utterance."""
    enc = net.encode(feats)
    pred = net.predict_all(labels)
    logits = net.lattice_logits(enc, pred)
    log_probs = torch.log_softmax(logits, dim=-1)
    return -transducer_logprob(log_probs, labels)
