"""Finite-difference validation of the transducer loss gradients.

Runs a tiny randomly initialized transducer in float64, computes the
loss gradient with autograd, and compares every parameter coordinate
against a central finite difference.  float64 keeps the difference
quotient's truncation and roundoff error far below the acceptance
threshold, so any disagreement points at the loss itself.
"""

import torch

from fixtureforge.models import RnntDims, RnntNet
from fixtureforge.rnnt_loss import rnnt_utterance_loss

__all__ = ["finite_difference_check"]


def finite_difference_check(
    frames: int = 3,
    u_len: int = 2,
    n_tokens: int = 5,
    seed: int = 0,
    eps: float = 1e-6,
) -> dict:
    """Compare autograd and central differences on every coordinate.

    Returns max_rel_err, the number of checked coordinates, and the loss.
    """
    torch.manual_seed(seed)
    dims = RnntDims(
        vocab_size=n_tokens,
        feat_dim=3,
        enc_layers=1,
        enc_hidden=4,
        enc_proj=4,
        embed_dim=3,
        pred_layers=1,
        pred_hidden=4,
        pred_proj=4,
        joint_dim=5,
    )
    net = RnntNet(dims).double()
    gen = torch.Generator().manual_seed(seed + 1)
    feats = torch.randn(frames, dims.feat_dim, dtype=torch.float64, generator=gen)
    labels = torch.randint(0, n_tokens, (u_len,), generator=gen)

    params = [p for p in net.parameters() if p.requires_grad]
    net.zero_grad()
    loss = rnnt_utterance_loss(net, feats, labels)
    loss.backward()
    analytic = [p.grad.detach().clone() for p in params]

    max_rel_err = 0.0
    checked = 0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            flat = param.view(-1)
            gflat = grad.view(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = rnnt_utterance_loss(net, feats, labels).item()
                flat[idx] = orig - eps
                down = rnnt_utterance_loss(net, feats, labels).item()
                flat[idx] = orig
                fd = (up - down) / (2.0 * eps)
                an = gflat[idx].item()
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                if rel > max_rel_err:
                    max_rel_err = rel
                checked += 1
    return {
        "max_rel_err": max_rel_err,
        "checked": checked,
        "loss": float(loss.item()),
        "frames": frames,
        "u_len": u_len,
        "n_tokens": n_tokens,
        "seed": seed,
        "eps": eps,
    }
