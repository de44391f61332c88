"""Deterministic single-process training loops for the toy models.

Each recipe fully determines the exported weights: parameter init,
shuffle order, and noise all derive from the recipe seed, and torch runs
on one thread so results are reproducible bit for bit.  A non-finite
loss aborts immediately and surfaces the full recipe for the dump.
"""

import random
from dataclasses import asdict, dataclass

import torch
from torch import nn

from fixtureforge.models import EOS_ID, SOS_ID
from fixtureforge.rnnt_loss import rnnt_utterance_loss

__all__ = [
    "Recipe",
    "DivergenceError",
    "aed_utterance_loss",
    "lm_batch_loss",
    "train_rnnt",
    "train_aed",
    "train_lm",
]


@dataclass(frozen=True)
class Recipe:
    model: str
    epochs: int
    lr: float
    lr_decay: float
    batch_size: int
    seed: int
    label_smoothing: float = 0.0
    grad_clip: float = 1.0
    weight_decay: float = 0.0


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the recipe for the dump."""

    def __init__(self, recipe: Recipe, epoch: int, step: int):
        self.recipe = recipe
        self.epoch = epoch
        self.step = step
        super().__init__(
            f"{recipe.model}: non-finite loss at epoch {epoch} step {step}; "
            f"recipe {asdict(recipe)}"
        )


def aed_utterance_loss(net, feats: torch.Tensor, labels: torch.Tensor, smoothing: float) -> torch.Tensor:
    """Label-smoothed cross entropy over the teacher-forced step chain."""
    logits = net.decoder_scores(net.encode(feats), labels)
    targets = torch.cat([labels, labels.new_full((1,), EOS_ID)])
    log_probs = torch.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(1, targets.view(-1, 1)).squeeze(1)
    uniform = -log_probs.mean(dim=1)
    return ((1.0 - smoothing) * nll + smoothing * uniform).mean()


def lm_batch_loss(net, batch: list) -> torch.Tensor:
    """Cross entropy over a padded batch of token-id sentences."""
    width = max(len(s) for s in batch) + 1
    inputs = torch.full((len(batch), width), SOS_ID, dtype=torch.long)
    targets = torch.full((len(batch), width), -100, dtype=torch.long)
    for row, sent in enumerate(batch):
        inputs[row, 1 : len(sent) + 1] = torch.tensor(sent, dtype=torch.long)
        targets[row, : len(sent) + 1] = torch.tensor(sent + [EOS_ID], dtype=torch.long)
    logits = net.scores(inputs)
    return nn.functional.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), ignore_index=-100
    )


def _run_epochs(net, items: list, recipe: Recipe, batch_loss) -> list:
    """Generic loop: shuffled minibatches, Adam, decayed lr, divergence guard."""
    params = [p for p in net.parameters() if p.requires_grad]
    opt = torch.optim.Adam(params, lr=recipe.lr, weight_decay=recipe.weight_decay)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=recipe.lr_decay)
    order_rng = random.Random(f"{recipe.seed}:{recipe.model}:order")
    history = []
    for epoch in range(recipe.epochs):
        order = list(range(len(items)))
        order_rng.shuffle(order)
        total, count = 0.0, 0
        for step, start in enumerate(range(0, len(order), recipe.batch_size)):
            chunk = [items[i] for i in order[start : start + recipe.batch_size]]
            opt.zero_grad()
            loss = batch_loss(chunk)
            if not torch.isfinite(loss):
                raise DivergenceError(recipe, epoch, step)
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, recipe.grad_clip)
            opt.step()
            total += float(loss.item()) * len(chunk)
            count += len(chunk)
        sched.step()
        history.append(total / count)
    return history


def train_rnnt(net, utterances: list, recipe: Recipe) -> list:
    """utterances: list of (features (T,F) float32 tensor, labels int64 tensor)."""
    def batch_loss(chunk):
        return sum(rnnt_utterance_loss(net, f, y) for f, y in chunk) / len(chunk)

    return _run_epochs(net, utterances, recipe, batch_loss)


def train_aed(net, utterances: list, recipe: Recipe) -> list:
    def batch_loss(chunk):
        return sum(
            aed_utterance_loss(net, f, y, recipe.label_smoothing) for f, y in chunk
        ) / len(chunk)

    return _run_epochs(net, utterances, recipe, batch_loss)


def train_lm(net, sentences: list, recipe: Recipe) -> list:
    """sentences: list of token-id lists; batches are whole loss units."""
    def batch_loss(chunk):
        return lm_batch_loss(net, chunk)

    return _run_epochs(net, sentences, recipe, batch_loss)
