"""Tiny randomly-weighted models and features for the test suite."""

import numpy as np

from ilmfuse.aed import AedModel
from ilmfuse.container import ModelContainer, Vocabulary, required_tensor_shapes
from ilmfuse.lm import LmModel
from ilmfuse.rnnt import RnntModel


def make_vocab(n_tokens: int) -> Vocabulary:
    if n_tokens < 2:
        raise ValueError("need room for sos and eos")
    tokens = ["<s>", "</s>"] + [f"▁w{i}" for i in range(n_tokens - 2)]
    return Vocabulary(tuple(tokens))


def random_container(kind, hyperparams, vocab, rng, scale=0.4) -> ModelContainer:
    shapes = required_tensor_shapes(kind, hyperparams, vocab)
    tensors = {
        name: rng.normal(0.0, scale, size=shape).astype(np.float32)
        for name, shape in shapes.items()
    }
    return ModelContainer(kind=kind, hyperparams=hyperparams, tensors=tensors, vocab=vocab)


def rnnt_hyperparams(feat_dim=3, enc_layers=1, enc_hidden=6, enc_proj=4, embed_dim=4,
                     pred_layers=1, pred_hidden=6, pred_proj=4, joint_dim=5,
                     activation="tanh") -> dict:
    return {
        "feat_dim": feat_dim,
        "enc_layers": enc_layers,
        "enc_hidden": enc_hidden,
        "enc_proj": enc_proj,
        "embed_dim": embed_dim,
        "pred_layers": pred_layers,
        "pred_hidden": pred_hidden,
        "pred_proj": pred_proj,
        "joint_dim": joint_dim,
        "activation": activation,
    }


def aed_hyperparams(feat_dim=3, enc_layers=1, enc_hidden=5, enc_proj=4, embed_dim=4,
                    dec_layers=1, dec_hidden=6, attn_dim=5) -> dict:
    return {
        "feat_dim": feat_dim,
        "enc_layers": enc_layers,
        "enc_hidden": enc_hidden,
        "enc_proj": enc_proj,
        "embed_dim": embed_dim,
        "dec_layers": dec_layers,
        "dec_hidden": dec_hidden,
        "attn_dim": attn_dim,
    }


def lm_hyperparams(embed_dim=4, hidden=6, layers=1) -> dict:
    return {"embed_dim": embed_dim, "hidden": hidden, "layers": layers}


def make_rnnt(rng, n_tokens=5, **overrides) -> RnntModel:
    vocab = make_vocab(n_tokens)
    return RnntModel(random_container("rnnt", rnnt_hyperparams(**overrides), vocab, rng))


def make_aed(rng, n_tokens=5, **overrides) -> AedModel:
    vocab = make_vocab(n_tokens)
    return AedModel(random_container("aed", aed_hyperparams(**overrides), vocab, rng))


def make_lm(rng, n_tokens=5, vocab=None, **overrides) -> LmModel:
    if vocab is None:
        vocab = make_vocab(n_tokens)
    return LmModel(random_container("lm", lm_hyperparams(**overrides), vocab, rng))


def uniform_lm_container(n_tokens: int, embed_dim=2, hidden=2) -> ModelContainer:
    """All-zero weights: every step emits the exact uniform distribution."""
    vocab = make_vocab(n_tokens)
    hp = lm_hyperparams(embed_dim=embed_dim, hidden=hidden, layers=1)
    shapes = required_tensor_shapes("lm", hp, vocab)
    tensors = {name: np.zeros(shape, dtype=np.float32) for name, shape in shapes.items()}
    return ModelContainer(kind="lm", hyperparams=hp, tensors=tensors, vocab=vocab)


def random_features(rng, frames: int, feat_dim: int = 3) -> np.ndarray:
    return rng.normal(0.0, 1.0, size=(frames, feat_dim)).astype(np.float32)
