"""Synthetic two-domain corpora with a deterministic feature synthesizer.

Both domains share one vocabulary of whole-word tokens but differ
sharply in word statistics: the source domain is short command-style
utterances, the target domain is longer book-style sentences.  Each
token maps to a fixed multi-frame feature template; some template pairs
are deliberately close so that acoustics alone cannot separate them and
the decoder has to lean on its prior.  Gaussian noise is added per
utterance from a seeded stream, so corpora are bit-reproducible.
"""

import hashlib
import json
import math
import os
import random
from dataclasses import dataclass, field

import numpy as np

from fixtureforge import containers

__all__ = [
    "MARK",
    "SOS",
    "EOS",
    "WORDS",
    "Synthesizer",
    "CorpusBundle",
    "build_vocab_tokens",
    "stable_seed",
    "sample_source_sentence",
    "sample_target_sentence",
    "unigram_kl",
    "build_corpora",
    "write_corpora",
]

MARK = "▁"
SOS, EOS = "<s>", "</s>"

FUNCTION_WORDS = (
    "the", "a", "and", "of", "to", "in", "on", "was", "he", "she",
    "it", "his", "her", "they", "with", "at", "by", "from", "that", "this",
    "all", "not", "but", "for", "as", "had", "is", "were", "then", "when",
)
COMMAND_VERBS = ("turn", "switch", "set", "play", "stop", "start", "open", "close")
COMMAND_NOUNS = ("lights", "music", "volume", "alarm", "timer", "temperature", "kitchen", "garage")
STORY_NOUNS = (
    "king", "forest", "river", "journey", "night", "morning",
    "heart", "world", "thought", "voice", "shadow", "stone",
)
STORY_ADJS = ("ancient", "silent", "golden")
STORY_OPENERS = ("once",)

WORDS = FUNCTION_WORDS + COMMAND_VERBS + COMMAND_NOUNS + STORY_NOUNS + STORY_ADJS + STORY_OPENERS
COMMAND_WORDS = COMMAND_VERBS + COMMAND_NOUNS
STORY_WORDS = STORY_NOUNS + STORY_ADJS + STORY_OPENERS

# Acoustically confusable template pairs: every story content word shadows
# one command word, plus a few function-word pairs that blur both domains.
CONFUSION_PAIRS = tuple(zip(COMMAND_WORDS, STORY_WORDS)) + (
    ("the", "a"),
    ("his", "her"),
    ("was", "were"),
    ("then", "when"),
    ("at", "by"),
    ("in", "on"),
)

FRAMES_PER_TOKEN = 2
FEAT_DIM = 10
TEMPLATE_OFFSET = 0.25
NOISE_SIGMA = 0.5
CROSS_DOMAIN_LEAK = 0.06
# Fraction of source utterances that are general-prose clauses rather than
# commands.  Without the mix the encoder never hears half the function
# words and cross-domain decodes collapse to deletions instead of the
# confusions an external LM can repair.
CROSS_DOMAIN_MIX = 0.12


def build_vocab_tokens() -> list:
    """Full token inventory: reserved markers first, then word pieces."""
    return [SOS, EOS] + [MARK + w for w in WORDS]


def stable_seed(tag: str) -> int:
    """Process-independent integer seed derived from a label string."""
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:8], "little")


def _leaked(rng: random.Random, own: tuple, other: tuple) -> str:
    if rng.random() < CROSS_DOMAIN_LEAK:
        return rng.choice(other)
    return rng.choice(own)


def sample_source_sentence(rng: random.Random) -> list:
    """Command-style utterance, 2 to 9 words, with a small prose admixture."""
    if rng.random() < CROSS_DOMAIN_MIX:
        return sample_target_sentence(rng)
    verb = _leaked(rng, COMMAND_VERBS, STORY_WORDS)
    noun = _leaked(rng, COMMAND_NOUNS, STORY_WORDS)
    shape = rng.random()
    if shape < 0.30:
        words = [verb, noun]
    elif shape < 0.55:
        words = [verb, "the", noun]
    elif shape < 0.70:
        words = [verb, "on", "the", noun]
    elif shape < 0.85:
        second = _leaked(rng, COMMAND_NOUNS, STORY_WORDS)
        words = [verb, noun, "in", "the", second]
    else:
        words = [verb, "the", noun, rng.choice(("to", "for", "at"))]
    # optional qualifiers stretch commands toward story-sentence lengths, so
    # the prediction network does not learn that output always stops early
    while rng.random() < 0.45 and len(words) <= 6:
        second = _leaked(rng, COMMAND_NOUNS, STORY_WORDS)
        words += rng.choice(
            (
                ["in", "the", second],
                ["at", "the", second],
                ["for", "the", second],
                ["and", _leaked(rng, COMMAND_VERBS, STORY_WORDS), "the", second],
            )
        )
    return words


def _story_np(rng: random.Random) -> list:
    det = rng.choice(("the", "a", "his", "her", "this", "that"))
    out = [det]
    if rng.random() < 0.45:
        out.append(rng.choice(STORY_ADJS))
    out.append(_leaked(rng, STORY_NOUNS, COMMAND_WORDS))
    return out


def _story_clause(rng: random.Random) -> list:
    words = _story_np(rng)
    verb = rng.choice(("was", "had", "is", "were"))
    words.append(verb)
    if verb == "had":
        words += _story_np(rng)
    else:
        if rng.random() < 0.4:
            words.append(rng.choice(STORY_ADJS))
        words.append(rng.choice(("in", "at", "by", "from", "of", "with")))
        words += _story_np(rng)
    return words


def sample_target_sentence(rng: random.Random) -> list:
    """Book-style sentence, 6 to 12 words."""
    words = []
    if rng.random() < 0.3:
        words.append(rng.choice(("once", "then", "when")))
    words += _story_clause(rng)
    while len(words) < 6 or (len(words) <= 9 and rng.random() < 0.35):
        words.append(rng.choice(("and", "but")))
        words += _story_clause(rng)
    return words[:12]


def unigram_kl(source_sents: list, target_sents: list, eps: float = 1e-6) -> float:
    """KL(source unigram || target unigram) over the word inventory, in nats."""
    def dist(sents):
        counts = {w: eps for w in WORDS}
        for sent in sents:
            for w in sent:
                counts[w] += 1.0
        total = sum(counts.values())
        return {w: c / total for w, c in counts.items()}

    p, q = dist(source_sents), dist(target_sents)
    return sum(p[w] * math.log(p[w] / q[w]) for w in WORDS)


class Synthesizer:
    """Deterministic word-to-feature mapping plus seeded additive noise."""

    def __init__(self, seed: int):
        rng = np.random.default_rng(seed)
        self.templates = {
            w: rng.standard_normal((FRAMES_PER_TOKEN, FEAT_DIM)).astype(np.float32)
            for w in WORDS
        }
        # Overwrite the second element of each confusable pair with a small
        # perturbation of the first, so the pair stays distinct but noisy
        # renditions overlap.
        for anchor, twin in CONFUSION_PAIRS:
            bump = rng.standard_normal((FRAMES_PER_TOKEN, FEAT_DIM)).astype(np.float32)
            self.templates[twin] = self.templates[anchor] + np.float32(TEMPLATE_OFFSET) * bump

    def clean(self, words: list) -> np.ndarray:
        return np.concatenate([self.templates[w] for w in words], axis=0)

    def synth(self, words: list, rng: np.random.Generator, sigma: float = NOISE_SIGMA) -> np.ndarray:
        clean = self.clean(words)
        noise = rng.standard_normal(clean.shape).astype(np.float32)
        return clean + np.float32(sigma) * noise

    def nearest_words(self, features: np.ndarray) -> list:
        """Inverse map by nearest template per frame chunk (noiseless oracle)."""
        out = []
        inventory = sorted(self.templates)
        for start in range(0, features.shape[0], FRAMES_PER_TOKEN):
            chunk = features[start : start + FRAMES_PER_TOKEN]
            dists = [
                (float(np.sum((self.templates[w] - chunk) ** 2)), w) for w in inventory
            ]
            out.append(min(dists)[1])
        return out


@dataclass
class CorpusBundle:
    """Everything the trainer and the exporter need, fully in memory."""

    seed: int
    tokens: list
    synthesizer: Synthesizer
    splits: dict = field(default_factory=dict)  # name -> list of (uid, words, features)
    lm_target: list = field(default_factory=list)
    lm_source: list = field(default_factory=list)
    kl_source_target: float = 0.0

    def word_id(self, word: str) -> int:
        return self.tokens.index(MARK + word)

    def ids(self, words: list) -> list:
        return [self.word_id(w) for w in words]


SPLIT_SIZES = {
    "train_source": 2000,
    "dev_source": 50,
    "train_target": 200,
    "dev_target": 50,
    "test_target": 100,
}
LM_TARGET_SENTENCES = 10000


def build_corpora(seed: int) -> CorpusBundle:
    """Sample both domains, synthesize features, and measure divergence."""
    tokens = build_vocab_tokens()
    synth = Synthesizer(seed * 7919 + 11)
    bundle = CorpusBundle(seed=seed, tokens=tokens, synthesizer=synth)

    samplers = {
        "train_source": sample_source_sentence,
        "dev_source": sample_source_sentence,
        "train_target": sample_target_sentence,
        "dev_target": sample_target_sentence,
        "test_target": sample_target_sentence,
    }
    for split, size in SPLIT_SIZES.items():
        text_rng = random.Random(f"{seed}:{split}:text")
        noise_rng = np.random.default_rng(stable_seed(f"{seed}:{split}:noise"))
        utts = []
        for i in range(size):
            words = samplers[split](text_rng)
            feats = synth.synth(words, noise_rng)
            utts.append((f"{split}-{i:04d}", words, feats))
        bundle.splits[split] = utts

    lm_rng = random.Random(f"{seed}:lm_target:text")
    bundle.lm_target = [sample_target_sentence(lm_rng) for _ in range(LM_TARGET_SENTENCES)]
    bundle.lm_source = [words for _, words, _ in bundle.splits["train_source"]]

    source_text = [words for _, words, _ in bundle.splits["train_source"]]
    bundle.kl_source_target = unigram_kl(source_text, bundle.lm_target)
    if bundle.kl_source_target <= 0.3:
        raise RuntimeError(
            f"domains are not distinct enough: unigram KL {bundle.kl_source_target:.3f} <= 0.3"
        )
    return bundle


def write_corpora(bundle: CorpusBundle, out_dir: str) -> dict:
    """Write manifests, feature containers, and LM text; returns file map."""
    data_dir = os.path.join(out_dir, "data")
    os.makedirs(data_dir, exist_ok=True)
    written = {}
    for split, utts in bundle.splits.items():
        feat_dir = os.path.join(data_dir, "feats", split)
        os.makedirs(feat_dir, exist_ok=True)
        manifest_path = os.path.join(data_dir, f"{split}.jsonl")
        with open(manifest_path, "w", encoding="utf-8") as fh:
            for uid, words, feats in utts:
                feat_rel = f"feats/{split}/{uid}.cont"
                containers.write_features(os.path.join(data_dir, feat_rel), feats)
                record = {
                    "id": uid,
                    "ref": [MARK + w for w in words],
                    "feat": feat_rel,
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        written[split] = manifest_path
    for name, sents in (("lm_target", bundle.lm_target), ("lm_source", bundle.lm_source)):
        path = os.path.join(data_dir, f"{name}.txt")
        with open(path, "w", encoding="utf-8") as fh:
            for words in sents:
                fh.write(" ".join(words) + "\n")
        written[name] = path
    return written
