"""WER counting, corpus pooling, relative reductions, tuning."""

import itertools

import numpy as np
import pytest

from ilmfuse.beam import FusionModels, decode_utterance
from ilmfuse.errors import ContractError
from ilmfuse.fusion import FusionConfig
from ilmfuse.metrics import (
    WerCounts,
    corpus_wer,
    detokenize,
    relative_werr,
    tune_weights,
    wer,
)
from modelzoo import make_lm, make_rnnt, random_features


class TestWer:
    def test_perfect_match(self):
        counts = wer("a b c".split(), "a b c".split())
        assert (counts.substitutions, counts.insertions, counts.deletions) == (0, 0, 0)
        assert counts.ref_words == 3
        assert counts.wer == 0.0

    def test_single_deletion(self):
        counts = wer("a b c".split(), "a c".split())
        assert (counts.substitutions, counts.insertions, counts.deletions) == (0, 0, 1)
        assert abs(counts.wer - 1 / 3) < 1e-12

    def test_wer_above_one(self):
        counts = wer("a b".split(), "x y z".split())
        assert counts.edits == 3
        assert (counts.substitutions, counts.insertions, counts.deletions) == (2, 1, 0)
        assert counts.wer == 1.5

    def test_prefers_fewer_substitutions(self):
        # "b a" against "a b" costs 2 either as two substitutions or as
        # one deletion plus one insertion; the backtrace must pick the
        # substitution-free split
        counts = wer("a b".split(), "b a".split())
        assert counts.edits == 2
        assert counts.substitutions == 0
        assert {counts.insertions, counts.deletions} == {1}

    def test_empty_hypothesis_is_all_deletions(self):
        counts = wer("a b c".split(), [])
        assert (counts.substitutions, counts.insertions, counts.deletions) == (0, 0, 3)

    def test_empty_reference_counts_insertions(self):
        counts = wer([], "a b".split())
        assert (counts.substitutions, counts.insertions, counts.deletions) == (0, 2, 0)
        with pytest.raises(ContractError):
            counts.wer

    def test_symmetry_and_triangle_exhaustively(self):
        seqs = [
            list(s)
            for n in range(4)
            for s in itertools.product("xy", repeat=n)
        ]
        dist = {}
        for a, b in itertools.product(range(len(seqs)), repeat=2):
            ca = wer(seqs[a], seqs[b])
            dist[a, b] = ca.edits
        for a, b in itertools.product(range(len(seqs)), repeat=2):
            assert dist[a, b] == dist[b, a]
        for a, b, c in itertools.product(range(len(seqs)), repeat=3):
            assert dist[a, c] <= dist[a, b] + dist[b, c]

    def test_counts_add(self):
        total = WerCounts(1, 0, 2, 5) + WerCounts(0, 3, 0, 4)
        assert total == WerCounts(1, 3, 2, 9)


class TestCorpusWer:
    def test_single_pair_equals_wer(self):
        ref, hyp = "a b c".split(), "a c".split()
        rate, table = corpus_wer([(ref, hyp)])
        assert rate == wer(ref, hyp).wer
        assert len(table) == 1

    def test_duplication_invariance(self):
        pairs = [("a b c".split(), "a x c".split()), ("d e".split(), "d".split())]
        rate, _ = corpus_wer(pairs)
        doubled, _ = corpus_wer(pairs + pairs)
        assert rate == doubled

    def test_pools_counts_not_rates(self):
        # 1 edit / 1 word and 0 edits / 9 words pool to 10%, not 50%
        pairs = [(["a"], ["b"]), ("c " * 9, "c " * 9)]
        pairs = [(r.split() if isinstance(r, str) else r, h.split() if isinstance(h, str) else h) for r, h in pairs]
        rate, _ = corpus_wer(pairs)
        assert abs(rate - 0.1) < 1e-12

    def test_all_empty_references_rejected(self):
        with pytest.raises(ContractError):
            corpus_wer([([], ["a"]), ([], [])])


class TestRelativeWerr:
    def test_published_rounding_identities(self):
        assert round(relative_werr(8.97, 6.36), 1) == 29.1
        assert round(relative_werr(20.23, 17.01), 1) == 15.9

    def test_no_change_is_zero(self):
        assert relative_werr(5.0, 5.0) == 0.0

    def test_zero_baseline_rejected(self):
        with pytest.raises(ContractError):
            relative_werr(0.0, 1.0)


class TestDetokenize:
    def test_boundary_pieces_start_words(self):
        pieces = ["▁he", "llo", "▁wor", "ld"]
        assert detokenize(pieces) == ["hello", "world"]

    def test_leading_continuation_piece(self):
        assert detokenize(["llo", "▁world"]) == ["llo", "world"]

    def test_bare_boundary_dropped(self):
        assert detokenize(["▁", "▁ab"]) == ["ab"]

    def test_empty(self):
        assert detokenize([]) == []


def _toy_dev_set(rng, model, n=3):
    dev = []
    for _ in range(n):
        length = int(rng.integers(1, 4))
        ids = rng.integers(2, model.vocab.size, size=length)
        ref = [model.vocab.tokens[i] for i in ids]
        dev.append((ref, random_features(rng, int(rng.integers(2, 5)))))
    return dev


class TestTuneWeights:
    def test_zero_grid_reproduces_baseline(self):
        rng = np.random.default_rng(101)
        rnnt = make_rnnt(rng)
        lm = make_lm(rng, vocab=rnnt.vocab)
        models = FusionModels(e2e=rnnt, target_lm=lm)
        dev = _toy_dev_set(rng, rnnt)
        result = tune_weights(dev, models, "shallow_fusion", lm_grid=(0.0,), sub_grid=(0.0,))
        assert (result.best_lm_weight, result.best_sub_weight) == (0.0, 0.0)
        refs, hyps = [], []
        for ref, feats in dev:
            out = decode_utterance(feats, models, FusionConfig("baseline"), beam=8, nbest=1)
            hyps.append(detokenize(rnnt.vocab.tokens[i] for i in out.nbest[0].tokens))
            refs.append(detokenize(ref))
        want, _ = corpus_wer(zip(refs, hyps))
        assert result.best_wer == want

    def test_shallow_fusion_collapses_sub_axis(self):
        rng = np.random.default_rng(103)
        rnnt = make_rnnt(rng)
        lm = make_lm(rng, vocab=rnnt.vocab)
        models = FusionModels(e2e=rnnt, target_lm=lm)
        dev = _toy_dev_set(rng, rnnt, n=2)
        result = tune_weights(
            dev, models, "shallow_fusion", lm_grid=(0.0, 0.2), sub_grid=(0.0, 0.1, 0.2)
        )
        assert result.sub_grid == (0.0,)
        assert len(result.surface) == 2
        assert all(row[1] == 0.0 for row in result.surface)

    def test_tie_prefers_smaller_weights(self):
        rng = np.random.default_rng(107)
        rnnt = make_rnnt(rng)
        lm = make_lm(rng, vocab=rnnt.vocab)
        models = FusionModels(e2e=rnnt, target_lm=lm)
        dev = _toy_dev_set(rng, rnnt, n=1)
        # duplicate grid values collapse; identical WER rows keep (0, 0)
        result = tune_weights(dev, models, "ilme", lm_grid=(0.0, 0.0), sub_grid=(0.0,))
        assert result.lm_grid == (0.0,)
        assert (result.best_lm_weight, result.best_sub_weight) == (0.0, 0.0)

    def test_baseline_rejected(self):
        rng = np.random.default_rng(109)
        rnnt = make_rnnt(rng)
        models = FusionModels(e2e=rnnt)
        with pytest.raises(ContractError):
            tune_weights([], models, "baseline", (0.0,), (0.0,))

    def test_empty_grid_rejected(self):
        rng = np.random.default_rng(113)
        rnnt = make_rnnt(rng)
        lm = make_lm(rng, vocab=rnnt.vocab)
        models = FusionModels(e2e=rnnt, target_lm=lm)
        with pytest.raises(ContractError):
            tune_weights([], models, "shallow_fusion", (), (0.0,))

    def test_surface_is_reproducible(self):
        rng = np.random.default_rng(127)
        rnnt = make_rnnt(rng)
        lm = make_lm(rng, vocab=rnnt.vocab)
        models = FusionModels(e2e=rnnt, target_lm=lm)
        dev = _toy_dev_set(rng, rnnt, n=2)
        a = tune_weights(dev, models, "shallow_fusion", (0.0, 0.3), (0.0,))
        b = tune_weights(dev, models, "shallow_fusion", (0.0, 0.3), (0.0,))
        assert a.surface == b.surface
