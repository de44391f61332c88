"""Neural LM wrapper, scorer adapters, and perplexity."""

import math

import numpy as np
import pytest

from ilmfuse.errors import ContractError, ValidationError
from ilmfuse.lm import AedIlmScorer, LmModel, LmScorer, RnntIlmScorer, perplexity
from modelzoo import (
    make_aed,
    make_lm,
    make_rnnt,
    random_container,
    rnnt_hyperparams,
    make_vocab,
    uniform_lm_container,
)


class TestLmModel:
    def test_step_is_a_distribution(self):
        rng = np.random.default_rng(3)
        model = make_lm(rng)
        log_p, _ = model.step(model.start_state())
        assert log_p.shape == (model.vocab.size,)
        assert abs(np.exp(log_p).sum() - 1.0) < 1e-9

    def test_eos_term_is_the_difference(self):
        rng = np.random.default_rng(5)
        model = make_lm(rng)
        labels = [2, 4]
        with_eos = model.sequence_logprob(labels, include_eos=True)
        without = model.sequence_logprob(labels, include_eos=False)
        state = model.start_state()
        for y in labels:
            _, pending = model.step(state)
            state = model.with_token(pending, y)
        log_p, _ = model.step(state)
        assert abs((with_eos - without) - float(log_p[model.vocab.eos_id])) < 1e-12

    def test_rejects_wrong_kind(self):
        rng = np.random.default_rng(7)
        container = random_container("rnnt", rnnt_hyperparams(), make_vocab(5), rng)
        with pytest.raises(ValidationError, match="lm"):
            LmModel(container)

    def test_chain_depends_only_on_prefix(self):
        rng = np.random.default_rng(11)
        model = make_lm(rng)
        assert model.sequence_logprob([2, 3]) == model.sequence_logprob([2, 3])


class TestScorers:
    def test_lm_scorer_matches_model_chain(self):
        rng = np.random.default_rng(13)
        model = make_lm(rng)
        scorer = LmScorer(model)
        labels = [3, 2, 4]
        assert scorer.sequence_logprob(labels) == model.sequence_logprob(labels, include_eos=True)
        assert scorer.scored_tokens(labels) == 4

    def test_rnnt_ilm_scorer_has_no_eos_step(self):
        rng = np.random.default_rng(17)
        model = make_rnnt(rng)
        scorer = RnntIlmScorer(model)
        labels = [2, 3]
        assert scorer.sequence_logprob(labels) == model.ilm_sequence_logprob(labels)
        assert scorer.scored_tokens(labels) == 2

    def test_aed_ilm_scorer_scores_eos(self):
        rng = np.random.default_rng(19)
        model = make_aed(rng)
        scorer = AedIlmScorer(model)
        labels = [4, 2]
        assert scorer.sequence_logprob(labels) == model.ilm_sequence_logprob(labels)
        assert scorer.scored_tokens(labels) == 3


class TestPerplexity:
    def test_uniform_model_ppl_is_vocab_size(self):
        container = uniform_lm_container(6)
        scorer = LmScorer(LmModel(container))
        report = perplexity([[2, 3], [4], []], scorer)
        assert math.isclose(report["ppl"], 6.0, rel_tol=1e-12, abs_tol=0.0)
        assert report["token_count"] == 6  # three eos steps included
        assert report["sequences"] == 3

    def test_matches_definition(self):
        rng = np.random.default_rng(23)
        model = make_lm(rng)
        scorer = LmScorer(model)
        corpus = [[2, 4, 3], [3, 3]]
        total = sum(model.sequence_logprob(s, include_eos=True) for s in corpus)
        count = sum(len(s) + 1 for s in corpus)
        report = perplexity(corpus, scorer)
        assert abs(report["total_logprob"] - total) < 1e-12
        assert report["token_count"] == count
        assert abs(report["ppl"] - math.exp(-total / count)) < 1e-12

    def test_sharding_pools_exactly(self):
        rng = np.random.default_rng(29)
        scorer = LmScorer(make_lm(rng))
        corpus = [[2], [3, 4], [4, 4, 2]]
        full = perplexity(corpus, scorer)
        a = perplexity(corpus[:1], scorer)
        b = perplexity(corpus[1:], scorer)
        pooled_logprob = a["total_logprob"] + b["total_logprob"]
        pooled_count = a["token_count"] + b["token_count"]
        assert abs(full["total_logprob"] - pooled_logprob) < 1e-12
        assert full["token_count"] == pooled_count
        assert abs(full["ppl"] - math.exp(-pooled_logprob / pooled_count)) < 1e-12

    def test_empty_corpus_rejected(self):
        rng = np.random.default_rng(31)
        with pytest.raises(ContractError):
            perplexity([], LmScorer(make_lm(rng)))

    def test_zero_scored_tokens_rejected(self):
        # a transducer internal LM scores no end-of-sequence step, so a
        # corpus of empty sequences has nothing to average
        rng = np.random.default_rng(37)
        with pytest.raises(ContractError):
            perplexity([[], []], RnntIlmScorer(make_rnnt(rng)))

    def test_rnnt_ilm_corpus_ppl(self):
        rng = np.random.default_rng(41)
        model = make_rnnt(rng)
        scorer = RnntIlmScorer(model)
        corpus = [[2, 3], [4]]
        total = sum(model.ilm_sequence_logprob(s) for s in corpus)
        report = perplexity(corpus, scorer)
        assert report["token_count"] == 3
        assert abs(report["ppl"] - math.exp(-total / 3)) < 1e-12
