"""Transducer loss identities, gradient checks, and training-loop guards."""

import math

import pytest
import torch

from fixtureforge.gradcheck import finite_difference_check
from fixtureforge.models import LmDims, LmNet
from fixtureforge.rnnt_loss import transducer_logprob
from fixtureforge.training import DivergenceError, Recipe, train_lm

torch.set_num_threads(1)


class TestTransducerLogprob:
    def test_uniform_lattice_matches_path_count(self):
        # With every step distribution uniform over V+1 symbols, the total
        # is (number of monotone paths) * (V+1)^-(T+U); labels are barred
        # from the exhausted-frames column, so the last move is a blank and
        # the count is C(T+U-1, U).
        for frames, n_labels, n_plus_blank in [(4, 3, 6), (7, 2, 4), (3, 5, 9)]:
            log_probs = torch.full(
                (frames, n_labels + 1, n_plus_blank),
                -math.log(n_plus_blank),
                dtype=torch.float64,
            )
            labels = torch.arange(n_labels, dtype=torch.long) % (n_plus_blank - 1)
            got = float(transducer_logprob(log_probs, labels))
            want = math.log(math.comb(frames + n_labels - 1, n_labels)) - (
                frames + n_labels
            ) * math.log(n_plus_blank)
            assert math.isclose(got, want, rel_tol=1e-12)

    def test_empty_label_sequence_is_all_blanks(self):
        frames, n_plus_blank = 5, 7
        log_probs = torch.full(
            (frames, 1, n_plus_blank), -math.log(n_plus_blank), dtype=torch.float64
        )
        got = float(transducer_logprob(log_probs, torch.zeros(0, dtype=torch.long)))
        assert math.isclose(got, -frames * math.log(n_plus_blank), rel_tol=1e-12)

    def test_more_frames_only_adds_paths(self):
        # Appending a frame of the same uniform distribution can only add
        # complete paths, so the log-probability must go up by less than
        # one blank factor but the path count strictly grows.
        base = torch.full((3, 3, 5), -math.log(5.0), dtype=torch.float64)
        longer = torch.full((4, 3, 5), -math.log(5.0), dtype=torch.float64)
        labels = torch.tensor([1, 2], dtype=torch.long)
        p3 = float(transducer_logprob(base, labels))
        p4 = float(transducer_logprob(longer, labels))
        assert p4 - p3 < 0.0  # extra mandatory blank outweighs new paths here
        assert p4 > p3 - math.log(5.0)  # but by less than a full blank factor


class TestGradientCheck:
    def test_analytic_matches_finite_difference(self):
        report = finite_difference_check(frames=2, u_len=1, n_tokens=4, seed=1)
        assert report["checked"] > 0
        assert math.isfinite(report["loss"])
        assert report["max_rel_err"] < 1e-3


class TestTrainingLoop:
    def _sentences(self):
        return [[2 + (i % 5), 3 + (i % 7), 4] for i in range(60)]

    def test_loss_decreases_over_epochs(self):
        torch.manual_seed(0)
        net = LmNet(LmDims(vocab_size=16, embed_dim=8, hidden=12, layers=1))
        recipe = Recipe(model="lm", epochs=2, lr=5e-3, lr_decay=0.9, batch_size=8, seed=3)
        history = train_lm(net, self._sentences(), recipe)
        assert len(history) == 2
        assert history[1] < history[0]

    def test_rerun_reproduces_history_exactly(self):
        histories = []
        for _ in range(2):
            torch.manual_seed(0)
            net = LmNet(LmDims(vocab_size=16, embed_dim=8, hidden=12, layers=1))
            recipe = Recipe(model="lm", epochs=1, lr=5e-3, lr_decay=0.9, batch_size=8, seed=3)
            histories.append(train_lm(net, self._sentences(), recipe))
        assert histories[0] == histories[1]

    def test_divergence_aborts_with_recipe(self):
        torch.manual_seed(0)
        net = LmNet(LmDims(vocab_size=16, embed_dim=8, hidden=12, layers=1))
        with torch.no_grad():
            net.out.bias[0] = float("nan")
        recipe = Recipe(model="lm", epochs=1, lr=5e-3, lr_decay=0.9, batch_size=8, seed=3)
        with pytest.raises(DivergenceError) as err:
            train_lm(net, self._sentences(), recipe)
        assert err.value.recipe == recipe
        assert (err.value.epoch, err.value.step) == (0, 0)
        assert "lm" in str(err.value)
