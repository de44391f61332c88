"""Single entry point: forge corpora, train, export, and emit fixtures.

``forge all --seed N --out DIR`` produces, under DIR: data/ (manifests,
feature containers, LM text), models/ (four weight containers),
goldens/ (forward-pass interchange cases), and forge_report.json with
divergence stats, sanity checks, and the gradient-check result.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 numeric failure
(training divergence or a failed sanity gate).
"""

import argparse
import json
import os
import sys
import time
from dataclasses import asdict

import numpy as np
import torch

from fixtureforge import containers, corpora, evals, goldens, models, training
from fixtureforge.gradcheck import finite_difference_check

__all__ = ["run_all", "main"]


def _log(message: str) -> None:
    print(f"forge: {message}", file=sys.stderr, flush=True)


def _seeded(tag: str):
    torch.manual_seed(corpora.stable_seed(tag) % (2**63))


def _to_items(bundle, split: str) -> list:
    items = []
    for _, words, feats in bundle.splits[split]:
        labels = torch.tensor(bundle.ids(words), dtype=torch.long)
        items.append((torch.from_numpy(np.ascontiguousarray(feats)), labels))
    return items


def _ids_to_words(bundle, ids: list) -> list:
    words = []
    for i in ids:
        token = bundle.tokens[i]
        words.append(token[len(corpora.MARK):] if token.startswith(corpora.MARK) else token)
    return words


def _greedy_wer(net, bundle, split: str) -> float:
    pairs = []
    for _, words, feats in bundle.splits[split]:
        hyp_ids = evals.greedy_rnnt_decode(net, torch.from_numpy(np.ascontiguousarray(feats)))
        pairs.append((list(words), _ids_to_words(bundle, hyp_ids)))
    return evals.corpus_wer(pairs)


RECIPES = {
    "rnnt": dict(epochs=14, lr=2e-3, lr_decay=0.8, batch_size=16),
    "aed": dict(epochs=12, lr=2e-3, lr_decay=0.8, batch_size=16, label_smoothing=0.1),
    # Mild weight decay keeps the LM's logit spread small enough that a
    # single-precision consumer can reproduce its step log-probs to 1e-6.
    "lm_target": dict(epochs=3, lr=3e-3, lr_decay=0.5, batch_size=64, weight_decay=1e-2),
    "lm_source": dict(epochs=8, lr=3e-3, lr_decay=0.7, batch_size=64),
}


def run_all(seed: int, out_dir: str) -> dict:
    torch.set_num_threads(1)
    started = time.time()
    report = {"seed": seed, "out": os.path.abspath(out_dir)}

    bundle = corpora.build_corpora(seed)
    written = corpora.write_corpora(bundle, out_dir)
    report["corpora"] = {
        "unigram_kl_source_target": bundle.kl_source_target,
        "splits": {k: len(v) for k, v in bundle.splits.items()},
        "lm_target_sentences": len(bundle.lm_target),
        "lm_source_sentences": len(bundle.lm_source),
        "files": {k: os.path.relpath(v, out_dir) for k, v in written.items()},
    }
    _log(
        f"corpora ready: KL(source||target) = {bundle.kl_source_target:.3f}, "
        f"{sum(len(v) for v in bundle.splits.values())} utterances"
    )

    vocab_size = len(bundle.tokens)
    recipes = {
        name: training.Recipe(model=name, seed=seed, **kwargs)
        for name, kwargs in RECIPES.items()
    }
    report["recipes"] = {name: asdict(recipe) for name, recipe in recipes.items()}

    source_items = _to_items(bundle, "train_source")

    _seeded(f"{seed}:init:rnnt")
    rnnt = models.RnntNet(models.RnntDims(vocab_size=vocab_size, feat_dim=corpora.FEAT_DIM))
    _seeded(f"{seed}:init:rnnt_untrained")
    rnnt_untrained = models.RnntNet(
        models.RnntDims(vocab_size=vocab_size, feat_dim=corpora.FEAT_DIM)
    )
    _log("training rnnt on source domain")
    rnnt_history = training.train_rnnt(rnnt, source_items, recipes["rnnt"])

    _seeded(f"{seed}:init:aed")
    aed = models.AedNet(models.AedDims(vocab_size=vocab_size, feat_dim=corpora.FEAT_DIM))
    _log("training aed on source domain")
    aed_history = training.train_aed(aed, source_items, recipes["aed"])

    _seeded(f"{seed}:init:lm_target")
    lm_target = models.LmNet(models.LmDims(vocab_size=vocab_size))
    _log("training target-domain lm")
    lm_target_history = training.train_lm(
        lm_target, [bundle.ids(s) for s in bundle.lm_target], recipes["lm_target"]
    )

    _seeded(f"{seed}:init:lm_source")
    lm_source = models.LmNet(models.LmDims(vocab_size=vocab_size))
    _log("training source-domain lm on training transcripts")
    lm_source_history = training.train_lm(
        lm_source, [bundle.ids(s) for s in bundle.lm_source], recipes["lm_source"]
    )
    report["loss_history"] = {
        "rnnt": rnnt_history,
        "aed": aed_history,
        "lm_target": lm_target_history,
        "lm_source": lm_source_history,
    }

    _log("sanity: greedy transducer WER on source dev")
    wer_untrained = _greedy_wer(rnnt_untrained, bundle, "dev_source")
    wer_trained = _greedy_wer(rnnt, bundle, "dev_source")
    improvement = 100.0 * (wer_untrained - wer_trained) / max(wer_untrained, 1e-9)
    report["sanity_rnnt"] = {
        "dev_source_wer_untrained": wer_untrained,
        "dev_source_wer_trained": wer_trained,
        "relative_improvement_pct": improvement,
    }
    _log(
        f"sanity: untrained {wer_untrained:.3f} vs trained {wer_trained:.3f} "
        f"({improvement:.1f}% better)"
    )
    if improvement <= 50.0:
        raise RuntimeError(
            f"trained transducer is not convincingly better than untrained: "
            f"{wer_untrained:.3f} -> {wer_trained:.3f}"
        )

    source_dev_text = [bundle.ids(words) for _, words, _ in bundle.splits["dev_source"]]
    target_dev_text = [bundle.ids(words) for _, words, _ in bundle.splits["dev_target"]]
    ppl = {
        "lm_source_on_source_dev": evals.lm_corpus_ppl(lm_source, source_dev_text),
        "lm_target_on_source_dev": evals.lm_corpus_ppl(lm_target, source_dev_text),
        "lm_source_on_target_dev": evals.lm_corpus_ppl(lm_source, target_dev_text),
        "lm_target_on_target_dev": evals.lm_corpus_ppl(lm_target, target_dev_text),
    }
    report["lm_ppl"] = ppl
    _log(
        f"lm ppl on source dev: source {ppl['lm_source_on_source_dev']:.1f} "
        f"vs target {ppl['lm_target_on_source_dev']:.1f}; on target dev: "
        f"target {ppl['lm_target_on_target_dev']:.1f} vs source {ppl['lm_source_on_target_dev']:.1f}"
    )
    if not (
        ppl["lm_source_on_source_dev"] < ppl["lm_target_on_source_dev"]
        and ppl["lm_target_on_target_dev"] < ppl["lm_source_on_target_dev"]
    ):
        raise RuntimeError(f"LM domain crossover failed: {ppl}")

    models_dir = os.path.join(out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)
    vocab = containers.vocab_header(bundle.tokens)
    checksums = {}
    for name, net, export in (
        ("rnnt", rnnt, models.export_rnnt),
        ("aed", aed, models.export_aed),
        ("lm_target", lm_target, models.export_lm),
        ("lm_source", lm_source, models.export_lm),
    ):
        kind, hyperparams, tensors = export(net)
        path = os.path.join(models_dir, f"{name}.cont")
        checksums[name] = containers.write_container(path, kind, hyperparams, tensors, vocab)
        _log(f"exported {path} (checksum {checksums[name]:#018x})")
    report["model_checksums"] = {k: f"{v:#018x}" for k, v in checksums.items()}

    golden_names = goldens.emit_goldens(out_dir, rnnt, aed, lm_target, seed)
    report["goldens"] = golden_names
    _log(f"emitted {len(golden_names)} goldens")

    _log("gradient check on the transducer loss")
    grad_report = finite_difference_check()
    report["gradcheck"] = grad_report
    if grad_report["max_rel_err"] >= 1e-3:
        raise RuntimeError(f"transducer loss gradient check failed: {grad_report}")

    report["elapsed_sec"] = time.time() - started
    report_path = os.path.join(out_dir, "forge_report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _log(f"done in {report['elapsed_sec']:.0f}s; report at {report_path}")
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forge",
        description="train toy models on synthetic corpora and export fixtures",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    all_p = sub.add_parser("all", help="forge corpora, models, and goldens in one run")
    all_p.add_argument("--seed", type=int, default=7)
    all_p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run_all(args.seed, args.out)
    except training.DivergenceError as exc:
        _log(f"aborted: {exc}")
        _log("recipe dump: " + json.dumps(asdict(exc.recipe), sort_keys=True))
        return 4
    except OSError as exc:
        _log(f"i/o failure: {exc}")
        return 3
    except RuntimeError as exc:
        _log(f"numeric failure: {exc}")
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
