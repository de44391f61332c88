"""Command-line front end: decode, tune, ppl, wer, inspect.

Exit codes: 0 success, 2 usage or configuration errors, 3 I/O and input
format/validation errors, 4 numeric failures.  Every command that writes
an artifact also writes `<output>.run.json` atomically beside it with the
resolved configuration, model checksums, seed, and wall-clock time, so a
run can be reproduced from the manifest alone.

`decode --jobs N` (default from ILMFUSE_JOBS) fans utterances out over
worker processes; output records keep manifest order and are
byte-identical for any job count.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ilmfuse import kernels
from ilmfuse.aed import AedModel
from ilmfuse.beam import FusionModels, PreparedUtterance, ScoringContext, decode_utterance
from ilmfuse.container import load_container, load_utterance_set
from ilmfuse.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    NumericError,
    ValidationError,
)
from ilmfuse.fusion import METHODS, FusionConfig, validate_config
from ilmfuse.lm import AedIlmScorer, LmModel, LmScorer, RnntIlmScorer, perplexity
from ilmfuse.metrics import corpus_wer, detokenize, tune_weights
from ilmfuse.rnnt import RnntModel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _default_jobs() -> int:
    env = os.environ.get("ILMFUSE_JOBS", "").strip()
    if not env:
        return 1
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"ILMFUSE_JOBS must be an integer, got {env!r}") from None


def _grid_spec(text: str):
    """Parse an inclusive `start:stop:step` grid into float values."""
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid must look like start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid bounds must be numbers, got {text!r}") from None
    if step <= 0:
        raise argparse.ArgumentTypeError(f"grid step must be positive, got {step}")
    if stop < start:
        raise argparse.ArgumentTypeError(f"grid stop {stop} is below start {start}")
    values = []
    k = 0
    while True:
        v = round(start + k * step, 10)
        if v > stop + 1e-9:
            break
        values.append(v)
        k += 1
    return tuple(values)


def _load_e2e(path: str):
    container = load_container(path)
    if container.kind == "rnnt":
        return RnntModel(container)
    if container.kind == "aed":
        return AedModel(container)
    raise ConfigError(f"{path}: kind {container.kind!r} is not an e2e model (rnnt or aed)")


def _load_lm(path: str, role: str) -> LmModel:
    container = load_container(path)
    if container.kind != "lm":
        raise ConfigError(f"{path}: {role} must be an lm container, got kind {container.kind!r}")
    return LmModel(container)


def _build_models(args) -> FusionModels:
    e2e = _load_e2e(args.e2e)
    target = _load_lm(args.lm, "target LM") if args.lm else None
    source = _load_lm(args.source_lm, "source LM") if args.source_lm else None
    return FusionModels(e2e=e2e, target_lm=target, source_lm=source)


def _checksums(models: FusionModels) -> dict:
    out = {"e2e": f"{models.e2e.container.checksum:#018x}"}
    if models.target_lm is not None:
        out["target_lm"] = f"{models.target_lm.container.checksum:#018x}"
    if models.source_lm is not None:
        out["source_lm"] = f"{models.source_lm.container.checksum:#018x}"
    return out


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_run_manifest(output_path: str, command: str, config: dict, checksums: dict,
                        seed: int, started: float, outputs: list) -> None:
    manifest = {
        "command": command,
        "config": config,
        "model_checksums": checksums,
        "seed": seed,
        "backend": kernels.backend_name(),
        "wall_clock_sec": round(time.perf_counter() - started, 6),
        "outputs": outputs,
    }
    _atomic_write(f"{output_path}.run.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _resolved_config(args, skip=("func",)) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip and not callable(v)}


# ---- decode ----

_WORKER: dict = {}


def _decode_worker_init(e2e, lm, source_lm, method, lm_weight, sub_weight,
                        beam, max_symbols, max_len, nbest):
    args = argparse.Namespace(e2e=e2e, lm=lm, source_lm=source_lm)
    models = _build_models(args)
    _WORKER["models"] = models
    _WORKER["config"] = FusionConfig(method, lm_weight, sub_weight)
    _WORKER["context"] = ScoringContext(models)
    _WORKER["params"] = (beam, max_symbols, max_len, nbest)


def _decode_records(models, config, context, params, uid, features) -> list:
    beam, max_symbols, max_len, nbest = params
    result = decode_utterance(
        features, models, config,
        beam=beam, max_symbols_per_frame=max_symbols, max_len=max_len,
        nbest=nbest, context=context,
        prepared=PreparedUtterance(models, features),
    )
    vocab = models.e2e.vocab
    records = []
    for rank, entry in enumerate(result.nbest, start=1):
        pieces = [vocab.tokens[i] for i in entry.tokens]
        records.append(
            {
                "id": uid,
                "rank": rank,
                "tokens": pieces,
                "text": " ".join(detokenize(pieces)),
                "fused": entry.fused,
                "e2e": entry.e2e,
                "ext_lm": entry.ext_lm,
                "sub_lm": entry.sub_lm,
            }
        )
    return records


def _decode_one(task):
    uid, features = task
    return _decode_records(
        _WORKER["models"], _WORKER["config"], _WORKER["context"], _WORKER["params"], uid, features
    )


def cmd_decode(args) -> int:
    started = time.perf_counter()
    config = FusionConfig(args.method, args.lm_weight, args.sub_weight)
    models = _build_models(args)
    validate_config(config, models.roles_present())
    utterances = load_utterance_set(args.input, vocab=models.e2e.vocab)
    tasks = [(u.uid, u.features) for u in utterances]
    params = (args.beam, args.max_symbols, args.max_len, args.nbest)
    if args.jobs < 1:
        raise ConfigError(f"--jobs must be >= 1, got {args.jobs}")
    if args.jobs == 1 or len(tasks) <= 1:
        context = ScoringContext(models)
        all_records = [
            _decode_records(models, config, context, params, uid, feats) for uid, feats in tasks
        ]
    else:
        init_args = (args.e2e, args.lm, args.source_lm, args.method, args.lm_weight,
                     args.sub_weight, args.beam, args.max_symbols, args.max_len, args.nbest)
        with ProcessPoolExecutor(
            max_workers=min(args.jobs, len(tasks)),
            initializer=_decode_worker_init,
            initargs=init_args,
        ) as pool:
            all_records = list(pool.map(_decode_one, tasks))
    lines = [json.dumps(r, sort_keys=True, ensure_ascii=False) for recs in all_records for r in recs]
    _atomic_write(args.output, "".join(line + "\n" for line in lines))
    _write_run_manifest(
        args.output, "decode", _resolved_config(args), _checksums(models),
        args.seed, started, [args.output],
    )
    return EXIT_OK


# ---- tune ----

def cmd_tune(args) -> int:
    started = time.perf_counter()
    if args.method == "baseline":
        raise ConfigError("tuning needs a weighted method, not 'baseline'")
    models = _build_models(args)
    validate_config(
        FusionConfig(args.method, args.grid_lm[0], args.grid_sub[0] if args.method in ("density_ratio", "ilme") else 0.0),
        models.roles_present(),
    )
    utterances = load_utterance_set(args.input, vocab=models.e2e.vocab)
    dev = [(list(u.ref), u.features) for u in utterances]
    result = tune_weights(
        dev, models, args.method,
        lm_grid=args.grid_lm, sub_grid=args.grid_sub,
        beam=args.beam, max_symbols_per_frame=args.max_symbols, max_len=args.max_len,
    )
    csv_lines = ["lm_weight,sub_weight,wer"]
    csv_lines += [f"{lw:.6g},{sw:.6g},{rate:.8f}" for lw, sw, rate in result.surface]
    _atomic_write(args.output, "\n".join(csv_lines) + "\n")
    best = {
        "method": result.method,
        "lm_weight": result.best_lm_weight,
        "sub_weight": result.best_sub_weight,
        "dev_wer": result.best_wer,
    }
    best_path = f"{args.output}.best.json"
    _atomic_write(best_path, json.dumps(best, sort_keys=True, indent=2) + "\n")
    _write_run_manifest(
        args.output, "tune", _resolved_config(args), _checksums(models),
        args.seed, started, [args.output, best_path],
    )
    return EXIT_OK


# ---- ppl ----

def cmd_ppl(args) -> int:
    container = load_container(args.model)
    expected_kind = {"lm": "lm", "rnnt-ilm": "rnnt", "aed-ilm": "aed"}[args.scorer]
    if container.kind != expected_kind:
        raise ConfigError(
            f"scorer {args.scorer!r} needs a {expected_kind} container, got kind {container.kind!r}"
        )
    if args.scorer == "lm":
        scorer = LmScorer(LmModel(container))
    elif args.scorer == "rnnt-ilm":
        scorer = RnntIlmScorer(RnntModel(container))
    else:
        scorer = AedIlmScorer(AedModel(container))
    vocab = container.vocab
    utterances = load_utterance_set(args.corpus, vocab=vocab, load_feats=False)
    corpus = [[vocab.id_of(tok) for tok in u.ref] for u in utterances]
    report = perplexity(corpus, scorer)
    report = {
        "model": args.model,
        "corpus": args.corpus,
        "scorer": args.scorer,
        "token_count": report["token_count"],
        "sequences": report["sequences"],
        "total_logprob": report["total_logprob"],
        "ppl": report["ppl"],
    }
    text = json.dumps(report, sort_keys=True, indent=2)
    print(text)
    if args.output:
        _atomic_write(args.output, text + "\n")
    return EXIT_OK


# ---- wer ----

def cmd_wer(args) -> int:
    refs = {
        u.uid: detokenize(u.ref)
        for u in load_utterance_set(args.ref, load_feats=False)
    }
    hyps = {}
    with open(args.hyp, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{args.hyp}:{lineno}: not valid JSON: {exc}") from exc
            if record.get("rank", 1) != 1:
                continue
            hyps[str(record["id"])] = record.get("text", "").split()
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing hypotheses for ids: {', '.join(missing)}")
        if extra:
            parts.append(f"hypotheses for unknown ids: {', '.join(extra)}")
        raise ConfigError("; ".join(parts))
    pairs = [(refs[uid], hyps[uid]) for uid in sorted(refs)]
    rate, table = corpus_wer(pairs)
    totals = {
        "wer": rate,
        "substitutions": sum(c.substitutions for c in table),
        "insertions": sum(c.insertions for c in table),
        "deletions": sum(c.deletions for c in table),
        "ref_words": sum(c.ref_words for c in table),
        "utterances": len(table),
    }
    print(json.dumps(totals, sort_keys=True, indent=2))
    return EXIT_OK


# ---- inspect ----

def cmd_inspect(args) -> int:
    container = load_container(args.model)
    print(f"kind: {container.kind}")
    print(f"checksum: {container.checksum:#018x}")
    for key in sorted(container.hyperparams):
        print(f"hyperparam {key}: {container.hyperparams[key]}")
    if container.vocab is not None:
        v = container.vocab
        print(f"vocab size: {v.size}")
        print(f"sos_id: {v.sos_id}  eos_id: {v.eos_id}  blank_id: {v.blank_id}")
    total = 0
    for name in sorted(container.tensors):
        shape = container.tensors[name].shape
        count = int(np.prod(shape))
        total += count
        print(f"tensor {name}  shape {tuple(shape)}  params {count}")
    print(f"total parameters: {total}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ilmfuse",
        description="Transducer/attention decoding with external LM fusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    dec = sub.add_parser("decode", help="beam-decode a manifest to n-best JSONL")
    dec.add_argument("--e2e", required=True, help="rnnt or aed container")
    dec.add_argument("--method", required=True, choices=METHODS)
    dec.add_argument("--lm", help="target-domain LM container")
    dec.add_argument("--source-lm", help="source-domain LM container (density_ratio)")
    dec.add_argument("--lm-weight", type=float, default=0.0)
    dec.add_argument("--sub-weight", type=float, default=0.0)
    dec.add_argument("--beam", type=int, default=25)
    dec.add_argument("--max-symbols", type=int, default=5,
                     help="transducer emissions per frame cap")
    dec.add_argument("--max-len", type=int, default=100,
                     help="attention-decoder transcript length cap")
    dec.add_argument("--nbest", type=int, default=5)
    dec.add_argument("--input", required=True, help="utterance manifest (JSONL)")
    dec.add_argument("--output", required=True, help="n-best JSONL path")
    dec.add_argument("--jobs", type=int, default=None)
    dec.add_argument("--seed", type=int, default=0)
    dec.set_defaults(func=cmd_decode)

    tune = sub.add_parser("tune", help="grid-search fusion weights on a dev manifest")
    tune.add_argument("--e2e", required=True)
    tune.add_argument("--method", required=True, choices=METHODS)
    tune.add_argument("--lm")
    tune.add_argument("--source-lm")
    tune.add_argument("--grid-lm", type=_grid_spec, required=True, metavar="START:STOP:STEP")
    tune.add_argument("--grid-sub", type=_grid_spec, required=True, metavar="START:STOP:STEP")
    tune.add_argument("--beam", type=int, default=8)
    tune.add_argument("--max-symbols", type=int, default=5)
    tune.add_argument("--max-len", type=int, default=100)
    tune.add_argument("--input", required=True)
    tune.add_argument("--output", required=True, help="tuning surface CSV path")
    tune.add_argument("--seed", type=int, default=0)
    tune.set_defaults(func=cmd_tune)

    ppl = sub.add_parser("ppl", help="corpus perplexity under an LM or internal LM")
    ppl.add_argument("--model", required=True)
    ppl.add_argument("--scorer", required=True, choices=("lm", "rnnt-ilm", "aed-ilm"))
    ppl.add_argument("--corpus", required=True, help="manifest whose refs are scored")
    ppl.add_argument("--output")
    ppl.set_defaults(func=cmd_ppl)

    werp = sub.add_parser("wer", help="score hypothesis JSONL against a reference manifest")
    werp.add_argument("--ref", required=True)
    werp.add_argument("--hyp", required=True)
    werp.set_defaults(func=cmd_wer)

    ins = sub.add_parser("inspect", help="print a container's header and tensor table")
    ins.add_argument("--model", required=True)
    ins.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) is None:
        try:
            args.jobs = _default_jobs()
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
