"""CLI surface: exit codes, artifacts, reproducibility."""

import filecmp
import json
import os

import numpy as np
import pytest

from ilmfuse.cli import _grid_spec, build_parser, main
from ilmfuse.container import save_container, save_features
from modelzoo import (
    make_aed,
    make_lm,
    make_rnnt,
    make_vocab,
    random_features,
    uniform_lm_container,
)


@pytest.fixture
def workdir(tmp_path):
    """Small decoding setup on disk: rnnt + lms + 3-utterance manifest."""
    rng = np.random.default_rng(404)
    e2e = make_rnnt(rng, n_tokens=5)
    target = make_lm(rng, vocab=e2e.vocab)
    source = make_lm(rng, vocab=e2e.vocab)
    paths = {
        "e2e": str(tmp_path / "rnnt.cont"),
        "lm": str(tmp_path / "target.cont"),
        "source_lm": str(tmp_path / "source.cont"),
        "manifest": str(tmp_path / "dev.jsonl"),
        "dir": tmp_path,
    }
    save_container(e2e.container, paths["e2e"])
    save_container(target.container, paths["lm"])
    save_container(source.container, paths["source_lm"])
    lines = []
    for i in range(3):
        feat_name = f"utt{i}.feat.cont"
        save_features(random_features(rng, 2 + i), str(tmp_path / feat_name))
        ref = [e2e.vocab.tokens[2 + (i + j) % 3] for j in range(i + 1)]
        lines.append(json.dumps({"id": f"utt{i}", "ref": ref, "feat": feat_name}))
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths


def run_decode(paths, out, extra=()):
    return main([
        "decode", "--e2e", paths["e2e"], "--method", "ilme",
        "--lm", paths["lm"], "--lm-weight", "0.3", "--sub-weight", "0.1",
        "--beam", "4", "--input", paths["manifest"], "--output", out,
        *extra,
    ])


class TestGridSpec:
    def test_inclusive_endpoints(self):
        assert _grid_spec("0:0.3:0.1") == (0.0, 0.1, 0.2, 0.3)

    def test_single_point(self):
        assert _grid_spec("0.5:0.5:1") == (0.5,)

    def test_malformed_forms_rejected(self):
        import argparse

        for bad in ("0:1", "a:b:c", "0:1:0", "1:0:0.1", "0:1:-0.5"):
            with pytest.raises(argparse.ArgumentTypeError):
                _grid_spec(bad)

    def test_parser_wires_grid_type(self):
        parser = build_parser()
        args = parser.parse_args([
            "tune", "--e2e", "x", "--method", "shallow_fusion",
            "--grid-lm", "0:0.2:0.1", "--grid-sub", "0:0:1",
            "--input", "in", "--output", "out",
        ])
        assert args.grid_lm == (0.0, 0.1, 0.2)
        assert args.grid_sub == (0.0,)


class TestDecodeCommand:
    def test_writes_nbest_and_run_manifest(self, workdir):
        out = str(workdir["dir"] / "hyp.jsonl")
        assert run_decode(workdir, out, extra=("--nbest", "2")) == 0
        records = [json.loads(l) for l in open(out, encoding="utf-8")]
        assert {r["id"] for r in records} == {"utt0", "utt1", "utt2"}
        by_id = {}
        for r in records:
            by_id.setdefault(r["id"], []).append(r)
        for uid, recs in by_id.items():
            assert [r["rank"] for r in recs] == list(range(1, len(recs) + 1))
            assert len(recs) <= 2
            fused = [r["fused"] for r in recs]
            assert fused == sorted(fused, reverse=True)
            for r in recs:
                assert set(r) == {"id", "rank", "tokens", "text", "fused", "e2e", "ext_lm", "sub_lm"}
        run = json.loads(open(f"{out}.run.json", encoding="utf-8").read())
        assert run["command"] == "decode"
        assert run["config"]["method"] == "ilme"
        assert set(run["model_checksums"]) == {"e2e", "target_lm"}
        assert run["backend"] in ("fast", "reference")
        assert run["outputs"] == [out]

    def test_output_order_follows_manifest(self, workdir):
        out = str(workdir["dir"] / "hyp.jsonl")
        run_decode(workdir, out, extra=("--nbest", "1"))
        ids = [json.loads(l)["id"] for l in open(out, encoding="utf-8")]
        assert ids == ["utt0", "utt1", "utt2"]

    def test_jobs_one_and_two_byte_identical(self, workdir):
        out1 = str(workdir["dir"] / "hyp.j1.jsonl")
        out2 = str(workdir["dir"] / "hyp.j2.jsonl")
        assert run_decode(workdir, out1, extra=("--jobs", "1")) == 0
        assert run_decode(workdir, out2, extra=("--jobs", "2")) == 0
        assert filecmp.cmp(out1, out2, shallow=False)
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_jobs_env_default(self, workdir, monkeypatch):
        out_env = str(workdir["dir"] / "hyp.env.jsonl")
        out_flag = str(workdir["dir"] / "hyp.flag.jsonl")
        monkeypatch.setenv("ILMFUSE_JOBS", "2")
        assert run_decode(workdir, out_env) == 0
        monkeypatch.delenv("ILMFUSE_JOBS")
        assert run_decode(workdir, out_flag, extra=("--jobs", "2")) == 0
        assert open(out_env, "rb").read() == open(out_flag, "rb").read()

    def test_bad_jobs_env_is_config_error(self, workdir, monkeypatch, capsys):
        monkeypatch.setenv("ILMFUSE_JOBS", "many")
        out = str(workdir["dir"] / "hyp.jsonl")
        assert run_decode(workdir, out) == 2
        assert "ILMFUSE_JOBS" in capsys.readouterr().err

    def test_missing_lm_is_config_error(self, workdir, capsys):
        out = str(workdir["dir"] / "hyp.jsonl")
        code = main([
            "decode", "--e2e", workdir["e2e"], "--method", "shallow_fusion",
            "--lm-weight", "0.3", "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 2
        assert "target LM required" in capsys.readouterr().err
        assert not os.path.exists(out)

    def test_baseline_still_requires_no_lm(self, workdir):
        out = str(workdir["dir"] / "hyp.jsonl")
        code = main([
            "decode", "--e2e", workdir["e2e"], "--method", "baseline",
            "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 0

    def test_missing_model_file_is_io_error(self, workdir, capsys):
        out = str(workdir["dir"] / "hyp.jsonl")
        code = main([
            "decode", "--e2e", str(workdir["dir"] / "absent.cont"), "--method", "baseline",
            "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 3

    def test_corrupt_model_is_io_error(self, workdir, capsys):
        bad = str(workdir["dir"] / "bad.cont")
        with open(bad, "wb") as fh:
            fh.write(b"NOPE" + b"\x00" * 64)
        code = main([
            "decode", "--e2e", bad, "--method", "baseline",
            "--input", workdir["manifest"], "--output", str(workdir["dir"] / "h.jsonl"),
        ])
        assert code == 3

    def test_lm_slot_rejects_e2e_container(self, workdir, capsys):
        out = str(workdir["dir"] / "hyp.jsonl")
        code = main([
            "decode", "--e2e", workdir["e2e"], "--method", "shallow_fusion",
            "--lm", workdir["e2e"], "--lm-weight", "0.3",
            "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 2
        assert "must be an lm container" in capsys.readouterr().err

    def test_aed_decode_roundtrip(self, tmp_path):
        rng = np.random.default_rng(505)
        e2e = make_aed(rng, n_tokens=5)
        e2e_path = str(tmp_path / "aed.cont")
        save_container(e2e.container, e2e_path)
        feat_name = "u0.feat.cont"
        save_features(random_features(rng, 3), str(tmp_path / feat_name))
        manifest = str(tmp_path / "m.jsonl")
        with open(manifest, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"id": "u0", "ref": ["▁w0"], "feat": feat_name}) + "\n")
        out = str(tmp_path / "hyp.jsonl")
        code = main([
            "decode", "--e2e", e2e_path, "--method", "baseline",
            "--beam", "4", "--max-len", "4", "--input", manifest, "--output", out,
        ])
        assert code == 0
        records = [json.loads(l) for l in open(out, encoding="utf-8")]
        assert records and records[0]["id"] == "u0"


class TestTuneCommand:
    def test_surface_and_best_artifacts(self, workdir):
        out = str(workdir["dir"] / "surface.csv")
        code = main([
            "tune", "--e2e", workdir["e2e"], "--method", "ilme", "--lm", workdir["lm"],
            "--grid-lm", "0:0.2:0.2", "--grid-sub", "0:0.1:0.1",
            "--beam", "2", "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 0
        lines = open(out, encoding="utf-8").read().splitlines()
        assert lines[0] == "lm_weight,sub_weight,wer"
        assert len(lines) == 1 + 2 * 2
        best = json.loads(open(f"{out}.best.json", encoding="utf-8").read())
        assert best["method"] == "ilme"
        assert best["lm_weight"] in (0.0, 0.2)
        assert best["sub_weight"] in (0.0, 0.1)
        surfaced = min(float(l.split(",")[2]) for l in lines[1:])
        assert abs(best["dev_wer"] - surfaced) < 1e-12
        assert os.path.exists(f"{out}.run.json")

    def test_baseline_method_rejected(self, workdir, capsys):
        code = main([
            "tune", "--e2e", workdir["e2e"], "--method", "baseline", "--lm", workdir["lm"],
            "--grid-lm", "0:0:1", "--grid-sub", "0:0:1",
            "--input", workdir["manifest"], "--output", str(workdir["dir"] / "s.csv"),
        ])
        assert code == 2

    def test_shallow_fusion_collapses_sub_grid(self, workdir):
        out = str(workdir["dir"] / "s.csv")
        code = main([
            "tune", "--e2e", workdir["e2e"], "--method", "shallow_fusion", "--lm", workdir["lm"],
            "--grid-lm", "0:0.2:0.2", "--grid-sub", "0.1:0.2:0.1",
            "--beam", "2", "--input", workdir["manifest"], "--output", out,
        ])
        assert code == 0
        lines = open(out, encoding="utf-8").read().splitlines()[1:]
        assert len(lines) == 2
        assert all(line.split(",")[1] == "0" for line in lines)


class TestPplCommand:
    def test_uniform_lm_reports_vocab_size(self, tmp_path, capsys):
        vocab = make_vocab(6)
        lm = uniform_lm_container(6)
        lm_path = str(tmp_path / "uniform.cont")
        save_container(lm, lm_path)
        manifest = str(tmp_path / "corpus.jsonl")
        with open(manifest, "w", encoding="utf-8") as fh:
            for i, ref in enumerate((["▁w0", "▁w1"], ["▁w2"], [])):
                fh.write(json.dumps({"id": f"s{i}", "ref": ref, "feat": "none.cont"}) + "\n")
        code = main(["ppl", "--model", lm_path, "--scorer", "lm", "--corpus", manifest])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["ppl"] == pytest.approx(6.0, rel=1e-12)
        assert report["token_count"] == 6
        assert report["sequences"] == 3

    def test_report_file_written(self, tmp_path, capsys):
        lm = uniform_lm_container(4)
        lm_path = str(tmp_path / "u.cont")
        save_container(lm, lm_path)
        manifest = str(tmp_path / "c.jsonl")
        with open(manifest, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"id": "s0", "ref": ["▁w0"], "feat": "x"}) + "\n")
        out = str(tmp_path / "ppl.json")
        code = main(["ppl", "--model", lm_path, "--scorer", "lm", "--corpus", manifest,
                     "--output", out])
        assert code == 0
        report = json.loads(open(out, encoding="utf-8").read())
        assert report["ppl"] == pytest.approx(4.0, rel=1e-12)

    def test_scorer_kind_mismatch(self, workdir, capsys):
        code = main(["ppl", "--model", workdir["e2e"], "--scorer", "lm",
                     "--corpus", workdir["manifest"]])
        assert code == 2
        assert "needs a lm container" in capsys.readouterr().err

    def test_rnnt_ilm_scorer_accepts_rnnt(self, workdir, capsys):
        code = main(["ppl", "--model", workdir["e2e"], "--scorer", "rnnt-ilm",
                     "--corpus", workdir["manifest"]])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["ppl"] > 0


class TestWerCommand:
    def write_hyp(self, path, rows):
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    def test_scores_rank_one_only(self, workdir, capsys):
        hyp = str(workdir["dir"] / "hyp.jsonl")
        refs = {
            u["id"]: u["ref"]
            for u in (json.loads(l) for l in open(workdir["manifest"], encoding="utf-8"))
        }
        rows = []
        for uid, ref in refs.items():
            from ilmfuse.metrics import detokenize

            rows.append({"id": uid, "rank": 1, "text": " ".join(detokenize(ref))})
            rows.append({"id": uid, "rank": 2, "text": "junk junk junk"})
        self.write_hyp(hyp, rows)
        code = main(["wer", "--ref", workdir["manifest"], "--hyp", hyp])
        assert code == 0
        totals = json.loads(capsys.readouterr().out)
        assert totals["wer"] == 0.0
        assert totals["utterances"] == 3

    def test_counts_pool_over_corpus(self, workdir, capsys):
        hyp = str(workdir["dir"] / "hyp.jsonl")
        uids = [json.loads(l)["id"] for l in open(workdir["manifest"], encoding="utf-8")]
        self.write_hyp(hyp, [{"id": u, "rank": 1, "text": ""} for u in uids])
        code = main(["wer", "--ref", workdir["manifest"], "--hyp", hyp])
        assert code == 0
        totals = json.loads(capsys.readouterr().out)
        assert totals["wer"] == 1.0
        assert totals["deletions"] == totals["ref_words"]

    def test_id_mismatch_rejected(self, workdir, capsys):
        hyp = str(workdir["dir"] / "hyp.jsonl")
        self.write_hyp(hyp, [{"id": "utt0", "rank": 1, "text": "a"},
                             {"id": "ghost", "rank": 1, "text": "b"}])
        code = main(["wer", "--ref", workdir["manifest"], "--hyp", hyp])
        assert code == 2
        err = capsys.readouterr().err
        assert "utt1" in err and "ghost" in err

    def test_bad_hyp_json_is_io_error(self, workdir, capsys):
        hyp = str(workdir["dir"] / "hyp.jsonl")
        with open(hyp, "w", encoding="utf-8") as fh:
            fh.write("{not json\n")
        assert main(["wer", "--ref", workdir["manifest"], "--hyp", hyp]) == 3


class TestInspectCommand:
    def test_prints_header_and_tensor_table(self, workdir, capsys):
        assert main(["inspect", "--model", workdir["e2e"]]) == 0
        out = capsys.readouterr().out
        assert "kind: rnnt" in out
        assert "checksum: 0x" in out
        assert "blank_id: 5" in out
        assert "vocab size: 5" in out
        assert "tensor joint.W_j" in out
        assert "total parameters:" in out

    def test_feature_container_has_no_vocab_block(self, tmp_path, capsys):
        rng = np.random.default_rng(21)
        path = str(tmp_path / "f.cont")
        save_features(random_features(rng, 4), path)
        assert main(["inspect", "--model", path]) == 0
        out = capsys.readouterr().out
        assert "kind: features" in out
        assert "vocab size" not in out
