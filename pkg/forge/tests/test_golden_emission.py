"""Golden emission: case inventory, tolerance metadata, reproducibility."""

import filecmp
import json
import os

import numpy as np
import pytest
import torch

from fixtureforge.goldens import GOLDEN_TOLERANCES, emit_goldens
from fixtureforge.models import AedDims, AedNet, LmDims, LmNet, RnntDims, RnntNet

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def nets():
    torch.manual_seed(9)
    return RnntNet(RnntDims()), AedNet(AedDims()), LmNet(LmDims())


@pytest.fixture(scope="module")
def emitted(nets, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("fix"))
    names = emit_goldens(out, *nets, seed=9)
    return out, names


class TestInventory:
    def test_at_least_twelve_cases_all_named(self, emitted):
        _, names = emitted
        assert len(names) >= 12
        assert sorted(names) == sorted(GOLDEN_TOLERANCES)

    def test_files_match_names(self, emitted):
        out, names = emitted
        files = sorted(os.listdir(os.path.join(out, "goldens")))
        assert files == sorted(f"{n}.json" for n in names)

    def test_schema_and_tolerance_metadata(self, emitted):
        out, names = emitted
        for name in names:
            case = json.load(open(os.path.join(out, "goldens", f"{name}.json"), encoding="utf-8"))
            assert case["name"] == name
            assert case["tolerance"] == GOLDEN_TOLERANCES[name]
            assert case["case"]
            assert isinstance(case["inputs"], dict)
            assert isinstance(case["expect"], dict) and case["expect"]
            if "model" in case:
                assert case["model"].startswith("models/")

    def test_model_cases_cover_all_three_containers(self, emitted):
        out, names = emitted
        referenced = set()
        for name in names:
            case = json.load(open(os.path.join(out, "goldens", f"{name}.json"), encoding="utf-8"))
            referenced.add(case.get("model"))
        assert {"models/rnnt.cont", "models/aed.cont", "models/lm_target.cont", None} == referenced


class TestReproducibility:
    def test_reemission_is_bit_identical(self, nets, emitted, tmp_path):
        out, names = emitted
        again = str(tmp_path / "again")
        emit_goldens(again, *nets, seed=9)
        for name in names:
            assert filecmp.cmp(
                os.path.join(out, "goldens", f"{name}.json"),
                os.path.join(again, "goldens", f"{name}.json"),
                shallow=False,
            )

    def test_seed_changes_kernel_inputs(self, nets, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        emit_goldens(a, *nets, seed=1)
        emit_goldens(b, *nets, seed=2)
        case_a = json.load(open(os.path.join(a, "goldens", "affine_case1.json"), encoding="utf-8"))
        case_b = json.load(open(os.path.join(b, "goldens", "affine_case1.json"), encoding="utf-8"))
        assert case_a["inputs"] != case_b["inputs"]


class TestKernelCaseExactness:
    def test_affine_expectation_is_exact_in_float32(self, emitted):
        # Dyadic-rational inputs make the float32 product-and-sum exact, so
        # the stored expectation must equal a float64 recomputation bit for bit.
        out, _ = emitted
        case = json.load(open(os.path.join(out, "goldens", "affine_case1.json"), encoding="utf-8"))
        w = np.array(case["inputs"]["w"], dtype=np.float64)
        x = np.array(case["inputs"]["x"], dtype=np.float64)
        b = np.array(case["inputs"]["b"], dtype=np.float64)
        np.testing.assert_array_equal(w @ x + b, np.array(case["expect"]["out"]))

    def test_kernel_inputs_are_dyadic(self, emitted):
        out, _ = emitted
        case = json.load(open(os.path.join(out, "goldens", "lstm_step_case1.json"), encoding="utf-8"))
        for field in ("x", "h", "c"):
            values = np.array(case["inputs"][field], dtype=np.float64)
            np.testing.assert_array_equal(values * 8, np.round(values * 8))
