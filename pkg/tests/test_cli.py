"""Command-line surface, run in-process through main(argv).

The full chain synth -> fuse -> train -> infer -> eval is exercised on one
small scene; heavier reproducibility and quality gates live in the
acceptance suite.
"""

import json
import os

import numpy as np
import pytest

from pl3d.bundle import read_bundle, read_fused, read_result, write_result
from pl3d.cli import build_config, main
from pl3d.errors import MissingFile
from pl3d.types import PipelineConfig, QueryResult


def _tree(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            full = os.path.join(dirpath, name)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, root)] = fh.read()
    return out


class TestBuildConfig:
    def test_defaults(self):
        assert build_config(None, None) == PipelineConfig()

    def test_config_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"alpha_min": 0.4, "k": 3, "hidden_widths": [32, 16]}))
        cfg = build_config(str(p), None)
        assert cfg.alpha_min == 0.4
        assert cfg.k == 3
        assert cfg.hidden_widths == (32, 16)

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps({"alpha_min": 0.4}))
        cfg = build_config(str(p), ["alpha_min=0.7", "seed=5"])
        assert cfg.alpha_min == 0.7
        assert cfg.seed == 5

    def test_lambda_alias(self):
        assert build_config(None, ["lambda=2.5"]).lam == 2.5

    def test_hidden_widths_comma_string(self):
        assert build_config(None, ["hidden_widths=8,4"]).hidden_widths == (8, 4)

    def test_unknown_field(self):
        with pytest.raises(ValueError, match="unknown config field"):
            build_config(None, ["bogus=1"])

    def test_malformed_override(self):
        with pytest.raises(ValueError, match="key=value"):
            build_config(None, ["alpha_min"])

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(MissingFile):
            build_config(str(tmp_path / "no.json"), None)


class TestSynthCommand:
    def test_writes_spec_and_scenes(self, tmp_path, capsys):
        out = tmp_path / "scenes"
        assert main(["synth", "--out", str(out), "--scenes", "2", "--seed", "7"]) == 0
        spec = json.loads((out / "spec.json").read_text())
        assert spec["seed"] == 7
        b0 = read_bundle(str(out / "scene_0000"))
        b1 = read_bundle(str(out / "scene_0001"))
        assert b0.scene_id == "synth-00007"
        assert b1.scene_id == "synth-00008"  # seed increments per scene
        printed = capsys.readouterr().out.strip().splitlines()
        assert len(printed) == 2 and printed[0].endswith("manifest.json")

    def test_flag_overrides_spec_file(self, tmp_path):
        spec_path = tmp_path / "base.json"
        spec_path.write_text(json.dumps({"seed": 3, "view_count": 2, "num_objects": 2}))
        out = tmp_path / "scenes"
        code = main(
            ["synth", "--out", str(out), "--spec", str(spec_path), "--views", "3"]
        )
        assert code == 0
        written = json.loads((out / "spec.json").read_text())
        assert written["view_count"] == 3
        assert written["num_objects"] == 2
        assert len(read_bundle(str(out / "scene_0000")).views) == 3

    def test_rerun_byte_identical(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a"), "--seed", "1"])
        main(["synth", "--out", str(tmp_path / "b"), "--seed", "1"])
        assert _tree(str(tmp_path / "a")) == _tree(str(tmp_path / "b"))

    def test_missing_spec_file(self, tmp_path, capsys):
        code = main(["synth", "--out", str(tmp_path / "x"), "--spec", "/nope.json"])
        assert code == 2
        assert "error:" in capsys.readouterr().err


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_scene")
    assert main(["synth", "--out", str(root)]) == 0
    return str(root / "scene_0000")


class TestPipelineCommands:
    def test_fuse_train_infer_eval_chain(self, scene_dir, tmp_path, capsys):
        fused_dir = str(tmp_path / "fused")
        assert main(["fuse", "--bundle", scene_dir, "--out", fused_dir]) == 0
        out = capsys.readouterr().out
        assert "fused_iou:" in out
        assert float(out.split("fused_iou:")[1]) >= 0.9  # clean views recover gt
        fused, unified = read_fused(fused_dir)
        assert len(unified.retained_views) == 4

        ckpt_dir = str(tmp_path / "ckpt")
        code = main(
            ["train", "--bundle", scene_dir, "--out", ckpt_dir, "--epochs", "5"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "final_loss_total:" in out
        assert np.isfinite(float(out.split("final_loss_total:")[1]))

        result_dir = str(tmp_path / "result")
        code = main(
            ["infer", "--bundle", scene_dir, "--checkpoint", ckpt_dir, "--out", result_dir]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "iou_vs_gt:" in out
        scene_id, result = read_result(result_dir)
        assert scene_id == "synth-00000"
        assert 0.0 <= result.iou_vs_gt <= 1.0

        report_dir = str(tmp_path / "report")
        assert main(["eval", "--results", result_dir, "--out", report_dir]) == 0
        out = capsys.readouterr().out
        assert "miou_all:" in out
        assert os.path.isfile(os.path.join(report_dir, "report.csv"))

    def test_fuse_uniform_differs_from_attention(self, scene_dir, tmp_path):
        att_dir, uni_dir = str(tmp_path / "att"), str(tmp_path / "uni")
        assert main(["fuse", "--bundle", scene_dir, "--out", att_dir]) == 0
        assert main(["fuse", "--bundle", scene_dir, "--out", uni_dir, "--uniform"]) == 0
        _, att = read_fused(att_dir)
        _, uni = read_fused(uni_dir)
        np.testing.assert_allclose(uni.weights, 0.25, atol=1e-12)
        # clean identical embeddings give near-equal attention too, but the
        # confidence draws keep them from being exactly uniform
        assert not np.allclose(att.weights, 0.25, atol=1e-12)

    def test_train_hybrid_flag(self, scene_dir, tmp_path):
        code = main(
            [
                "train", "--bundle", scene_dir, "--out", str(tmp_path / "c"),
                "--epochs", "2", "--hybrid",
            ]
        )
        assert code == 0

    def test_config_override_threads_through_fuse(self, scene_dir, tmp_path, capsys):
        # alpha_min above every confidence filters all views out: domain error.
        code = main(
            [
                "fuse", "--bundle", scene_dir, "--out", str(tmp_path / "f"),
                "--set", "alpha_min=0.999999",
            ]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_eval_all_perfect(self, tmp_path, capsys):
        dirs = []
        for i in range(2):
            rdir = str(tmp_path / f"r{i}")
            result = QueryResult(
                point_probs=np.ones(4, dtype=np.float32),
                binary_mask=np.ones(4, dtype=bool),
                threshold=0.5,
                iou_vs_gt=1.0,
            )
            write_result(result, f"scene-{i}", rdir)
            dirs.append(rdir)
        assert main(["eval", "--results", *dirs, "--out", str(tmp_path / "m")]) == 0
        out = capsys.readouterr().out
        for key in ("acc_at_0.25", "acc_at_0.5", "miou_all", "miou_grounded_0.25"):
            assert f"{key}: 1.0" in out

    def test_eval_rejects_result_without_gt(self, tmp_path, capsys):
        rdir = str(tmp_path / "r")
        result = QueryResult(
            point_probs=np.ones(4, dtype=np.float32),
            binary_mask=np.ones(4, dtype=bool),
            threshold=0.5,
            iou_vs_gt=None,
        )
        write_result(result, "scene-x", rdir)
        assert main(["eval", "--results", rdir, "--out", str(tmp_path / "m")]) == 1
        assert "no ground-truth IoU" in capsys.readouterr().err


class TestExitCodes:
    def test_missing_bundle_exits_2(self, tmp_path, capsys):
        code = main(["fuse", "--bundle", str(tmp_path / "no"), "--out", str(tmp_path / "f")])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_bad_config_value_exits_1(self, scene_dir, tmp_path, capsys):
        code = main(
            [
                "fuse", "--bundle", scene_dir, "--out", str(tmp_path / "f"),
                "--set", "lam=-1",
            ]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_config_field_exits_1(self, scene_dir, tmp_path, capsys):
        code = main(
            [
                "fuse", "--bundle", scene_dir, "--out", str(tmp_path / "f"),
                "--set", "bogus=1",
            ]
        )
        assert code == 1
        assert "unknown config field" in capsys.readouterr().err


class TestAblateCommand:
    def test_small_run_writes_reports(self, tmp_path, capsys):
        out = tmp_path / "ab"
        code = main(
            [
                "ablate", "--out", str(out), "--seeds", "2", "--views", "2,4",
                "--hallucination", "0.3",
            ]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "fuse-attention" in text and "fuse-uniform" in text
        import csv

        with open(out / "ablate.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        assert {(r["variant"], int(r["views"])) for r in rows} == {
            ("fuse-attention", 2),
            ("fuse-attention", 4),
            ("fuse-uniform", 2),
            ("fuse-uniform", 4),
        }
        for r in rows:
            per_seed = [float(v) for v in r["per_seed"].split()]
            assert len(per_seed) == 2
            assert float(r["miou"]) == np.mean(per_seed)
