"""CLI wiring: flags, exit codes, determinism, file formats."""

import json
import os

import numpy as np
import pytest

from geomatch.cli import main


def run(argv, capsys=None):
    code = main(argv)
    return code


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """gen-data once for all CLI tests; tiny clouds for speed."""
    root = tmp_path_factory.mktemp("cli")
    code = main(["gen-data", "--out", str(root / "data"), "--seed", "5",
                 "--objects", "sphere_small", "--s-o", "48", "--s-g", "48"])
    assert code == 0
    return root


class TestGenData:
    def test_outputs_exist(self, pipeline_dir):
        data = pipeline_dir / "data"
        assert (data / "manifest.json").exists()
        assert (data / "records.jsonl").exists()
        assert (data / "objects" / "sphere_small.csv").exists()
        assert (data / "grippers" / "pincer.json").exists()
        assert (data / "grippers" / "claw_cloud.csv").exists()

    def test_idempotent_rerun(self, pipeline_dir, tmp_path):
        main(["gen-data", "--out", str(tmp_path / "a"), "--seed", "5",
              "--objects", "sphere_small", "--s-o", "48", "--s-g", "48"])
        main(["gen-data", "--out", str(tmp_path / "b"), "--seed", "5",
              "--objects", "sphere_small", "--s-o", "48", "--s-g", "48"])
        for rel in ("manifest.json", "records.jsonl",
                    "objects/sphere_small.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == \
                (tmp_path / "b" / rel).read_bytes()


class TestMaps:
    def test_writes_map_files(self, pipeline_dir):
        out = pipeline_dir / "maps"
        code = main(["maps", "--manifest", str(pipeline_dir / "data"),
                     "--out", str(out)])
        assert code == 0
        files = sorted(os.listdir(out))
        assert len(files) == 8      # 1 object x 2 grippers x 4 grasps
        doc = json.loads((out / files[0]).read_text())
        assert doc["m"] == 20
        assert doc["threshold"] == 0.04
        assert len(doc["cg"]) == 6


class TestTrainInferIkEval:
    def test_full_chain(self, pipeline_dir):
        data = str(pipeline_dir / "data")
        cfg = pipeline_dir / "config.json"
        cfg.write_text(json.dumps({"epochs": 2, "m": 8}))
        weights = pipeline_dir / "weights"
        assert main(["train", "--manifest", data, "--config", str(cfg),
                     "--out", str(weights)]) == 0
        assert (weights / "manifest.json").exists()
        assert (weights / "weights.bin").exists()
        assert (weights / "loss.csv").exists()

        proposals = pipeline_dir / "proposals.jsonl"
        assert main(["infer", "--weights", str(weights), "--manifest", data,
                     "--split", "train", "--ranks", "0,5",
                     "--out", str(proposals), "--config", str(cfg)]) == 0
        lines = [json.loads(l) for l in proposals.read_text().splitlines()]
        assert len(lines) == 4      # 1 train object x 2 ee x 2 ranks
        assert all(len(l["contacts"]) == 6 for l in lines)

        ik_out = pipeline_dir / "ik.jsonl"
        assert main(["ik", "--proposals", str(proposals), "--manifest", data,
                     "--out", str(ik_out), "--config", str(cfg)]) == 0
        reports = [json.loads(l) for l in ik_out.read_text().splitlines()]
        assert len(reports) == 4
        for rep in reports:
            assert rep["status"] in ("Converged", "MaxIterations", "SmallStep")
            assert len(rep["per_keypoint_mm"]) == 6
            assert set(rep["pose"]) == {"t", "r6", "theta"}

        eval_dir = pipeline_dir / "eval"
        assert main(["eval", "--ik", str(ik_out), "--manifest", data,
                     "--out", str(eval_dir), "--config", str(cfg)]) == 0
        csv_text = (eval_dir / "evaluation.csv").read_text()
        assert csv_text.startswith("object,ee,rank,success,active_contacts,"
                                   "mean_contact_error_mm,resisted_px")
        summary = json.loads((eval_dir / "summary.json").read_text())
        assert "per_ee" in summary and "overall" in summary
        for entry in summary["per_ee"].values():
            assert "success_pct" in entry and "diversity_rad" in entry


class TestAugment:
    def test_noise_bound(self, pipeline_dir, tmp_path):
        from geomatch.geometry import load_cloud
        src = pipeline_dir / "data" / "objects" / "sphere_small.csv"
        out = tmp_path / "noisy.csv"
        assert main(["augment", "--cloud", str(src), "--noise", "0.001",
                     "--out", str(out), "--seed", "3"]) == 0
        a = load_cloud(src)
        b = load_cloud(out)
        assert np.abs(b.points - a.points).max() <= 0.001 + 1e-15

    def test_crop_table(self, pipeline_dir, tmp_path):
        from geomatch.geometry import load_cloud
        src = pipeline_dir / "data" / "objects" / "sphere_small.csv"
        out = tmp_path / "cropped.csv"
        assert main(["augment", "--cloud", str(src), "--crop-table",
                     "--out", str(out)]) == 0
        a = load_cloud(src)
        b = load_cloud(out)
        z = a.points[:, 2]
        z_thres = (z.max() - z.min()) / 6.0
        assert len(b) == int((z >= z_thres).sum())

    def test_requires_a_mode(self, pipeline_dir, tmp_path):
        src = pipeline_dir / "data" / "objects" / "sphere_small.csv"
        assert main(["augment", "--cloud", str(src),
                     "--out", str(tmp_path / "x.csv")]) == 2


class TestPlot:
    def test_svg_written(self, pipeline_dir, tmp_path):
        loss = tmp_path / "loss.csv"
        loss.write_text("epoch,loss_total,loss_f,loss_m\n"
                        "1,10.0,6.0,4.0\n2,5.0,3.0,2.0\n")
        out = tmp_path / "loss.svg"
        assert main(["plot", "--loss", str(loss), "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("<svg")
        assert "polyline" in text


class TestExitCodes:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train"])          # missing required flags
        assert exc.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_data_error(self, tmp_path):
        assert main(["maps", "--manifest", str(tmp_path / "missing"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_bad_config_key(self, pipeline_dir, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"learning_rate": 1}')
        assert main(["maps", "--manifest", str(pipeline_dir / "data"),
                     "--out", str(tmp_path / "o"), "--config", str(cfg)]) == 2

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "geomatch" in capsys.readouterr().out


class TestSeedEnvOverride:
    def test_env_seed_changes_output(self, tmp_path, monkeypatch):
        from geomatch.cli import load_config
        monkeypatch.setenv("GEOMATCH_SEED", "777")
        assert load_config(None).seed == 777
        monkeypatch.delenv("GEOMATCH_SEED")
        assert load_config(None).seed == 0

    def test_flag_overrides_env(self, monkeypatch):
        from geomatch.cli import load_config
        monkeypatch.setenv("GEOMATCH_SEED", "777")
        assert load_config(None, seed_override=5).seed == 5


class TestDeterminism:
    def test_train_rerun_identical_loss_log(self, pipeline_dir, tmp_path):
        data = str(pipeline_dir / "data")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 2, "m": 8, "seed": 11}))
        for out in ("w1", "w2"):
            assert main(["train", "--manifest", data, "--config", str(cfg),
                         "--out", str(tmp_path / out)]) == 0
        assert (tmp_path / "w1" / "loss.csv").read_bytes() == \
            (tmp_path / "w2" / "loss.csv").read_bytes()
        assert (tmp_path / "w1" / "weights.bin").read_bytes() == \
            (tmp_path / "w2" / "weights.bin").read_bytes()
