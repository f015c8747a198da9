"""End-to-end tests of the command-line interface."""

import csv
import json
import logging

import numpy as np
import pytest
from PIL import Image

from cli import __version__, main
from cli.config import load_run_config, parse_override
from conftest import noise_image, smooth_image, write_ppm
from engine import set_numeric_mode
from model import DualStreamDetector, ModelConfig
from services import save_checkpoint
from utils.errors import ConfigError

TINY_MODEL = """\
[model]
input_side = 32
heads = 2
embed_width = 16
mlp_ratio = 2
channel_plan = [8, 12, 16]
post_channel_plan = [16, 8]
seed = 7
"""


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    """Run from an empty directory with no output root or numeric mode from the environment."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DSNET_OUTPUT_ROOT", raising=False)
    monkeypatch.delenv("DSNET_NUMERIC_MODE", raising=False)
    yield
    set_numeric_mode("float32")
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()


@pytest.fixture
def tiny_toml(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_MODEL + "\n[train]\nepochs = 1\nbatch_size = 8\n")
    return path


@pytest.fixture
def tiny_checkpoint(tiny_config, tmp_path):
    return save_checkpoint(tmp_path / "tiny.ckpt", DualStreamDetector(tiny_config))


class TestConfig:
    def test_init_config_round_trips(self, tmp_path, capsys):
        path = tmp_path / "conf" / "dsnet.toml"
        assert main(["init-config", str(path)]) == 0
        assert capsys.readouterr().out.strip() == str(path)
        config = load_run_config(path)
        assert config.model.input_side == 256
        assert config.train.epochs == 120
        assert config.explicit("model")

    def test_init_config_keeps_existing_file(self, tmp_path):
        path = tmp_path / "dsnet.toml"
        path.write_text("# mine\n")
        assert main(["init-config", str(path)]) == 1
        assert path.read_text() == "# mine\n"
        assert main(["init-config", str(path), "--force"]) == 0

    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DSNET_NUMERIC_MODE", "float64")
        path = tmp_path / "run.toml"
        path.write_text("[train]\nepochs = 7\nbatch_size = 4\n")
        assert load_run_config(path).train.epochs == 7
        assert load_run_config(path).train.numeric_mode == "float64"
        flagged = load_run_config(path, flags={"train": {"epochs": 5, "lr0": None}})
        assert (flagged.train.epochs, flagged.train.lr0) == (5, 2e-4)
        overridden = load_run_config(path, ["train.epochs=3"], flags={"train": {"epochs": 5}})
        assert overridden.train.epochs == 3
        assert overridden.train.batch_size == 4
        assert not overridden.explicit("model")

    def test_parse_override(self):
        assert parse_override("train.split_ratios=[0, 0, 1]") == ("train", "split_ratios", [0, 0, 1])
        assert parse_override("paths.manifest=data/m.csv") == ("paths", "manifest", "data/m.csv")
        assert parse_override("model.enable_cma=false") == ("model", "enable_cma", False)
        for bad in ("epochs=3", "train.epochs", "optim.lr=1"):
            with pytest.raises(ConfigError):
                parse_override(bad)

    def test_invariant_violation_is_a_config_error(self):
        with pytest.raises(ConfigError, match="input_side"):
            load_run_config(overrides=["model.input_side=48"])

    def test_unknown_section_in_file(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[optimizer]\nlr = 1\n")
        with pytest.raises(ConfigError, match="optimizer"):
            load_run_config(path)

    def test_output_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DSNET_OUTPUT_ROOT", str(tmp_path / "root"))
        assert load_run_config(overrides=["paths.output_dir=run1"]).output_dir() == tmp_path / "root" / "run1"


class TestExitCodes:
    def test_no_command(self):
        assert main([]) == 1

    def test_bad_flag_value(self):
        assert main(["train", "--epochs", "many"]) == 1

    def test_malformed_override(self):
        assert main(["train", "--set", "epochs=3"]) == 1

    def test_missing_manifest(self, tiny_toml, tmp_path):
        code = main(["train", "--config", str(tiny_toml), "--manifest", str(tmp_path / "none.csv"),
                     "--output-dir", str(tmp_path / "out")])
        assert code == 2

    def test_missing_checkpoint(self, split_corpus, tmp_path):
        code = main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--manifest", str(split_corpus),
                     "--output-dir", str(tmp_path / "out")])
        assert code == 2

    def test_version(self, capsys):
        assert main(["version"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == f"dsnet {__version__}"
        assert lines[-1] == "numeric_mode float32"


def test_gradcheck_subset(capsys):
    assert main(["gradcheck", "--families", "linear,conv2d"]) == 0
    rows = capsys.readouterr().out.splitlines()[1:]
    assert [row.split()[0] for row in rows] == ["linear", "conv2d"]
    assert all(row.endswith("ok") for row in rows)


def test_gradcheck_unknown_family():
    assert main(["gradcheck", "--families", "pooling"]) == 2


class TestDumpResiduals:
    def test_constant_image_gives_mid_gray(self, tmp_path, capsys):
        image = write_ppm(tmp_path / "flat.ppm", np.full((16, 16, 3), 90, dtype=np.uint8))
        out = tmp_path / "maps"
        assert main(["dump-residuals", str(image), "--output-dir", str(out)]) == 0
        files = sorted(out.glob("*.png"))
        assert len(files) == 90
        assert files[0].name == "00_R.first_order.e.png"
        for path in files:
            values = np.asarray(Image.open(path))
            assert values.shape == (12, 12)
            assert np.all(values == 128)
        assert "90 residual maps" in capsys.readouterr().out

    def test_filter_selection_and_border(self, tmp_path, rng):
        image = write_ppm(tmp_path / "noise.ppm", rng.integers(0, 256, (16, 16, 3), dtype=np.uint8))
        out = tmp_path / "maps"
        args = ["dump-residuals", str(image), "--output-dir", str(out), "--filters", "first_order.e", "--keep-border"]
        assert main(args) == 0
        files = sorted(p.name for p in out.glob("*.png"))
        assert files == ["00_R.first_order.e.png", "30_G.first_order.e.png", "60_B.first_order.e.png"]
        values = np.asarray(Image.open(out / files[0]))
        assert values.shape == (16, 16)
        assert values.min() == 0 and values.max() == 255

    def test_writes_resolved_config_under_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("DSNET_OUTPUT_ROOT", str(tmp_path / "root"))
        image = write_ppm(tmp_path / "flat.ppm", np.zeros((8, 8, 3), dtype=np.uint8))
        assert main(["dump-residuals", str(image), "--output-dir", "maps", "--filters", "square_3x3"]) == 0
        out = tmp_path / "root" / "maps"
        assert (out / "resolved_config.toml").is_file()
        assert len(list(out.glob("*.png"))) == 3
        assert not (tmp_path / "maps").exists()

    def test_unknown_filter(self, tmp_path):
        image = write_ppm(tmp_path / "flat.ppm", np.zeros((8, 8, 3), dtype=np.uint8))
        assert main(["dump-residuals", str(image), "--filters", "sobel"]) == 2


def test_dump_features(tiny_toml, tmp_path, rng):
    image = write_ppm(tmp_path / "img.ppm", rng.integers(0, 256, (40, 40, 3), dtype=np.uint8))
    out = tmp_path / "features"
    assert main(["dump-features", str(image), "--config", str(tiny_toml), "--output-dir", str(out)]) == 0
    assert (out / "residual_features_mean.png").is_file()
    assert (out / "content_features_mean.png").is_file()
    assert list(out.glob("content_difference_*.png"))


def test_train_writes_artifacts(tiny_toml, split_corpus, tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["train", "--config", str(tiny_toml), "--manifest", str(split_corpus), "--output-dir", str(out),
                 "--seed", "3"])
    assert code == 0
    for name in ("split_manifest.csv", "train_log.jsonl", "training_report.json", "last.ckpt", "best.ckpt",
                 "resolved_config.toml"):
        assert (out / name).is_file(), name
    report = json.loads((out / "training_report.json").read_text())
    assert [log["epoch"] for log in report["history"]] == [0, 1]
    assert len((out / "train_log.jsonl").read_text().splitlines()) == 2
    resolved = load_run_config(out / "resolved_config.toml")
    assert resolved.train.seed == 3
    assert resolved.model.embed_width == 16
    assert "epochs=1" in capsys.readouterr().out


def test_eval_writes_reports(tiny_checkpoint, split_corpus, tmp_path, capsys):
    out = tmp_path / "eval"
    code = main(["eval", "--checkpoint", str(tiny_checkpoint), "--manifest", str(split_corpus),
                 "--set", "train.split_ratios=[0, 0, 1]", "--output-dir", str(out)])
    assert code == 0
    metrics = dict(line.split("=", 1) for line in (out / "metrics.txt").read_text().splitlines())
    assert sum(int(metrics[f"clean.{key}"]) for key in ("tp", "fn", "tn", "fp")) == 24
    assert (out / "report.txt").read_text().splitlines()[0].split()[:3] == ["TPR", "TNR", "ACC"]
    assert "clean" in capsys.readouterr().out


def test_eval_refuses_a_different_model(tiny_checkpoint, split_corpus, tmp_path):
    code = main(["eval", "--checkpoint", str(tiny_checkpoint), "--manifest", str(split_corpus),
                 "--set", "model.input_side=64", "--output-dir", str(tmp_path / "eval")])
    assert code == 2


def test_robustness_subset_with_audit(tiny_checkpoint, split_corpus, tmp_path):
    out = tmp_path / "robust"
    code = main(["robustness", "--checkpoint", str(tiny_checkpoint), "--manifest", str(split_corpus),
                 "--set", "train.split_ratios=[0, 0, 1]", "--transforms", "contrast,mean_blur",
                 "--audit", "1", "--output-dir", str(out)])
    assert code == 0
    metrics = (out / "metrics.txt").read_text()
    assert "contrast.acc=" in metrics
    assert "mean_blur.acc=" in metrics
    assert "average_acc=" in metrics
    assert (out / "audit" / "contrast" / "00000.ppm").is_file()


def test_repeated_eval_reports_are_identical(tiny_checkpoint, split_corpus, tmp_path):
    reports = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert main(["robustness", "--checkpoint", str(tiny_checkpoint), "--manifest", str(split_corpus),
                     "--transforms", "rotation,brightness", "--output-dir", str(out)]) == 0
        reports.append(((out / "report.txt").read_bytes(), (out / "metrics.txt").read_bytes()))
    assert reports[0] == reports[1]


@pytest.fixture
def label_blind_corpus(tmp_path):
    """32 images whose label says nothing about the image: each class holds 8 noise and 8 smooth images."""
    gen = np.random.default_rng(31)
    root = tmp_path / "blind"
    root.mkdir()
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["path", "label", "split"])
        for label in ("generated", "photo"):
            for i in range(8):
                writer.writerow([write_ppm(root / f"{label}_noise_{i}.ppm", noise_image(gen)).name, label, "test"])
                writer.writerow([write_ppm(root / f"{label}_smooth_{i}.ppm", smooth_image(gen)).name, label, "test"])
    return manifest


@pytest.mark.slow
def test_fresh_checkpoint_scores_near_chance(label_blind_corpus, tmp_path):
    config_path = tmp_path / "dsnet.toml"
    assert main(["init-config", str(config_path)]) == 0
    checkpoint = save_checkpoint(tmp_path / "fresh.ckpt", DualStreamDetector(ModelConfig(input_side=32)))
    out = tmp_path / "chance"
    code = main(["eval", "--config", str(config_path), "--set", "model.input_side=32",
                 "--checkpoint", str(checkpoint), "--manifest", str(label_blind_corpus), "--output-dir", str(out)])
    assert code == 0
    metrics = dict(line.split("=", 1) for line in (out / "metrics.txt").read_text().splitlines())
    assert 35.0 <= float(metrics["clean.acc"]) <= 65.0
