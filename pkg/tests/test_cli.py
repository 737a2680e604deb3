"""CLI behavior: exit codes, artifacts, determinism, config precedence."""

import json
from pathlib import Path

import numpy as np
import pytest

from gaitforge import pipeline, syngen
from gaitforge.cli import run
from gaitforge.core import Activity, make_split
from gaitforge.formats import load_dataset
from gaitforge.nn import TrainConfig, load_model


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    params = syngen.GenParams(seed=5, n_subjects=4)
    syngen.gen_dataset(params, root)
    return root


class TestGenerateInspect:
    def test_generate_writes_dataset(self, tmp_path):
        out = tmp_path / "d"
        assert run(["generate", "--subjects", "3", "--seed", "7",
                    "--out", str(out)]) == 0
        assert (out / "manifest.json").exists()
        assert (out / "offsets.json").exists()
        record = json.loads((out / "run.json").read_text())
        assert record["config"]["seed"] == 7

    def test_inspect_clean_dataset(self, dataset, capsys):
        assert run(["inspect", "--data", str(dataset)]) == 0
        assert "0 violations" in capsys.readouterr().out

    def test_generate_deterministic(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            run(["generate", "--subjects", "3", "--seed", "9", "--out", str(out)])
            outs.append((out / "manifest.json").read_text())
        assert outs[0] == outs[1]


class TestUsageErrors:
    def test_unknown_flag(self):
        assert run(["generate", "--bogus", "1"]) == 1

    def test_unknown_command(self):
        assert run(["explode"]) == 1

    def test_missing_required(self):
        assert run(["train-kam", "--data", "x"]) == 1


class TestSync:
    def test_offsets_recovered(self, dataset, tmp_path, capsys):
        out = tmp_path / "sync"
        assert run(["sync", "--data", str(dataset), "--out", str(out)]) == 0
        estimated = json.loads((out / "sync.json").read_text())
        truth = json.loads((Path(dataset) / "offsets.json").read_text())
        checked = 0
        for trial_id, est in estimated.items():
            if est is None or not trial_id.split("-")[1] in ("walk", "run"):
                continue
            assert abs(est - truth[trial_id]) <= 5000, trial_id
            checked += 1
        assert checked >= 10


class TestTrainKamCli:
    def test_end_to_end_and_determinism(self, dataset, tmp_path):
        args = ["train-kam", "--data", str(dataset), "--activity", "walk",
                "--seed", "1", "--epochs", "3", "--split-seed", "7"]
        outs = []
        for name in ("m1", "m2"):
            out = tmp_path / name
            assert run(args + ["--out", str(out)]) == 0
            assert (out / "kam_walk.ckpt").exists()
            assert (out / "strides.csv").exists()
            assert (out / "waveform.csv").exists()
            outs.append((out / "metrics.json").read_bytes())
        assert outs[0] == outs[1]  # bitwise-identical metrics

    def test_cli_matches_library(self, dataset, tmp_path):
        out = tmp_path / "m"
        assert run(["train-kam", "--data", str(dataset), "--activity", "walk",
                    "--knee-angle", "--seed", "2", "--epochs", "3",
                    "--split-seed", "7", "--out", str(out)]) == 0
        cli_metrics = json.loads((out / "metrics.json").read_text())

        manifest, trials = load_dataset(dataset)
        split = make_split([s.id for s in manifest.subjects], seed=7)

        def samples(member):
            result = []
            for t in pipeline.trials_for_member(trials, member):
                if t.activity is Activity.WALK:
                    result.extend(pipeline.extract_kam_samples(t, with_knee_angle=True))
            return result

        config = TrainConfig(learning_rate=0.08, batch_size=20, max_epochs=3,
                             early_stop_patience=None, dropout=0.2, seed=2)
        model = pipeline.train_kam(samples(split.train), samples(split.val),
                                   Activity.WALK, config)
        metrics = pipeline.evaluate_kam(model, samples(split.test),
                                        manifest.subject_map())
        assert cli_metrics == json.loads(pipeline.metrics_json(metrics))
        # checkpoint parity too
        saved = load_model(out / "kam_walk_knee.ckpt")
        for k, p in model.all_params().items():
            np.testing.assert_array_equal(saved.all_params()[k], p)

    def test_corrupted_vsin_exits_2(self, dataset, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(dataset, broken)
        victim = sorted((broken / "streams").glob("*.vsin"))[0]
        victim.write_bytes(victim.read_bytes()[:-64])  # truncate payload
        code = run(["train-kam", "--data", str(broken), "--activity", "walk",
                    "--seed", "1", "--epochs", "1", "--out", str(tmp_path / "x")])
        assert code == 2
        err = capsys.readouterr().err
        assert victim.name in err
        assert "truncated" in err


@pytest.fixture(scope="module")
def model_dir(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert run(["train-kam", "--data", str(dataset), "--activity", "walk",
                "--seed", "3", "--epochs", "3", "--out", str(out)]) == 0
    return out


class TestEvaluateInfer:
    def test_evaluate(self, dataset, model_dir, tmp_path, capsys):
        out = tmp_path / "eval"
        assert run(["evaluate", "--model", str(model_dir), "--data", str(dataset),
                    "--out", str(out)]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert "kam_walk" in metrics
        assert (out / "kam_walk_waveform.csv").exists()

    def test_evaluate_corrupt_checkpoint(self, dataset, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert run(["evaluate", "--model", str(bad), "--data", str(dataset)]) == 2

    def test_infer_single_trial(self, dataset, model_dir, capsys):
        manifest, _ = load_dataset(dataset)
        trial_id = next(t.id for t in manifest.trials
                        if t.activity is Activity.WALK)
        assert run(["infer", "--model", str(model_dir), "--data", str(dataset),
                    "--trial", trial_id]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["trial"] == trial_id
        assert result["kam"]["n_strides"] >= 1

    def test_infer_unknown_trial(self, dataset, model_dir):
        assert run(["infer", "--model", str(model_dir), "--data", str(dataset),
                    "--trial", "nope"]) == 2


class TestConfigFile:
    def test_config_supplies_flags_cli_overrides(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"subjects": 3, "seed": 11}))
        out = tmp_path / "d"
        # --seed on the command line beats the config file; subjects comes
        # from the file.
        assert run(["generate", "--config", str(config), "--seed", "4",
                    "--out", str(out)]) == 0
        record = json.loads((out / "run.json").read_text())
        assert record["config"]["subjects"] == 3
        assert record["config"]["seed"] == 4

    def test_bad_config_file(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text("[1, 2]")
        assert run(["generate", "--config", str(config), "--seed", "1",
                    "--out", str(tmp_path / "d")]) == 2
