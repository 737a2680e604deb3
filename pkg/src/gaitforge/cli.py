"""Command-line interface: generate, sync, train, evaluate, infer, inspect.

Exit codes: 0 success, 1 usage error, 2 data error. Every command that
writes artifacts also writes ``run.json`` — the fully resolved configuration
plus seed and package version — so any run can be reproduced exactly.

A JSON config file (``--config``) may supply any long flag by its
destination name (e.g. ``{"subjects": 20, "seed": 7}``); explicit
command-line flags take precedence over the file, which takes precedence
over built-in defaults.

``GAITFORGE_THREADS`` caps the thread pool used for parallel trial loading.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, dsp, pipeline, syngen
from .core import Activity, Trial, make_split, validate_trial
from .formats import FormatError, Manifest, load_trial, read_manifest
from .nn import KamRegressor, SequenceClassifier, TrainConfig, load_model, save_model

ACTIVITY_CODES = {
    "walk": Activity.WALK,
    "run": Activity.RUN,
    "sts": Activity.SIT_TO_STAND,
    "stst": Activity.STAND_TO_SIT,
}

_TRAIN_DEFAULTS = {
    # (learning rate, batch size, max epochs, early-stop patience)
    "pose": (0.003, 64, 80, 5),
    "insole": (0.003, 64, 100, 5),
    "kam": (0.08, 20, 300, None),
}

KAM_BATCH_SIZES = {
    Activity.WALK: 20,
    Activity.RUN: 10,
    Activity.SIT_TO_STAND: 10,
    Activity.STAND_TO_SIT: 10,
}


class DataError(Exception):
    """Problem with input data (exit code 2)."""


def _max_threads() -> int:
    raw = os.environ.get("GAITFORGE_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return max(1, n) if n else min(8, os.cpu_count() or 1)


def load_dataset(root: Path) -> tuple[Manifest, list[Trial]]:
    """Load manifest + all trial streams, in manifest order (parallel reads)."""
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {root}")
    manifest = read_manifest(manifest_path.read_text())
    threads = _max_threads()
    if threads > 1 and len(manifest.trials) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trials = list(pool.map(lambda rec: load_trial(root, rec), manifest.trials))
    else:
        trials = [load_trial(root, rec) for rec in manifest.trials]
    return manifest, trials


def _write_run_record(out: Path, command: str, config: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "config": config, "version": __version__}
    (out / "run.json").write_text(json.dumps(record, sort_keys=True, indent=2) + "\n")


def _resolved(args: argparse.Namespace, keys: list[str]) -> dict:
    config = {}
    for key in keys:
        value = getattr(args, key)
        if isinstance(value, Path):
            value = str(value)
        if isinstance(value, Activity):
            value = value.value
        config[key] = value
    return config


def _train_config(args, kind: str, activity: Activity | None = None) -> TrainConfig:
    lr, batch, epochs, patience = _TRAIN_DEFAULTS[kind]
    if kind == "kam" and activity is not None:
        batch = KAM_BATCH_SIZES[activity]
    return TrainConfig(
        learning_rate=args.lr if args.lr is not None else lr,
        batch_size=args.batch_size if args.batch_size is not None else batch,
        max_epochs=args.epochs if args.epochs is not None else epochs,
        early_stop_patience=args.patience if args.patience is not None else patience,
        dropout=args.dropout if args.dropout is not None else
        (0.2 if kind == "kam" else 0.0),
        seed=args.seed,
    )


def _split(manifest: Manifest, split_seed: int):
    return make_split([s.id for s in manifest.subjects], seed=split_seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    params = syngen.GenParams(seed=args.seed, n_subjects=args.subjects)
    manifest = syngen.gen_dataset(params, args.out)
    _write_run_record(args.out, "generate",
                      _resolved(args, ["subjects", "seed", "out"]))
    print(f"generated {len(manifest.trials)} trials for "
          f"{len(manifest.subjects)} subjects under {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    manifest, trials = load_dataset(args.data)
    n_violations = 0
    for trial in trials:
        for violation in validate_trial(trial, manifest):
            print(f"{trial.id}: {violation}")
            n_violations += 1
    print(f"checked {len(trials)} trials: {n_violations} violations")
    return 0 if n_violations == 0 else 2


def _cmd_sync(args) -> int:
    manifest, trials = load_dataset(args.data)
    offsets: dict[str, int | None] = {}
    for trial in trials:
        if trial.insole is None or trial.mocap is None:
            continue
        try:
            offsets[trial.id] = dsp.sync_streams(trial.insole, trial.mocap)
        except ValueError as exc:
            offsets[trial.id] = None
            print(f"{trial.id}: sync failed ({exc})")
    text = json.dumps(offsets, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write_run_record(args.out, "sync", _resolved(args, ["data", "out"]))
        (args.out / "sync.json").write_text(text)
        print(f"wrote offsets for {len(offsets)} trials to {args.out / 'sync.json'}")
    else:
        print(text, end="")
    return 0


def _classifier_windows(manifest, trials, split):
    train_w = pipeline.build_class_windows(trials, split.train)
    val_w = pipeline.build_class_windows(trials, split.val)
    pipeline.assert_no_subject_leakage(split, train_w + val_w)
    return train_w, val_w


def _cmd_train_classifier(args) -> int:
    manifest, trials = load_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    split = _split(manifest, args.split_seed)
    train_w, val_w = _classifier_windows(manifest, trials, split)
    modalities = ["pose", "insole"] if args.modality == "ensemble" else [args.modality]

    ensemble = pipeline.ClassifierEnsemble()
    for modality in modalities:
        config = _train_config(args, modality)
        model = pipeline.train_classifier(train_w, val_w, modality, config)
        save_model(model, args.out / f"classifier_{modality}.ckpt")
        setattr(ensemble, f"{modality}_model", model)

    test_trials = pipeline.trials_for_member(trials, split.test)
    metrics = pipeline.evaluate_classifier(ensemble, test_trials)
    _write_run_record(args.out, "train-classifier", _resolved(
        args, ["data", "out", "modality", "seed", "split_seed", "lr",
               "batch_size", "epochs", "patience", "dropout"]))
    (args.out / "metrics.json").write_text(pipeline.metrics_json(metrics))
    print(f"test accuracy {metrics.accuracy:.4f} over {metrics.n_windows} windows")
    return 0


def _kam_samples(trials, split, activity, with_knee_angle):
    members = {"train": split.train, "val": split.val, "test": split.test}
    out = {}
    for name, member in members.items():
        samples = []
        for trial in pipeline.trials_for_member(trials, member):
            if trial.activity is not activity:
                continue
            samples.extend(pipeline.extract_kam_samples(
                trial, with_knee_angle=with_knee_angle))
        out[name] = samples
    pipeline.assert_no_subject_leakage(split, out["train"] + out["val"] + out["test"])
    return out


def _cmd_train_kam(args) -> int:
    manifest, trials = load_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    split = _split(manifest, args.split_seed)
    activity = ACTIVITY_CODES[args.activity]
    samples = _kam_samples(trials, split, activity, args.knee_angle)
    if not samples["train"]:
        raise DataError(f"no {activity.value} strides in the training split")

    config = _train_config(args, "kam", activity)
    model = pipeline.train_kam(samples["train"], samples["val"], activity, config,
                               hidden_size=args.hidden)
    suffix = "_knee" if args.knee_angle else ""
    save_model(model, args.out / f"kam_{args.activity}{suffix}.ckpt")

    metrics = pipeline.evaluate_kam(model, samples["test"], manifest.subject_map())
    _write_run_record(args.out, "train-kam", _resolved(
        args, ["data", "out", "activity", "knee_angle", "seed", "split_seed",
               "lr", "batch_size", "epochs", "patience", "dropout", "hidden"]))
    (args.out / "metrics.json").write_text(pipeline.metrics_json(metrics))
    (args.out / "strides.csv").write_text(pipeline.per_stride_csv(metrics))
    (args.out / "waveform.csv").write_text(
        pipeline.waveform_csv(model, samples["test"]))
    print(f"test r {metrics.r_mean:.3f} +/- {metrics.r_std:.3f}, "
          f"MAE {metrics.mae_nm_mean:.2f} Nm "
          f"({metrics.mae_pct_mean:.3f} %BW*ht) over {metrics.n_strides} strides")
    return 0


def _load_models(model_dir: Path):
    paths = sorted(model_dir.glob("*.ckpt")) if model_dir.is_dir() else [model_dir]
    if not paths:
        raise DataError(f"no checkpoints under {model_dir}")
    models = []
    for path in paths:
        try:
            models.append(load_model(path))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    return models


def _cmd_evaluate(args) -> int:
    manifest, trials = load_dataset(args.data)
    split = _split(manifest, args.split_seed)
    test_trials = pipeline.trials_for_member(trials, split.test)
    models = _load_models(args.model)
    outputs = {}

    classifiers = [m for m in models if isinstance(m, SequenceClassifier)]
    if classifiers:
        ensemble = pipeline.ClassifierEnsemble()
        for model in classifiers:
            setattr(ensemble, f"{model.modality}_model", model)
        metrics = pipeline.evaluate_classifier(ensemble, test_trials)
        outputs["classifier"] = metrics.to_dict()
        print(f"classifier accuracy {metrics.accuracy:.4f} "
              f"over {metrics.n_windows} windows")

    for model in models:
        if not isinstance(model, KamRegressor):
            continue
        activity = Activity(model.activity)
        samples = []
        for trial in test_trials:
            if trial.activity is activity:
                samples.extend(pipeline.extract_kam_samples(
                    trial, with_knee_angle=model.with_knee_angle))
        if not samples:
            raise DataError(f"no {activity.value} strides in the test split")
        metrics = pipeline.evaluate_kam(model, samples, manifest.subject_map())
        key = f"kam_{activity.value}" + ("_knee" if model.with_knee_angle else "")
        outputs[key] = metrics.to_dict()
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{key}_strides.csv").write_text(pipeline.per_stride_csv(metrics))
            (args.out / f"{key}_waveform.csv").write_text(
                pipeline.waveform_csv(model, samples))
        print(f"{key}: r {metrics.r_mean:.3f} +/- {metrics.r_std:.3f}, "
              f"MAE {metrics.mae_nm_mean:.2f} Nm ({metrics.mae_pct_mean:.3f} %BW*ht)")

    text = json.dumps(outputs, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write_run_record(args.out, "evaluate", _resolved(
            args, ["data", "model", "out", "split_seed"]))
        (args.out / "metrics.json").write_text(text)
    return 0


def _cmd_infer(args) -> int:
    manifest, trials = load_dataset(args.data)
    matching = [t for t in trials if t.id == args.trial]
    if not matching:
        raise DataError(f"trial {args.trial!r} not found in manifest")
    trial = matching[0]
    models = _load_models(args.model)
    result: dict = {"trial": trial.id, "labeled_activity": trial.activity.value}

    classifiers = [m for m in models if isinstance(m, SequenceClassifier)]
    if classifiers:
        ensemble = pipeline.ClassifierEnsemble()
        for model in classifiers:
            setattr(ensemble, f"{model.modality}_model", model)
        metrics = pipeline.evaluate_classifier(ensemble, [trial], level="trial")
        pred = int(np.argmax(metrics.confusion.sum(axis=0)))
        from .core import activity_from_class_id

        result["predicted_activity"] = activity_from_class_id(pred).value

    for model in models:
        if not isinstance(model, KamRegressor):
            continue
        samples = pipeline.extract_kam_samples(
            trial, with_knee_angle=model.with_knee_angle)
        if not samples:
            result["kam"] = "no strides found"
            continue
        x = np.stack([s.inputs for s in samples])
        preds = model.predict(x)
        result["kam"] = {
            "n_strides": len(samples),
            "peak_nm_mean": float(preds.max(axis=1).mean()),
        }
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"infer_{trial.id}_waveform.csv").write_text(
                pipeline.waveform_csv(model, samples))

    print(json.dumps(result, sort_keys=True, indent=2))
    if args.out:
        _write_run_record(args.out, "infer", _resolved(
            args, ["data", "model", "trial", "out"]))
    return 0


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitforge",
        description="Insole + video gait pipeline with a synthetic oracle.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, data=False, out_required=False, seeded=False, train=False):
        # "required" flags may also arrive via --config, so requiredness is
        # checked after the config merge rather than by argparse.
        p.add_argument("--config", type=Path, help="JSON file supplying defaults")
        required = []
        if data:
            p.add_argument("--data", type=Path, help="dataset root")
            required.append("data")
        p.add_argument("--out", type=Path, help="output directory")
        if out_required:
            required.append("out")
        if seeded:
            p.add_argument("--seed", type=int)
            required.append("seed")
        if train:
            p.add_argument("--split-seed", type=int, default=7)
            p.add_argument("--lr", type=float)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--epochs", type=int)
            p.add_argument("--patience", type=int)
            p.add_argument("--dropout", type=float)
        p.set_defaults(_required=required)

    p = sub.add_parser("generate", help="write a synthetic dataset")
    p.add_argument("--subjects", type=int, default=20)
    common(p, out_required=True, seeded=True)

    p = sub.add_parser("inspect", help="validate a dataset")
    common(p, data=True)

    p = sub.add_parser("sync", help="estimate insole clock offsets")
    common(p, data=True)

    p = sub.add_parser("train-classifier", help="train activity classifier(s)")
    p.add_argument("--modality", choices=["pose", "insole", "ensemble"],
                   default="ensemble")
    common(p, data=True, out_required=True, seeded=True, train=True)

    p = sub.add_parser("train-kam", help="train a per-activity KAM regressor")
    p.add_argument("--activity", choices=sorted(ACTIVITY_CODES), required=True)
    p.add_argument("--knee-angle", action="store_true", default=None,
                   help="append the pose-derived knee angle channel")
    p.add_argument("--hidden", type=int, help="override the LSTM width")
    common(p, data=True, out_required=True, seeded=True, train=True)

    p = sub.add_parser("evaluate", help="evaluate checkpoints on the test split")
    p.add_argument("--model", type=Path,
                   help="checkpoint file or directory of .ckpt files")
    p.add_argument("--split-seed", type=int, default=7)
    common(p, data=True)
    p.set_defaults(_required=["data", "model"])

    p = sub.add_parser("infer", help="run models on a single trial")
    p.add_argument("--model", type=Path)
    p.add_argument("--trial")
    common(p, data=True)
    p.set_defaults(_required=["data", "model", "trial"])
    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Fill unset flags from the JSON config file (CLI wins)."""
    if not getattr(args, "config", None):
        return
    try:
        overrides = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config file: {exc}") from None
    if not isinstance(overrides, dict):
        raise DataError("config file must hold a JSON object")
    explicit = {a.lstrip("-").replace("-", "_").split("=")[0] for a in argv
                if a.startswith("--")}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest in explicit or not hasattr(args, dest):
            continue
        if dest in ("out", "data", "model"):
            value = Path(value)
        setattr(args, dest, value)


_COMMANDS = {
    "generate": _cmd_generate,
    "inspect": _cmd_inspect,
    "sync": _cmd_sync,
    "train-classifier": _cmd_train_classifier,
    "train-kam": _cmd_train_kam,
    "evaluate": _cmd_evaluate,
    "infer": _cmd_infer,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        _apply_config_file(args, argv)
        missing = [name for name in getattr(args, "_required", [])
                   if getattr(args, name) is None]
        if missing:
            flags = ", ".join(f"--{m.replace('_', '-')}" for m in missing)
            print(f"usage error: missing required {flags}", file=sys.stderr)
            return 1
        for name in ("data", "out", "model"):
            value = getattr(args, name, None)
            if value is not None and not isinstance(value, Path):
                setattr(args, name, Path(value))
        if getattr(args, "knee_angle", None) is None and hasattr(args, "knee_angle"):
            args.knee_angle = False
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
