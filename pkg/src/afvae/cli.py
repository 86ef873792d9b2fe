"""Command-line entry point: ``afvae <command> [flags]``.

Commands: synth, ingest, train, predict, uncertainty-report, evaluate.
Every command takes ``--seed``, ``--out`` and ``--config <json>``; flag
values override the config file, which overrides built-in defaults. A
``run_manifest.json`` holding the resolved configuration is written next
to the outputs and can itself be passed back as ``--config``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import synth
from .model import ModelConfig
from .train import (TrainConfig, cross_validate, evaluate, load_fold_model, metrics_summary)
from .uncertainty import (fold_summary_csv, predict_batch, report_csv, train_vs_test_report)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
MANIFEST = "run_manifest.json"

log = logging.getLogger("afvae")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ------------------------------------------------------------------ config resolution

DEFAULTS = {
    "synth": {"n": 2000, "mix": 0.5, "noise": 0.05, "mean_rr": 0.8, "jitter_normal": 0.02,
              "jitter_af": 0.18, "fib_amp": 0.1, "seed": 0},
    "ingest": {"channel": 0, "window": ds.DEFAULT_WINDOW_SECONDS, "threshold": ds.DEFAULT_THRESHOLD,
               "seed": 0},
    "train": {"folds": 10, "epochs": 10, "batch": 128, "lr": 0.001, "seed": 0, "classifier_weight": 10.0,
              "eval_passes": 5, "patience": None, "balance": True, "normalize": True,
              "res_blocks": 15, "latent": 32, "channels": 16, "kernel": 7, "stem_stride": 4,
              "dense_widths": [256, 64], "classifier_hidden": 64, "classify_from_latent": False},
    "predict": {"passes": 5, "seed": 0},
    "uncertainty-report": {"passes": 5, "seed": 0},
    "evaluate": {"passes": 5, "seed": 0},
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {path}") from exc
    if isinstance(body, dict) and "config" in body and "command" in body:
        body = body["config"]
    if not isinstance(body, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in body.items()}


def resolve(command: str, args: argparse.Namespace) -> dict:
    """flags > config file > defaults, restricted to this command's keys."""
    conf = _load_config(getattr(args, "config", None))
    out = {}
    keys = set(DEFAULTS[command]) | {k for k, v in vars(args).items() if k not in ("config", "func", "command")}
    for key in sorted(keys):
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in conf:
            out[key] = conf[key]
        else:
            out[key] = DEFAULTS[command].get(key)
    return out


# ------------------------------------------------------------------ files


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _out_dir(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise UsageError("--out is required")
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise DataError(f"output directory is not writable: {out}") from exc
    return out


def write_manifest(out: Path, command: str, cfg: dict, inputs: list[str]) -> None:
    artifacts = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != MANIFEST and not p.name.endswith(".tmp"):
            artifacts[p.relative_to(out).as_posix()] = _sha256(p)
    body = {"command": command, "config": cfg, "seed": cfg.get("seed"), "inputs": inputs,
            "output_dir": str(out), "artifacts": artifacts}
    _write_text(out / MANIFEST, json.dumps(body, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ data helpers


def _segments_from(path, window=None, threshold=None) -> list[ds.Segment]:
    path = Path(path)
    if (path / ds.MANIFEST_NAME).is_file() or path.suffix == ".json":
        return ds.load_dataset(path, window, threshold)
    if (path / ds.META_NAME).is_file():
        return ds.segment_record(ds.load_record(path), window or ds.DEFAULT_WINDOW_SECONDS,
                                 ds.DEFAULT_THRESHOLD if threshold is None else threshold)
    raise DataError(f"{path}: neither a dataset manifest nor a record directory")


def _training_arrays(data, balance: bool, normalize: bool):
    segments = _segments_from(data)
    if balance:
        segments = ds.balance(segments)
    X, y = ds.to_arrays(segments, normalize=normalize)
    return segments, X, y


def _read_folds(run: Path) -> dict:
    path = run / "folds.json"
    if not path.is_file():
        raise DataError(f"{run}: no folds.json; is this a train output directory?")
    return json.loads(path.read_text(encoding="utf-8"))


def _fold_checkpoints(run: Path, k: int) -> list[Path]:
    paths = [run / f"fold{i}.ckpt" for i in range(k)]
    missing = [i for i, p in enumerate(paths) if not p.is_file()]
    if missing:
        raise DataError(f"missing checkpoint for fold {missing[0]}: {paths[missing[0]]}")
    return paths


def _run_arrays(run: Path, data):
    folds = _read_folds(run)
    _, X, y = _training_arrays(data, folds.get("balance", True), folds.get("normalize", True))
    plan = ds.FoldPlan.from_dict(folds)
    if len(plan.assignments) != len(X):
        raise DataError(f"fold plan covers {len(plan.assignments)} segments, data has {len(X)}")
    return X, y, plan


# ------------------------------------------------------------------ commands


def cmd_synth(cfg: dict) -> None:
    if not 0.0 <= float(cfg["mix"]) <= 1.0:
        raise UsageError("--mix must lie in [0, 1]")
    if int(cfg["n"]) < 1:
        raise UsageError("--n must be positive")
    try:
        config = synth.SynthConfig(
            n_segments=int(cfg["n"]), class_mix=float(cfg["mix"]), noise_sigma_mv=float(cfg["noise"]),
            mean_rr_s=float(cfg["mean_rr"]), rr_jitter_normal_s=float(cfg["jitter_normal"]),
            rr_jitter_af_s=float(cfg["jitter_af"]), fib_wave_amp_mv=float(cfg["fib_amp"]),
            seed=int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(cfg)
    segments = synth.generate_dataset(config)
    synth.write_dataset(segments, out)
    n_af = sum(1 for s in segments if s.label == ds.Label.AF)
    log.info("wrote %d segments (%d AF) to %s", len(segments), n_af, out)
    write_manifest(out, "synth", cfg, [])


def cmd_ingest(cfg: dict) -> None:
    from .physionet import convert_record

    if not cfg.get("source") or not cfg.get("records"):
        raise UsageError("ingest needs --source and --records")
    out = _out_dir(cfg)
    names = []
    for name in cfg["records"]:
        try:
            record = convert_record(cfg["source"], name, channel=int(cfg["channel"]))
        except FileNotFoundError as exc:
            raise DataError(str(exc)) from exc
        ds.write_record(record, out / record.record_id)
        names.append(record.record_id)
    ds.write_manifest(out, names, float(cfg["window"]), float(cfg["threshold"]))
    write_manifest(out, "ingest", cfg, [str(cfg["source"])])


def _model_config(cfg: dict, input_len: int) -> ModelConfig:
    return ModelConfig(
        input_len=input_len, latent_dim=int(cfg["latent"]), n_res_blocks=int(cfg["res_blocks"]),
        channels=int(cfg["channels"]), kernel_size=int(cfg["kernel"]), stem_stride=int(cfg["stem_stride"]),
        dense_branch_widths=tuple(int(w) for w in cfg["dense_widths"]),
        classifier_hidden=int(cfg["classifier_hidden"]),
        classify_from_latent=bool(cfg["classify_from_latent"]), normalize_input=bool(cfg["normalize"]))


def cmd_train(cfg: dict) -> None:
    if not cfg.get("data"):
        raise UsageError("train needs --data")
    try:
        train_config = TrainConfig(
            epochs=int(cfg["epochs"]), batch_size=int(cfg["batch"]), learning_rate=float(cfg["lr"]),
            k_folds=int(cfg["folds"]), seed=int(cfg["seed"]),
            classifier_weight=float(cfg["classifier_weight"]), eval_passes=int(cfg["eval_passes"]),
            patience=None if cfg["patience"] is None else int(cfg["patience"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _, X, y = _training_arrays(cfg["data"], bool(cfg["balance"]), bool(cfg["normalize"]))
    try:
        model_config = _model_config(cfg, X.shape[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    plan = ds.make_folds(len(X), train_config.k_folds, train_config.seed)
    out = _out_dir(cfg)
    results = cross_validate(X, y, model_config, train_config, out_dir=out, fold_plan=plan)
    folds = plan.to_dict()
    folds.update(balance=bool(cfg["balance"]), normalize=bool(cfg["normalize"]))
    _write_text(out / "folds.json", json.dumps(folds))
    summary = metrics_summary(results)
    log.info("mean metrics %s", summary["mean"])
    write_manifest(out, "train", cfg, [str(cfg["data"])])


def cmd_predict(cfg: dict) -> None:
    if not cfg.get("ckpt") or not cfg.get("input"):
        raise UsageError("predict needs --ckpt and --input")
    passes = int(cfg["passes"])
    if passes < 1:
        raise UsageError("--passes must be at least 1")
    params, config = load_fold_model(cfg["ckpt"])
    segments = _segments_from(cfg["input"])
    X, y = ds.to_arrays(segments, normalize=config.normalize_input)
    if X.shape[1] != config.input_len:
        raise DataError(f"segments have {X.shape[1]} samples, checkpoint expects {config.input_len}")
    reports = predict_batch(X, params, config, passes, np.random.default_rng(int(cfg["seed"])))
    text = report_csv([s.segment_id for s in segments], y, reports)
    if cfg.get("out"):
        out = _out_dir(cfg)
        _write_text(out / "predictions.csv", text)
        write_manifest(out, "predict", cfg, [str(cfg["ckpt"]), str(cfg["input"])])
    else:
        sys.stdout.write(text)


def cmd_uncertainty_report(cfg: dict) -> None:
    if not cfg.get("run") or not cfg.get("data"):
        raise UsageError("uncertainty-report needs --run and --data")
    passes = int(cfg["passes"])
    if passes < 1:
        raise UsageError("--passes must be at least 1")
    run = Path(cfg["run"])
    X, _, plan = _run_arrays(run, cfg["data"])
    ckpts = _fold_checkpoints(run, plan.k)

    class _Fold:
        def __init__(self, i, path):
            self.fold_index, self.checkpoint = i, str(path)

    rows = train_vs_test_report([_Fold(i, p) for i, p in enumerate(ckpts)], X, plan, passes,
                                seed=int(cfg["seed"]))
    out = _out_dir(cfg)
    _write_text(out / "fold_uncertainty.csv", fold_summary_csv(rows))
    higher = sum(r.test_mean_uncertainty >= r.train_mean_uncertainty for r in rows)
    summary = {
        "n_passes": passes,
        "folds": [{"fold": r.fold, "train_mean_uncertainty": r.train_mean_uncertainty,
                   "test_mean_uncertainty": r.test_mean_uncertainty, "n_test": r.n_test} for r in rows],
        "folds_test_ge_train": int(higher),
    }
    _write_text(out / "fold_uncertainty.json", json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "uncertainty-report", cfg, [str(run), str(cfg["data"])])


def cmd_evaluate(cfg: dict) -> None:
    passes = int(cfg["passes"])
    if passes < 1:
        raise UsageError("--passes must be at least 1")
    if not cfg.get("data") or not (cfg.get("run") or cfg.get("ckpt")):
        raise UsageError("evaluate needs --data and one of --run / --ckpt")
    rng_seed = int(cfg["seed"])
    if cfg.get("run"):
        run = Path(cfg["run"])
        X, y, plan = _run_arrays(run, cfg["data"])
        per_fold = []
        for i, path in enumerate(_fold_checkpoints(run, plan.k)):
            params, config = load_fold_model(path)
            idx = plan.test_indices(i)
            m = evaluate(params, config, X[idx], y[idx], passes, np.random.default_rng([rng_seed, i]))
            per_fold.append({"fold": i, **m})
    else:
        params, config = load_fold_model(cfg["ckpt"])
        X, y = ds.to_arrays(_segments_from(cfg["data"]), normalize=config.normalize_input)
        if X.shape[1] != config.input_len:
            raise DataError(f"segments have {X.shape[1]} samples, checkpoint expects {config.input_len}")
        per_fold = [{"fold": None, **evaluate(params, config, X, y, passes, np.random.default_rng(rng_seed))}]
    mean = {k: float(np.mean([f[k] for f in per_fold])) for k in ("sensitivity", "specificity", "accuracy")}
    out = _out_dir(cfg)
    _write_text(out / "evaluation.json",
                json.dumps({"positive_class": "AF", "per_fold": per_fold, "mean": mean}, indent=2) + "\n")
    write_manifest(out, "evaluate", cfg, [str(cfg.get("run") or cfg.get("ckpt")), str(cfg["data"])])


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "predict": cmd_predict,
    "uncertainty-report": cmd_uncertainty_report,
    "evaluate": cmd_evaluate,
}


# ------------------------------------------------------------------ parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afvae", description="VAE AF classifier with uncertainty")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled ECG dataset")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--mix", type=float, help="fraction of AF segments")
    p.add_argument("--noise", type=float, help="noise standard deviation in mV")
    p.add_argument("--mean-rr", dest="mean_rr", type=float)
    p.add_argument("--jitter-normal", dest="jitter_normal", type=float)
    p.add_argument("--jitter-af", dest="jitter_af", type=float)
    p.add_argument("--fib-amp", dest="fib_amp", type=float)

    p = sub.add_parser("ingest", help="convert PhysioNet MIT-BIH AFIB records (needs wfdb)")
    _common(p)
    p.add_argument("--source", help="directory holding the afdb files")
    p.add_argument("--records", nargs="+")
    p.add_argument("--channel", type=int)
    p.add_argument("--window", type=float)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("train", help="k-fold cross-validated training")
    _common(p)
    p.add_argument("--data")
    p.add_argument("--folds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--classifier-weight", dest="classifier_weight", type=float)
    p.add_argument("--eval-passes", dest="eval_passes", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--res-blocks", dest="res_blocks", type=int)
    p.add_argument("--latent", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--kernel", type=int)
    p.add_argument("--stem-stride", dest="stem_stride", type=int)
    p.add_argument("--dense-widths", dest="dense_widths", type=int, nargs="+")
    p.add_argument("--classifier-hidden", dest="classifier_hidden", type=int)
    p.add_argument("--classify-from-latent", dest="classify_from_latent", action="store_const", const=True)
    p.add_argument("--no-balance", dest="balance", action="store_const", const=False)
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)

    p = sub.add_parser("predict", help="per-segment prediction with uncertainty")
    _common(p)
    p.add_argument("--ckpt")
    p.add_argument("--input", help="dataset directory or single record directory")
    p.add_argument("--passes", type=int)

    p = sub.add_parser("uncertainty-report", help="per-fold train vs test mean uncertainty")
    _common(p)
    p.add_argument("--run", help="train output directory")
    p.add_argument("--data")
    p.add_argument("--passes", type=int)

    p = sub.add_parser("evaluate", help="sensitivity / specificity / accuracy")
    _common(p)
    p.add_argument("--run")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--passes", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.command, args)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"afvae {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ds.RecordFormatError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"afvae {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("runtime failure")
        print(f"afvae {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
