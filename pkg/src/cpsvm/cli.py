"""Command line interface: ``cpsvm <subcommand> [options]``."""

from __future__ import annotations

import argparse
import ast
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import cnn, pipeline, spectra_io, svm
from .pipeline import PipelineConfig
from .spectra_io import ConfigurationError

# config-file aliases for PipelineConfig fields
_ALIASES = {"data": "data_path", "out": "out_dir", "runs": "monte_carlo_runs"}
_SECTIONS = ("synthetic", "cnn", "swarm")


def _parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """``key = value`` lines; ``#`` starts a comment; values are Python literals or bare strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = _parse_value(value.strip())
    return out


def apply_overrides(cfg: PipelineConfig, items: dict[str, object]) -> PipelineConfig:
    """Return ``cfg`` with dotted keys (``cnn.max_epochs``, ``swarm.population``...) replaced."""
    top: dict[str, object] = {}
    nested: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    top_names = {f.name for f in dataclasses.fields(PipelineConfig)}
    for key, value in items.items():
        section, dot, name = key.partition(".")
        if dot:
            if section not in nested:
                raise ConfigurationError(f"unknown config section '{section}'")
            sub = getattr(cfg, section)
            if name not in {f.name for f in dataclasses.fields(sub)}:
                raise ConfigurationError(f"unknown config key '{key}'")
            nested[section][name] = value
        else:
            name = _ALIASES.get(key, key)
            if name not in top_names or name in _SECTIONS:
                raise ConfigurationError(f"unknown config key '{key}'")
            top[name] = value
    try:
        for section, values in nested.items():
            if values:
                top[section] = dataclasses.replace(getattr(cfg, section), **values)
        return dataclasses.replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def build_config(args) -> PipelineConfig:
    """Defaults, then profile, then config file, then command line flags."""
    cfg = pipeline.PROFILES[args.profile](PipelineConfig())
    if args.config:
        path = Path(args.config)
        cfg = apply_overrides(cfg, parse_config_text(path.read_text(), str(path)))
    flags = {
        "seed": args.seed,
        "out_dir": args.out,
        "model": getattr(args, "model", None),
        "fitness_split": args.fitness_split,
        "train_fraction": args.train_fraction,
        "data_path": args.data,
        "monte_carlo_runs": getattr(args, "runs", None),
    }
    cfg = apply_overrides(cfg, {k: v for k, v in flags.items() if v is not None})
    cfg.validate()
    return cfg


def _load_table(cfg: PipelineConfig, features: bool) -> spectra_io.LabeledDataset:
    # feature tables are used as-is; spectra are min-max normalized
    if features:
        if not cfg.data_path:
            raise ConfigurationError("--features needs --data")
        return spectra_io.load_dataset(cfg.data_path)
    return pipeline.load_data(cfg)


def cmd_generate(cfg: PipelineConfig, args) -> int:
    synth = cfg.synthetic
    if args.seed is not None:
        synth = dataclasses.replace(synth, seed=args.seed)
    d = spectra_io.generate_synthetic(synth)
    path = Path(cfg.out_dir)
    if path.suffix.lower() != ".csv":
        path = path / "dataset.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    spectra_io.save_dataset(d, path)
    print(f"wrote {len(d)} spectra x {d.channel_count} channels to {path}")
    return 0


def cmd_train_cnn(cfg: PipelineConfig, args) -> int:
    data = pipeline.load_data(cfg)
    splits = pipeline.make_splits(data, cfg, cfg.seed)
    arch = cnn.CnnArchitecture(input_length=data.channel_count, output_classes=data.class_count)
    train_cfg = dataclasses.replace(cfg.cnn, seed=pipeline.derive_seed(cfg.seed, pipeline._CNN))
    started = time.perf_counter()
    net, curves = cnn.train(splits.fit, splits.score, train_cfg, arch)
    elapsed = time.perf_counter() - started
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cnn.save_model(net, out / "cnn_model.npz")
    pipeline.write_training_curves(out / "training_curves.csv", curves)
    test_acc = float(np.mean(net.predict(splits.test.spectra) == splits.test.labels))
    pipeline.write_json(out / "cnn_report.json", {
        "seed": cfg.seed,
        "final_mean_loss": curves.mean_loss[-1],
        "score_accuracy": curves.test_accuracy[-1],
        "test_accuracy": test_acc,
        "wall_time_s": elapsed,
    })
    print(f"trained CNN: softmax test accuracy {100 * test_acc:.2f}% ({elapsed:.2f} s) -> {out}")
    return 0


def cmd_extract(cfg: PipelineConfig, args) -> int:
    net = cnn.load_model(args.cnn_model)
    data = pipeline.load_data(cfg)
    feats = cnn.extract_features(net, data)
    path = Path(cfg.out_dir)
    if path.suffix.lower() != ".csv":
        path = path / "features.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    spectra_io.save_dataset(feats, path)
    print(f"wrote {len(feats)} x {feats.channel_count} features to {path}")
    return 0


def cmd_optimize(cfg: PipelineConfig, args) -> int:
    data = _load_table(cfg, args.features)
    report = pipeline.run_ipso_svm(cfg, data)
    report.model = "optimize"
    out = pipeline.write_report(report, cfg.out_dir)
    print(f"best C={report.C:.6g} sigma={report.sigma:.6g}, test accuracy {100 * report.accuracy:.2f}% -> {out}")
    return 0


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    model = svm.load_ovo(args.svm_model)
    data = _load_table(cfg, args.features)
    if args.cnn_model:
        data = cnn.extract_features(cnn.load_model(args.cnn_model), data)
    if data.class_count > model.class_count:
        raise ConfigurationError(f"data has labels up to {data.class_count}, model knows {model.class_count}")
    preds = model.predict(data.spectra)
    cm = pipeline.confusion(preds, data.labels, model.class_count)
    report = pipeline.RunReport("evaluate", cm.accuracy, 0.0, cfg.seed, model.hyperparams.C,
                                model.hyperparams.sigma, cm)
    out = pipeline.write_report(report, cfg.out_dir)
    pipeline.write_json(out / "report.json", report.to_dict(include_timing=False))
    print(f"accuracy {100 * cm.accuracy:.2f}% on {len(data)} samples -> {out}")
    return 0


def cmd_run(cfg: PipelineConfig, args) -> int:
    report = pipeline.run_model(cfg)
    out = pipeline.write_report(report, cfg.out_dir)
    line = f"{report.model}: accuracy {100 * report.accuracy:.2f}%, {report.wall_time_s:.2f} s"
    print(f"{line}, C={report.C:.6g}, sigma={report.sigma:.6g} -> {out}")
    return 0


def cmd_compare(cfg: PipelineConfig, args) -> int:
    models = args.models.split(",") if args.models else list(pipeline.MODELS)
    unknown = [m for m in models if m not in pipeline.MODELS]
    if unknown:
        raise ConfigurationError(f"unknown model(s): {', '.join(unknown)}")

    def progress(name, run, report):
        print(f"  {name:<9} run {run:>2}: {100 * report.accuracy:6.2f}%  {report.wall_time_s:8.2f} s",
              flush=True)

    mc = pipeline.monte_carlo(cfg, models, progress=None if args.quiet else progress)
    out = pipeline.write_monte_carlo(mc, cfg.out_dir)
    print(pipeline.format_summary(mc))
    print(f"-> {out}")
    return 0


COMMANDS = {
    "generate": (cmd_generate, "write a synthetic dataset CSV"),
    "train-cnn": (cmd_train_cnn, "train the CNN on the fit split"),
    "extract": (cmd_extract, "map spectra to CNN features"),
    "optimize": (cmd_optimize, "swarm-tune (C, sigma) and train the final SVM"),
    "evaluate": (cmd_evaluate, "score a saved SVM on a dataset"),
    "compare": (cmd_compare, "Monte Carlo comparison of the three models"),
    "run": (cmd_run, "one end-to-end run of the selected model"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--profile", choices=sorted(pipeline.PROFILES), default="default")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (or .csv path for generate/extract)")
    common.add_argument("--data", help="dataset CSV; synthetic data when omitted")
    common.add_argument("--fitness-split", choices=pipeline.FITNESS_SPLITS)
    common.add_argument("--train-fraction", type=float)

    parser = argparse.ArgumentParser(prog="cpsvm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=text)
               for name, (_, text) in COMMANDS.items()}
    parsers["run"].add_argument("--model", choices=pipeline.MODELS)
    parsers["extract"].add_argument("--cnn-model", required=True)
    for name in ("optimize", "evaluate"):
        parsers[name].add_argument("--features", action="store_true",
                                   help="--data holds feature vectors; skip normalization")
    parsers["evaluate"].add_argument("--svm-model", required=True)
    parsers["evaluate"].add_argument("--cnn-model", help="extract features with this CNN first")
    parsers["compare"].add_argument("--models", help="comma-separated subset of " + ",".join(pipeline.MODELS))
    parsers["compare"].add_argument("--runs", type=int)
    parsers["compare"].add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(args)
        return COMMANDS[args.command][0](cfg, args)
    except (ConfigurationError, spectra_io.DatasetError, cnn.ArchitectureError,
            svm.SvmTrainingError, pipeline.MonteCarloError, OSError) as exc:
        print(f"cpsvm {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
