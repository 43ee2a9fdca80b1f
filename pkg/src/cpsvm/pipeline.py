"""End-to-end runs of the three compared models, metrics and Monte Carlo.

Models:

* ``svm`` -- one-vs-one RBF SVM on normalized spectra with ``(C, sigma)``
  drawn at random from the search box;
* ``ipso-svm`` -- the same SVM with ``(C, sigma)`` tuned by the swarm;
* ``cpsvm`` -- CNN features (84 per spectrum) + swarm-tuned SVM.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cnn, pso, spectra_io, svm
from .spectra_io import ConfigurationError, LabeledDataset, SyntheticConfig

MODELS = ("svm", "ipso-svm", "cpsvm")
FITNESS_SPLITS = ("validation", "test")

# sub-stream tags mixed into the run seed
_SPLIT, _VALIDATION, _CNN, _SWARM, _PLAIN = range(1, 6)


def derive_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


@dataclass(frozen=True)
class PipelineConfig:
    data_path: str | None = None
    synthetic: SyntheticConfig = SyntheticConfig()
    train_fraction: float = 0.9
    fitness_split: str = "validation"
    validation_fraction: float = 0.2
    cnn: cnn.TrainConfig = cnn.TrainConfig()
    swarm: pso.SwarmConfig = pso.SwarmConfig()
    model: str = "cpsvm"
    monte_carlo_runs: int = 20
    seed: int = 42
    out_dir: str = "runs"
    svm_tol: float = 1e-3

    def validate(self):
        for name in ("train_fraction", "validation_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must be in (0, 1), got {v}")
        if self.fitness_split not in FITNESS_SPLITS:
            raise ConfigurationError(f"fitness_split must be one of {FITNESS_SPLITS}")
        if self.model not in MODELS:
            raise ConfigurationError(f"model must be one of {MODELS}")
        if self.monte_carlo_runs < 1:
            raise ConfigurationError("monte_carlo_runs must be at least 1")
        if len(self.swarm.bounds) != 2:
            raise ConfigurationError("the swarm searches exactly two dimensions (log10 C, log10 sigma)")


# reduced desk-scale profile: 50 spectra per class, 10 particles, 20 iterations
def reduced_profile(cfg: PipelineConfig = PipelineConfig()) -> PipelineConfig:
    return dataclasses.replace(
        cfg,
        synthetic=dataclasses.replace(cfg.synthetic, spectra_per_class=50),
        swarm=dataclasses.replace(cfg.swarm, population=10, max_iterations=20),
    )


PROFILES = {"default": lambda cfg: cfg, "reduced": reduced_profile}


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    normalized: np.ndarray
    empty_rows: list[int]

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())


def confusion(preds, truth, class_count: int) -> ConfusionMatrix:
    """Counts ``[i, j] = #(truth = i+1, pred = j+1)`` and row-normalized proportions.

    Rows without support stay all-zero and are listed in ``empty_rows`` (1-based).
    """
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape:
        raise ValueError("preds and truth must have equal length")
    for name, arr in (("preds", preds), ("truth", truth)):
        if arr.size and (arr.min() < 1 or arr.max() > class_count):
            raise ValueError(f"{name} contains labels outside [1, {class_count}]")
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (truth - 1, preds - 1), 1)
    support = counts.sum(axis=1, keepdims=True)
    normalized = np.divide(counts, support, out=np.zeros(counts.shape), where=support > 0)
    empty = [i + 1 for i in np.flatnonzero(support[:, 0] == 0)]
    return ConfusionMatrix(counts, normalized, empty)


@dataclass
class RunReport:
    model: str
    accuracy: float
    wall_time_s: float
    seed: int
    C: float | None
    sigma: float | None
    confusion: ConfusionMatrix
    best_fitness_curve: list[float] = field(default_factory=list)
    mean_pbest_curve: list[float] = field(default_factory=list)
    # (iteration, particle, C, sigma, fitness)
    evaluations: list[tuple] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    # trained artifacts, not serialized into report.json
    svm_model: svm.OvoSvmModel | None = field(default=None, repr=False)
    cnn_model: cnn.CnnModel | None = field(default=None, repr=False)
    cnn_curves: cnn.TrainingCurves | None = field(default=None, repr=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "model": self.model,
            "accuracy": self.accuracy,
            "seed": self.seed,
            "C": self.C,
            "sigma": self.sigma,
            "confusion_counts": self.confusion.counts.tolist(),
            "confusion_normalized": self.confusion.normalized.tolist(),
            "empty_rows": self.confusion.empty_rows,
            "best_fitness_curve": self.best_fitness_curve,
            "mean_pbest_curve": self.mean_pbest_curve,
            "fitness_evaluations": len(self.evaluations),
            **self.extra,
        }
        if include_timing:
            d["wall_time_s"] = self.wall_time_s
        return d


@dataclass
class Splits:
    train: LabeledDataset
    test: LabeledDataset
    # PSO fits on ``fit`` and scores on ``score``; for the literal protocol
    # they are the training and test sets
    fit: LabeledDataset
    score: LabeledDataset


def load_data(cfg: PipelineConfig) -> LabeledDataset:
    """Read or generate the corpus and min-max normalize every spectrum."""
    if cfg.data_path:
        raw = spectra_io.load_dataset(cfg.data_path)
    else:
        raw = spectra_io.generate_synthetic(cfg.synthetic)
    if raw.class_count < 2:
        raise ConfigurationError("classification needs at least two classes")
    return spectra_io.normalize_dataset(raw)


def make_splits(data: LabeledDataset, cfg: PipelineConfig, seed: int) -> Splits:
    train, test = spectra_io.shuffle_split(data, cfg.train_fraction, derive_seed(seed, _SPLIT))
    if cfg.fitness_split == "test":
        return Splits(train, test, train, test)
    fit, score = spectra_io.shuffle_split(train, 1.0 - cfg.validation_fraction,
                                          derive_seed(seed, _VALIDATION))
    return Splits(train, test, fit, score)


_warm = False


def _warm_up() -> None:
    """Load compiled kernels once, so their startup cost stays out of timed spans."""
    global _warm
    if _warm:
        return
    x = np.linspace(0.0, 1.0, 42).reshape(2, 21)
    svm.train_binary(x, np.array([1.0, -1.0]), svm.SvmHyperparams(1.0, 1.0))
    arch = cnn.CnnArchitecture(input_length=21, fc_features=4, output_classes=2)
    cnn.backward(cnn.CnnModel.initialize(arch, np.random.default_rng(0)), x, np.array([1, 2]))
    _warm = True


def _hyperparams(position) -> svm.SvmHyperparams:
    return svm.SvmHyperparams(float(10.0 ** position[0]), float(10.0 ** position[1]))


def _tune(fit: LabeledDataset, score: LabeledDataset, cfg: PipelineConfig, seed: int):
    swarm_cfg = dataclasses.replace(cfg.swarm, seed=derive_seed(seed, _SWARM))

    def fitness(position):
        model = svm.train_ovo(fit, _hyperparams(position), cfg.svm_tol)
        return svm.accuracy(model, score)

    return pso.optimize(fitness, swarm_cfg)


def _finish(name, seed, model, test, started, result=None, **extra) -> RunReport:
    preds = model.predict(test.spectra)
    cm = confusion(preds, test.labels, test.class_count)
    elapsed = time.perf_counter() - started
    report = RunReport(name, cm.accuracy, elapsed, seed, model.hyperparams.C,
                       model.hyperparams.sigma, cm, svm_model=model, extra=extra)
    if result is not None:
        report.best_fitness_curve = list(result.best_fitness_curve)
        report.mean_pbest_curve = list(result.mean_pbest_curve)
        report.evaluations = [(k, i, 10.0 ** a, 10.0 ** b, f) for k, i, a, b, f in result.evaluations]
        report.extra["gbest_fitness"] = result.gbest_fitness
    return report


def run_plain_svm(cfg: PipelineConfig, data: LabeledDataset | None = None, seed: int | None = None) -> RunReport:
    """SVM on raw normalized spectra with ``(C, sigma)`` drawn log-uniformly from the box."""
    cfg.validate()
    data = load_data(cfg) if data is None else data
    seed = cfg.seed if seed is None else seed
    splits = make_splits(data, cfg, seed)
    rng = np.random.default_rng(derive_seed(seed, _PLAIN))
    position = rng.uniform(cfg.swarm.lower, cfg.swarm.upper)
    _warm_up()
    started = time.perf_counter()
    model = svm.train_ovo(splits.train, _hyperparams(position), cfg.svm_tol)
    return _finish("svm", seed, model, splits.test, started)


def run_ipso_svm(cfg: PipelineConfig, data: LabeledDataset | None = None, seed: int | None = None) -> RunReport:
    """Swarm-tuned SVM on raw normalized spectra."""
    cfg.validate()
    data = load_data(cfg) if data is None else data
    seed = cfg.seed if seed is None else seed
    splits = make_splits(data, cfg, seed)
    _warm_up()
    started = time.perf_counter()
    result = _tune(splits.fit, splits.score, cfg, seed)
    model = svm.train_ovo(splits.train, _hyperparams(result.gbest_position), cfg.svm_tol)
    return _finish("ipso-svm", seed, model, splits.test, started, result)


def run_cpsvm(cfg: PipelineConfig, data: LabeledDataset | None = None, seed: int | None = None) -> RunReport:
    """CNN feature extraction followed by a swarm-tuned SVM on the features."""
    cfg.validate()
    data = load_data(cfg) if data is None else data
    seed = cfg.seed if seed is None else seed
    splits = make_splits(data, cfg, seed)
    _warm_up()
    started = time.perf_counter()
    arch = cnn.CnnArchitecture(input_length=data.channel_count, output_classes=data.class_count)
    train_cfg = dataclasses.replace(cfg.cnn, seed=derive_seed(seed, _CNN))
    net, curves = cnn.train(splits.fit, splits.score, train_cfg, arch)
    feats = {name: cnn.extract_features(net, getattr(splits, name))
             for name in ("train", "test", "fit", "score")}
    result = _tune(feats["fit"], feats["score"], cfg, seed)
    model = svm.train_ovo(feats["train"], _hyperparams(result.gbest_position), cfg.svm_tol)
    report = _finish("cpsvm", seed, model, feats["test"], started, result,
                     feature_count=int(feats["train"].channel_count))
    report.cnn_model, report.cnn_curves = net, curves
    return report


RUNNERS = {"svm": run_plain_svm, "ipso-svm": run_ipso_svm, "cpsvm": run_cpsvm}


def run_model(cfg: PipelineConfig, data=None, seed=None) -> RunReport:
    return RUNNERS[cfg.model](cfg, data, seed)


@dataclass
class ModelSummary:
    model: str
    runs: int
    accuracy_mean: float
    accuracy_std: float
    time_mean: float
    time_std: float


def summarize(model: str, reports: list[RunReport]) -> ModelSummary:
    """Mean and sample (n-1) standard deviation; accuracy in percent."""
    acc = np.array([100.0 * r.accuracy for r in reports])
    t = np.array([r.wall_time_s for r in reports])
    ddof = 1 if len(reports) > 1 else 0
    return ModelSummary(model, len(reports), float(acc.mean()), float(acc.std(ddof=ddof)),
                        float(t.mean()), float(t.std(ddof=ddof)))


class MonteCarloError(RuntimeError):
    def __init__(self, model, run_index, cause):
        super().__init__(f"{model} run {run_index} failed: {cause}")
        self.model = model
        self.run_index = run_index


@dataclass
class MonteCarloSummary:
    summaries: dict[str, ModelSummary]
    reports: dict[str, list[RunReport]]


def monte_carlo(cfg: PipelineConfig, models=None, data: LabeledDataset | None = None,
                progress=None) -> MonteCarloSummary:
    """Repeat each model ``cfg.monte_carlo_runs`` times with seeds ``seed + run``."""
    cfg.validate()
    models = [cfg.model] if models is None else list(models)
    data = load_data(cfg) if data is None else data
    reports: dict[str, list[RunReport]] = {m: [] for m in models}
    for run in range(cfg.monte_carlo_runs):
        for name in models:
            try:
                report = RUNNERS[name](cfg, data, cfg.seed + run)
            except Exception as exc:
                raise MonteCarloError(name, run, exc) from exc
            reports[name].append(report)
            if progress is not None:
                progress(name, run, report)
    return MonteCarloSummary({m: summarize(m, r) for m, r in reports.items()}, reports)


# --- output writers ---------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def write_report(report: RunReport, out_dir) -> Path:
    """``report.json``, ``confusion.csv`` and, for tuned models, the swarm CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report.to_dict())
    k = report.confusion.counts.shape[0]
    _write_csv(out / "confusion.csv", ["true", "pred", "count", "proportion"],
               [(i + 1, j + 1, int(report.confusion.counts[i, j]), report.confusion.normalized[i, j])
                for i in range(k) for j in range(k)])
    if report.best_fitness_curve:
        write_fitness_curves(out / "fitness_curves.csv", report.best_fitness_curve, report.mean_pbest_curve)
        write_eval_log(out / "eval_log.csv", report.evaluations)
    if report.svm_model is not None:
        svm.save_ovo(report.svm_model, out / "svm_model.txt")
    if report.cnn_model is not None:
        cnn.save_model(report.cnn_model, out / "cnn_model.npz")
    if report.cnn_curves is not None:
        write_training_curves(out / "training_curves.csv", report.cnn_curves)
    return out


def write_fitness_curves(path, best, mean_pbest):
    _write_csv(Path(path), ["iteration", "best", "mean_pbest"],
               [(k + 1, b, m) for k, (b, m) in enumerate(zip(best, mean_pbest))])


def write_eval_log(path, evaluations):
    _write_csv(Path(path), ["iteration", "particle", "C", "sigma", "fitness"], evaluations)


def write_training_curves(path, curves: cnn.TrainingCurves):
    _write_csv(Path(path), ["epoch", "mean_loss", "min_batch_loss", "max_batch_loss", "test_accuracy"],
               curves.rows())


def write_monte_carlo(mc: MonteCarloSummary, out_dir) -> Path:
    """``summary.csv`` (per model) and ``runs.csv`` (per run, for recomputation)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "summary.csv",
               ["model", "runs", "accuracy_mean_pct", "accuracy_std_pct", "time_mean_s", "time_std_s"],
               [dataclasses.astuple(s) for s in mc.summaries.values()])
    _write_csv(out / "runs.csv", ["model", "run", "seed", "accuracy", "wall_time_s", "C", "sigma"],
               [(m, i, r.seed, r.accuracy, r.wall_time_s, r.C, r.sigma)
                for m, reps in mc.reports.items() for i, r in enumerate(reps)])
    for m, reps in mc.reports.items():
        for i, r in enumerate(reps):
            write_report(dataclasses.replace(r, svm_model=None, cnn_model=None, cnn_curves=None),
                         out / m / f"run_{i:02d}")
    return out


def format_summary(mc: MonteCarloSummary) -> str:
    lines = [f"{'model':<10} {'runs':>4}  {'accuracy (%)':>18}  {'time (s)':>18}"]
    for s in mc.summaries.values():
        lines.append(f"{s.model:<10} {s.runs:>4}  {s.accuracy_mean:>8.2f} +- {s.accuracy_std:<6.2f}"
                     f"  {s.time_mean:>8.2f} +- {s.time_std:<6.2f}")
    return "\n".join(lines)

