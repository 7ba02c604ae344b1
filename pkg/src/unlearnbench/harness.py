"""End-to-end benchmark runs, learning-rate sweeps and training-epoch ablations."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .datagen import GenConfig, generate, select_forget_speakers, split
from .errors import ConfigError, NumericOverflowError, TrainingDivergedError, UnlearnBenchError
from .metrics import EvalRecord, GumWeights, efficacy_e, efficiency_t, gum, macro_f1, mia_score, utility_u
from .nn_core import predict
from .timing import make_clock
from .unlearn import BASELINES, METHODS, MethodConfig, TrainRecipe, default_grid, run_method, train_original

log = logging.getLogger(__name__)

REPORT_FORMAT = "unlearnbench.report"
REPORT_VERSION = 1


class BaselineTrainingError(UnlearnBenchError):
    """The original or gold model failed to train; the benchmark cannot proceed."""


@dataclass
class ExperimentConfig:
    """Full description of a benchmark run.

    ``method_grid`` learning rates are in transformer fine-tuning units;
    cells run at ``lr * lr_scale`` on the surrogate classifier, whose own
    training rate is ``lr_scale`` times larger than a typical transformer
    fine-tuning rate.
    """

    gen_config: GenConfig = field(default_factory=GenConfig)
    train_recipe: TrainRecipe = field(default_factory=TrainRecipe)
    method_grid: list = field(default_factory=default_grid)
    gum_weights: GumWeights = field(default_factory=GumWeights)
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "results"
    report_formats: list = field(default_factory=lambda: ["json", "csv", "markdown"])
    lr_scale: float = 2000.0
    forget_min_samples: int = 100
    forget_band: tuple = (0.025, 0.05)
    nomus_weight: float = 0.5
    clock: str = "wall"
    workers: int = 1

    def validate(self):
        if not self.method_grid:
            raise ConfigError("method_grid must not be empty")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        for cfg in self.method_grid:
            cfg.validate(len(self.train_recipe.hidden) + 1)
        self.gen_config.validate()
        self.train_recipe.validate()
        if not self.lr_scale > 0:
            raise ConfigError("lr_scale must be positive")
        if self.clock not in ("wall", "work"):
            raise ConfigError(f"clock must be 'wall' or 'work', got {self.clock!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        bad = set(self.report_formats) - {"json", "csv", "markdown"}
        if bad:
            raise ConfigError(f"unknown report formats {sorted(bad)}")
        return self

    def to_dict(self):
        return {
            "gen_config": self.gen_config.to_dict(),
            "train_recipe": self.train_recipe.to_dict(),
            "method_grid": [c.to_dict() for c in self.method_grid],
            "gum_weights": {"alpha": self.gum_weights.alpha, "beta": self.gum_weights.beta},
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "report_formats": list(self.report_formats),
            "lr_scale": self.lr_scale,
            "forget_min_samples": self.forget_min_samples,
            "forget_band": list(self.forget_band),
            "nomus_weight": self.nomus_weight,
            "clock": self.clock,
            "workers": self.workers,
        }

    def experiment_dict(self):
        """:meth:`to_dict` without the keys that only say where and how fast to run."""
        d = self.to_dict()
        for key in ("output_dir", "report_formats", "workers"):
            del d[key]
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "gen_config" in data:
            data["gen_config"] = GenConfig.from_dict(data["gen_config"])
        if "train_recipe" in data:
            data["train_recipe"] = TrainRecipe.from_dict(data["train_recipe"])
        if "method_grid" in data:
            data["method_grid"] = [c for e in data["method_grid"] for c in _method_entries(e)]
        if "gum_weights" in data:
            data["gum_weights"] = GumWeights(**data["gum_weights"])
        if "forget_band" in data:
            data["forget_band"] = tuple(data["forget_band"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _method_entries(entry):
    """A grid entry is a MethodConfig dict, optionally with ``"lrs": [...]`` to expand."""
    entry = dict(entry)
    lrs = entry.pop("lrs", None)
    try:
        if lrs is None:
            return [MethodConfig.from_dict(entry)]
        return [MethodConfig.from_dict({**entry, "lr": lr}) for lr in lrs]
    except TypeError as exc:
        raise ConfigError(f"bad method grid entry: {exc}") from exc


def load_config(path):
    """Read an ExperimentConfig from a JSON or YAML file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    return ExperimentConfig.from_dict(data)


@dataclass
class Prepared:
    """Data split and anchor models shared by every grid cell of one seed."""

    seed: int
    bundle: object
    retain: object
    forget: object
    request: object
    original: object
    gold: object
    original_record: EvalRecord
    gold_record: EvalRecord


def evaluate(model, bundle, forget, seed, method, lr, elapsed):
    c = bundle.config.n_classes
    return EvalRecord(
        method=method,
        lr=lr,
        seed=seed,
        f1_test=macro_f1(predict(model, bundle.test.X), bundle.test.y, c),
        f1_forget=macro_f1(predict(model, forget.X), forget.y, c),
        mia=mia_score(model, forget, bundle.test, seed),
        elapsed=elapsed,
    )


def prepare(config: ExperimentConfig, seed: int, recipe: Optional[TrainRecipe] = None) -> Prepared:
    """Generate data, pick the forget speakers, train original and gold."""
    bundle = generate(config.gen_config.replace(seed=seed))
    request = select_forget_speakers(bundle, config.forget_min_samples, config.forget_band, seed)
    retain, forget = split(bundle, request)
    recipe = replace(recipe or config.train_recipe, seed=seed)
    n_classes = bundle.config.n_classes
    try:
        original, el_o = train_original(recipe, bundle.train, n_classes, make_clock(config.clock))
        gold, el_g = train_original(recipe, retain, n_classes, make_clock(config.clock))
    except TrainingDivergedError as exc:
        raise BaselineTrainingError(f"baseline training failed for seed {seed}: {exc}") from exc
    o_rec = evaluate(original, bundle, forget, seed, "original", None, el_o)
    g_rec = evaluate(gold, bundle, forget, seed, "gold", None, el_g)
    weights = config.gum_weights
    o_rec.derive(g_rec, o_rec, weights, config.nomus_weight, baseline=True)
    g_rec.derive(g_rec, o_rec, weights, config.nomus_weight, baseline=True)
    log.info("seed %d: forget %d samples (%.4f), original %.3fs, gold %.3fs",
             seed, len(forget), request.fraction, el_o, el_g)
    return Prepared(seed, bundle, retain, forget, request, original, gold, o_rec, g_rec)


def run_cell(prep: Prepared, cfg: MethodConfig, lr_scale: float, clock_kind: str) -> EvalRecord:
    """Unlearn from the pristine original model and evaluate; divergence becomes a failed row."""
    run_cfg = replace(cfg, lr=cfg.lr * lr_scale, seed=prep.seed)
    try:
        outcome = run_method(prep.original, prep.retain, prep.forget, run_cfg, make_clock(clock_kind))
    except NumericOverflowError as exc:
        log.warning("%s lr=%g seed=%d diverged: %s", cfg.method, cfg.lr, prep.seed, exc)
        return EvalRecord(cfg.method, cfg.lr, prep.seed, failed=True, error=str(exc))
    return evaluate(outcome.model, prep.bundle, prep.forget, prep.seed, cfg.method, cfg.lr, outcome.elapsed)


def _cell_job(args):
    return run_cell(*args)


@dataclass
class BenchmarkReport:
    records: list
    config: dict
    runs: dict = field(default_factory=dict)  # seed -> forget split summary

    def best_rows(self):
        """Highest-GUM non-failed row per (seed, method); ties go to the smaller lr."""
        best = {}
        for r in self.records:
            if r.method in BASELINES or r.failed:
                continue
            key = (r.seed, r.method)
            cur = best.get(key)
            if cur is None or r.gum > cur.gum or (r.gum == cur.gum and r.lr < cur.lr):
                best[key] = r
        return best

    def methods(self):
        out = []
        for r in self.records:
            if r.method not in BASELINES and r.method not in out:
                out.append(r.method)
        return out

    def seeds(self):
        return sorted({r.seed for r in self.records})

    def baseline(self, seed, method):
        return next(r for r in self.records if r.seed == seed and r.method == method)

    def to_dict(self):
        best = self.best_rows()
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config,
            "runs": {str(k): v for k, v in sorted(self.runs.items())},
            "records": [r.to_dict() for r in self.records],
            "best": [{"seed": s, "method": m, "lr": best[(s, m)].lr} for (s, m) in sorted(best)],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data):
        if data.get("format") != REPORT_FORMAT:
            raise ConfigError("not a benchmark report")
        if data.get("version") != REPORT_VERSION:
            raise ConfigError(f"unsupported report version {data.get('version')}")
        return cls([EvalRecord.from_dict(r) for r in data["records"]], data["config"],
                   {int(k): v for k, v in data.get("runs", {}).items()})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def run_benchmark(config: ExperimentConfig) -> BenchmarkReport:
    config.validate()
    cells = [c for c in config.method_grid if c.method in METHODS]
    records, runs = [], {}
    for seed in config.seeds:
        prep = prepare(config, seed)
        runs[seed] = {
            "forget_speakers": sorted(prep.request.speakers),
            "forget_fraction": prep.request.fraction,
            "n_retain": len(prep.retain),
            "n_forget": len(prep.forget),
        }
        jobs = [(prep, cfg, config.lr_scale, config.clock) for cfg in cells]
        if config.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                cell_records = list(pool.map(_cell_job, jobs))
        else:
            cell_records = [_cell_job(j) for j in jobs]
        for rec in cell_records:
            rec.derive(prep.gold_record, prep.original_record, config.gum_weights, config.nomus_weight)
        records.extend([prep.original_record, prep.gold_record, *cell_records])
    return BenchmarkReport(records, config.experiment_dict(), runs)


@dataclass(frozen=True)
class SweepRow:
    lr: float
    f1_test: Optional[float]
    f1_forget: Optional[float]
    mia: Optional[float]
    failed: bool = False


def sweep_lr(config: ExperimentConfig, method: str, lrs, seed: Optional[int] = None, prep: Optional[Prepared] = None):
    """Run ``method`` at each lr (transformer-scale units) from the same original model."""
    lrs = list(lrs)
    if not lrs:
        raise ConfigError("need at least one learning rate")
    if lrs != sorted(lrs):
        raise ConfigError("learning rates must be sorted ascending")
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    base = next((c for c in config.method_grid if c.method == method), MethodConfig(method))
    prep = prep or prepare(config, config.seeds[0] if seed is None else seed)
    rows = []
    for lr in lrs:
        rec = run_cell(prep, replace(base, lr=lr), config.lr_scale, config.clock)
        rows.append(SweepRow(lr, rec.f1_test, rec.f1_forget, rec.mia, rec.failed))
    return rows


@dataclass(frozen=True)
class AblationRow:
    epochs: int
    f1_test: Optional[float]
    f1_test_gold: float
    mia_u: Optional[float]
    mia_g: float
    mia_o: float
    gum: Optional[float]


def epoch_ablation(config: ExperimentConfig, epoch_list, method_cfg: MethodConfig, seed: Optional[int] = None):
    """Retrain original and gold at each epoch budget, then unlearn with ``method_cfg``."""
    epoch_list = list(epoch_list)
    if not epoch_list or epoch_list != sorted(epoch_list):
        raise ConfigError("epoch list must be non-empty and ascending")
    seed = config.seeds[0] if seed is None else seed
    rows = []
    for epochs in epoch_list:
        prep = prepare(config, seed, replace(config.train_recipe, epochs=epochs))
        rec = run_cell(prep, method_cfg, config.lr_scale, config.clock)
        o, g = prep.original_record, prep.gold_record
        score = None
        if not rec.failed:
            score = gum(
                utility_u(rec.f1_test, g.f1_test),
                efficacy_e(rec.mia, g.mia, o.mia),
                efficiency_t(rec.elapsed, g.elapsed),
                config.gum_weights,
            )
        rows.append(AblationRow(epochs, rec.f1_test, g.f1_test, rec.mia, g.mia, o.mia, score))
    return rows
