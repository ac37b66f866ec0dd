"""Training loop with best-validation snapshotting, architecture search, the
training-size by seed sweep, and the simulation-time savings table."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import nn
from .dataset import CabinDataset, SplitSpec, sample_first_k
from .errors import ConfigurationError, NumericError, SurrogateError
from .metrics import MetricReport, evaluate_model, mean_std

log = logging.getLogger(__name__)

PAPER_K_VALUES = (50, 100, 150, 200, 500, 1000, 1500, 2000)
DESK_K_VALUES = (50, 100, 200, 500)
GRID_DEPTHS = (5, 10)
GRID_WIDTHS = (64, 128, 256)
SIM_HOURS_PER_CASE = 0.75

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 300
    k: int = 200
    seed: int = 1
    depth: int = 10
    width: int = 128
    eval_every: int = 5
    model: str = "mlp"
    dtype: str = "float64"

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigurationError("max_epochs, batch_size and eval_every must be >= 1")
        if self.k < 1:
            raise ConfigurationError(f"k must be positive, got {self.k}")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.model not in ("mlp", "linear"):
            raise ConfigurationError(f"model must be 'mlp' or 'linear', got {self.model!r}")
        if self.dtype not in _DTYPES:
            raise ConfigurationError(f"dtype must be one of {sorted(_DTYPES)}, got {self.dtype!r}")

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        """Full-scale settings: 2000 epochs, validation after every epoch."""
        return cls(**{"max_epochs": 2000, "eval_every": 1, **overrides})

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def digest(self) -> str:
        return nn.config_digest(self.to_text())


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines into typed TrainConfig keyword arguments."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in types:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        try:
            out[key] = {"float": float, "int": int, "str": str}[types[key]](value)
        except ValueError:
            raise ConfigurationError(f"line {lineno}: bad value {value!r} for {key}") from None
    return out


def load_config(path: str | Path, **overrides) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    kw = parse_config_text(text)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


@dataclass
class RunResult:
    kind: str
    k: int
    seed: int
    depth: int
    width: int
    best_epoch: int = 0
    best_val_mse: float = float("nan")
    val: MetricReport | None = None
    test: MetricReport | None = None
    train_seconds: float = 0.0
    history: list[dict] = field(default_factory=list)
    model: nn.Model | None = None
    checkpoint: str | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def summary(self) -> dict:
        return {
            "kind": self.kind, "k": self.k, "seed": self.seed,
            "depth": self.depth, "width": self.width,
            "best_epoch": self.best_epoch, "best_val_mse": self.best_val_mse,
            "val_ssim_mean": self.val.ssim_mean if self.val else None,
            "val_ssim_std": self.val.ssim_std if self.val else None,
            "val_mse_mean": self.val.mse_mean if self.val else None,
            "test_ssim_mean": self.test.ssim_mean if self.test else None,
            "test_ssim_std": self.test.ssim_std if self.test else None,
            "test_mse_mean": self.test.mse_mean if self.test else None,
            "train_seconds": self.train_seconds,
            "checkpoint": self.checkpoint,
            "error": self.error,
        }


def build_model(config: TrainConfig, input_dim: int, output_dim: int) -> nn.Model:
    dtype = _DTYPES[config.dtype]
    if config.model == "linear":
        return nn.init_linear(input_dim, output_dim, config.seed, dtype)
    return nn.init_model(config.depth, config.width, input_dim, output_dim, config.seed, dtype)


def _val_mse(model: nn.Model, x: np.ndarray, y: np.ndarray) -> float:
    return nn.mse_loss(nn.model_forward(model, x).prediction, y)


def train(config: TrainConfig, dataset: CabinDataset, split: SplitSpec, *,
          log_path: str | Path | None = None,
          batch_hook: Callable[[np.ndarray], None] | None = None) -> RunResult:
    """Train one model on the first ``k`` shuffled training cases.

    Each epoch reshuffles the subset and walks it in mini-batches (the final
    partial batch is kept). Validation MSE is computed every ``eval_every``
    epochs and at the last epoch; the parameters from the first epoch that
    reaches the minimum are returned and scored.
    """
    if config.k > len(split.train_ids):
        raise ConfigurationError(f"k={config.k} exceeds the {len(split.train_ids)} training cases")
    dtype = _DTYPES[config.dtype]
    ids = np.asarray(sample_first_k(split, config.seed, config.k))
    x_all = dataset.inputs.astype(dtype)
    y_all = dataset.targets.astype(dtype)
    x_val, y_val = x_all[split.val_ids], y_all[split.val_ids]

    model = build_model(config, dataset.inputs.shape[1], dataset.output_dim)
    params = model.parameters()
    state = nn.AdamState.for_params(params, config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])

    result = RunResult(config.model, config.k, config.seed,
                       config.depth if config.model == "mlp" else 1,
                       config.width if config.model == "mlp" else 0)
    best_model, best_mse, best_epoch = None, np.inf, 0
    log_file = open(log_path, "w") if log_path is not None else None
    start = time.perf_counter()
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = ids[rng.permutation(len(ids))]
            total = 0.0
            for b, lo in enumerate(range(0, len(order), config.batch_size)):
                batch_ids = order[lo:lo + config.batch_size]
                if batch_hook is not None:
                    batch_hook(batch_ids)
                xb, yb = x_all[batch_ids], y_all[batch_ids]
                acts = nn.model_forward(model, xb)
                loss = nn.mse_loss(acts.prediction, yb)
                if not np.isfinite(loss):
                    raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
                grads = nn.model_backward(model, acts, yb)
                nn.adam_step(params, grads, state)
                total += loss * len(batch_ids)
            record = {"epoch": epoch, "train_mse": total / len(ids)}
            if epoch % config.eval_every == 0 or epoch == config.max_epochs:
                val_mse = _val_mse(model, x_val, y_val) if len(split.val_ids) else total / len(ids)
                record["val_mse"] = val_mse
                if val_mse < best_mse:
                    best_model, best_mse, best_epoch = model.copy(), val_mse, epoch
            result.history.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
    finally:
        if log_file is not None:
            log_file.close()
    result.train_seconds = time.perf_counter() - start
    result.model = best_model
    result.best_epoch = best_epoch
    result.best_val_mse = float(best_mse)
    result.val = evaluate_model(best_model, split.val_ids, dataset)
    result.test = evaluate_model(best_model, split.test_ids, dataset)
    return result


# ---------------------------------------------------------------- grid search


def select_architecture(test_ssim: Mapping[tuple[int, int], Mapping[int, float]],
                        param_counts: Mapping[tuple[int, int], int] | None = None) -> tuple[int, int]:
    """Pick the (depth, width) with the most per-k best test SSIMs.

    Tied maxima at a given k all score a win. Ties in win count go to the
    higher mean SSIM, then to the smaller parameter count.
    """
    if not test_ssim:
        raise ConfigurationError("empty search table")
    combos = list(test_ssim)
    ks = sorted({k for row in test_ssim.values() for k in row})
    wins = {c: 0 for c in combos}
    for k in ks:
        scores = {c: test_ssim[c][k] for c in combos if k in test_ssim[c]}
        top = max(scores.values())
        for c, s in scores.items():
            if s == top:
                wins[c] += 1
    counts = param_counts or {}

    def rank(c):
        return (-wins[c], -float(np.mean(list(test_ssim[c].values()))), counts.get(c, 0))

    return min(combos, key=rank)


def mlp_param_count(depth: int, width: int, input_dim: int, output_dim: int) -> int:
    return (input_dim + 1) * width + (depth - 2) * (width + 1) * width + (width + 1) * output_dim


def grid_search(dataset: CabinDataset, split: SplitSpec, k_values: Sequence[int],
                base: TrainConfig | None = None, depths: Sequence[int] = GRID_DEPTHS,
                widths: Sequence[int] = GRID_WIDTHS, seed: int = 0,
                jobs: int = 1) -> tuple[tuple[int, int], dict]:
    base = base or TrainConfig()
    configs = [replace(base, model="mlp", depth=d, width=w, k=k, seed=seed)
               for d in depths for w in widths for k in k_values]
    table: dict[tuple[int, int], dict[int, float]] = {(d, w): {} for d in depths for w in widths}
    for cfg, res in zip(configs, _run_many(configs, dataset, split, jobs)):
        if res.failed:
            log.warning("grid run depth=%d width=%d k=%d failed: %s", cfg.depth, cfg.width, cfg.k, res.error)
            continue
        table[(cfg.depth, cfg.width)][cfg.k] = res.test.ssim_mean
    counts = {(d, w): mlp_param_count(d, w, dataset.inputs.shape[1], dataset.output_dim)
              for d, w in table}
    return select_architecture({c: r for c, r in table.items() if r}, counts), table


# ---------------------------------------------------------------- sweep

_WORKER: dict = {}


def _init_worker(dataset, split, out):
    _WORKER.update(dataset=dataset, split=split, out=out)


def run_name(cfg: TrainConfig) -> str:
    return f"{cfg.model}_k{cfg.k}_s{cfg.seed}"


def _safe_train(cfg: TrainConfig) -> RunResult:
    dataset, split, out = _WORKER["dataset"], _WORKER["split"], _WORKER["out"]
    log_path = ckpt = None
    if out is not None:
        log_path = Path(out) / "logs" / f"{run_name(cfg)}.jsonl"
        ckpt = Path(out) / "checkpoints" / f"{run_name(cfg)}.ckpt"
    try:
        res = train(cfg, dataset, split, log_path=log_path)
    except SurrogateError as exc:
        return RunResult(cfg.model, cfg.k, cfg.seed, cfg.depth, cfg.width, error=str(exc))
    if ckpt is not None:
        nn.save_checkpoint(ckpt, res.model, cfg.digest())
        res.checkpoint = str(ckpt.relative_to(out))
    return res


def _run_many(configs: Sequence[TrainConfig], dataset, split, jobs: int = 1,
              out: str | Path | None = None) -> list[RunResult]:
    if out is not None:
        (Path(out) / "logs").mkdir(parents=True, exist_ok=True)
        (Path(out) / "checkpoints").mkdir(parents=True, exist_ok=True)
    if jobs <= 1:
        _init_worker(dataset, split, out)
        results = []
        for cfg in configs:
            res = _safe_train(cfg)
            log.info("%s done: best_epoch=%s test_ssim=%s", run_name(cfg), res.best_epoch,
                     res.test.ssim_mean if res.test else res.error)
            results.append(res)
        return results
    with ProcessPoolExecutor(jobs, initializer=_init_worker, initargs=(dataset, split, out)) as ex:
        return list(ex.map(_safe_train, configs))


@dataclass
class SweepReport:
    results: list[RunResult]
    k_values: list[int]
    seeds: list[int]
    kinds: list[str]

    def cell(self, kind: str, k: int, seed: int) -> RunResult:
        for r in self.results:
            if (r.kind, r.k, r.seed) == (kind, k, seed):
                return r
        raise KeyError((kind, k, seed))

    def ssim_stats(self, kind: str, split: str, k: int) -> tuple[float, float]:
        vals = [getattr(r, split).ssim_mean for r in self.results
                if r.kind == kind and r.k == k and not r.failed]
        return mean_std(vals) if vals else (float("nan"), float("nan"))

    def training_hours(self, kind: str = "mlp") -> dict[int, float]:
        out = {}
        for k in self.k_values:
            secs = [r.train_seconds for r in self.results if r.kind == kind and r.k == k and not r.failed]
            if secs:
                out[k] = float(np.mean(secs)) / 3600.0
        return out

    def table1_rows(self) -> list[dict]:
        rows = []
        for kind, label in (("linear", "baseline"), ("mlp", "ours")):
            if kind not in self.kinds:
                continue
            for split in ("val", "test"):
                stats = [self.ssim_stats(kind, split, k) for k in self.k_values]
                for stat, idx in (("mean", 0), ("std", 1)):
                    row = {"model": label, "split": split, "stat": stat}
                    row.update({str(k): f"{s[idx]:.6f}" for k, s in zip(self.k_values, stats)})
                    rows.append(row)
        return rows

    def write(self, out: str | Path, per_case_sim_cost: float = SIM_HOURS_PER_CASE,
              total_cases: int = 2160) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "runs.jsonl", "w") as f:
            for r in self.results:
                f.write(json.dumps(r.summary()) + "\n")
        for kind in self.kinds:
            write_run_csv(out / f"runs_{kind}.csv", [r for r in self.results if r.kind == kind])
        write_table1(out / "table1.csv", self.table1_rows(), self.k_values)
        rows = timing_report(self.training_hours("mlp"), per_case_sim_cost, total_cases)
        write_table2(out / "table2.csv", rows)

    @classmethod
    def from_summaries(cls, summaries: Iterable[dict]) -> "SweepReport":
        """Rebuild a report (metrics and timings only) from ``runs.jsonl`` records."""
        results = []
        for s in summaries:
            r = RunResult(s["kind"], s["k"], s["seed"], s["depth"], s["width"],
                          best_epoch=s["best_epoch"], best_val_mse=s["best_val_mse"],
                          train_seconds=s["train_seconds"], checkpoint=s.get("checkpoint"),
                          error=s.get("error"))
            if r.error is None:
                for split in ("val", "test"):
                    rep = MetricReport([], [], [])
                    rep.ssim_mean = s[f"{split}_ssim_mean"]
                    rep.ssim_std = s[f"{split}_ssim_std"]
                    rep.mse_mean = s[f"{split}_mse_mean"]
                    setattr(r, split, rep)
            results.append(r)
        return cls(results,
                   sorted({r.k for r in results}),
                   sorted({r.seed for r in results}),
                   [k for k in ("mlp", "linear") if any(r.kind == k for r in results)])


RUN_CSV_HEADER = ("k", "seed", "split", "ssim_mean", "ssim_std", "mse_mean", "best_epoch")


def write_run_csv(path: Path, results: Sequence[RunResult]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RUN_CSV_HEADER)
        for r in results:
            for split in ("val", "test"):
                rep = getattr(r, split)
                if r.failed or rep is None:
                    w.writerow((r.k, r.seed, split, "failed", "failed", "failed", ""))
                else:
                    w.writerow((r.k, r.seed, split, f"{rep.ssim_mean:.6f}", f"{rep.ssim_std:.6f}",
                                f"{rep.mse_mean:.8g}", r.best_epoch))


def write_table1(path: Path, rows: list[dict], k_values: Sequence[int]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, ["model", "split", "stat"] + [str(k) for k in k_values],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_table2(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, TIMING_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: (r[c] if c == "k" else f"{r[c]:.4f}") for c in TIMING_COLUMNS})


def sweep(dataset: CabinDataset, split: SplitSpec, k_values: Sequence[int] = DESK_K_VALUES,
          seeds: Sequence[int] = (1, 2, 3), kinds: Sequence[str] = ("mlp", "linear"),
          base: TrainConfig | None = None, jobs: int = 1,
          out: str | Path | None = None) -> SweepReport:
    """Train and score every (kind, k, seed) cell; failures are kept as marked cells."""
    base = base or TrainConfig()
    configs = [replace(base, model=kind, k=k, seed=s) for kind in kinds for k in k_values for s in seeds]
    results = _run_many(configs, dataset, split, jobs, out)
    report = SweepReport(results, list(k_values), list(seeds), list(kinds))
    if out is not None:
        report.write(out)
    return report


# ---------------------------------------------------------------- timing

TIMING_COLUMNS = ("k", "simulation_hours", "training_hours", "total_hours", "reduction_pct")


def timing_report(training_hours: Mapping[int, float], per_case_sim_cost: float = SIM_HOURS_PER_CASE,
                  total_cases: int = 2160) -> list[dict]:
    """Hours spent simulating ``k`` cases plus training, against simulating every case."""
    if per_case_sim_cost <= 0 or total_cases < 1:
        raise ConfigurationError("per-case cost and total case count must be positive")
    full = total_cases * per_case_sim_cost
    rows = []
    for k in sorted(training_hours):
        sim = k * per_case_sim_cost
        total = sim + training_hours[k]
        rows.append({
            "k": k,
            "simulation_hours": sim,
            "training_hours": training_hours[k],
            "total_hours": total,
            "reduction_pct": 100.0 * (1.0 - total / full),
        })
    return rows
