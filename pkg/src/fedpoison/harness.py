"""Metrics, experiment orchestration and report serialisation.

Every experiment is driven by seeds embedded in the report, so re-running
with the same configuration reproduces the numbers bit-identically.  A
no-attack baseline is always included for reference.  Reports export to a
single JSON document or to a bundle of plot-ready CSVs; floats are fixed
to nine significant digits so exports are diffable.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import AttackMode, at2fl_run, build_attack_spec, target_train_loss
from .data import Federation
from .errors import ValidationError
from .losses import LossKind
from .solver import SolverConfig

THREADS_ENV = "FEDPOISON_THREADS"


def classification_error(predictions, labels) -> float:
    """Percentage of misclassified sign predictions."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValidationError("predictions and labels must be equal-length and non-empty")
    return 100.0 * float(np.mean(predictions != labels))


def rmse(predictions, labels) -> float:
    """Root mean squared error."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValidationError("predictions and labels must be equal-length and non-empty")
    return float(np.sqrt(np.mean((predictions - labels) ** 2)))


def evaluate_targets(state, fed: Federation, targets) -> float:
    """Pooled test metric over the target nodes (Error % or RMSE)."""
    margins, labels = [], []
    for t in targets:
        node = fed.test[t]
        if node is None or node.n == 0:
            continue
        margins.append(node.features @ state.W[:, t])
        labels.append(node.labels)
    if not margins:
        raise ValidationError("no test data on the target nodes")
    margins = np.concatenate(margins)
    labels = np.concatenate(labels)
    if fed.loss is LossKind.HINGE:
        return classification_error(np.where(margins >= 0.0, 1.0, -1.0), labels)
    return rmse(margins, labels)


@dataclass
class ExperimentReport:
    """Self-describing experiment output: config, per-run values, traces."""

    kind: str
    config: dict
    table: dict = field(default_factory=dict)
    per_run: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    omega: list = field(default_factory=list)
    comm: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _quantize(
            {
                "kind": self.kind,
                "config": self.config,
                "table": self.table,
                "per_run": self.per_run,
                "traces": self.traces,
                "omega": self.omega,
                "comm": self.comm,
            }
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentReport":
        return cls(
            kind=doc["kind"],
            config=doc["config"],
            table=doc["table"],
            per_run=doc["per_run"],
            traces=doc["traces"],
            omega=doc["omega"],
            comm=doc["comm"],
        )


def _quantize(obj):
    """Fix floats to 9 significant digits for deterministic exports."""
    if isinstance(obj, float):
        return float(f"{obj:.9g}")
    if isinstance(obj, (np.floating,)):
        return float(f"{float(obj):.9g}")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _quantize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_quantize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _quantize(obj.tolist())
    return obj


def _max_workers(threads=None) -> int:
    if threads is None:
        threads = os.environ.get(THREADS_ENV, "1")
    workers = int(threads)
    return max(1, workers)


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def _attack_job(fed, mode, spec_seed, solver_config, ratio, eta1, outer_iters,
                radius, rounds_per_iter, targets=None):
    """One attack run; returns the final metrics plus the trace."""
    spec = build_attack_spec(
        mode, fed.node_ids, injection_ratio=ratio, seed=spec_seed,
        targets=targets, radius_r=radius, step_eta1=eta1, outer_iters=outer_iters,
    )
    cfg = replace(solver_config, seed=spec_seed)
    state, injected, trace = at2fl_run(
        fed.train, spec, cfg, fed.loss, test_nodes=fed.test,
        rounds_per_iter=rounds_per_iter,
    )
    return {
        "seed": spec_seed,
        "targets": list(spec.targets),
        "sources": list(spec.sources),
        "metric": evaluate_targets(state, fed, spec.targets),
        "train_loss": target_train_loss(fed.loss, state.W, fed.train, spec.targets),
        "final_gap": trace.final_gap,
        "omega": state.Omega,
        "trace": trace,
    }


def run_comparison(fed: Federation, modes, reps: int, solver_config: SolverConfig,
                   ratio: float = 0.2, eta1: float = 100.0, outer_iters: int = 50,
                   seed: int = 0, radius=None, rounds_per_iter: int = 1,
                   threads=None) -> ExperimentReport:
    """Attack-mode comparison, mean +- std over ``reps`` seeded repetitions.

    Repetition r of every mode shares the seed ``seed + r`` (and therefore
    the same target draw), which pairs the comparisons.  The no-attack
    baseline is always included.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    modes = list(modes)
    if AttackMode.NONE not in modes:
        modes = [AttackMode.NONE] + modes
    metric_name = "error" if fed.loss is LossKind.HINGE else "rmse"
    jobs = [(mode, seed + rep) for mode in modes for rep in range(reps)]

    def job(args):
        mode, spec_seed = args
        try:
            return _attack_job(
                fed, mode, spec_seed, solver_config, ratio, eta1, outer_iters,
                radius, rounds_per_iter,
            )
        except Exception as exc:  # a failed repetition is recorded, not fatal
            return {"seed": spec_seed, "failed": f"{type(exc).__name__}: {exc}"}

    with ThreadPoolExecutor(max_workers=_max_workers(threads)) as pool:
        results = list(pool.map(job, jobs))
    if all("failed" in res for res in results):
        raise ValidationError(
            "every repetition failed; first error: " + results[0]["failed"]
        )

    report = ExperimentReport(
        kind="comparison",
        config={
            "loss": fed.loss.value,
            "modes": [m.value for m in modes],
            "reps": reps,
            "ratio": ratio,
            "eta1": eta1,
            "outer_iters": outer_iters,
            "rounds_per_iter": rounds_per_iter,
            "seed": seed,
            "metric": metric_name,
            "solver": vars(solver_config).copy(),
        },
    )
    omega = None
    for (mode, _), res in zip(jobs, results):
        name = mode.value
        if "failed" in res:
            report.per_run.setdefault(name, []).append(
                {"seed": res["seed"], "failed": res["failed"]}
            )
            continue
        report.per_run.setdefault(name, []).append(
            {
                "seed": res["seed"],
                "targets": res["targets"],
                "sources": res["sources"],
                metric_name: res["metric"],
                "train_loss": res["train_loss"],
                "final_gap": res["final_gap"],
            }
        )
        report.traces.setdefault(name, []).append(res["trace"].to_dict())
        comm = report.comm.setdefault(name, {"bytes_up": 0, "bytes_down": 0})
        comm["bytes_up"] += res["trace"].bytes_up
        comm["bytes_down"] += res["trace"].bytes_down
        if mode is AttackMode.NONE and omega is None:
            omega = res["omega"]
    for name, runs in report.per_run.items():
        done = [r for r in runs if "failed" not in r]
        if not done:
            continue
        mean, std = _mean_std([r[metric_name] for r in done])
        tl_mean, tl_std = _mean_std([r["train_loss"] for r in done])
        report.table[name] = {
            metric_name: {"mean": mean, "std": std, "values": [r[metric_name] for r in done]},
            "train_loss": {
                "mean": tl_mean,
                "std": tl_std,
                "values": [r["train_loss"] for r in done],
            },
        }
    report.omega = omega.tolist() if omega is not None else []
    return report


def sweep_ratio(fed: Federation, modes, ratios, solver_config: SolverConfig,
                eta1: float = 100.0, outer_iters: int = 50, seed: int = 0,
                radius=None, rounds_per_iter: int = 1, threads=None) -> ExperimentReport:
    """One attack run per (mode, injection ratio); ratio 0 is the baseline."""
    modes = [m for m in modes if m is not AttackMode.NONE]
    if not modes:
        raise ValidationError("sweep needs at least one attack mode")
    metric_name = "error" if fed.loss is LossKind.HINGE else "rmse"
    jobs = [(mode, float(r)) for mode in modes for r in ratios]

    def job(args):
        mode, ratio = args
        return _attack_job(
            fed, mode, seed, solver_config, ratio, eta1, outer_iters,
            radius, rounds_per_iter,
        )

    with ThreadPoolExecutor(max_workers=_max_workers(threads)) as pool:
        results = list(pool.map(job, jobs))

    baseline = _attack_job(
        fed, AttackMode.NONE, seed, solver_config, 0.0, eta1, outer_iters,
        radius, rounds_per_iter,
    )
    report = ExperimentReport(
        kind="ratio_sweep",
        config={
            "loss": fed.loss.value,
            "modes": [m.value for m in modes],
            "ratios": [float(r) for r in ratios],
            "eta1": eta1,
            "outer_iters": outer_iters,
            "rounds_per_iter": rounds_per_iter,
            "seed": seed,
            "metric": metric_name,
            "solver": vars(solver_config).copy(),
        },
    )
    report.table["none"] = {
        "0": {metric_name: baseline["metric"], "train_loss": baseline["train_loss"]}
    }
    report.per_run["none"] = [
        {
            "seed": baseline["seed"],
            "targets": baseline["targets"],
            metric_name: baseline["metric"],
            "train_loss": baseline["train_loss"],
        }
    ]
    for (mode, ratio), res in zip(jobs, results):
        name = mode.value
        report.table.setdefault(name, {})[f"{ratio:g}"] = {
            metric_name: res["metric"],
            "train_loss": res["train_loss"],
        }
        report.per_run.setdefault(name, []).append(
            {
                "seed": res["seed"],
                "ratio": ratio,
                "targets": res["targets"],
                "sources": res["sources"],
                metric_name: res["metric"],
                "train_loss": res["train_loss"],
            }
        )
    report.omega = baseline["omega"].tolist()
    return report


def sweep_step_size(fed: Federation, modes, etas, solver_config: SolverConfig,
                    ratio: float = 0.2, outer_iters: int = 20, reps: int = 5,
                    seed: int = 0, radius=None, rounds_per_iter: int = 1,
                    threads=None) -> ExperimentReport:
    """Metric at a fixed outer iteration for each ascent step size."""
    modes = [m for m in modes if m is not AttackMode.NONE]
    if not modes:
        raise ValidationError("sweep needs at least one attack mode")
    metric_name = "error" if fed.loss is LossKind.HINGE else "rmse"
    jobs = [
        (mode, float(eta), seed + rep)
        for mode in modes
        for eta in etas
        for rep in range(reps)
    ]

    def job(args):
        mode, eta, spec_seed = args
        return _attack_job(
            fed, mode, spec_seed, solver_config, ratio, eta, outer_iters,
            radius, rounds_per_iter,
        )

    with ThreadPoolExecutor(max_workers=_max_workers(threads)) as pool:
        results = list(pool.map(job, jobs))
    baselines = [
        _attack_job(
            fed, AttackMode.NONE, seed + rep, solver_config, 0.0, 1.0,
            outer_iters, radius, rounds_per_iter,
        )
        for rep in range(reps)
    ]

    report = ExperimentReport(
        kind="eta_sweep",
        config={
            "loss": fed.loss.value,
            "modes": [m.value for m in modes],
            "etas": [float(e) for e in etas],
            "ratio": ratio,
            "reps": reps,
            "outer_iters": outer_iters,
            "rounds_per_iter": rounds_per_iter,
            "seed": seed,
            "metric": metric_name,
            "solver": vars(solver_config).copy(),
        },
    )
    base_mean, base_std = _mean_std([b["metric"] for b in baselines])
    report.table["none"] = {
        "baseline": {
            "mean": base_mean,
            "std": base_std,
            "values": [b["metric"] for b in baselines],
        }
    }
    grouped = {}
    for (mode, eta, spec_seed), res in zip(jobs, results):
        grouped.setdefault((mode.value, eta), []).append(res)
    for (name, eta), group in grouped.items():
        mean, std = _mean_std([g["metric"] for g in group])
        report.table.setdefault(name, {})[f"{eta:g}"] = {
            "mean": mean,
            "std": std,
            "values": [g["metric"] for g in group],
        }
        report.per_run.setdefault(name, []).extend(
            {
                "seed": g["seed"],
                "eta": eta,
                metric_name: g["metric"],
                "train_loss": g["train_loss"],
            }
            for g in group
        )
    report.omega = baselines[0]["omega"].tolist()
    return report


def export_report(report: ExperimentReport, path, fmt: str = "json") -> list:
    """Write a report as one JSON document or a bundle of CSVs.

    Returns the written paths.  Output bytes are deterministic for a fixed
    report: keys are sorted and floats carry nine significant digits.
    """
    path = Path(path)
    doc = report.to_dict()
    try:
        if fmt == "json":
            if path.suffix != ".json":
                path = path / f"{report.kind}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            try:
                text = json.dumps(doc, sort_keys=True, indent=2, allow_nan=False)
            except ValueError as exc:
                raise ValidationError(
                    f"{path}: report contains non-finite values ({exc})"
                ) from None
            path.write_text(text + "\n", encoding="utf-8")
            return [path]
        if fmt != "csv":
            raise ValidationError(f"unknown export format {fmt!r}")
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot write report to {path}: {exc}") from None
    written = []

    def _write(name, header, rows):
        p = path / name
        with open(p, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(p)

    # summary table(s)
    rows = []
    for mode in sorted(doc["table"]):
        entry = doc["table"][mode]
        for key in sorted(entry, key=str):
            cell = entry[key]
            if isinstance(cell, dict) and "mean" in cell:
                rows.append([mode, key, _fmt(cell["mean"]), _fmt(cell.get("std", 0.0))])
            elif isinstance(cell, dict):
                for metric, value in sorted(cell.items()):
                    rows.append([mode, f"{key}/{metric}", _fmt(value), ""])
    _write("summary.csv", ["mode", "key", "value", "std"], rows)

    for mode in sorted(doc["traces"]):
        rows = []
        for rep, tr in enumerate(doc["traces"][mode]):
            n = len(tr["gap"])
            for i in range(n):
                rows.append(
                    [
                        rep,
                        i,
                        _fmt(tr["target_train_loss"][i]),
                        _fmt(tr["target_test_metric"][i])
                        if i < len(tr["target_test_metric"])
                        else "",
                        _fmt(tr["primal"][i]),
                        _fmt(tr["dual"][i]),
                        _fmt(tr["gap"][i]),
                    ]
                )
        _write(
            f"trace_{mode}.csv",
            ["rep", "iteration", "target_train_loss", "target_test_metric",
             "primal", "dual", "gap"],
            rows,
        )
    if doc["omega"]:
        _write(
            "omega.csv",
            [f"node_{j}" for j in range(len(doc["omega"]))],
            [[_fmt(v) for v in row] for row in doc["omega"]],
        )
    (path / "config.json").write_text(
        json.dumps(doc["config"], sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    written.append(path / "config.json")
    return written


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def import_report(path) -> ExperimentReport:
    """Load a JSON report written by export_report."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ExperimentReport.from_dict(doc)
