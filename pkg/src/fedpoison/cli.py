"""Command line interface.

Verbs: train, attack, compare, sweep-ratio, sweep-eta, synth.  Every verb
accepts ``--config <json>`` (a flat key/value document) plus flag
overrides; flags win.  Exit code is nonzero on validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .attack import AttackMode, build_attack_spec, run_attack
from .data import (
    Federation,
    FederationSource,
    SourceKind,
    build_federation,
    write_csv_federation,
)
from .errors import FedPoisonError, ValidationError
from .harness import (
    ExperimentReport,
    evaluate_targets,
    export_report,
    run_comparison,
    sweep_ratio,
    sweep_step_size,
)
from .losses import LossKind
from .solver import SolverConfig, solve_lower

DEFAULTS = {
    "loss": "hinge",
    "m": 10,
    "d": 16,
    "n_min": 100,
    "n_max": 100,
    "correlation": 0.9,
    "noise_sigma": 0.2,
    "test_fraction": 0.3,
    "data_dir": None,
    "lambda1": 0.001,
    "lambda2": 0.001,
    "rounds": 50,
    "local_passes": 1,
    "omega_update_every": 1,
    "damping": 1.0,
    "mode": "direct",
    "ratio": 0.2,
    "eta1": 100.0,
    "radius": None,
    "outer_iters": 50,
    "rounds_per_iter": 1,
    "reps": 10,
    "seed": 0,
    "ratios": [0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
    "etas": [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
    "modes": ["direct", "indirect", "hybrid",
              "random_direct", "random_indirect", "random_hybrid"],
}


def _load_config(path):
    cfg = dict(DEFAULTS)
    if path:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config must be a flat JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"{path}: unknown config keys {sorted(unknown)}")
        cfg.update(doc)
    return cfg


def _apply_overrides(cfg, args):
    for key in ("mode", "ratio", "eta1", "seed", "reps", "loss", "data_dir",
                "outer_iters", "correlation", "noise_sigma"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _federation(cfg) -> Federation:
    loss = LossKind(cfg["loss"])
    if cfg["data_dir"]:
        source = FederationSource(
            kind=SourceKind.CSV_DIRECTORY, directory=cfg["data_dir"], csv_loss=loss
        )
    else:
        kind = (
            SourceKind.SYNTHETIC_CLASSIFICATION
            if loss is LossKind.HINGE
            else SourceKind.SYNTHETIC_REGRESSION
        )
        source = FederationSource(
            kind=kind,
            d=int(cfg["d"]),
            m=int(cfg["m"]),
            per_node_n=(int(cfg["n_min"]), int(cfg["n_max"])),
            correlation=float(cfg["correlation"]),
            noise_sigma=float(cfg["noise_sigma"]),
            test_fraction=float(cfg["test_fraction"]),
            seed=int(cfg["seed"]),
        )
    return build_federation(source)


def _solver_config(cfg) -> SolverConfig:
    return SolverConfig(
        lambda1=float(cfg["lambda1"]),
        lambda2=float(cfg["lambda2"]),
        rounds=int(cfg["rounds"]),
        local_passes=int(cfg["local_passes"]),
        omega_update_every=int(cfg["omega_update_every"]),
        seed=int(cfg["seed"]),
        damping=float(cfg["damping"]),
    )


def _export(report: ExperimentReport, args):
    if args.out:
        paths = export_report(report, args.out, fmt=args.format)
        for p in paths:
            print(f"wrote {p}")


def cmd_synth(cfg, args) -> int:
    fed = _federation(cfg)
    out = Path(args.out or "federation")
    paths = write_csv_federation(fed, out)
    print(f"wrote {len(paths)} node files to {out}")
    return 0


def cmd_train(cfg, args) -> int:
    fed = _federation(cfg)
    config = _solver_config(cfg)
    stats = []
    state = solve_lower(fed.train, None, fed.loss, config, on_round=stats.append)
    print(f"rounds={state.rounds_run} gap={state.final_gap:.3e}")
    metric = evaluate_targets(state, fed, fed.node_ids)
    name = "error_pct" if fed.loss is LossKind.HINGE else "rmse"
    print(f"test {name}={metric:.4f}")
    report = ExperimentReport(
        kind="train",
        config={k: cfg[k] for k in sorted(cfg) if not isinstance(cfg[k], (list, type(None)))},
        table={
            "train": {
                name: {"mean": metric, "std": 0.0, "values": [metric]},
                "final_gap": {"mean": state.final_gap, "std": 0.0,
                              "values": [state.final_gap]},
            }
        },
        traces={"train": [{
            "target_train_loss": [], "target_test_metric": [],
            "primal": [s.primal for s in stats], "dual": [s.dual for s in stats],
            "gap": [s.gap for s in stats],
        }]},
        omega=state.Omega.tolist(),
    )
    _export(report, args)
    return 0


def cmd_attack(cfg, args) -> int:
    fed = _federation(cfg)
    config = _solver_config(cfg)
    spec = build_attack_spec(
        AttackMode(cfg["mode"]), fed.node_ids,
        injection_ratio=float(cfg["ratio"]), seed=int(cfg["seed"]),
        radius_r=cfg["radius"], step_eta1=float(cfg["eta1"]),
        outer_iters=int(cfg["outer_iters"]),
    )
    state, injected, trace = run_attack(
        fed, spec, config, rounds_per_iter=int(cfg["rounds_per_iter"])
    )
    metric = evaluate_targets(state, fed, spec.targets)
    name = "error_pct" if fed.loss is LossKind.HINGE else "rmse"
    n_injected = sum(injected[l].n for l in injected)
    print(f"mode={spec.mode.value} targets={list(spec.targets)} sources={list(spec.sources)} "
          f"injected={n_injected}")
    print(f"target test {name}={metric:.4f} final_gap={trace.final_gap:.3e}")
    report = ExperimentReport(
        kind="attack",
        config={
            "loss": fed.loss.value, "mode": spec.mode.value,
            "ratio": spec.injection_ratio, "eta1": spec.step_eta1,
            "outer_iters": spec.outer_iters, "seed": spec.seed,
            "targets": list(spec.targets), "sources": list(spec.sources),
            "solver": vars(config).copy(),
        },
        table={spec.mode.value: {name: {"mean": metric, "std": 0.0, "values": [metric]}}},
        traces={spec.mode.value: [trace.to_dict()]},
        omega=state.Omega.tolist(),
    )
    _export(report, args)
    return 0


def cmd_compare(cfg, args) -> int:
    fed = _federation(cfg)
    report = run_comparison(
        fed, [AttackMode(m) for m in cfg["modes"]], int(cfg["reps"]),
        _solver_config(cfg), ratio=float(cfg["ratio"]), eta1=float(cfg["eta1"]),
        outer_iters=int(cfg["outer_iters"]), seed=int(cfg["seed"]),
        radius=cfg["radius"], rounds_per_iter=int(cfg["rounds_per_iter"]),
        threads=args.threads,
    )
    metric = report.config["metric"]
    for mode in report.config["modes"]:
        cell = report.table[mode][metric]
        print(f"{mode:>16}: {metric} = {cell['mean']:.3f} +- {cell['std']:.3f}")
    _export(report, args)
    return 0


def cmd_sweep_ratio(cfg, args) -> int:
    fed = _federation(cfg)
    report = sweep_ratio(
        fed, [AttackMode(m) for m in cfg["modes"] if not m.startswith("random")],
        [float(r) for r in cfg["ratios"]], _solver_config(cfg),
        eta1=float(cfg["eta1"]), outer_iters=int(cfg["outer_iters"]),
        seed=int(cfg["seed"]), radius=cfg["radius"],
        rounds_per_iter=int(cfg["rounds_per_iter"]), threads=args.threads,
    )
    metric = report.config["metric"]
    for mode, row in sorted(report.table.items()):
        keys = sorted(row, key=float)
        vals = " ".join(f"{k}:{row[k][metric]:.3f}" for k in keys)
        print(f"{mode:>16}: {vals}")
    _export(report, args)
    return 0


def cmd_sweep_eta(cfg, args) -> int:
    fed = _federation(cfg)
    report = sweep_step_size(
        fed, [AttackMode(m) for m in cfg["modes"] if not m.startswith("random")],
        [float(e) for e in cfg["etas"]], _solver_config(cfg),
        ratio=float(cfg["ratio"]), outer_iters=min(int(cfg["outer_iters"]), 20),
        reps=int(cfg["reps"]), seed=int(cfg["seed"]), radius=cfg["radius"],
        rounds_per_iter=int(cfg["rounds_per_iter"]), threads=args.threads,
    )
    for mode, row in sorted(report.table.items()):
        if mode == "none":
            print(f"{'baseline':>16}: {row['baseline']['mean']:.3f}")
            continue
        vals = " ".join(f"{k}:{row[k]['mean']:.3f}" for k in sorted(row, key=float))
        print(f"{mode:>16}: {vals}")
    _export(report, args)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "attack": cmd_attack,
    "compare": cmd_compare,
    "sweep-ratio": cmd_sweep_ratio,
    "sweep-eta": cmd_sweep_eta,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedpoison",
        description="Federated multi-task training and optimal poisoning attacks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat JSON config file")
        p.add_argument("--mode", default=None, choices=[m.value for m in AttackMode])
        p.add_argument("--ratio", type=float, default=None)
        p.add_argument("--eta1", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--outer-iters", dest="outer_iters", type=int, default=None)
        p.add_argument("--loss", default=None,
                       choices=[k.value for k in LossKind])
        p.add_argument("--data-dir", dest="data_dir", default=None)
        p.add_argument("--correlation", type=float, default=None)
        p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=None)
        p.add_argument("--out", default=None, help="output file or directory")
        p.add_argument("--format", default="json", choices=["json", "csv"])
        p.add_argument("--threads", default=None,
                       help=f"worker cap (default: ${{{'FEDPOISON_THREADS'}}} or 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(_load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except FedPoisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
