"""Command line: ``run``, ``train`` and ``scenarios list``.

Config files are JSON documents. A run config holds ScenarioConfig fields; a
train config holds TrainConfig fields plus an optional ``scenario`` (preset
name or inline ScenarioConfig object) and ``preset: "full_scale"``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (ABLATIONS, PRESETS, WORKERS_ENV, ScenarioConfig, emit_metrics, emit_trace,
                      get_scenario, run_batch)


def _ablation(text: str) -> str:
    name = text.replace("-", "_")
    if name not in ABLATIONS:
        raise argparse.ArgumentTypeError(f"ablation must be one of full, no-de, no-e (got {text!r})")
    return name


def cmd_run(args) -> int:
    sc = get_scenario(args.scenario)
    changes = {}
    if args.episodes is not None:
        changes["episodes"] = args.episodes
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.policy is not None:
        changes["policy"] = args.policy
    if args.ablation is not None:
        changes["ablation"] = args.ablation
    sc = replace(sc, **changes)
    sc.validate()
    report, results = run_batch(sc, record_first=not args.no_trace, workers=args.workers)
    out = Path(args.out)
    emit_metrics(report, out)
    if not args.no_trace:
        emit_trace(results[0], out / "trace.jsonl")
    tt = "n/a" if report.transportation_time is None else f"{report.transportation_time:.1f}"
    print(f"{sc.name} [{sc.ablation}, {sc.policy}] episodes={report.episodes} "
          f"success_rate={report.success_rate:.3f} transportation_time={tt}")
    return 0


def _train_inputs(doc: dict):
    from .learning import TrainConfig
    doc = dict(doc)
    scen = doc.pop("scenario", "tiny")
    preset = doc.pop("preset", None)
    if isinstance(scen, dict):
        scenario = ScenarioConfig.from_dict(scen)
    else:
        scenario = get_scenario(scen)
    if preset == "full_scale":
        cfg = TrainConfig.full_scale(**doc)
    elif preset is None:
        cfg = TrainConfig.from_dict(doc)
    else:
        raise ValueError(f"unknown training preset {preset!r}")
    return cfg, scenario


def cmd_train(args) -> int:
    from .learning import train
    doc = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg, scenario = _train_inputs(doc)
    res = train(cfg, scenario, args.out)
    if res.curve:
        tail = res.curve[-50:]
        mean = sum(c["mean"] for c in tail) / len(tail)
        print(f"trained {len(res.curve)} episodes; mean reward over last {len(tail)} = {mean:.3f}")
    else:
        print("trained 0 episodes")
    return 0


def cmd_scenarios(args) -> int:
    for name, sc in PRESETS.items():
        groups = ", ".join(f"{g['count']}x{g['weights']}" for g in sc.weight_mix)
        extra = f" additions={sc.additions}" if sc.additions else ""
        print(f"{name:18s} N={sc.n_initial} objects: {groups} steps={sc.steps}{extra}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="transport-alloc",
                                description="Multi-robot transport task allocation simulator.",
                                epilog=f"{WORKERS_ENV} caps the number of worker processes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a batch of episodes and write metrics")
    r.add_argument("--scenario", required=True, help="preset name or JSON scenario file")
    r.add_argument("--episodes", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--policy", help="scripted | random | checkpoint:PATH")
    r.add_argument("--ablation", type=_ablation, help="full | no-de | no-e")
    r.add_argument("--out", required=True)
    r.add_argument("--workers", type=int, help=f"overrides {WORKERS_ENV}")
    r.add_argument("--no-trace", action="store_true", help="skip the first-episode trace")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="train policy networks")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("scenarios", help="scenario presets")
    s.add_argument("action", choices=["list"])
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
