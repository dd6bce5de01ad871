"""Single entry point: train, evaluate, ablate, replay, plan, diagnose, serve.

Exit codes: 0 success, 1 domain error, 2 usage error.  Every run writes its
resolved config and outputs under one directory; the output root comes from
--out or the COTRANSPORT_OUT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import signal
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError, resolve_out_dir
from .scenario import ScenarioError, load_scenario

DEFAULT_EVAL_SCENARIOS = ["S11", "S12", "S13", "S21", "S22", "S23", "S31", "S32", "S33"]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file merged over the defaults")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY.PATH=VALUE", help="dotted-path config override")
    p.add_argument("--out", help="output directory (default: $COTRANSPORT_OUT/<cmd>-<stamp>)")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cotransport",
                                 description="planar two-agent cooperative-transport testbed")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="CTDE training on one scenario")
    _add_common(p)
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None,
                   help="stop after N optimizer iterations (development runs)")

    p = sub.add_parser("train-single", help="single-learner baseline (scripted partner)")
    _add_common(p)
    p.add_argument("--scenario", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--total-steps", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)

    p = sub.add_parser("eval", help="scenario suite with SR statistics")
    _add_common(p)
    p.add_argument("--scenario", action="append", default=None,
                   help="scenario id (repeatable); default: the nine-map matrix")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--episodes", type=int, default=None, help="episodes per seed")

    p = sub.add_parser("ablate", help="layer ablations on one scenario")
    _add_common(p)
    p.add_argument("--scenario", default="S33")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--episodes", type=int, default=20)

    p = sub.add_parser("replay", help="verify a replay log reproduces its successors")
    _add_common(p)
    p.add_argument("--file", required=True)
    p.add_argument("--scenario", required=True)

    p = sub.add_parser("plan", help="emit the consensus anchor sequence for a scenario")
    _add_common(p)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("diag-grad", help="finite-difference gradient oracle")
    _add_common(p)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("diag-prop1", help="partner-drift critic diagnostic")
    _add_common(p)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="human-in-the-loop session server")
    _add_common(p)
    p.add_argument("--scenario", default="S21")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8732)
    p.add_argument("--static", default=None, help="browser client directory to serve")

    return ap


def _trainer_defaults() -> dict:
    from .training import TrainConfig

    return dataclasses.asdict(TrainConfig())


def _resolved_config(args, defaults: dict) -> dict:
    tree = cfgmod.merge_config(defaults, args.config, args.overrides)
    return tree


def _out_dir(args, name: str) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    out = resolve_out_dir(args.out, f"{name}-{stamp}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args, single: bool) -> int:
    from .schema import write_schema
    from .training import TrainConfig, train

    defaults = _trainer_defaults()
    if single:
        defaults["single_agent"] = True
    tree = _resolved_config(args, defaults)
    for flag in ("scenario", "seed", "total_steps"):
        v = getattr(args, flag if flag != "scenario" else "scenario")
        if v is not None:
            tree["scenario_id" if flag == "scenario" else flag] = v
    if args.print_config:
        print(json.dumps(tree, indent=2))
        return 0
    out = _out_dir(args, "train-single" if single else "train")
    tree["out_dir"] = str(out)
    cfg = cfgmod.dataclass_from_dict(TrainConfig, tree)
    write_schema(out / "schema.json")

    stop = {"flag": False}

    def _graceful(signum, frame):
        stop["flag"] = True

    old = signal.signal(signal.SIGINT, _graceful)
    try:
        def on_iter(trainer, stats):
            print(f"iter {stats['iteration']} step {stats['step']} "
                  f"return {stats['return_mean']:.2f} sr {stats['sr']:.2f} lr {stats['lr']:.2e}")

        train(cfg, max_iterations=args.iterations, on_iteration=on_iter,
              stop_flag=lambda: stop["flag"])
    finally:
        signal.signal(signal.SIGINT, old)
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import EVAL_EPISODES_PER_SEED, CheckpointPolicies, render_suite_text, run_suite

    tree = _resolved_config(args, {"seeds": args.seeds,
                                   "episodes_per_seed": args.episodes or EVAL_EPISODES_PER_SEED})
    if args.print_config:
        print(json.dumps(tree, indent=2))
        return 0
    out = _out_dir(args, "eval")
    policies = CheckpointPolicies.from_dir(args.ckpt)
    ids = args.scenario or DEFAULT_EVAL_SCENARIOS
    report = run_suite(ids, policies, n_seeds=int(tree["seeds"]),
                       episodes_per_seed=int(tree["episodes_per_seed"]))
    (out / "report.json").write_text(report.to_json())
    text = render_suite_text(report)
    (out / "report.txt").write_text(text + "\n")
    print(text)
    print(f"report in {out}")
    return 0


def cmd_ablate(args) -> int:
    from .evaluation import ablate

    out = _out_dir(args, "ablate")
    report = ablate(args.scenario, args.ckpt, n_seeds=args.seeds,
                    episodes_per_seed=args.episodes)
    (out / "ablation.json").write_text(json.dumps(report, indent=2))
    for variant, stats in report["variants"].items():
        print(f"{variant:>13}: SR {stats['sr_mean']:.1f} +- {stats['sr_std']:.1f}")
    print(f"report in {out}")
    return 0


def cmd_replay(args) -> int:
    from .replay import verify_replay
    from .sim import Simulator

    scenario = load_scenario(args.scenario)
    n = verify_replay(args.file, Simulator(scenario))
    print(f"verified {n} transitions bit-exactly")
    return 0


def cmd_plan(args) -> int:
    from .env import plan_anchors
    from .scenario import rasterize
    from .sim import Simulator

    scenario = load_scenario(args.scenario)
    grid = rasterize(scenario)
    world = Simulator(scenario).reset(args.seed)
    seq = plan_anchors(scenario, grid, world, spacing=1.0, merge_radius=0.5)
    print(json.dumps({"scenario": scenario.id, "spacing": seq.spacing,
                      "anchors": [list(a) for a in seq.anchors]}))
    return 0


def cmd_diag_grad(args) -> int:
    from .diagnostics import gradient_oracle

    report = gradient_oracle(args.instances, seed=args.seed)
    print(json.dumps({k: (float(v) if hasattr(v, "item") else v) for k, v in report.items()},
                     indent=2))
    if report["max_rel_err"] >= 1e-4:
        print("FAIL: max relative error >= 1e-4", file=sys.stderr)
        return 1
    print(f"PASS: max relative error {report['max_rel_err']:.3e} < 1e-4")
    return 0


def cmd_diag_prop1(args) -> int:
    from .training import prop1_diagnostic

    report = prop1_diagnostic(n_steps=args.steps, seed=args.seed)
    print(json.dumps({"max_joint_drift": report["max_joint_drift"],
                      "max_oracle_gap": report["max_oracle_gap"],
                      "n_steps": report["n_steps"]}, indent=2))
    if report["max_joint_drift"] > 1e-12 or report["max_oracle_gap"] > 1e-12:
        print("FAIL: drift diagnostic outside tolerance", file=sys.stderr)
        return 1
    print("PASS: joint-conditioned targets are drift-free; marginalized drift matches the oracle")
    return 0


def cmd_serve(args) -> int:
    from .evaluation import CheckpointPolicies
    from .hitl import SessionConfig, SessionServer

    scenario = load_scenario(args.scenario)
    policies = CheckpointPolicies.from_dir(args.ckpt)
    out = _out_dir(args, "serve")
    server = SessionServer(scenario, policies, args.port, SessionConfig(),
                           static_dir=args.static, log_path=out / "session_log.jsonl")
    print(f"serving {scenario.id} on 127.0.0.1:{server.port} (logs in {out})")
    server.serve_forever()
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(args, single=False)
        if args.command == "train-single":
            return cmd_train(args, single=True)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "ablate":
            return cmd_ablate(args)
        if args.command == "replay":
            return cmd_replay(args)
        if args.command == "plan":
            return cmd_plan(args)
        if args.command == "diag-grad":
            return cmd_diag_grad(args)
        if args.command == "diag-prop1":
            return cmd_diag_prop1(args)
        if args.command == "serve":
            return cmd_serve(args)
        ap.error(f"unknown command {args.command!r}")
    except (ScenarioError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # domain failures exit 1, never a traceback to the user
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
