"""Experiment runner.

Subcommands:

* ``generate``  -- emit a task DAG (or a full scenario) as JSON
* ``simulate``  -- evaluate a scenario + assignment, emit the timeline
* ``schedule``  -- run a named baseline scheduler
* ``oracle``    -- exhaustive enumeration under the assignment cap
* ``train``     -- federated meta-training (or independent PPO with --no-fed)
* ``adapt``     -- fast-adaptation sweeps over subtask counts and topologies
* ``report``    -- re-render figures from a run directory's delimited output

Exit codes: 0 success, 2 configuration error, 3 input-data error,
4 enumeration cap exceeded. All outputs are UTF-8 with floats at 17
significant digits; every command honors ``--seed`` end to end.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import jsonio
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    default_config,
    parse_config,
    serialize_config,
    validate_config,
)
from .dag import dag_to_dict, generate_dag
from .fed import (
    FedConfig,
    fast_adapt,
    region_distributions,
    seed_for,
    train_federated,
    train_independent,
    _child_seed,
)
from .jsonio import format_float
from .neural.params import init_params, load_params, save_params
from .neural.policy import registry_for
from .rl import PpoConfig
from .schedulers import SCHEDULER_KINDS, CapExceededError, exhaustive, schedule
from .sim import (
    AssignmentError,
    aet,
    plan_from_dict,
    plan_to_dict,
    sample_scenario,
    scenario_from_dict,
    scenario_to_dict,
    simulate,
    timeline_to_dict,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_CAP = 4

ADAPT_SUBTASK_COUNTS = (10, 15, 25, 30)
ADAPT_TOPOLOGIES = (
    ("Topology1", 0.7, 0.4),
    ("Topology2", 0.7, 0.6),
    ("Topology3", 0.9, 0.4),
    ("Topology4", 0.9, 0.6),
)
SCHEDULER_VARIANTS = ("all-local", "all-edge-rr", "random", "greedy-eft")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vecsched",
        description="Dependency-aware task offloading workbench for vehicular edge computing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, help="key=value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )

    p = sub.add_parser("generate", help="emit a DAG (or scenario) JSON document")
    add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument(
        "--scenario", action="store_true",
        help="emit a full sampled scenario instead of a single DAG",
    )

    p = sub.add_parser("simulate", help="evaluate an assignment on a scenario")
    add_common(p)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--assignment", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("schedule", help="run a baseline scheduler")
    add_common(p)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--kind", choices=SCHEDULER_KINDS, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cap", type=int, default=10**6)

    p = sub.add_parser("oracle", help="exhaustive enumeration under the cap")
    add_common(p)
    p.add_argument("--scenario", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--cap", type=int, default=10**6)

    p = sub.add_parser("train", help="federated meta-training")
    add_common(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--no-fed", action="store_true", help="independent per-server PPO")
    p.add_argument("--no-gat", action="store_true", help="self-only attention ablation")
    p.add_argument("--workers", type=int, help="worker threads for server adaptation")

    p = sub.add_parser("adapt", help="fast-adaptation sweeps")
    add_common(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--params", type=Path, help="meta parameters; trains first when omitted")
    p.add_argument("--steps", type=int, help="override adapt.steps (m')")
    p.add_argument("--replicates", type=int, default=3, help="scenarios per sweep family")

    p = sub.add_parser("report", help="re-render figures for a run directory")
    p.add_argument("--run", type=Path, required=True)

    return parser


def load_run_config(args) -> RunConfig:
    cfg = default_config()
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from err
        cfg = parse_config(text, base=cfg)
    cfg = apply_overrides(cfg, list(getattr(args, "overrides", [])))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "no_gat", False):
        cfg = replace(cfg, no_gat=True)
    if getattr(args, "no_fed", False):
        cfg = replace(cfg, no_fed=True)
    if getattr(args, "workers", None) is not None:
        cfg = replace(cfg, fed=replace(cfg.fed, workers=args.workers))
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, adapt_steps=args.steps)
    validate_config(cfg)
    return cfg


def _read_json(path: Path):
    try:
        return jsonio.load(path)
    except (OSError, ValueError) as err:
        raise ValueError(f"{path}: {err}") from err


def cmd_generate(args) -> int:
    cfg = load_run_config(args)
    if args.scenario:
        scn = sample_scenario(cfg.scenario, seed=cfg.seed)
        jsonio.dump(scenario_to_dict(scn), args.out, indent=2)
    else:
        dag = generate_dag(replace(cfg.scenario.dag, rng_seed=cfg.seed))
        jsonio.dump(dag_to_dict(dag), args.out, indent=2)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scn = scenario_from_dict(_read_json(args.scenario))
    plan = plan_from_dict(_read_json(args.assignment))
    timeline = simulate(scn, plan)
    jsonio.dump(timeline_to_dict(timeline), args.out, indent=2)
    print(f"AET {format_float(timeline.aet())} s -> {args.out}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    cfg = load_run_config(args)
    scn = scenario_from_dict(_read_json(args.scenario))
    plan = schedule(scn, args.kind, seed=cfg.seed, cap=args.cap)
    jsonio.dump(plan_to_dict(plan), args.out, indent=2)
    print(f"{args.kind}: AET {format_float(aet(scn, plan))} s -> {args.out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_run_config(args)
    del cfg  # oracle needs no defaults beyond the cap and input file
    scn = scenario_from_dict(_read_json(args.scenario))
    plan = exhaustive(scn, cap=args.cap)
    jsonio.dump(plan_to_dict(plan), args.out, indent=2)
    print(f"oracle: AET {format_float(aet(scn, plan))} s -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")

    policy_cfg = cfg.policy_config()
    fed_cfg = cfg.fed_config()
    registry = registry_for(policy_cfg)
    metrics_path = out_dir / "metrics.jsonl"
    rounds_path = out_dir / "rounds.jsonl"

    with open(metrics_path, "w", encoding="utf-8") as metrics, open(
        rounds_path, "w", encoding="utf-8"
    ) as rounds:
        if cfg.no_fed:
            def hook(server, report):
                metrics.write(
                    jsonio.dumps(
                        {
                            "update": report.round_index,
                            "mean_AET": report.holdout_aet,
                            "actor_loss": report.actor_loss,
                            "critic_loss": report.critic_loss,
                            "kl": report.kl,
                            "entropy": report.entropy,
                            "series": f"server{server}",
                        }
                    )
                    + "\n"
                )
                rounds.write(
                    jsonio.dumps(
                        {
                            "round": report.round_index,
                            "server": server,
                            "delta_norms": list(report.delta_norms),
                            "wall_time_s": report.wall_time_s,
                        }
                    )
                    + "\n"
                )

            thetas, _ = train_independent(fed_cfg, policy_cfg, round_hook=hook)
            for k, theta in enumerate(thetas):
                save_params(
                    out_dir / f"params_server{k}.bin", theta, registry,
                    extra={"master_seed": cfg.seed},
                )
        else:
            def hook(report):
                metrics.write(
                    jsonio.dumps(
                        {
                            "update": report.round_index,
                            "mean_AET": report.holdout_aet,
                            "actor_loss": report.actor_loss,
                            "critic_loss": report.critic_loss,
                            "kl": report.kl,
                            "entropy": report.entropy,
                        }
                    )
                    + "\n"
                )
                rounds.write(
                    jsonio.dumps(
                        {
                            "round": report.round_index,
                            "delta_norms": list(report.delta_norms),
                            "holdout_ci": report.holdout_ci,
                            "wall_time_s": report.wall_time_s,
                        }
                    )
                    + "\n"
                )

            theta, _ = train_federated(
                fed_cfg, policy_cfg, round_hook=hook, checkpoint_dir=out_dir
            )
            save_params(
                out_dir / "meta_params.bin", theta, registry,
                extra={"master_seed": cfg.seed, "rounds": fed_cfg.outer_rounds},
            )

    if cfg.figures and fed_cfg.outer_rounds > 0:
        from .reporting import render_training_figure

        render_training_figure(metrics_path, out_dir / "training_curves.png")
    print(f"training artifacts in {out_dir}")
    return EXIT_OK


def _adapt_families(cfg: RunConfig):
    base = cfg.scenario
    for n in ADAPT_SUBTASK_COUNTS:
        yield f"n={n}", replace(base, dag=replace(base.dag, n=n))
    for label, density, fat in ADAPT_TOPOLOGIES:
        yield label, replace(base, dag=replace(base.dag, density=density, fat=fat, n=20))


def cmd_adapt(args) -> int:
    cfg = load_run_config(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")

    policy_cfg = cfg.policy_config()
    registry = registry_for(policy_cfg)
    if args.params:
        theta_meta, _ = load_params(args.params, registry)
    else:
        theta_meta, _ = train_federated(cfg.fed_config(), policy_cfg)
    theta_scratch = init_params(registry, _child_seed(seed_for(cfg.seed, 90)))

    steps = cfg.adapt_steps
    replicates = max(1, args.replicates)
    rows: list[tuple[str, str, int, float, float]] = []
    for family_index, (label, dist) in enumerate(_adapt_families(cfg)):
        curves = {"meta": [], "scratch": []}
        sched_aets = {kind: [] for kind in SCHEDULER_VARIANTS}
        for rep in range(replicates):
            scn = sample_scenario(
                dist, seed=_child_seed(seed_for(cfg.seed, 91, family_index, rep))
            )
            for variant, theta0 in (("meta", theta_meta), ("scratch", theta_scratch)):
                _, curve = fast_adapt(
                    theta0, scn, steps, policy_cfg, cfg.ppo,
                    seed_for(cfg.seed, 92, family_index, rep, 0 if variant == "meta" else 1),
                )
                curves[variant].append(curve)
            for kind in SCHEDULER_VARIANTS:
                plan = schedule(scn, kind, seed=cfg.seed)
                sched_aets[kind].append(aet(scn, plan))
        for variant in ("meta", "scratch"):
            stacked = np.array(curves[variant])  # replicates x (steps + 1)
            for step in range(steps + 1):
                rows.append(
                    (label, variant, step, *_mean_ci(stacked[:, step]))
                )
        for kind in SCHEDULER_VARIANTS:
            mean, ci = _mean_ci(np.array(sched_aets[kind]))
            for step in range(steps + 1):
                rows.append((label, kind, step, mean, ci))

    csv_path = out_dir / "adapt.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("family,variant,step,mean_aet,ci95\n")
        for label, variant, step, mean, ci in rows:
            fh.write(f"{label},{variant},{step},{format_float(mean)},{format_float(ci)}\n")

    if cfg.figures:
        from .reporting import render_adaptation_figure

        render_adaptation_figure(csv_path, out_dir / "adaptation_curves.png")
    print(f"adaptation artifacts in {out_dir}")
    return EXIT_OK


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    if values.size <= 1:
        return float(values.mean()), 0.0
    return (
        float(values.mean()),
        1.96 * float(values.std(ddof=1)) / float(np.sqrt(values.size)),
    )


def cmd_report(args) -> int:
    run = Path(args.run)
    rendered = []
    metrics = run / "metrics.jsonl"
    if metrics.exists():
        from .reporting import render_training_figure

        rendered.append(render_training_figure(metrics, run / "training_curves.png"))
    adapt_csv = run / "adapt.csv"
    if adapt_csv.exists():
        from .reporting import render_adaptation_figure

        rendered.append(render_adaptation_figure(adapt_csv, run / "adaptation_curves.png"))
    if not rendered:
        raise ValueError(f"{run}: no metrics.jsonl or adapt.csv to render")
    for path in rendered:
        print(f"rendered {path}")
    return EXIT_OK


_COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "schedule": cmd_schedule,
    "oracle": cmd_oracle,
    "train": cmd_train,
    "adapt": cmd_adapt,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as err:
        print(f"cap exceeded: {err}", file=sys.stderr)
        return EXIT_CAP
    except (AssignmentError, ValueError, OSError) as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
