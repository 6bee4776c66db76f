"""Command line: ``run``, ``eval`` and ``render``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Optional

from safedrive.decision.backends import BackendConfig, BackendKind, make_backend
from safedrive.harness.metrics import evaluate_paths
from safedrive.harness.render import render
from safedrive.harness.runner import EXIT_CONFIG, ConfigError, RunConfig, config_from_dict, run_episode
from safedrive.harness.trace import TraceError
from safedrive.sim import Fault
from safedrive.verifier import VerifierConfig
from safedrive.world import ScenarioError, load_scenario

log = logging.getLogger("safedrive")

# the injected fault pushes an agent past its envelope's upper bound
FAULT_ACCEL = 4.0


def bundled_scenarios() -> list[str]:
    root = resources.files("safedrive.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    if name_or_path in bundled_scenarios():
        return Path(str(resources.files("safedrive.scenarios").joinpath(name_or_path + ".json")))
    raise ConfigError(f"no scenario file or bundled scenario named {name_or_path!r}")


def _trial_path(out: Path, i: int, trials: int) -> Path:
    if trials == 1:
        return out
    return out.with_name(f"{out.stem}.trial{i}{out.suffix}")


def _run_one(args: dict) -> int:
    scenario = load_scenario(args["scenario"], seed=args["seed"])
    cfg: RunConfig = args["cfg"]
    if args["fault"]:
        victim = min((a.id for a in scenario.world.agents), default=None)
        if victim is None:
            raise ConfigError("fault injection needs at least one agent")
        cfg = replace(cfg, fault=Fault(victim, FAULT_ACCEL))
    result = run_episode(scenario, make_backend(cfg.backend), cfg, args["out"])
    log.info("%s: %s after %d steps (exit %d)", args["out"], result.status, len(result.sim.records), result.exit_code)
    return result.exit_code


def _config(ns) -> RunConfig:
    cfg = RunConfig()
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from exc
        cfg = config_from_dict(data, cfg)
    b = cfg.behavior
    if ns.k is not None:
        b = replace(b, verifier=replace(b.verifier, k=ns.k))
    be = cfg.backend
    try:
        if ns.backend == "remote" or be.kind is BackendKind.Remote:
            be = BackendConfig(
                BackendKind.Remote, ns.endpoint or be.endpoint, ns.model or be.model, be.temperature,
                ns.timeout or be.timeout, ns.api_key_env or be.api_key_env,
            )
            if not os.environ.get(be.api_key_env):
                raise ConfigError(f"environment variable {be.api_key_env} is not set")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return replace(cfg, case=ns.case, steps=ns.steps, behavior=b, backend=be)


def cmd_run(ns) -> int:
    cfg = _config(ns)
    scenario = resolve_scenario(ns.scenario)
    base = load_scenario(scenario).world.rng_seed if ns.seed is None else ns.seed  # also fails early on a bad file
    out = Path(ns.out)
    jobs = [
        {"scenario": scenario, "seed": base + i, "cfg": cfg,
         "out": _trial_path(out, i, ns.trials), "fault": ns.inject_containment_fault}
        for i in range(ns.trials)
    ]
    if ns.trials == 1:
        return _run_one(jobs[0])
    with ProcessPoolExecutor(max_workers=min(ns.trials, os.cpu_count() or 1)) as pool:
        codes = list(pool.map(_run_one, jobs))
    return max(codes)


def cmd_eval(ns) -> int:
    report = evaluate_paths(ns.traces)
    print(report.table())
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if ns.json:
        Path(ns.json).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_render(ns) -> int:
    n = render(ns.trace, ns.out)
    log.info("wrote %d rows to %s", n, ns.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safedrive", description="Verified lane-level planning on a three-lane highway.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run closed-loop episodes and write traces")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name (" + ", ".join(bundled_scenarios()) + ")")
    r.add_argument("--case", type=int, choices=(1, 2), default=1, help="1: lane selection, 2: state-machine lane change")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--out", required=True, help="trace path (line-delimited JSON)")
    r.add_argument("--trials", type=int, default=1)
    r.add_argument("--config", help="JSON file overriding mpc/verifier/failsafe/behavior/backend options")
    r.add_argument("--k", type=int, default=None, help="planning horizon in control steps")
    r.add_argument("--backend", choices=("scripted", "remote"), default="scripted")
    r.add_argument("--endpoint")
    r.add_argument("--model")
    r.add_argument("--timeout", type=float, default=None)
    r.add_argument("--api-key-env", default=None)
    r.add_argument("--inject-containment-fault", action="store_true", help=argparse.SUPPRESS)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="aggregate metrics over traces")
    e.add_argument("traces", nargs="+")
    e.add_argument("--json", help="write the report as JSON here")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("render", help="emit a plot-ready CSV series")
    d.add_argument("trace")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_render)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(ns, "trials", 1) < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return ns.func(ns)
    except (ConfigError, ScenarioError, TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
