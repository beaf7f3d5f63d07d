"""Command-line front end: ``mumdp <solve|dual|simulate|learn|sweep|oracle> FILE``.

One instance file drives every subcommand.  Flags override file values, and
the effective configuration (defaults and overrides filled in) is written
next to the outputs as ``effective_config.json``; running the same
subcommand on that file reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .dual import PricingConfig, price_iterate
from .instances import AGENTS, BASELINES, ConfigError, instance_from_config, materialize, validate_config
from .learning import LearningConfig
from .mdp import JointModel, SolverError, solve_joint, solve_local
from .model import LocalModel, StateBudgetError
from .oracles import finite_horizon_joint, finite_horizon_local
from .sim import (AgentError, ExactAgent, FixedForesightedAgent, JointAgent, MyopicAgent, MyopicDualAgent,
                  PriorityAgent, StandardLearnerAgent, fixed_allocation_values, run_episode)

OUTPUT_ENV = "MUMDP_OUTPUT_DIR"
DEFAULT_OUTPUT = "mumdp_out"

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def parse_sweep(text: str) -> list[float]:
    """``a:b:step`` -> [a, a + step, ..., b] (inclusive, rounded to 12 digits)."""
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got {text!r}") from None
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("sweep needs a <= b and step > 0")
    n = int(round((b - a) / step)) + 1
    return [round(a + k * step, 12) for k in range(n)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("instance", help="instance file (JSON)")
    common.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    common.add_argument("--seed", type=int)
    common.add_argument("--horizon", type=int)

    p = argparse.ArgumentParser(prog="mumdp", description="Multi-user foresighted video transmission MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="priced local value iteration; value/policy tables")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--user", type=int, help="user index (default: every user)")

    sub.add_parser("dual", parents=[common], help="price iteration on the dual function")

    for name, hlp in (("simulate", "run an episode with exact, baseline or learning agents"),
                      ("learn", "run an online learning episode")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--agents", choices=AGENTS)
        s.add_argument("--baseline", choices=["none", *BASELINES])
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--cap", type=int)

    s = sub.add_parser("sweep", parents=[common], help="fixed-allocation sweep: foresighted vs baseline")
    s.add_argument("--baseline", choices=["priority"])
    s.add_argument("--sweep-x", type=parse_sweep)

    s = sub.add_parser("oracle", parents=[common], help="compare solvers with brute-force oracles")
    s.add_argument("--lambda", dest="lam", type=float)
    return p


def effective_config(args, doc: dict) -> dict:
    """Materialised copy of ``doc`` with the command-line overrides applied."""
    validate_config(doc)
    cfg = materialize(doc)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.horizon is not None:
        cfg["horizon"] = args.horizon
    cmd = args.command
    lam = getattr(args, "lam", None)
    if cmd in ("solve", "oracle") and lam is not None:
        cfg["solver"]["lambda"] = lam
    if cmd == "solve" and args.user is not None:
        cfg["solver"]["user"] = args.user
    if cmd in ("simulate", "learn"):
        if args.agents is not None:
            cfg["simulation"]["agents"] = args.agents
        if cmd == "learn" and cfg["simulation"]["agents"] not in ("learner", "learner-standard"):
            cfg["simulation"]["agents"] = "learner"
        if args.baseline is not None:
            cfg["simulation"]["baseline"] = args.baseline
        if lam is not None:
            if cfg["simulation"]["agents"].startswith("learner"):
                cfg["learning"]["lambda"] = lam
            else:
                cfg["simulation"]["lambda"] = lam
        if args.cap is not None:
            cfg["learning"]["cap"] = args.cap
    if cmd == "sweep" and args.sweep_x is not None:
        cfg["simulation"]["sweep_x"] = args.sweep_x
    validate_config(cfg)
    return cfg


def output_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(inst, cfg, out: Path) -> list:
    sv = cfg["solver"]
    models = inst.models(sv["budget"])
    users = [sv["user"]] if "user" in sv else range(inst.M)
    report = []
    for i in users:
        if i >= inst.M:
            raise ConfigError(f"invalid instance file at solver/user: no user with index {i}")
        m = models[i]
        sol = solve_local(m, sv["lambda"], inst.alpha, inst.M, sv["tol"], sv["max_iter"])
        name = inst.users[i].name
        io.write_values(out / f"values_{name}.csv", sol)
        report += [(f"{name}.states", m.n_states), (f"{name}.iterations", sol.iterations),
                   (f"{name}.residual", sol.residual), (f"{name}.initial_value", sol.initial_value())]
    return [("lambda", float(sv["lambda"]))] + report


def cmd_dual(inst, cfg, out: Path) -> list:
    pc = PricingConfig(**cfg["pricing"])
    models = inst.models(cfg["solver"]["budget"])
    lam, trace = price_iterate(models, pc, inst.alpha)
    io.write_trace(out / "price_trace.csv", trace)
    best = int(np.argmin(trace.dual_value))
    return [("lambda_star", lam), ("dual_value", trace.dual_value[best]), ("final_lambda", trace.lam[-1]),
            ("iterations", len(trace) - 1), ("converged", trace.converged)]


def _price(inst, cfg, models) -> tuple[float, list]:
    lam = cfg["simulation"]["lambda"]
    if lam != "optimal":
        return float(lam), []
    lam, trace = price_iterate(models, PricingConfig(**cfg["pricing"]), inst.alpha)
    return lam, [("price_iterations", len(trace) - 1)]


def _agent(kind: str, inst, cfg, models):
    sc, sv = cfg["simulation"], cfg["solver"]
    if kind == "exact":
        lam, extra = _price(inst, cfg, models)
        sols = [solve_local(m, lam, inst.alpha, inst.M, sv["tol"], sv["max_iter"]) for m in models]
        return ExactAgent(sols), [("lambda", lam)] + extra
    if kind == "joint":
        joint = JointModel(models, budget=sv["budget"])
        return JointAgent(joint, solve_joint(joint, inst.alpha, sv["tol"], sv["max_iter"])), []
    if kind == "myopic":
        return MyopicAgent(), []
    if kind == "myopic-dual":
        return MyopicDualAgent(sc["dual_tol"], sc["dual_beta0"], sc["dual_max_iters"]), []
    if kind == "priority":
        if len(sc["fixed_x"]) != inst.M:
            raise ConfigError("invalid instance file at simulation/fixed_x: one fraction per user is required")
        return PriorityAgent(sc["fixed_x"]), [("fixed_x", list(map(float, sc["fixed_x"])))]
    learning = LearningConfig.from_dict(cfg["learning"])
    if kind == "learner-standard":
        return StandardLearnerAgent(learning), []
    return learning, []


def _run(kind: str, inst, cfg, models, out: Path) -> tuple[list, float]:
    agent, report = _agent(kind, inst, cfg, models)
    names = [u.name for u in inst.users]
    log = run_episode(models, names, inst.alpha, agent, inst.horizon, inst.seed, label=kind,
                      check_grid=kind != "priority")
    io.write_metrics(out / kind, log, models)
    if isinstance(agent, MyopicDualAgent):
        io.write_csv(out / kind / "dual_iterations.csv", ["slot", "iterations", "lambda"],
                     zip(range(log.horizon), agent.iterations, agent.prices))
        its = np.array(agent.iterations) if agent.iterations else np.zeros(1)
        report += [("mean_dual_iterations", float(its.mean())), ("max_dual_iterations", int(its.max()))]
    du = log.discounted_utility()
    report = [(f"{kind}.{k}", v) for k, v in report]
    report += [(f"{kind}.{n}.discounted_utility", float(d)) for n, d in zip(names, du)]
    report += [(f"{kind}.total_discounted_utility", log.total_discounted()),
               (f"{kind}.violations", log.violations()),
               (f"{kind}.final_lambda", float(log.lam[0, -1]) if log.horizon else float("nan"))]
    return report, log.total_discounted()


def cmd_simulate(inst, cfg, out: Path) -> list:
    models = inst.models(cfg["solver"]["budget"])
    sc = cfg["simulation"]
    report, total = _run(sc["agents"], inst, cfg, models, out)
    if sc["baseline"] != "none":
        rep_b, total_b = _run(sc["baseline"], inst, cfg, models, out)
        report += rep_b + [("difference", total - total_b)]
    return report


def cmd_sweep(inst, cfg, out: Path) -> list:
    sv, sc = cfg["solver"], cfg["simulation"]
    models = inst.models(sv["budget"])
    rows = []
    for x in sc["sweep_x"]:
        for i, (u, m) in enumerate(zip(inst.users, models)):
            fore, prio = fixed_allocation_values(m, x, inst.alpha)
            fixed = LocalModel(u.gop, u.channel, (x,), sv["budget"], u.initial)
            sol = solve_local(fixed, 0.0, inst.alpha, tol=sv["tol"], max_iter=sv["max_iter"])
            sims = []
            for agent in (FixedForesightedAgent([x], [sol]), PriorityAgent([x])):
                log = run_episode([fixed], [u.name], inst.alpha, agent, inst.horizon, inst.seed)
                sims.append(log.total_discounted())
            rows.append((float(x), u.name, fore, prio, fore - prio, sims[0], sims[1]))
    io.write_csv(out / "sweep.csv", ["x", "user", "foresighted_value", "priority_value", "gain",
                                     "foresighted_simulated", "priority_simulated"], rows)
    gains = [r[4] for r in rows]
    return [("points", len(rows)), ("min_gain", min(gains)), ("max_gain", max(gains))]


def cmd_oracle(inst, cfg, out: Path) -> list:
    sv, oc = cfg["solver"], cfg["oracle"]
    lam, alpha = float(sv["lambda"]), inst.alpha
    models = inst.models(sv["budget"])
    H, HJ = oc["horizon"], oc["joint_horizon"]
    rows, report = [], []
    sols = []
    for u, m in zip(inst.users, models):
        sol = solve_local(m, lam, alpha, tol=min(sv["tol"], 1e-10), max_iter=sv["max_iter"])
        sols.append(sol)
        ref = finite_horizon_local(u.gop, u.channel, inst.x_grid, lam, alpha, H)
        err = max(abs(sol.value(s) - v) for s, v in ref.items())
        bound = alpha ** H * max(m.u_max, lam * float(m.x_grid.max())) / (1 - alpha)
        rows.append(("local", u.name, H, err, bound, err <= bound))
    if inst.M >= 2:
        relaxed = JointModel(models, relaxed=True, budget=sv["budget"])
        jr = solve_joint(relaxed, alpha, 1e-10, sv["max_iter"], lam=lam)
        local = [solve_local(m, lam, alpha, inst.M, 1e-10, sv["max_iter"]) for m in models]
        total = np.zeros(relaxed.n_states)
        for i, sol in enumerate(local):
            total += sol.values[relaxed.members[:, i]]
        err = float(np.max(np.abs(jr.values - total)))
        rows.append(("decomposition", "all", 0, err, 1e-6, err <= 1e-6))
        if HJ:
            joint = JointModel(models, budget=sv["budget"])
            js = solve_joint(joint, alpha, 1e-10, sv["max_iter"])
            ref = finite_horizon_joint([(u.gop, u.channel) for u in inst.users], inst.x_grid, alpha, HJ)
            err = 0.0
            for J in range(joint.n_states):
                key = tuple(m.state(int(s)) for m, s in zip(models, joint.members[J]))
                err = max(err, abs(js.values[J] - ref[key]))
            bound = alpha ** HJ * sum(m.u_max for m in models) / (1 - alpha)
            rows.append(("joint", "all", HJ, err, bound, err <= bound))
    io.write_csv(out / "oracle.csv", ["check", "user", "horizon", "max_abs_error", "bound", "pass"], rows)
    report += [(f"{r[0]}.{r[1]}.max_abs_error", r[3]) for r in rows]
    report += [("all_pass", all(r[5] for r in rows))]
    return [("lambda", lam)] + report


COMMANDS = {"solve": cmd_solve, "dual": cmd_dual, "simulate": cmd_simulate, "learn": cmd_simulate,
            "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = output_dir(args)
    try:
        try:
            doc = json.loads(Path(args.instance).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{args.instance}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("invalid instance file at <root>: expected an object")
        cfg = effective_config(args, doc)
        inst = instance_from_config(copy.deepcopy(cfg))
        io.write_config(out / "effective_config.json", cfg)
        report = COMMANDS[args.command](inst, cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (AgentError, StateBudgetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    head = [("command", args.command), ("seed", cfg["seed"]), ("horizon", cfg["horizon"]),
            ("config_hash", io.config_hash(cfg))]
    io.write_report(out / "report.txt", head + report)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
