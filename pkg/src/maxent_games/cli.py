"""Command line entry point: ``maxent-games {toy,merge,matrix,perturb}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .inference import prior_belief
from .merge import MergeScenario, load_scenario
from .planner import Strategy, qmdp_policy
from .sim import (EpisodeConfig, Perturbation, control_total_variation, episode_summary, format_matrix,
                  lower_triangle_pairs, run_episode, run_matrix, write_csv, write_summary)
from .toy import ToyGame, exact_maxent_ne, exact_ne

log = logging.getLogger(__name__)

STRATEGIES = [s.value for s in Strategy]


def _rates(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("rates are ne,belief,track in Hz")
    return tuple(parts)


def _add_episode_flags(p: argparse.ArgumentParser, perturb: str = "none", latency: int = 0):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--horizon", type=int, default=60)
    p.add_argument("--steps", type=int, default=120, help="episode length in control steps")
    p.add_argument("--latency-steps", type=int, default=latency)
    p.add_argument("--perturb", default=perturb, help="none | sin | sin:A,P | rand:S")
    p.add_argument("--rates", type=_rates, default=(2.0, 20.0, 100.0), help="ne,belief,track in Hz")
    p.add_argument("--scheduler", choices=("multirate", "sequential", "threaded"), default="multirate")
    p.add_argument("--scenario", type=Path, help="scenario TOML file")
    p.add_argument("--out", type=Path, help="output directory")


def _scenario(args) -> MergeScenario:
    return load_scenario(args.scenario)


def _episode_config(args, scenario: MergeScenario) -> EpisodeConfig:
    return EpisodeConfig(seed=args.seed, beta=args.beta, dt=args.dt, horizon=args.horizon,
                         max_steps=args.steps, latency_steps=args.latency_steps,
                         perturbation=Perturbation.parse(args.perturb, scenario.cfg.accel_limit),
                         rates=args.rates, scheduler=args.scheduler)


def _stem(ep) -> str:
    ego, other = (s.value for s in ep.config.strategies)
    return f"{ego}_vs_{other}_seed{ep.config.seed}"


def cmd_toy(args) -> int:
    toy = ToyGame(eps=args.eps, beta=args.beta)
    dens = exact_maxent_ne(toy)
    bank = toy.lq_modes()
    b0 = prior_belief(bank, toy.x0)
    hedge = qmdp_policy(b0, bank, toy.x0)
    u1, u2 = exact_ne(toy)
    summary = {
        "eps": toy.eps, "beta": toy.beta,
        "exact_ne": {"u1": u1, "u2": u2},
        "exact_maxent": {"mean1": dens.mean1, "var1": dens.variance(dens.pi1),
                         "mean2": dens.mean2, "var2": dens.variance(dens.pi2)},
        "lq_modes": [{"mode": m.mode, "converged": m.converged,
                      "mean": m.nominal.controls[0].tolist(),
                      "var": [float(p.covariances[0][0, 0]) for p in m.policies],
                      "value": [float(v.c[0]) for v in m.values]} for m in bank.modes],
        "prior": b0.probs.tolist(),
        "qmdp_mean": float(hedge.control[0]),
    }
    print(f"exact NE        u1={u1:+.4f}  u2={u2:+.4f}")
    print(f"exact MaxEnt    mean1={dens.mean1:+.5f}  mean2={dens.mean2:+.5f}")
    for m in summary["lq_modes"]:
        print(f"LQ mode {m['mode']}       mean={np.round(m['mean'], 4).tolist()}  var={np.round(m['var'], 4).tolist()}")
    print(f"prior           {np.round(b0.probs, 4).tolist()}")
    print(f"QMDP ego mean   {hedge.control[0]:+.4f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "toy_densities.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "pi1", "pi2"])
            for row in zip(dens.u, dens.pi1, dens.pi2):
                w.writerow([f"{v:.9g}" for v in row])
        write_summary(args.out / "toy_summary.json", summary)
    return 0


def cmd_merge(args) -> int:
    scenario = _scenario(args)
    cfg = replace(_episode_config(args, scenario), strategies=(args.ego, args.other))
    ep = run_episode(cfg, scenario)
    summary = episode_summary(ep)
    print(f"{ep.config.strategies[0].label} vs {ep.config.strategies[1].label} seed {cfg.seed}: "
          f"{ep.outcome} after {ep.num_steps} steps, min distance {ep.min_distance:.3f} m")
    if ep.error:
        print(f"error: {ep.error}")
    if args.out:
        write_csv(ep, args.out / f"{_stem(ep)}.csv")
        write_summary(args.out / f"{_stem(ep)}.json", summary)
    return 0


def cmd_matrix(args) -> int:
    scenario = _scenario(args)
    base = _episode_config(args, scenario)

    def on_episode(ep):
        log.info("%s vs %s seed %d: %s", *(s.label for s in ep.config.strategies), ep.config.seed, ep.outcome)
        if args.out:
            write_csv(ep, args.out / "episodes" / f"{_stem(ep)}.csv")

    table = run_matrix(lower_triangle_pairs(), args.seeds, scenario, base, on_episode)
    print(format_matrix(table))
    if args.out:
        write_summary(args.out / "matrix.json",
                      {f"{e.value}_vs_{o.value}": v for (e, o), v in table.items()})
    return 0


def cmd_perturb(args) -> int:
    scenario = _scenario(args)
    base = _episode_config(args, scenario)
    rows = []
    for seed in range(args.seed, args.seed + args.seeds):
        tv = {}
        for ego in (Strategy.ML, Strategy.QMDP):
            ep = run_episode(replace(base, strategies=(ego, args.other), seed=seed), scenario)
            tv[ego] = control_total_variation(ep, 0, "accel")
            if args.out:
                write_csv(ep, args.out / f"{_stem(ep)}.csv")
        ratio = tv[Strategy.ML] / tv[Strategy.QMDP] if tv[Strategy.QMDP] > 0 else np.inf
        rows.append({"seed": seed, "tv_ml": tv[Strategy.ML], "tv_qmdp": tv[Strategy.QMDP], "ratio": ratio})
        print(f"seed {seed:3d}  TV ML {tv[Strategy.ML]:7.3f}  TV QMDP {tv[Strategy.QMDP]:7.3f}  ratio {ratio:5.2f}")
    if args.out:
        write_summary(args.out / "perturb.json", {"other": Strategy.parse(args.other).label, "pairs": rows})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maxent-games", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("toy", help="densities and LQ modes of the one-step toy game")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("merge", help="one merge episode")
    p.add_argument("--ego", choices=STRATEGIES, default="qmdp")
    p.add_argument("--other", choices=STRATEGIES, default="noyield")
    _add_episode_flags(p)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("matrix", help="success rates of every strategy pairing")
    p.add_argument("--seeds", type=int, default=10)
    _add_episode_flags(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("perturb", help="ML against QMDP ego under a perturbed other agent")
    p.add_argument("--other", choices=STRATEGIES, default="yield")
    p.add_argument("--seeds", type=int, default=10)
    _add_episode_flags(p, perturb="sin", latency=2)
    p.set_defaults(func=cmd_perturb)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
