"""``lmdp-bench``: generate instances, sample data, solve, evaluate and sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import ExperimentSpec, UsageError, report, run_experiment
from .data import BehaviorDistribution, OfflineDataset, sample_dataset
from .model import InfeasibleError, LinearCmdp, build_random_cmdp, exact_eval, optimal_constrained, optimal_unconstrained
from .solver import MODES, OCCUPANCY_ESTIMATES, KnownModel, MixturePolicy, PrimalDualSolver, evaluate_mixture

logger = logging.getLogger("offline_lmdp")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _emit(text: str, out) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text)


def _optimum(mdp: LinearCmdp, constrained: bool):
    """``(J0*, mu*, phi)``; ``phi`` is ``None`` without constraints."""
    if constrained and mdp.num_constraints:
        opt = optimal_constrained(mdp)
        return opt.j0_star, opt.mu_star, opt.slater_margin
    pi_star, j0 = optimal_unconstrained(mdp)
    return j0, exact_eval(mdp, pi_star).mu, None


def cmd_gen(args) -> int:
    mdp = build_random_cmdp(args.seed, tuple(args.sizes), args.gamma)
    if args.tau is not None:
        mdp = mdp.with_tau(_floats(args.tau))
    _emit(mdp.to_json(), args.out)
    return 0


def cmd_sample(args) -> int:
    mdp = LinearCmdp.load(args.instance)
    S, A = mdp.num_states, mdp.num_actions
    if args.behavior == "uniform":
        mu_b = BehaviorDistribution.uniform(S * A)
    else:
        _, mu_star, _ = _optimum(mdp, constrained=mdp.num_constraints > 0)
        mu_b = BehaviorDistribution.blend(mu_star, args.kappa)
    ds = sample_dataset(mdp, mu_b, args.n, args.seed)
    _emit(ds.to_csv(), args.out)
    return 0


def cmd_solve(args) -> int:
    mdp = LinearCmdp.load(args.instance)
    if args.tau is not None:
        mdp = mdp.with_tau(_floats(args.tau))
    # only the learner-visible parts of the instance go into the solver
    known = KnownModel.from_mdp(mdp)
    ds = OfflineDataset.load_csv(args.data, known)
    est = PrimalDualSolver(
        mode=args.mode, t_iters=args.t_iters, epsilon=args.epsilon, slater_margin=args.phi,
        c_star=args.c_star, alpha=args.alpha, eta=args.eta, occupancy_estimate=args.occupancy_estimate,
    )
    est.fit(ds, known)
    _emit(est.mixture_.to_json(), args.out)
    return 0


def cmd_eval(args) -> int:
    mdp = LinearCmdp.load(args.instance)
    if args.tau is not None:
        mdp = mdp.with_tau(_floats(args.tau))
    mix = MixturePolicy.load(args.policy)
    js = evaluate_mixture(mdp, mix)
    constrained = args.mode != "unconstrained"
    j0_star, _, phi = _optimum(mdp, constrained)
    viol = np.maximum(0.0, mdp.tau - js[1:]) if mdp.num_constraints else np.zeros(0)
    doc = {
        "J": js.tolist(),
        "J0_star": j0_star,
        "subopt": j0_star - float(js[0]),
        "violation": viol.tolist(),
        "viol_max": float(viol.max(initial=0.0)),
        "T": mix.t_iters,
    }
    if phi is not None:
        doc["slater_margin"] = phi
    _emit(json.dumps(doc, indent=2), args.out)
    return 0


def cmd_sweep(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    changes = spec.to_dict()
    if args.seed is not None:
        changes["seed"] = args.seed
    solver = dict(changes["solver"])
    for key in ("t_iters", "alpha", "eta", "mode", "epsilon", "phi", "occupancy_estimate"):
        value = getattr(args, key)
        if value is not None:
            solver[key] = value
    changes["solver"] = solver
    if args.n is not None:
        changes["n_grid"] = [args.n]
    if args.tau is not None:
        changes["tau"] = _floats(args.tau)
    spec = ExperimentSpec.from_dict(changes)
    rows = run_experiment(spec, workers=args.workers, output=args.out)
    if not rows:
        raise UsageError("sweep produced no rows")
    if args.out is None or args.summary:
        sys.stdout.write(report(rows, "summary" if args.summary else "csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmdp-bench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, out=True):
        if seed:
            p.add_argument("--seed", type=int, default=0)
        if out:
            p.add_argument("--out", help="output path (default: stdout)")

    def solver_flags(p, defaults=True):
        p.add_argument("--t-iters", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--eta", type=float)
        p.add_argument("--mode", choices=MODES, default="unconstrained" if defaults else None)
        p.add_argument("--epsilon", type=float, default=0.1 if defaults else None)
        p.add_argument("--phi", type=float, help="known Slater margin")
        p.add_argument("--tau", help="comma-separated constraint thresholds")
        p.add_argument(
            "--occupancy-estimate", choices=OCCUPANCY_ESTIMATES, default="converted" if defaults else None,
            help="coefficients used by the occupancy estimate",
        )

    p = sub.add_parser("gen", help="random linear CMDP to JSON")
    common(p)
    p.add_argument("--sizes", type=int, nargs=4, metavar=("S", "A", "D", "I"), default=[6, 3, 5, 0])
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--tau", help="comma-separated constraint thresholds")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sample", help="offline dataset to CSV")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--behavior", choices=("uniform", "mix_optimal"), default="mix_optimal")
    p.add_argument("--kappa", type=float, default=0.5)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("solve", help="run the primal-dual solver, write the mixture policy JSON")
    common(p)
    p.add_argument("--instance", required=True, help="instance JSON; only features, rewards, gamma, s0, tau are used")
    p.add_argument("--data", required=True)
    p.add_argument("--c-star", type=float, default=2.0)
    solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="exact returns of a mixture policy")
    common(p, seed=False)
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--mode", choices=MODES, default="unconstrained")
    p.add_argument("--tau", help="comma-separated constraint thresholds")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run an experiment spec, write the report CSV")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--n", type=int, help="run a single dataset size")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--summary", action="store_true", help="print per-n medians and IQRs")
    solver_flags(p, defaults=False)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, InfeasibleError, ValueError, OSError) as exc:
        print(f"lmdp-bench {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
