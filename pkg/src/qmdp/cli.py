"""Command-line entry point.

Exit codes: 0 success, 1 model validation failure, 2 usage error.
"""

import argparse
import sys

import numpy as np

from . import io as model_io
from .chain import ChainParams, gen_chain
from .cvar import GRID_SIZE, cvar_solve
from .dp import QuantilePolicy, SolveOptions, ValueTable, backward_solve, episodes_to_csv, run_episode, value_iterate
from .exceptions import ConvergenceError, DomainError, ModelFormatError, ModelValidationError
from .hiv import HivParams, gen_hiv
from .model import validate
from .report import build_report
from .simulate import simulate_policy

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class _UsageError(Exception):
    pass


def _parser():
    p = argparse.ArgumentParser(prog="qmdp", description="Quantile and CVaR dynamic programming for finite MDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")

    s = sub.add_parser("solve", help="solve a model and write its value table")
    s.add_argument("model")
    s.add_argument("--out", required=True)
    s.add_argument("--objective", choices=["quantile", "cvar"], default="quantile")
    s.add_argument("--format", choices=["json", "csv"], default=None,
                   help="table format (default json for quantile, csv for cvar)")
    s.add_argument("--breakpoint-cap", type=int, default=None)
    s.add_argument("--epsilon", type=float, default=1e-6, help="value-iteration accuracy")
    s.add_argument("--max-iters", type=int, default=10_000)
    s.add_argument("--grid-size", type=int, default=GRID_SIZE, help="CVaR tau grid size")
    s.add_argument("--cvar-method", choices=["exact", "greedy"], default="exact")
    s.add_argument("--threads", type=int, default=1)

    r = sub.add_parser("run", help="simulate the quantile-optimal policy from a solved table")
    r.add_argument("model")
    r.add_argument("--table", required=True)
    r.add_argument("--tau", type=float, required=True)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--episodes", type=int, default=1)
    r.add_argument("--s0", default=None, help="start state (default: the first state)")
    r.add_argument("--steps", type=int, default=None, help="episode length for discounted models")
    r.add_argument("--log", default=None, help="write per-step episode CSV here")

    q = sub.add_parser("report", help="frontier against baseline policies, as CSV")
    q.add_argument("model")
    q.add_argument("--s0", required=True)
    q.add_argument("--grid", type=int, default=101)
    q.add_argument("--episodes", type=int, default=20_000)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--table", default=None, help="reuse a solved quantile table")
    q.add_argument("--breakpoint-cap", type=int, default=None)
    q.add_argument("--out", default=None, help="CSV path (default stdout)")

    g = sub.add_parser("gen", help="generate a model file")
    gsub = g.add_subparsers(dest="generator", required=True)
    gc = gsub.add_parser("chain", help="synthetic stay-or-move chain")
    gc.add_argument("--n", type=int, required=True)
    gc.add_argument("--T", type=int, required=True)
    gc.add_argument("--rmax", type=int, required=True)
    gc.add_argument("--seed", type=int, required=True)
    gc.add_argument("--reward-on-occupancy", action="store_true")
    gc.add_argument("--out", required=True)
    gh = gsub.add_parser("hiv", help="HIV treatment-initiation model")
    gh.add_argument("--params", default=None, help="JSON file of parameter overrides")
    gh.add_argument("--mortality", default=None, help="CSV age,annual_death_prob (default: bundled placeholder)")
    gh.add_argument("--out", required=True)
    return p


def _load(path):
    return model_io.load(path, check=True)


def _cmd_validate(args, out):
    spec = model_io.load(args.model, check=False)
    violations = validate(spec)
    if violations:
        for v in violations:
            print(f"{args.model}: {v}", file=sys.stderr)
        return EXIT_INVALID
    print("OK", file=out)
    return EXIT_OK


def _cmd_solve(args, out):
    spec = _load(args.model)
    if args.objective == "cvar":
        table = cvar_solve(spec, args.grid_size, args.cvar_method)
        table.save(args.out, fmt=args.format or "csv")
    else:
        opts = SolveOptions(args.breakpoint_cap, args.epsilon, args.max_iters, args.threads)
        table = backward_solve(spec, opts) if spec.is_finite else value_iterate(spec, opts)
        table.save(args.out, fmt=args.format or "json")
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def _load_table(path, spec):
    table = ValueTable.load(path)
    if table.states != spec.states or table.actions != spec.actions:
        raise _UsageError(f"table {path} was not solved for this model")
    return table


def _cmd_run(args, out):
    spec = _load(args.model)
    table = _load_table(args.table, spec)
    s0 = spec.state_index(args.s0) if args.s0 is not None else 0
    if args.episodes < 1:
        raise _UsageError("--episodes must be positive")
    if args.log:
        runs = [run_episode(table, spec, s0, args.tau, [args.seed, e], args.steps) for e in range(args.episodes)]
        with open(args.log, "w") as fh:
            fh.write(episodes_to_csv([traj for traj, _ in runs], spec))
        totals = np.array([total for _, total in runs])
        q = float(np.sort(totals)[max(int(np.ceil(args.tau * totals.size)) - 1, 0)])
        mean = float(totals.mean())
    else:
        cdf = simulate_policy(spec, QuantilePolicy(table, spec), s0, args.episodes, args.seed,
                              tau0=args.tau, n_steps=args.steps)
        q, mean = cdf.quantile(args.tau), cdf.mean()
    print(f"target v0={table.value(s0, args.tau)!r} empirical_quantile={q!r} mean={mean!r} "
          f"episodes={args.episodes}", file=out)
    return EXIT_OK


def _cmd_report(args, out):
    spec = _load(args.model)
    table = _load_table(args.table, spec) if args.table else None
    rep = build_report(spec, args.s0, args.grid, args.episodes, args.seed, table=table,
                       opts=SolveOptions(breakpoint_cap=args.breakpoint_cap))
    text = rep.to_csv()
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        out.write(text)
    for name, taus in rep.dominance_violations().items():
        print(f"warning: {name} exceeds the frontier beyond Monte-Carlo tolerance at {len(taus)} grid points",
              file=sys.stderr)
    return EXIT_OK


def _cmd_gen(args, out):
    if args.generator == "chain":
        spec = gen_chain(ChainParams(args.n, args.T, args.rmax, args.seed, args.reward_on_occupancy))
    else:
        if args.params:
            params = HivParams.from_json(args.params, mortality=args.mortality)
        elif args.mortality:
            from .hiv import load_mortality

            params = HivParams(background_mortality=load_mortality(args.mortality))
        else:
            params = HivParams()
        spec = gen_hiv(params)
    model_io.save(spec, args.out)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


COMMANDS = {"validate": _cmd_validate, "solve": _cmd_solve, "run": _cmd_run, "report": _cmd_report, "gen": _cmd_gen}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args, out)
    except (ModelFormatError, ModelValidationError) as exc:
        print(f"qmdp: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (_UsageError, DomainError, ConvergenceError, OSError, ValueError) as exc:
        print(f"qmdp: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
