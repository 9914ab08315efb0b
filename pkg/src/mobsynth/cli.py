"""Command-line entry point.

    mobsynth make-world    --out DIR                  synthetic world + input bundle
    mobsynth fit-quantiles --bundle DIR [--out DIR]   params.csv from quantiles.csv
    mobsynth generate      --bundle DIR --out DIR     optimise trajectories
    mobsynth evaluate      --bundle DIR --trajectories FILE
    mobsynth grid-search   --bundle DIR --out DIR     weight grid -> grid.csv

Every option can also come from ``--config FILE``: one ``key = value`` per
line (``#`` comments allowed), keys named like the long flags with or without
the leading dashes. Flags given on the command line win.

Exit codes: 0 ok, 1 bad input, 2 infeasible / unfillable data, 3 internal
invariant breach.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import files, losses
from .anneal import RunConfig, Schedule, default_tau_max, run_all_groups
from .files import SchemaError
from .lognormal import fill_missing, fit_table
from .model import Demographic, InfeasibleError, InputError, InvariantError, Weights
from .pipeline import (
    DEFAULT_W_DT,
    DEFAULT_W_VF,
    GRID_HEADER,
    MEANS_HEADER,
    GridSearchPlan,
    evaluate,
    group_inputs,
    run_grid_search,
)
from .worldgen import DEFAULT_GROUPS, WorldSpec, generate_world, reference_inputs

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_INVARIANT = 0, 1, 2, 3

log = logging.getLogger("mobsynth")


def _float_list(text: str) -> tuple:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> tuple:
    try:
        vals = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _groups(text: str) -> dict:
    """``male/20s=1000,female/30s=1000``"""
    out = {}
    for part in text.split(","):
        label, _, n = part.strip().partition("=")
        try:
            out[Demographic.from_label(label)] = int(n)
        except (InputError, ValueError):
            raise argparse.ArgumentTypeError(f"bad group spec {part!r}; want sex/age=count")
    return out


def read_config(path) -> dict:
    """Flat ``key = value`` file -> dict with keys normalised to argparse dests."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    for i, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise SchemaError(f"{path}:{i}: expected key = value")
        out[key.strip().lstrip("-").replace("-", "_")] = (i, value.strip())
    return out


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("-v", "--verbose", action="store_true")


def _engine(p: argparse.ArgumentParser):
    p.add_argument("--bundle", required=True, help="directory with od.csv, quantiles.csv, census.csv")
    p.add_argument("--params", help="params.csv (default: fit the bundle quantiles)")
    p.add_argument("--threshold", type=int, default=0,
                   help="re-suppress OD entries / quantile rows below this count")
    p.add_argument("--n-max", type=int, default=losses.N_MAX)
    p.add_argument("--tau-max", type=int, help="steps per group (default 2000 x population)")
    p.add_argument("--t-max", type=float, default=Schedule.t_max)
    p.add_argument("--t-min", type=float, default=Schedule.t_min)
    p.add_argument("--pool", choices=("support", "all"), default="support")


def _weights(p: argparse.ArgumentParser):
    p.add_argument("--w-od", type=float, default=1.0)
    p.add_argument("--w-vf", type=float, default=0.0)
    p.add_argument("--w-dt", type=float, default=0.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mobsynth", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-world", help="generate a synthetic world and its input bundle")
    _common(p)
    p.add_argument("--levels", type=int, default=WorldSpec.levels)
    p.add_argument("--groups", type=_groups, default=dict(DEFAULT_GROUPS),
                   help="e.g. male/20s=1000,female/30s=1000")
    p.add_argument("--home-exponent", type=float, default=WorldSpec.home_exponent)
    p.add_argument("--attraction-exponent", type=float, default=WorldSpec.attraction_exponent)
    p.add_argument("--threshold", type=int, default=WorldSpec.threshold)
    p.set_defaults(func=cmd_make_world)

    p = sub.add_parser("fit-quantiles", help="fit and complete dwell-travel parameters")
    _common(p, out_required=False)
    p.add_argument("--bundle", required=True)
    p.add_argument("--threshold", type=int, default=0)
    p.set_defaults(func=cmd_fit_quantiles)

    p = sub.add_parser("generate", help="optimise trajectories against a bundle")
    _common(p)
    _engine(p)
    _weights(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score trajectories against a bundle")
    _common(p, out_required=False)
    _engine(p)
    _weights(p)
    p.add_argument("--trajectories", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grid-search", help="sweep (w_vf, w_dt) with w_od = 1")
    _common(p)
    _engine(p)
    p.add_argument("--w-vf-list", type=_float_list, default=DEFAULT_W_VF)
    p.add_argument("--w-dt-list", type=_float_list, default=DEFAULT_W_DT)
    p.add_argument("--seeds", type=_int_list, default=None,
                   help="comma-separated run seeds (default: --seed)")
    p.set_defaults(func=cmd_grid_search)
    return parser


def _subparser(parser, command) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``, filling unset options from ``--config``.

    Required options may come from either source, so requiredness is checked
    after the merge.
    """
    required = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                required[name] = [a for a in sub._actions if a.required]
                for a in required[name]:
                    a.required = False
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    if getattr(args, "config", None):
        _merge_config(sub, args)
        args = parser.parse_args(argv)
    missing = [a.option_strings[-1] for a in required[args.command]
               if getattr(args, a.dest) is None]
    if missing:
        sub.error(f"the following arguments are required: {', '.join(missing)}")
    return args


def _merge_config(sub: argparse.ArgumentParser, args) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, (line, value) in read_config(args.config).items():
        action = actions.get(key)
        if action is None:
            raise SchemaError(f"{args.config}:{line}: unknown key {key!r} for {args.command}")
        if action.nargs == 0:  # store_true
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
            continue
        if action.choices is not None and value not in action.choices:
            raise SchemaError(f"{args.config}:{line}: {key} must be one of {sorted(action.choices)}")
        try:
            defaults[key] = action.type(value) if action.type else value
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise SchemaError(f"{args.config}:{line}: {key}: {exc}") from exc
    sub.set_defaults(**defaults)


# --- commands -----------------------------------------------------------------

def _load_engine_inputs(args):
    bundle = files.read_bundle(args.bundle)
    if args.threshold:
        bundle = bundle.suppressed(args.threshold)
    if args.params:
        table = files.read_params(args.params)
        missing = bundle.universe() - table.keys()
        if missing:
            raise InputError(f"{args.params}: no parameters for {len(missing)} cell-hours, "
                             f"e.g. {sorted(missing)[0]}")
    else:
        table = bundle.param_table()
    return bundle, table


def _schedule(args, bundle) -> Schedule:
    tau = args.tau_max
    if tau is None:
        tau = default_tau_max(max(sum(bundle.population(g).values()) for g in bundle.od))
    return Schedule(tau, args.t_max, args.t_min)


def _trace_name(group: Demographic) -> str:
    return f"trace_{group.sex.value}_{group.age_group.value}.csv"


def cmd_make_world(args) -> int:
    spec = WorldSpec(levels=args.levels, populations=args.groups,
                     home_exponent=args.home_exponent,
                     attraction_exponent=args.attraction_exponent,
                     threshold=args.threshold, seed=args.seed)
    world = generate_world(spec)
    bundle = reference_inputs(spec, world)
    out = Path(args.out)
    files.write_trajectories(out / files.WORLD_FILE, world)
    files.write_bundle(out, bundle)
    print(f"{len(world)} agents, {len(bundle.quantiles)} quantile rows, "
          f"{sum(len(m.entries) for m in bundle.od.values())} OD entries -> {out}")
    return EXIT_OK


def cmd_fit_quantiles(args) -> int:
    bundle = files.read_bundle(args.bundle)
    if args.threshold:
        bundle = bundle.suppressed(args.threshold)
    fitted = fit_table(bundle.quantiles)
    table = fill_missing(fitted, bundle.universe())
    out = Path(args.out or args.bundle) / files.PARAMS_FILE
    files.write_params(out, table)
    print(f"{len(fitted)} fitted, {len(table) - len(fitted)} filled -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    bundle, table = _load_engine_inputs(args)
    cfg = RunConfig(Weights(args.w_od, args.w_vf, args.w_dt), _schedule(args, bundle),
                    args.seed, args.pool, args.n_max)
    trajs, results = run_all_groups(group_inputs(bundle), table, cfg, args.jobs)
    out = Path(args.out)
    files.write_trajectories(out / "trajectories.csv", trajs)
    for r in results:
        files.write_trace(out / _trace_name(r.group), r.trace)
    report = evaluate(trajs, bundle, table, cfg.weights, args.n_max)
    files.write_text(out / "loss_report.json", report.to_json())
    print("\n".join(report.summary_lines()))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    bundle, table = _load_engine_inputs(args)
    trajs = files.read_trajectories(args.trajectories)
    report = evaluate(trajs, bundle, table, Weights(args.w_od, args.w_vf, args.w_dt), args.n_max)
    if args.out:
        files.write_text(Path(args.out) / "loss_report.json", report.to_json())
    print("\n".join(report.summary_lines()))
    return EXIT_OK


def cmd_grid_search(args) -> int:
    bundle, table = _load_engine_inputs(args)
    seeds = args.seeds if args.seeds is not None else (args.seed,)
    plan = GridSearchPlan(args.w_vf_list, args.w_dt_list, seeds, args.jobs)
    report = run_grid_search(plan, bundle, table, _schedule(args, bundle), args.n_max, args.pool)
    out = Path(args.out)
    files.write_csv(out / "grid.csv", GRID_HEADER, (r.as_row() for r in report.rows))
    files.write_csv(out / "grid_means.csv", MEANS_HEADER, report.means_rows())
    failed = sum(r.status != "ok" for r in report.rows)
    print(f"{len(report.rows)} runs ({failed} failed) over {len(plan.cells)} weight cells -> {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        try:
            args = _apply_config(parser, argv)
        except SystemExit as exc:  # usage errors and --help
            return exc.code if isinstance(exc.code, int) else EXIT_INPUT
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantError as exc:
        print(f"invariant breach: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
