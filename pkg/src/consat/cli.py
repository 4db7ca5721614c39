"""Command-line entry point: ``consat <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import blockworld as bw
from . import consrnn, consyn, harness
from .cnf import Activations, dumps_wcnf, read_wcnf, violated_mask, violation

log = logging.getLogger("consat")

REFERENCE_VARS = 385
REFERENCE_CLAUSES = 5832
COUNT_DELTA_NOTE = (
    "The reference figures do not follow from the crossbar sizes: Above alone "
    "needs N*N*K variables. These counts come from grounding every constraint "
    "row over its full index range, with symmetric rows over unordered pairs "
    "and Move defined for t < K-1."
)
ASSIGNMENT_BANNER = "# consat assignment v1"


class CliError(Exception):
    pass


# -- small file helpers ----------------------------------------------------------


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from exc


def _write_text(path: str, text: str) -> None:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def dumps_assignment(y: Activations) -> str:
    """Signed one-based literals, one per variable, true as positive."""
    lits = [str(k + 1) if v >= 0.5 else str(-(k + 1)) for k, v in enumerate(y.values)]
    return ASSIGNMENT_BANNER + "\n" + " ".join(lits) + "\n"


def loads_assignment(text: str, num_vars: int) -> Activations:
    """Parse signed literals; a trailing ``0`` and ``v`` prefixes are accepted.

    Variables that are not mentioned are false.
    """
    values = np.zeros(num_vars)
    seen = set()
    for line in text.splitlines():
        fields = line.split()
        if not fields or fields[0].startswith(("#", "c")):
            continue
        if fields[0] == "v":
            fields = fields[1:]
        for tok in fields:
            try:
                lit = int(tok)
            except ValueError as exc:
                raise CliError(f"bad literal {tok!r} in assignment") from exc
            if lit == 0:
                continue
            var = abs(lit) - 1
            if var >= num_vars:
                raise CliError(f"literal {lit} exceeds {num_vars} variables")
            if var in seen:
                raise CliError(f"variable {var + 1} assigned twice")
            seen.add(var)
            values[var] = 1.0 if lit > 0 else 0.0
    return Activations(values, np.zeros(num_vars, dtype=bool))


def format_plan(plan: bw.Plan) -> str:
    if not plan.moves:
        return "plan: no moves"
    lines = ["plan:"]
    for block, t in sorted(plan.moves, key=lambda m: (m[1], m[0])):
        dest = None
        if t + 1 < len(plan.above_trajectory):
            parents = plan.above_trajectory[t + 1][block]
            dest = parents[0] if len(parents) == 1 else None
        where = "floor" if dest == bw.FLOOR else (f"block {dest}" if dest is not None else "?")
        lines.append(f"  t={t}: move block {block} onto {where}")
    return "\n".join(lines)


def _bounds(args) -> bw.Bounds:
    return bw.Bounds(args.objects, args.steps, args.colors, args.sizes)


def _config(args) -> harness.ExperimentConfig:
    if not args.config:
        raise CliError("this subcommand needs --config")
    try:
        return harness.load_config(args.config)
    except (ValueError, TypeError) as exc:
        raise CliError(f"bad config {args.config}: {exc}") from exc


def _load_instance(path: str) -> bw.PlanningInstance:
    try:
        return bw.loads_instance(_read_text(path))
    except ValueError as exc:
        raise CliError(f"bad instance {path}: {exc}") from exc


# -- subcommands -------------------------------------------------------------------


def cmd_ground(args, out):
    bounds = _bounds(args)
    cnf = bw.ground(bounds, args.hard_alpha, args.soft_alpha, frame=not args.no_frame)
    hard = sum(c.alpha >= args.hard_alpha for c in cnf.clauses)
    if args.out:
        _write_text(args.out, dumps_wcnf(cnf, comments=[f"bounds {bounds.n_objects} objects {bounds.k_steps} steps"]))
    print(f"objects {bounds.n_objects} (floor + {bounds.max_blocks} blocks), steps {bounds.k_steps}", file=out)
    print(f"variables {cnf.num_vars} (reference {REFERENCE_VARS}, delta {cnf.num_vars - REFERENCE_VARS:+d})", file=out)
    print(f"clauses {len(cnf.clauses)} (reference {REFERENCE_CLAUSES}, "
          f"delta {len(cnf.clauses) - REFERENCE_CLAUSES:+d}); hard {hard}, soft {len(cnf.clauses) - hard}", file=out)
    if not args.quiet:
        for name, count in bw.ground_report(bounds, frame=not args.no_frame).items():
            print(f"  {name:24s} {count}", file=out)
        print(COUNT_DELTA_NOTE, file=out)
    return 0


def cmd_gen(args, out):
    bounds = _bounds(args)
    if not 1 <= args.n_blocks <= bounds.max_blocks:
        raise CliError(f"--n-blocks must lie in 1..{bounds.max_blocks} for {bounds.n_objects} objects")
    if args.validation:
        insts = harness.validation_instances(args.seed, args.n_blocks, bounds, args.count)
        prefix = "validation"
    else:
        rng = np.random.default_rng(args.seed)
        insts = [bw.generate_instance(rng, args.n_blocks, bounds) for _ in range(args.count)]
        prefix = "instance"
    target = args.out or "."
    os.makedirs(target, exist_ok=True)
    for k, inst in enumerate(insts):
        path = os.path.join(target, f"{prefix}_{k:03d}.toml")
        _write_text(path, bw.dumps_instance(inst))
        if not args.quiet:
            print(path, file=out)
    return 0


def cmd_solve(args, out):
    inst = _load_instance(args.instance)
    cfg = _config(args) if args.config else None
    ix = bw.build_index(inst.bounds)
    cnf = bw.ground(inst.bounds)
    rng = np.random.default_rng(args.seed)
    clamps = bw.clamp_literals(inst, ix)
    if args.arch == harness.CONSYN:
        hyper = cfg.consyn_hyper if cfg and cfg.architecture == harness.CONSYN else consyn.ConsynHyper()
        if args.weights:
            net = consyn.read_snapshot(_read_text(args.weights))
        else:
            net = consyn.compile_network(cnf, args.init, rng=rng)
        if net.num_units != cnf.num_vars:
            raise CliError(f"snapshot has {net.num_units} units, instance needs {cnf.num_vars}")
        y, m = consyn.solve(net, cnf, clamps, hyper, rng)
        cost = f"flips {m.flips} (must {m.must_flips}, random {m.random_flips}), iterations {m.iterations}"
        dump = consyn.dumps_snapshot
    else:
        hyper = cfg.rnn_hyper if cfg and cfg.architecture == harness.CONSRNN else consrnn.RnnHyper()
        net = consrnn.read_snapshot(_read_text(args.weights)) if args.weights else consrnn.build(cnf, rng)
        if net.num_vars != cnf.num_vars:
            raise CliError(f"snapshot has {net.num_vars} units, instance needs {cnf.num_vars}")
        y, m = consrnn.solve(net, cnf, clamps, hyper, rng)
        cost = f"iterations {m.iterations}"
        dump = consrnn.dumps_snapshot
    plan = bw.decode_plan(y, ix)
    ok, msg = bw.validate_plan(plan, inst)
    print(format_plan(plan), file=out)
    print("VALID" if ok else f"INVALID: {msg}", file=out)
    hard, soft = m.final_violation
    print(f"solved {m.solved}; hard violated {hard}, soft violated {soft}; {cost}", file=out)
    if args.out:
        _write_text(args.out, dumps_assignment(y))
    if args.save_weights:
        _write_text(args.save_weights, dump(net))
    return 0 if ok and m.solved else 1


def cmd_oracle(args, out):
    inst = _load_instance(args.instance)
    plan = bw.bfs_oracle(inst)
    if plan is None:
        print(f"unsolvable within {inst.bounds.max_moves} moves", file=out)
        return 1
    print(format_plan(plan), file=out)
    print(f"{len(plan.moves)} moves", file=out)
    return 0


def _override_seed(cfg, args):
    if args.seed is not None and args.seed_given:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _progress(args):
    if args.quiet:
        return None
    return lambda rep, p: print(f"replication {rep} trained_on {p.trained_on} mean {p.mean_cost:.1f} "
                                f"solved {p.solve_rate:.2f}", file=sys.stderr)


def cmd_train(args, out):
    cfg = _override_seed(_config(args), args)
    cfg = dataclasses.replace(cfg, replications=1)
    result = harness.run_training_session(cfg, _progress(args))
    target = args.out or "."
    os.makedirs(target, exist_ok=True)
    snap = consyn.dumps_snapshot if cfg.architecture == harness.CONSYN else consrnn.dumps_snapshot
    _write_text(os.path.join(target, "weights.net"), snap(result.network))
    with open(os.path.join(target, "curve.csv"), "w", encoding="utf-8") as fh:
        harness.write_curve(result.replications[0], fh)
    print(f"wrote {os.path.join(target, 'weights.net')} and {os.path.join(target, 'curve.csv')}", file=out)
    return 0


def cmd_experiment(args, out):
    cfg = _override_seed(_config(args), args)
    result = harness.run_training_session(cfg, _progress(args))
    path = args.out or "curve.csv"
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        harness.write_curve(result.aggregate, fh)
    for p in result.aggregate:
        print(f"{p.trained_on:4d} {p.mean_cost:12.1f} {p.std_cost:10.1f} {p.solve_rate:.2f}", file=out)
    return 0


def cmd_check(args, out):
    try:
        with open(args.cnf, encoding="utf-8") as fh:
            cnf = read_wcnf(fh)
    except OSError as exc:
        raise CliError(f"cannot read {args.cnf}: {exc.strerror}") from exc
    except ValueError as exc:
        raise CliError(f"bad CNF {args.cnf}: {exc}") from exc
    y = loads_assignment(_read_text(args.assignment), cnf.num_vars)
    v = violation(cnf, y, args.hard_alpha)
    print(f"hard violated {v.hard}, soft violated {v.soft}, penalty {v.penalty:g}", file=out)
    if not args.quiet:
        for k in np.flatnonzero(violated_mask(cnf, y)):
            c = cnf.clauses[k]
            lits = " ".join(
                ("" if l.positive else "-") + (cnf.var_names[l.var] if cnf.var_names else str(l.var + 1))
                for l in c.literals
            )
            print(f"  clause {k + 1} alpha {c.alpha:g}: {lits}", file=out)
    return 0 if v.hard == 0 else 1


# -- parser ----------------------------------------------------------------------------


def _global_flags(p, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0, help="random seed")
    p.add_argument("--config", default=default, help="experiment config file")
    p.add_argument("--out", default=default, help="output path")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False,
                   help="print only the essentials")


def _bounds_flags(p):
    p.add_argument("--objects", "--blocks", dest="objects", type=int, default=6,
                   help="object count N, floor included (default 6)")
    p.add_argument("--steps", type=int, default=7, help="time steps K (default 7)")
    p.add_argument("--colors", type=int, default=3)
    p.add_argument("--sizes", type=int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="consat", description=__doc__)
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("ground", cmd_ground, "ground the block-world schema to a weighted CNF")
    _bounds_flags(p)
    p.add_argument("--hard-alpha", type=float, default=bw.HARD_ALPHA)
    p.add_argument("--soft-alpha", type=float, default=bw.SOFT_ALPHA)
    p.add_argument("--no-frame", action="store_true", help="omit the frame rows")

    p = add("gen", cmd_gen, "generate random solvable instances")
    _bounds_flags(p)
    p.add_argument("--n-blocks", type=int, default=3, help="blocks used by each instance")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--validation", action="store_true",
                   help="draw from the held-out validation stream instead")

    p = add("solve", cmd_solve, "solve one instance and validate the decoded plan")
    p.add_argument("--instance", required=True)
    p.add_argument("--arch", choices=harness.ARCHITECTURES, default=harness.CONSYN)
    p.add_argument("--init", choices=(consyn.COMPILED, consyn.RANDOM), default=consyn.COMPILED)
    p.add_argument("--weights", help="start from this network snapshot")
    p.add_argument("--save-weights", help="write the learned network snapshot here")

    p = add("oracle", cmd_oracle, "shortest plan by breadth-first search")
    p.add_argument("--instance", required=True)

    add("train", cmd_train, "one training session: weights snapshot and curve")
    add("experiment", cmd_experiment, "replicated sessions: aggregated curve file")

    p = add("check", cmd_check, "report clause violations of an assignment")
    p.add_argument("--cnf", required=True)
    p.add_argument("--assignment", required=True)
    p.add_argument("--hard-alpha", type=float, default=bw.HARD_ALPHA)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args, out)
    except CliError as exc:
        print(f"consat: error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"consat: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
