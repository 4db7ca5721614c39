"""Reference oracles and the train/test practice protocol.

A training session solves a sequence of training instances with one network
whose weights carry over, and periodically measures a fixed test set.  Each
test solve starts from a copy of the current weights, so measuring never
changes what the session has learned.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np

from . import blockworld as bw
from . import consrnn, consyn
from .cnf import Activations, WeightedCnf

log = logging.getLogger(__name__)

CONSYN = "consyn"
CONSRNN = "consrnn"
ARCHITECTURES = (CONSYN, CONSRNN)
CONFIG_BANNER = "# consat experiment config v1"
CURVE_BANNER = "# consat curve v1"
CURVE_HEADER = ("trained_on", "mean_cost", "std_cost", "solve_rate")
BRUTE_FORCE_LIMIT = 24


def brute_force_min_violation(cnf: WeightedCnf, clamps=()) -> tuple[float, Activations]:
    """Enumerate every assignment of the unclamped variables.

    Returns the smallest summed penalty of violated clauses and the first
    assignment (in binary counting order) that attains it.
    """
    y = Activations.with_clamps(cnf.num_vars, clamps)
    free = np.flatnonzero(~y.clamped)
    if len(free) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"{len(free)} unclamped variables exceed the limit of {BRUTE_FORCE_LIMIT}")
    arr = cnf.arrays
    best, witness = None, None
    # enumerate in chunks so each chunk is one vectorised evaluation
    bits = np.arange(len(free), dtype=np.int64)
    chunk = 1 << min(len(free), 16)
    total = 1 << len(free)
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(lo + chunk, total), dtype=np.int64)
        states = np.broadcast_to(y.values, (len(codes), cnf.num_vars)).copy()
        states[:, free] = (codes[:, None] >> bits) & 1
        lit_true = (states[:, arr.var] >= 0.5) == arr.positive
        sat = np.logical_or.reduceat(lit_true, arr.starts, axis=1)
        penalty = (~sat).astype(np.float64) @ arr.alpha
        k = int(np.argmin(penalty))
        if best is None or penalty[k] < best:
            best, witness = float(penalty[k]), states[k]
    return best, Activations(witness.astype(np.float64), y.clamped.copy())


# -- configuration -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one practice experiment.

    ``schedule`` lists ``(n_blocks, count)`` training stages; when empty the
    training set is ``train_size`` instances of ``train_difficulty`` blocks.
    """

    architecture: str = CONSYN
    init: str = consyn.COMPILED
    train_difficulty: int = 3
    test_difficulty: int = 3
    train_size: int = 100
    test_size: int = 50
    test_every: int = 10
    replications: int = 10
    seed: int = 0
    bounds: bw.Bounds = field(default_factory=lambda: bw.Bounds(6, 7))
    consyn_hyper: consyn.ConsynHyper = field(default_factory=consyn.ConsynHyper)
    rnn_hyper: consrnn.RnnHyper = field(default_factory=consrnn.RnnHyper)
    schedule: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.init not in (consyn.COMPILED, consyn.RANDOM):
            raise ValueError("init must be 'compiled' or 'random'")
        if self.train_size < 0 or self.test_size < 1 or self.test_every < 1 or self.replications < 1:
            raise ValueError("sizes must be at least 1 (train_size may be 0)")
        self.schedule = tuple((int(d), int(c)) for d, c in self.schedule)
        for d in [self.test_difficulty, *(d for d, _ in self.training_stages())]:
            if not 1 <= d <= self.bounds.max_blocks:
                raise ValueError(f"difficulty {d} outside 1..{self.bounds.max_blocks} for these bounds")

    def training_stages(self) -> tuple[tuple[int, int], ...]:
        return self.schedule or ((self.train_difficulty, self.train_size),)

    @property
    def hyper(self):
        return self.consyn_hyper if self.architecture == CONSYN else self.rnn_hyper


_SCALAR_KEYS = ("architecture", "init", "train_difficulty", "test_difficulty", "train_size",
                "test_size", "test_every", "replications", "seed")


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    known = set(_SCALAR_KEYS) | {"bounds", "hyper", "schedule"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    bounds = bw.Bounds(**data.pop("bounds", {"n_objects": 6, "k_steps": 7}))
    hyper = data.pop("hyper", {})
    arch = data.get("architecture", CONSYN)
    hyper_cls = consyn.ConsynHyper if arch == CONSYN else consrnn.RnnHyper
    names = {f.name for f in dataclasses.fields(hyper_cls)}
    bad = sorted(set(hyper) - names)
    if bad:
        raise ValueError(f"unknown hyper keys for {arch}: {', '.join(bad)}")
    schedule = tuple(tuple(s) for s in data.pop("schedule", ()))
    hyper_obj = hyper_cls(**hyper)
    kwargs = {"consyn_hyper" if arch == CONSYN else "rnn_hyper": hyper_obj}
    return ExperimentConfig(bounds=bounds, schedule=schedule, **kwargs, **data)


def loads_config(text: str) -> ExperimentConfig:
    import tomli

    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.strip() != CONFIG_BANNER:
        raise ValueError(f"config must start with {CONFIG_BANNER!r}")
    return config_from_dict(tomli.loads(text))


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return loads_config(fh.read())


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v) if isinstance(v, float) else str(v)


def dumps_config(cfg: ExperimentConfig) -> str:
    lines = [CONFIG_BANNER]
    for k in _SCALAR_KEYS:
        lines.append(f"{k} = {_toml_value(getattr(cfg, k))}")
    for f in dataclasses.fields(cfg.bounds):
        lines.append(f"bounds.{f.name} = {_toml_value(getattr(cfg.bounds, f.name))}")
    for f in dataclasses.fields(cfg.hyper):
        lines.append(f"hyper.{f.name} = {_toml_value(getattr(cfg.hyper, f.name))}")
    if cfg.schedule:
        lines.append(f"schedule = {_toml_value(cfg.schedule)}")
    return "\n".join(lines) + "\n"


# -- sessions ----------------------------------------------------------------


@dataclass(frozen=True)
class CurvePoint:
    trained_on: int
    mean_cost: float
    std_cost: float
    solve_rate: float


@dataclass
class EvalRun:
    """Outcome of one test-instance solve."""

    cost: float
    solved: bool
    plan_valid: bool
    hard_violated: int


@dataclass
class SessionResult:
    replications: list[list[CurvePoint]]
    aggregate: list[CurvePoint]
    runs: list[list[list[EvalRun]]]
    network: object = None


class Workbench:
    """Grounded CNF, index and solver entry points for one set of bounds."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.index = bw.build_index(cfg.bounds)
        self.cnf = bw.ground(cfg.bounds)

    def new_network(self, rng: np.random.Generator):
        if self.cfg.architecture == CONSYN:
            return consyn.compile_network(self.cnf, self.cfg.init, rng=rng)
        return consrnn.build(self.cnf, rng)

    def solve(self, net, inst: bw.PlanningInstance, rng: np.random.Generator):
        clamps = bw.clamp_literals(inst, self.index)
        if self.cfg.architecture == CONSYN:
            y, m = consyn.solve(net, self.cnf, clamps, self.cfg.consyn_hyper, rng)
            cost = m.flips
        else:
            y, m = consrnn.solve(net, self.cnf, clamps, self.cfg.rnn_hyper, rng)
            cost = m.iterations
        return y, m, cost

    def test_run(self, net, inst, rng) -> EvalRun:
        y, m, cost = self.solve(net.copy(), inst, rng)
        ok, _ = bw.validate_plan(bw.decode_plan(y, self.index), inst)
        return EvalRun(float(cost), m.solved, ok, m.final_violation[0])


def _point(trained_on: int, runs: list[EvalRun]) -> CurvePoint:
    costs = np.array([r.cost for r in runs])
    return CurvePoint(trained_on, float(costs.mean()), float(costs.std()),
                      float(np.mean([r.solved for r in runs])))


def aggregate(curves: list[list[CurvePoint]]) -> list[CurvePoint]:
    """Mean and spread of the per-replication means at each checkpoint."""
    out = []
    for pts in zip(*curves):
        means = np.array([p.mean_cost for p in pts])
        out.append(CurvePoint(pts[0].trained_on, float(means.mean()), float(means.std()),
                              float(np.mean([p.solve_rate for p in pts]))))
    return out


def replication_streams(seed: int, replications: int):
    """Independent (train, test, solver, evaluation) streams per replication.

    The first three are generators.  The fourth is a SeedSequence whose
    children seed the solver on each test instance; every test point reuses
    them, so successive points differ only through the learned weights.
    """
    for child in np.random.SeedSequence(seed).spawn(replications):
        train, test, solve, evaluation = child.spawn(4)
        yield (np.random.default_rng(train), np.random.default_rng(test),
               np.random.default_rng(solve), evaluation)


def run_training_session(
    cfg: ExperimentConfig,
    progress: Callable[[int, CurvePoint], None] | None = None,
) -> SessionResult:
    bench = Workbench(cfg)
    curves, all_runs, net = [], [], None
    for rep, (train_rng, test_rng, solve_rng, eval_seq) in enumerate(
            replication_streams(cfg.seed, cfg.replications)):
        train = [bw.generate_instance(train_rng, d, cfg.bounds)
                 for d, count in cfg.training_stages() for _ in range(count)]
        if not cfg.schedule:
            train = [train[i] for i in train_rng.permutation(len(train))]
        test = [bw.generate_instance(test_rng, cfg.test_difficulty, cfg.bounds) for _ in range(cfg.test_size)]
        eval_seeds = eval_seq.spawn(len(test))
        net = bench.new_network(solve_rng)

        def measure(trained_on):
            runs = [bench.test_run(net, inst, np.random.default_rng(s)) for inst, s in zip(test, eval_seeds)]
            point = _point(trained_on, runs)
            rep_runs.append(runs)
            curve.append(point)
            log.info("replication %d trained_on %d mean %.1f solved %.2f",
                     rep, trained_on, point.mean_cost, point.solve_rate)
            if progress is not None:
                progress(rep, point)

        curve, rep_runs = [], []
        measure(0)
        for k, inst in enumerate(train, 1):
            bench.solve(net, inst, solve_rng)
            if k % cfg.test_every == 0:
                measure(k)
        curves.append(curve)
        all_runs.append(rep_runs)
    return SessionResult(curves, aggregate(curves), all_runs, net)


# -- curve files -----------------------------------------------------------------


def write_curve(points: list[CurvePoint], out: IO[str]) -> None:
    out.write(CURVE_BANNER + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for p in points:
        writer.writerow([p.trained_on, repr(p.mean_cost), repr(p.std_cost), repr(p.solve_rate)])


def read_curve(src: IO[str]) -> list[CurvePoint]:
    lines = [ln for ln in src if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != CURVE_HEADER:
        raise ValueError("curve file lacks the expected header")
    return [CurvePoint(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]


def validation_instances(seed: int, n_blocks: int, bounds: bw.Bounds, count: int = 50):
    """A held-out set drawn from a stream no training session uses."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 << 30,)))
    return [bw.generate_instance(rng, n_blocks, bounds) for _ in range(count)]
