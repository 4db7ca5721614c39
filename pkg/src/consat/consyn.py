"""Symmetric high-order network that descends the proximity-product energy.

Each connection is an undirected set of units with one weight.  A compiled
network carries the negated coefficients of the expanded energy, so unit
inputs are minus the energy gradient and binary threshold updates only ever
lower the energy.  Learning lifts the energy of violating fixed points with
a generalised anti-Hebb rule.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np

from . import kernel as _kernel
from .cnf import (
    HARD_THRESHOLD,
    Activations,
    Violation,
    WeightedCnf,
    clause_monomials,
    format_number,
    prop_energy_polynomial,
    violated_mask,
    violation,
)

log = logging.getLogger(__name__)

COMPILED = "compiled"
RANDOM = "random"
LAMBDA_EPS = 1e-6
LAMBDA_RULES = ("min", "random")
ZERO_TOL = 1e-9


class BudgetExceeded(RuntimeError):
    pass


@dataclass
class SolveMetrics:
    flips: int = 0
    iterations: int = 0
    solved: bool = False
    final_violation: tuple[int, int] = (0, 0)
    must_flips: int = 0
    random_flips: int = 0
    budget_exceeded: bool = False


@dataclass
class ConsynHyper:
    selected_v_clauses: int = 1
    weight_bound: float = 200_000.0
    max_soft: int = 100
    max_random_flips: int = 100
    max_iterations: int = 50_000
    max_flips: int = 10_000_000
    hard_threshold: float = HARD_THRESHOLD
    lambda_rule: str = "random"
    lambda_eps: float = LAMBDA_EPS

    def __post_init__(self):
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValueError(f"lambda_rule must be one of {LAMBDA_RULES}")
        if self.selected_v_clauses < 1:
            raise ValueError("selected_v_clauses must be at least 1")
        if not self.weight_bound > 0:
            raise ValueError("weight_bound must be positive")


class SymmetricNetwork:
    """Connections are sorted unit tuples, one weight each.

    ``offset`` is the constant term of the learned energy.  It has no unit to
    live on and never affects the dynamics, but anti-Hebb steps on clauses
    without negative literals raise it, so :meth:`energy` reports it.
    """

    def __init__(self, num_units: int, connections: Iterable[tuple[int, ...]], weights, offset: float = 0.0):
        self.num_units = int(num_units)
        self.offset = float(offset)
        self.connections = [tuple(int(u) for u in s) for s in connections]
        self.weights = np.array(weights, dtype=np.float64)
        if len(self.weights) != len(self.connections):
            raise ValueError("one weight per connection")
        self.index = {}
        for k, s in enumerate(self.connections):
            if not s or list(s) != sorted(set(s)) or s[-1] >= self.num_units or s[0] < 0:
                raise ValueError(f"bad connection {s}")
            if s in self.index:
                raise ValueError(f"duplicate connection {s}")
            self.index[s] = k
        self._build_csr()
        self._terms = None

    def _build_csr(self):
        sizes = np.array([len(s) for s in self.connections], dtype=np.int64)
        self.conn_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.conn_units = np.fromiter(
            (u for s in self.connections for u in s), dtype=np.int64, count=int(sizes.sum())
        )
        owner = np.repeat(np.arange(len(self.connections), dtype=np.int64), sizes)
        order = np.argsort(self.conn_units, kind="stable")
        counts = np.bincount(self.conn_units, minlength=self.num_units)
        self.unit_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.unit_conns = owner[order]

    @property
    def incidence(self) -> list[list[int]]:
        return [
            self.unit_conns[self.unit_ptr[i]:self.unit_ptr[i + 1]].tolist()
            for i in range(self.num_units)
        ]

    def weight(self, units) -> float:
        return float(self.weights[self.index[tuple(sorted(units))]])

    def copy(self) -> "SymmetricNetwork":
        new = object.__new__(SymmetricNetwork)
        new.__dict__.update(self.__dict__)
        new.weights = self.weights.copy()
        return new

    def kernel(self, clamped=None, backend=None):
        cls = backend or _kernel.FlipKernel
        if clamped is None:
            clamped = np.zeros(self.num_units, dtype=bool)
        return cls(
            self.conn_ptr, self.conn_units, self.unit_ptr, self.unit_conns,
            self.weights, np.asarray(clamped, dtype=np.uint8), ZERO_TOL,
        )

    def energy(self, y) -> float:
        """Network energy ``offset - sum_S w_S prod_{k in S} y_k``."""
        v = y.values if isinstance(y, Activations) else np.asarray(y, dtype=np.float64)
        prods = np.multiply.reduceat(v[self.conn_units], self.conn_ptr[:-1]) if self.connections else []
        return self.offset - float(np.dot(self.weights, prods))

    def clause_terms(self, cnf: WeightedCnf):
        """Per clause: connection ids of its monomials and their signs."""
        if self._terms is not None and self._terms[0] is cnf:
            return self._terms[1]
        terms = []
        for c in cnf.clauses:
            ids, signs = [], []
            for key, sign in clause_monomials(c):
                if key:
                    ids.append(self.index[key])
                    signs.append(sign)
            terms.append((np.array(ids, dtype=np.int64), np.array(signs, dtype=np.float64)))
        self._terms = (cnf, terms)
        return terms


def compile_network(cnf: WeightedCnf, init: str = COMPILED, rng: np.random.Generator | None = None,
                    max_positive: int = 20) -> SymmetricNetwork:
    """One connection per non-constant monomial of the clause expansions.

    Compiled weights are the negated merged coefficients with beta = alpha.
    Monomials whose merged coefficient cancels keep a zero-weight
    connection so that learning can still reach them.
    """
    poly = prop_energy_polynomial(cnf, max_positive=max_positive)
    keys = set()
    for c in cnf.clauses:
        keys.update(key for key, _ in clause_monomials(c) if key)
    keys = sorted(keys, key=lambda k: (len(k), k))
    if init == COMPILED:
        weights = [-poly.monomials.get(k, 0.0) for k in keys]
    elif init == RANDOM:
        if rng is None:
            raise ValueError("random initialisation needs an rng")
        weights = rng.uniform(-1.0, 1.0, size=len(keys))
    else:
        raise ValueError(f"unknown init {init!r}")
    return SymmetricNetwork(cnf.num_vars, keys, weights)


def unit_input(net: SymmetricNetwork, y, i: int) -> float:
    v = y.values if isinstance(y, Activations) else np.asarray(y, dtype=np.float64)
    total = 0.0
    for s in net.unit_conns[net.unit_ptr[i]:net.unit_ptr[i + 1]]:
        prod = 1.0
        for u in net.connections[s]:
            if u != i:
                prod *= v[u]
        total += net.weights[s] * prod
    return total


def _seed(rng: np.random.Generator) -> int:
    return int(rng.integers(1, 2**63))


def _converge(kern, max_random_flips, max_flips, rng, metrics: SolveMetrics | None):
    must, rand, exceeded = kern.converge(int(max_random_flips), int(max_flips), _seed(rng))
    if metrics is not None:
        metrics.must_flips += must
        metrics.random_flips += rand
        metrics.flips += must + rand
    return must + rand, exceeded


def activate_until_convergence(
    net: SymmetricNetwork,
    y: Activations,
    max_random_flips: int,
    rng: np.random.Generator,
    metrics: SolveMetrics | None = None,
    max_flips: int = 10_000_000,
) -> Activations:
    """Asynchronous threshold updates until a fixed point.

    Raises :class:`BudgetExceeded` when ``max_flips`` is reached first.
    """
    if not y.is_boolean():
        raise ValueError("symmetric dynamics need Boolean activations")
    kern = net.kernel(y.clamped)
    kern.set_state(y.values.astype(np.uint8))
    _, exceeded = _converge(kern, max_random_flips, max_flips, rng, metrics)
    if exceeded:
        raise BudgetExceeded(f"no fixed point within {max_flips} flips")
    return Activations(kern.y_values.astype(np.float64), y.clamped.copy())


@dataclass
class AntiHebbResult:
    clauses: list[int] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    skipped: list[int] = field(default_factory=list)
    rescaled: bool = False


def _pick_violated(cnf, values, count, rng, hard_threshold):
    bad = np.flatnonzero(violated_mask(cnf, values))
    if len(bad) == 0:
        return bad
    alphas = cnf.arrays.alpha[bad]
    hard = bad[alphas >= hard_threshold]
    pool = hard if len(hard) else bad
    k = min(count, len(pool))
    return rng.choice(pool, size=k, replace=False)


def _anti_hebb(kern, net, cnf, clamped, chosen, weight_bound, rule="random", eps=LAMBDA_EPS, rng=None) -> AntiHebbResult:
    result = AntiHebbResult()
    terms = net.clause_terms(cnf)
    for ci in chosen:
        ci = int(ci)
        c = cnf.clauses[ci]
        z = kern.z_values
        needs = []
        for lit in c.literals:
            if clamped[lit.var]:
                continue
            zv = z[lit.var]
            # smallest shift that makes this unit unstable
            needs.append(max(0.0, ZERO_TOL - zv) if lit.positive else max(0.0, zv + ZERO_TOL))
        if not needs:
            log.debug("clause %d is fully clamped; skipped", ci)
            result.skipped.append(ci)
            continue
        if rule == "min":
            lam = min(needs) + eps
        else:
            lam = needs[int(rng.integers(len(needs)))] + eps
        ids, signs = terms[ci]
        kern.add_weights(ids, -lam * signs)
        if not any(not lit.positive for lit in c.literals):
            net.offset += lam
        result.clauses.append(ci)
        result.lambdas.append(lam)
    if len(net.weights) and np.max(np.abs(net.weights)) > weight_bound:
        net.weights *= 0.01
        net.offset *= 0.01
        kern.recompute()
        result.rescaled = True
    return result


def anti_hebb_step(
    net: SymmetricNetwork,
    cnf: WeightedCnf,
    y: Activations,
    selected_v_clauses: int = 1,
    weight_bound: float = 200_000.0,
    rng: np.random.Generator | None = None,
    metrics: SolveMetrics | None = None,
    kern=None,
    hard_threshold: float = HARD_THRESHOLD,
    lambda_rule: str = "random",
    lambda_eps: float = LAMBDA_EPS,
) -> AntiHebbResult:
    """Lift the energy of the violating state ``y`` in place on ``net``.

    Up to ``selected_v_clauses`` violated clauses are drawn (hard ones first
    when any hard clause is violated).  Each clause's monomial connections
    move by ``lambda`` in the direction given by the parity of zero-valued
    units.  ``lambda`` is the push that unsettles one clause unit: the
    cheapest one under ``lambda_rule="min"``, a uniformly drawn one under
    ``"random"``, plus ``lambda_eps``.
    """
    rng = rng or np.random.default_rng()
    if kern is None:
        kern = net.kernel(y.clamped)
        kern.set_state(y.values.astype(np.uint8))
    chosen = _pick_violated(cnf, y.values, selected_v_clauses, rng, hard_threshold)
    return _anti_hebb(kern, net, cnf, y.clamped, chosen, weight_bound, lambda_rule, lambda_eps, rng)


def random_start(num_vars: int, clamps, rng: np.random.Generator) -> Activations:
    y = Activations.with_clamps(num_vars, clamps)
    free = ~y.clamped
    y.values[free] = rng.integers(0, 2, size=int(free.sum()))
    return y


def solve(
    net: SymmetricNetwork,
    cnf: WeightedCnf,
    clamps,
    hyper: ConsynHyper | None = None,
    rng: np.random.Generator | None = None,
    on_fixed_point=None,
) -> tuple[Activations, SolveMetrics]:
    """Activate-learn loop until no hard and at most ``max_soft`` soft violations.

    Learned weights stay in ``net``.  ``on_fixed_point(kern, y, violation)``
    is called at every fixed point, which tests use to observe the dynamics.
    """
    hyper = hyper or ConsynHyper()
    rng = rng or np.random.default_rng()
    metrics = SolveMetrics()
    y = random_start(cnf.num_vars, clamps, rng)
    clamped = y.clamped
    kern = net.kernel(clamped)
    kern.set_state(y.values.astype(np.uint8))
    _, exceeded = _converge(kern, hyper.max_random_flips, hyper.max_flips, rng, metrics)

    best: tuple[Violation, np.ndarray] | None = None
    while True:
        values = kern.y_values.astype(np.float64)
        viol = violation(cnf, values, hyper.hard_threshold)
        if best is None or viol.key() < best[0].key():
            best = (viol, values)
        if on_fixed_point is not None and not exceeded:
            on_fixed_point(kern, Activations(values, clamped.copy()), viol)
        if viol.hard == 0 and viol.soft <= hyper.max_soft:
            metrics.solved = True
            break
        if exceeded or metrics.iterations >= hyper.max_iterations or metrics.flips >= hyper.max_flips:
            metrics.budget_exceeded = True
            viol, values = best
            break
        chosen = _pick_violated(cnf, values, hyper.selected_v_clauses, rng, hyper.hard_threshold)
        _anti_hebb(kern, net, cnf, clamped, chosen, hyper.weight_bound,
                   hyper.lambda_rule, hyper.lambda_eps, rng)
        metrics.iterations += 1
        kern.recompute()
        _, exceeded = _converge(
            kern, hyper.max_random_flips, hyper.max_flips - metrics.flips, rng, metrics
        )
    metrics.final_violation = (viol.hard, viol.soft)
    return Activations(values, clamped.copy()), metrics


# -- snapshots -----------------------------------------------------------------

SYMMETRIC_BANNER = "# consat symmetric network v1"


def write_snapshot(net: SymmetricNetwork, out: IO[str]) -> None:
    out.write(SYMMETRIC_BANNER + "\n")
    out.write(f"num_units {net.num_units}\n")
    if net.offset:
        out.write(f"offset {format_number(net.offset)}\n")
    order = sorted(range(len(net.connections)), key=lambda k: (len(net.connections[k]), net.connections[k]))
    for k in order:
        s = net.connections[k]
        out.write(f"{len(s)} {' '.join(map(str, s))} {format_number(net.weights[k])}\n")


def dumps_snapshot(net: SymmetricNetwork) -> str:
    buf = io.StringIO()
    write_snapshot(net, buf)
    return buf.getvalue()


def read_snapshot(src) -> SymmetricNetwork:
    lines = [ln for ln in (src.splitlines() if isinstance(src, str) else src)]
    num_units = None
    offset = 0.0
    conns, weights = [], []
    for lineno, line in enumerate(lines, 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] == "num_units":
            num_units = int(fields[1])
            continue
        if fields[0] == "offset":
            offset = float(fields[1])
            continue
        k = int(fields[0])
        if len(fields) != k + 2:
            raise ValueError(f"line {lineno}: expected {k} units and a weight")
        conns.append(tuple(int(u) for u in fields[1:k + 1]))
        weights.append(float(fields[-1]))
    if num_units is None:
        raise ValueError("snapshot lacks num_units")
    return SymmetricNetwork(num_units, conns, weights, offset)
