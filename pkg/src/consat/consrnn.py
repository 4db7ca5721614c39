"""Recurrent high-order network: sigma-pi feedforward pass plus a copy loop.

The input and output layers both span every CNF variable.  An output unit
``v`` sums a bias, a pairwise weight from every input unit and directed
higher-order connections ``sources -> v`` derived from the proximity-product
monomials; its activation is the logistic of that sum.  Learning is a noisy
delta rule on the violation loss.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import IO

import numpy as np

from .cnf import (
    HARD_THRESHOLD,
    LOGSAT,
    MODES,
    PROP,
    Activations,
    Violation,
    WeightedCnf,
    clause_monomials,
    format_number,
    violation,
)
from .consyn import SolveMetrics


DELTA_NORMS = ("max", "total")


@dataclass
class RnnHyper:
    """Recurrent solver settings.

    ``delta_norm`` picks the divisor of the clause-error sum: ``"total"``
    divides by the summed penalty, matching the normalised violation loss;
    ``"max"`` divides by the largest penalty so that a hard clause carries
    unit weight and the learning rate keeps the same meaning whatever the
    instance size.
    """

    mini_batch: int = 1
    noise_level: float = 0.15
    no_improve: int = 50
    max_soft: int = 100
    noisy_grad_prob: float = 0.06
    learning_rate: float = 0.06
    mode: str = PROP
    max_iterations: int = 20_000
    hard_threshold: float = HARD_THRESHOLD
    delta_norm: str = "max"

    def __post_init__(self):
        for name in ("noise_level", "noisy_grad_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.mini_batch < 1 or self.no_improve < 1 or self.max_iterations < 1:
            raise ValueError("counts must be at least 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.delta_norm not in DELTA_NORMS:
            raise ValueError(f"delta_norm must be one of {DELTA_NORMS}")


def logistic(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


class RecurrentNetwork:
    """Bias, dense pairwise matrix and sparse higher-order connections.

    ``pairwise[u, v]`` is the weight of input ``u`` onto output ``v``.
    Higher-order connections (two or more sources) are kept in CSR form:
    sources of connection ``k`` are ``src[src_ptr[k]:src_ptr[k+1]]``.
    """

    def __init__(self, num_vars, bias, pairwise, sources, targets, weights):
        self.num_vars = int(num_vars)
        self.bias = np.array(bias, dtype=np.float64)
        self.pairwise = np.array(pairwise, dtype=np.float64).reshape(num_vars, num_vars)
        self.sources = [tuple(int(u) for u in s) for s in sources]
        self.targets = np.array(targets, dtype=np.int64)
        self.weights = np.array(weights, dtype=np.float64)
        if any(len(s) < 2 for s in self.sources):
            raise ValueError("higher-order connections need at least two sources")
        if len(set(zip(self.sources, self.targets.tolist()))) != len(self.sources):
            raise ValueError("duplicate directed connection")
        sizes = np.array([len(s) for s in self.sources], dtype=np.int64)
        self.src_ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        self.src = np.fromiter((u for s in self.sources for u in s), dtype=np.int64, count=int(sizes.sum()))

    @property
    def num_connections(self) -> int:
        return self.num_vars + self.num_vars**2 + len(self.sources)

    def connections(self):
        """All directed connections as ``(sources, target, weight)``."""
        for v in range(self.num_vars):
            yield (), v, float(self.bias[v])
        for u in range(self.num_vars):
            for v in range(self.num_vars):
                yield (u,), v, float(self.pairwise[u, v])
        for s, t, w in zip(self.sources, self.targets, self.weights):
            yield s, int(t), float(w)

    def copy(self) -> "RecurrentNetwork":
        new = object.__new__(RecurrentNetwork)
        new.__dict__.update(self.__dict__)
        new.bias = self.bias.copy()
        new.pairwise = self.pairwise.copy()
        new.weights = self.weights.copy()
        return new

    def products(self, x: np.ndarray) -> np.ndarray:
        if len(self.sources) == 0:
            return np.zeros(0)
        return np.multiply.reduceat(x[self.src], self.src_ptr[:-1])

    def net_input(self, x: np.ndarray) -> np.ndarray:
        z = self.bias + x @ self.pairwise
        if len(self.sources):
            z += np.bincount(self.targets, weights=self.weights * self.products(x), minlength=self.num_vars)
        return z


def build(cnf: WeightedCnf, rng: np.random.Generator) -> RecurrentNetwork:
    """Directed permutations of every monomial, full pairwise wiring, biases."""
    n = cnf.num_vars
    higher = set()
    for c in cnf.clauses:
        for key, _ in clause_monomials(c):
            if len(key) < 3:
                continue  # one- and two-unit terms coincide with biases and pairwise weights
            for k, target in enumerate(key):
                higher.add((key[:k] + key[k + 1:], target))
    higher = sorted(higher, key=lambda st: (len(st[0]), st[0], st[1]))
    bias = rng.uniform(-1.0, 1.0, size=n)
    pairwise = rng.uniform(-1.0, 1.0, size=(n, n))
    weights = rng.uniform(-1.0, 1.0, size=len(higher))
    return RecurrentNetwork(n, bias, pairwise, [s for s, _ in higher], [t for _, t in higher], weights)


def forward(net: RecurrentNetwork, x, clamped=None, clamp_values=None) -> np.ndarray:
    """Logistic outputs; clamped positions are overwritten by their inputs."""
    xv = x.values if isinstance(x, Activations) else np.asarray(x, dtype=np.float64)
    out = logistic(net.net_input(xv))
    if clamped is None and isinstance(x, Activations):
        clamped = x.clamped
    if clamped is not None:
        src = xv if clamp_values is None else clamp_values
        out[clamped] = src[clamped]
    return out


def noisy_delta(
    cnf: WeightedCnf,
    y,
    hyper: RnnHyper,
    rng: np.random.Generator,
    clamped=None,
) -> np.ndarray:
    """Per-unit error: minus the loss gradient w.r.t. net input, over violated clauses.

    With probability ``noisy_grad_prob`` a violated clause instead pushes
    one uniformly chosen unit toward its literal's value.
    """
    v = y.values if isinstance(y, Activations) else np.asarray(y, dtype=np.float64)
    if clamped is None and isinstance(y, Activations):
        clamped = y.clamped
    arr = cnf.arrays
    truth = v[arr.var] >= 0.5
    lit_sat = truth == arr.positive
    sat = np.logical_or.reduceat(lit_sat, arr.starts) if len(arr.starts) else np.zeros(0, bool)
    delta = np.zeros(cnf.num_vars)
    bad = np.flatnonzero(~sat)
    if len(bad) == 0:
        return delta
    ends = np.append(arr.starts[1:], len(arr.var))
    noisy = rng.random(len(bad)) < hyper.noisy_grad_prob
    divisor = cnf.total_alpha if hyper.delta_norm == "total" else float(arr.alpha.max())
    scale = 1.0 / divisor

    for ci, is_noisy in zip(bad, noisy):
        lo, hi = arr.starts[ci], ends[ci]
        vars_, pos = arr.var[lo:hi], arr.positive[lo:hi]
        vals = v[vars_]
        alpha = arr.alpha[ci] * scale
        if is_noisy:
            k = int(rng.integers(hi - lo))
            delta[vars_[k]] += alpha * ((1.0 - vals[k]) if pos[k] else -vals[k])
        elif hyper.mode == PROP:
            prox = np.where(pos, 1.0 - vals, vals)
            # violated clause: every proximity is at least 0.5
            others = np.prod(prox) / prox
            grad_v = np.where(pos, -others, others)
            np.add.at(delta, vars_, -alpha * grad_v * vals * (1.0 - vals))
        else:
            prox = np.where(pos, 1.0 - vals, vals)
            tied = np.flatnonzero(prox == prox.min())
            k = int(tied[rng.integers(len(tied))]) if len(tied) > 1 else int(tied[0])
            delta[vars_[k]] += alpha * ((1.0 - vals[k]) if pos[k] else -vals[k])
    if clamped is not None:
        delta[np.asarray(clamped, dtype=bool)] = 0.0
    return delta


class UpdateBatch:
    """Accumulates delta-rule changes until the mini-batch is full."""

    def __init__(self, net: RecurrentNetwork):
        self.bias = np.zeros_like(net.bias)
        self.pairwise = np.zeros_like(net.pairwise)
        self.weights = np.zeros_like(net.weights)
        self.count = 0

    def add(self, net: RecurrentNetwork, x: np.ndarray, delta: np.ndarray, learning_rate: float):
        step = learning_rate * delta
        self.bias += step
        self.pairwise += np.outer(x, step)
        if len(net.sources):
            self.weights += step[net.targets] * net.products(x)
        self.count += 1


def apply_updates(net: RecurrentNetwork, batch: UpdateBatch) -> None:
    """Add the mean accumulated change to every weight and clear the batch."""
    if batch.count == 0:
        return
    net.bias += batch.bias / batch.count
    net.pairwise += batch.pairwise / batch.count
    net.weights += batch.weights / batch.count
    batch.bias[:] = 0.0
    batch.pairwise[:] = 0.0
    batch.weights[:] = 0.0
    batch.count = 0


def solve(
    net: RecurrentNetwork,
    cnf: WeightedCnf,
    clamps,
    hyper: RnnHyper | None = None,
    rng: np.random.Generator | None = None,
    trace=None,
) -> tuple[Activations, SolveMetrics]:
    """Forward, check, learn and feed back until the violation is small enough.

    ``trace``, when given, receives the violation of every forward pass.
    """
    hyper = hyper or RnnHyper()
    rng = rng or np.random.default_rng()
    metrics = SolveMetrics()
    x = Activations.with_clamps(cnf.num_vars, clamps)
    clamped, free = x.clamped, ~x.clamped
    n_free = int(free.sum())
    inputs = x.values.copy()
    inputs[free] = rng.random(n_free)
    batch = UpdateBatch(net)

    out = forward(net, inputs, clamped)
    best: tuple[Violation, np.ndarray] | None = None
    stale = 0
    while True:
        viol = violation(cnf, out, hyper.hard_threshold)
        if trace is not None:
            trace(viol)
        if best is None or viol.key() < best[0].key():
            best, stale = (viol, out.copy()), 0
        else:
            stale += 1
        if viol.hard == 0 and viol.soft <= hyper.max_soft:
            metrics.solved = True
            break
        if metrics.iterations >= hyper.max_iterations:
            metrics.budget_exceeded = True
            viol, out = best
            break
        metrics.iterations += 1
        delta = noisy_delta(cnf, out, hyper, rng, clamped)
        batch.add(net, inputs, delta, hyper.learning_rate)
        if batch.count >= hyper.mini_batch:
            apply_updates(net, batch)
        if stale >= hyper.no_improve:
            inputs[free] = rng.random(n_free)
            stale = 0
        else:
            inputs[free] = out[free]
            noisy = free & (rng.random(cnf.num_vars) < hyper.noise_level)
            inputs[noisy] = rng.random(int(noisy.sum()))
        out = forward(net, inputs, clamped)
    metrics.final_violation = (viol.hard, viol.soft)
    return Activations(out, clamped.copy()), metrics


# -- snapshots -----------------------------------------------------------------

RECURRENT_BANNER = "# consat recurrent network v1"


def write_snapshot(net: RecurrentNetwork, out: IO[str]) -> None:
    out.write(RECURRENT_BANNER + "\n")
    out.write(f"num_units {net.num_vars}\n")
    for sources, target, weight in net.connections():
        srcs = " ".join(map(str, sources))
        sep = " " if sources else ""
        out.write(f"{len(sources)} {srcs}{sep}-> {target} {format_number(weight)}\n")


def dumps_snapshot(net: RecurrentNetwork) -> str:
    buf = io.StringIO()
    write_snapshot(net, buf)
    return buf.getvalue()


def read_snapshot(src) -> RecurrentNetwork:
    lines = src.splitlines() if isinstance(src, str) else list(src)
    n = None
    bias = pairwise = None
    sources, targets, weights = [], [], []
    for lineno, line in enumerate(lines, 1):
        fields = line.split()
        if not fields or fields[0].startswith("#"):
            continue
        if fields[0] == "num_units":
            n = int(fields[1])
            bias = np.zeros(n)
            pairwise = np.zeros((n, n))
            continue
        if n is None:
            raise ValueError("snapshot lacks num_units before connections")
        k = int(fields[0])
        if len(fields) != k + 4 or fields[k + 1] != "->":
            raise ValueError(f"line {lineno}: malformed connection")
        srcs = tuple(int(u) for u in fields[1:k + 1])
        target, weight = int(fields[k + 2]), float(fields[k + 3])
        if k == 0:
            bias[target] = weight
        elif k == 1:
            pairwise[srcs[0], target] = weight
        else:
            sources.append(srcs)
            targets.append(target)
            weights.append(weight)
    if n is None:
        raise ValueError("snapshot lacks num_units")
    return RecurrentNetwork(n, bias, pairwise, sources, targets, weights)


def prop_vloss_violated(cnf: WeightedCnf, y, clauses) -> float:
    """ProP loss summed over ``clauses`` and normalised by the total penalty."""
    v = y.values if isinstance(y, Activations) else np.asarray(y, dtype=np.float64)
    total = math.fsum(
        cnf.clauses[k].alpha * math.prod((1.0 - v[l.var]) if l.positive else v[l.var]
                                         for l in cnf.clauses[k].literals)
        for k in clauses
    )
    return total / cnf.total_alpha
