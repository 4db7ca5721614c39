"""Weighted CNF model, violation losses and their gradients.

A weighted CNF is a conjunction of clauses, each carrying a positive penalty
``alpha``.  Activations are real values in ``[0, 1]``; a value is read as
Boolean true when it is at least 0.5.

Two per-clause losses are provided:

* ``prop`` - product of the literal proximities (multilinear, doubles as an
  energy polynomial for the symmetric network),
* ``logsat`` - negative log of the best literal's satisfaction degree.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

HARD_THRESHOLD = 1000.0
LOGSAT_SENTINEL = 1e9
MAX_POSITIVE_LITERALS = 20

PROP = "prop"
LOGSAT = "logsat"
MODES = (PROP, LOGSAT)


class Literal(NamedTuple):
    var: int
    positive: bool

    def __str__(self):
        return f"{'' if self.positive else '-'}{self.var + 1}"


@dataclass(frozen=True)
class Clause:
    literals: tuple[Literal, ...]
    alpha: float = 1.0

    def __post_init__(self):
        lits = tuple(Literal(int(v), bool(p)) for v, p in self.literals)
        object.__setattr__(self, "literals", lits)
        object.__setattr__(self, "alpha", float(self.alpha))
        if not lits:
            raise ValueError("clause needs at least one literal")
        if not self.alpha > 0:
            raise ValueError(f"clause penalty must be positive, got {self.alpha}")
        seen = [lit.var for lit in lits]
        if len(set(seen)) != len(seen):
            raise ValueError(f"clause repeats a variable: {lits}")

    @classmethod
    def of(cls, *lits: int, alpha: float = 1.0) -> "Clause":
        """Build from DIMACS-style signed 1-based integers."""
        return cls(tuple(Literal(abs(x) - 1, x > 0) for x in lits), alpha)

    @property
    def vars(self) -> tuple[int, ...]:
        return tuple(lit.var for lit in self.literals)

    def __len__(self):
        return len(self.literals)


@dataclass(frozen=True)
class WeightedCnf:
    num_vars: int
    clauses: tuple[Clause, ...]
    var_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "clauses", tuple(self.clauses))
        if self.var_names is not None:
            names = tuple(self.var_names)
            if len(names) != self.num_vars:
                raise ValueError("var_names must name every variable")
            object.__setattr__(self, "var_names", names)
        for c in self.clauses:
            for lit in c.literals:
                if not 0 <= lit.var < self.num_vars:
                    raise ValueError(f"literal {lit} out of range for {self.num_vars} vars")
        if self.clauses and not self.total_alpha > 0:
            raise ValueError("sum of penalties must be positive")

    @cached_property
    def total_alpha(self) -> float:
        return math.fsum(c.alpha for c in self.clauses)

    @cached_property
    def arrays(self) -> "ClauseArrays":
        return ClauseArrays.build(self)

    def __len__(self):
        return len(self.clauses)


@dataclass(frozen=True)
class ClauseArrays:
    """Flat literal arrays for vectorised clause evaluation."""

    var: np.ndarray
    positive: np.ndarray
    clause_of: np.ndarray
    starts: np.ndarray
    alpha: np.ndarray

    @classmethod
    def build(cls, cnf: WeightedCnf) -> "ClauseArrays":
        var, pos, owner, starts = [], [], [], []
        for k, c in enumerate(cnf.clauses):
            starts.append(len(var))
            for lit in c.literals:
                var.append(lit.var)
                pos.append(lit.positive)
                owner.append(k)
        return cls(
            np.asarray(var, dtype=np.int64),
            np.asarray(pos, dtype=bool),
            np.asarray(owner, dtype=np.int64),
            np.asarray(starts, dtype=np.int64),
            np.asarray([c.alpha for c in cnf.clauses], dtype=np.float64),
        )

    def satisfied(self, values: np.ndarray) -> np.ndarray:
        truth = np.asarray(values)[self.var] >= 0.5
        lit_sat = truth == self.positive
        if len(self.starts) == 0:
            return np.zeros(0, dtype=bool)
        return np.logical_or.reduceat(lit_sat, self.starts)


@dataclass
class Activations:
    """Per-variable values in [0, 1] plus a clamp mask."""

    values: np.ndarray
    clamped: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.clamped is None:
            self.clamped = np.zeros(len(self.values), dtype=bool)
        else:
            self.clamped = np.asarray(self.clamped, dtype=bool)
        if self.clamped.shape != self.values.shape:
            raise ValueError("clamp mask and values differ in shape")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("activation values must lie in [0, 1]")
        pinned = self.values[self.clamped]
        if np.any((pinned != 0.0) & (pinned != 1.0)):
            raise ValueError("clamped values must be exactly 0 or 1")

    @classmethod
    def with_clamps(cls, num_vars: int, clamps: Iterable[tuple[int, bool]], fill: float = 0.0):
        values = np.full(num_vars, fill, dtype=np.float64)
        mask = np.zeros(num_vars, dtype=bool)
        for var, val in clamps:
            values[var] = 1.0 if val else 0.0
            mask[var] = True
        return cls(values, mask)

    def copy(self) -> "Activations":
        return Activations(self.values.copy(), self.clamped.copy())

    def boolean(self) -> np.ndarray:
        return self.values >= 0.5

    def is_boolean(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    def __len__(self):
        return len(self.values)


def _values(y) -> np.ndarray:
    if isinstance(y, Activations):
        return y.values
    return np.asarray(y, dtype=np.float64)


class Violation(NamedTuple):
    hard: int
    soft: int
    penalty: float

    def key(self):
        return (self.hard, self.soft, self.penalty)


def boolean_of(value: float) -> bool:
    return value >= 0.5


def clause_satisfied(c: Clause, y) -> bool:
    v = _values(y)
    return any(boolean_of(v[lit.var]) == lit.positive for lit in c.literals)


def violated_mask(cnf: WeightedCnf, y) -> np.ndarray:
    return ~cnf.arrays.satisfied(_values(y))


def violation(cnf: WeightedCnf, y, hard_threshold: float = HARD_THRESHOLD) -> Violation:
    """Count violated hard and soft clauses and sum their penalties."""
    arrays = cnf.arrays
    bad = ~arrays.satisfied(_values(y))
    alphas = arrays.alpha[bad]
    hard = int(np.count_nonzero(alphas >= hard_threshold))
    return Violation(hard, len(alphas) - hard, math.fsum(alphas))


def proximity(lit: Literal, v: float) -> float:
    return 1.0 - v if lit.positive else v


def prop_clause_loss(c: Clause, y) -> float:
    v = _values(y)
    out = 1.0
    for lit in c.literals:
        out *= proximity(lit, v[lit.var])
    return out


def logsat_clause_loss(c: Clause, y) -> float:
    v = _values(y)
    best = max(1.0 - proximity(lit, v[lit.var]) for lit in c.literals)
    if best <= 0.0:
        return LOGSAT_SENTINEL
    return -math.log(best)


def clause_loss(c: Clause, y, mode: str = PROP) -> float:
    if mode == PROP:
        return prop_clause_loss(c, y)
    if mode == LOGSAT:
        return logsat_clause_loss(c, y)
    raise ValueError(f"unknown loss mode {mode!r}")


def vloss(cnf: WeightedCnf, y, mode: str = PROP) -> float:
    """Penalty-weighted average of the per-clause losses."""
    total = math.fsum(c.alpha * clause_loss(c, y, mode) for c in cnf.clauses)
    return total / cnf.total_alpha


def prop_clause_grad_v(c: Clause, y) -> dict[int, float]:
    v = _values(y)
    prox = [proximity(lit, v[lit.var]) for lit in c.literals]
    grad = {}
    for k, lit in enumerate(c.literals):
        rest = 1.0
        for m, p in enumerate(prox):
            if m != k:
                rest *= p
        grad[lit.var] = -rest if lit.positive else rest
    return grad


def prop_clause_grad_z(c: Clause, y) -> dict[int, float]:
    v = _values(y)
    return {var: g * v[var] * (1.0 - v[var]) for var, g in prop_clause_grad_v(c, y).items()}


def minimal_proximity_literal(c: Clause, y, rng: np.random.Generator | None = None) -> Literal:
    """The literal closest to its desired value; ties drawn uniformly with ``rng``."""
    v = _values(y)
    prox = [proximity(lit, v[lit.var]) for lit in c.literals]
    low = min(prox)
    tied = [lit for lit, p in zip(c.literals, prox) if p == low]
    if len(tied) == 1 or rng is None:
        return tied[0]
    return tied[int(rng.integers(len(tied)))]


def logsat_grad_z(c: Clause, y, rng: np.random.Generator | None = None) -> dict[int, float]:
    v = _values(y)
    grad = {lit.var: 0.0 for lit in c.literals}
    best = minimal_proximity_literal(c, v, rng)
    x = v[best.var]
    grad[best.var] = x - 1.0 if best.positive else x
    return grad


# -- energy polynomial ------------------------------------------------------


def clause_monomials(c: Clause) -> list[tuple[tuple[int, ...], int]]:
    """Signed monomials of the expanded proximity product of one clause.

    Every term holds all negative-literal variables plus a subset of the
    positive-literal ones; the sign is ``(-1) ** len(subset)``.
    """
    neg = [lit.var for lit in c.literals if not lit.positive]
    pos = [lit.var for lit in c.literals if lit.positive]
    terms = []
    for r in range(len(pos) + 1):
        sign = -1 if r % 2 else 1
        for subset in combinations(pos, r):
            terms.append((tuple(sorted(neg + list(subset))), sign))
    return terms


class EnergyPolynomial:
    """Multilinear polynomial stored as ``{sorted var tuple: coefficient}``."""

    def __init__(self, monomials: dict[tuple[int, ...], float] | None = None):
        self.monomials: dict[tuple[int, ...], float] = {}
        for key, coeff in (monomials or {}).items():
            if coeff != 0:
                self.monomials[tuple(sorted(key))] = float(coeff)

    @property
    def constant(self) -> float:
        return self.monomials.get((), 0.0)

    def terms(self):
        """Non-constant monomials in sorted order."""
        return sorted((k, c) for k, c in self.monomials.items() if k)

    def evaluate(self, y) -> float:
        v = _values(y)
        return math.fsum(coeff * float(np.prod(v[list(key)])) for key, coeff in self.monomials.items())

    def gradient(self, y) -> np.ndarray:
        v = _values(y)
        grad = np.zeros(len(v))
        for key, coeff in self.monomials.items():
            for k, var in enumerate(key):
                rest = key[:k] + key[k + 1:]
                grad[var] += coeff * float(np.prod(v[list(rest)]))
        return grad

    def __eq__(self, other):
        return isinstance(other, EnergyPolynomial) and self.monomials == other.monomials

    def __len__(self):
        return len(self.monomials)

    def __repr__(self):
        return f"EnergyPolynomial({format_polynomial(self)})"


def format_polynomial(poly: EnergyPolynomial, names: Sequence[str] | None = None) -> str:
    parts = []
    for key, coeff in sorted(poly.monomials.items(), key=lambda kv: (len(kv[0]), kv[0])):
        label = "*".join(names[v] if names else f"x{v}" for v in key) or "1"
        parts.append(f"{coeff:+g}{'' if not key else '*' + label}")
    return " ".join(parts) or "0"


def prop_energy_polynomial(
    cnf: WeightedCnf,
    betas: Sequence[float] | None = None,
    max_positive: int = MAX_POSITIVE_LITERALS,
) -> EnergyPolynomial:
    """Expand ``sum_c beta_c * ProP(c, y)`` into merged monomials.

    ``betas`` defaults to the clause penalties.  Like terms are summed with
    ``math.fsum`` so the result does not depend on clause order.
    """
    if betas is None:
        betas = [c.alpha for c in cnf.clauses]
    if len(betas) != len(cnf.clauses):
        raise ValueError("need one beta per clause")
    acc: dict[tuple[int, ...], list[float]] = defaultdict(list)
    for c, beta in zip(cnf.clauses, betas):
        if not beta > 0:
            raise ValueError("betas must be positive")
        npos = sum(lit.positive for lit in c.literals)
        if npos > max_positive:
            raise ValueError(f"clause has {npos} positive literals, cap is {max_positive}")
        for key, sign in clause_monomials(c):
            acc[key].append(sign * float(beta))
    return EnergyPolynomial({k: math.fsum(v) for k, v in acc.items()})


# -- WCNF files ---------------------------------------------------------------

WCNF_BANNER = "c consat wcnf v1"


def format_number(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def write_wcnf(cnf: WeightedCnf, out: IO[str], comments: Sequence[str] = ()) -> None:
    out.write(WCNF_BANNER + "\n")
    for line in comments:
        out.write(f"c {line}\n")
    if cnf.var_names is not None:
        for k, name in enumerate(cnf.var_names):
            out.write(f"c var {k + 1} {name}\n")
    out.write(f"p wcnf {cnf.num_vars} {len(cnf.clauses)}\n")
    for c in cnf.clauses:
        lits = " ".join(str(lit) for lit in c.literals)
        out.write(f"{format_number(c.alpha)} {lits} 0\n")


def dumps_wcnf(cnf: WeightedCnf, comments: Sequence[str] = ()) -> str:
    import io

    buf = io.StringIO()
    write_wcnf(cnf, buf, comments)
    return buf.getvalue()


def read_wcnf(src: IO[str] | Iterable[str]) -> WeightedCnf:
    num_vars = num_clauses = None
    names: dict[int, str] = {}
    clauses = []
    for lineno, line in enumerate(src, 1):
        fields = line.split()
        if not fields:
            continue
        if fields[0] == "c":
            if len(fields) >= 4 and fields[1] == "var":
                names[int(fields[2]) - 1] = " ".join(fields[3:])
            continue
        if fields[0] == "p":
            if len(fields) != 4 or fields[1] != "wcnf":
                raise ValueError(f"line {lineno}: bad header {line.strip()!r}")
            num_vars, num_clauses = int(fields[2]), int(fields[3])
            continue
        if num_vars is None:
            raise ValueError(f"line {lineno}: clause before header")
        if fields[-1] != "0":
            raise ValueError(f"line {lineno}: clause not terminated by 0")
        alpha = float(fields[0])
        clauses.append(Clause.of(*(int(x) for x in fields[1:-1]), alpha=alpha))
    if num_vars is None:
        raise ValueError("missing 'p wcnf' header")
    if num_clauses != len(clauses):
        raise ValueError(f"header declares {num_clauses} clauses, found {len(clauses)}")
    var_names = None
    if names:
        if len(names) != num_vars:
            raise ValueError("variable name comments must cover every variable")
        var_names = tuple(names[k] for k in range(num_vars))
    return WeightedCnf(num_vars, tuple(clauses), var_names)


def loads_wcnf(text: str) -> WeightedCnf:
    return read_wcnf(text.splitlines())
