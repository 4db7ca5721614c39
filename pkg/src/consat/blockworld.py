"""Block-world planning domain: grounding, instances, decoding and oracles.

Objects are binders ``0 .. n_objects-1``.  Object 0 is the floor, blocks are
``1 .. n_blocks`` and any remaining binders are unused.  Time steps run
``0 .. k_steps-1``; moves happen at ``0 .. k_steps-2`` and take effect one
step later.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from typing import NamedTuple

import numpy as np

from .cnf import Activations, Clause, Literal, WeightedCnf, boolean_of

log = logging.getLogger(__name__)

FLOOR = 0

HARD_ALPHA = 1000.0
SOFT_ALPHA = 1.0


@dataclass(frozen=True)
class Bounds:
    n_objects: int
    k_steps: int
    n_colors: int = 3
    n_sizes: int = 3

    def __post_init__(self):
        if self.n_objects < 2 or self.k_steps < 2 or self.n_colors < 1 or self.n_sizes < 1:
            raise ValueError(f"invalid bounds {self}")

    @property
    def max_blocks(self) -> int:
        return self.n_objects - 1

    @property
    def max_moves(self) -> int:
        return self.k_steps - 1


class Atom(NamedTuple):
    relation: str
    args: tuple[int, ...]

    def __str__(self):
        return f"{self.relation}({','.join(map(str, self.args))})"


class CrossbarIndex:
    """Bijection between grounded atoms and variable indices.

    Layout, crossbar by crossbar: Above(i,j,t), Move(i,t) for t < K-1,
    Cleared(i,t), Floor(i), Color(i,c), Size(i,s); each in row-major order
    of its arguments.
    """

    RELATIONS = ("Above", "Move", "Cleared", "Floor", "Color", "Size")

    def __init__(self, bounds: Bounds):
        self.bounds = bounds
        n, k = bounds.n_objects, bounds.k_steps
        self.shapes = {
            "Above": (n, n, k),
            "Move": (n, k - 1),
            "Cleared": (n, k),
            "Floor": (n,),
            "Color": (n, bounds.n_colors),
            "Size": (n, bounds.n_sizes),
        }
        self.offsets = {}
        total = 0
        for rel in self.RELATIONS:
            self.offsets[rel] = total
            total += int(np.prod(self.shapes[rel]))
        self.num_vars = total

    def var(self, relation: str, *args: int) -> int:
        shape = self.shapes[relation]
        if len(args) != len(shape) or any(not 0 <= a < s for a, s in zip(args, shape)):
            raise IndexError(f"{relation}{args} outside {shape}")
        return self.offsets[relation] + int(np.ravel_multi_index(args, shape))

    def above(self, i: int, j: int, t: int) -> int:
        return self.var("Above", i, j, t)

    def move(self, i: int, t: int) -> int:
        return self.var("Move", i, t)

    def cleared(self, i: int, t: int) -> int:
        return self.var("Cleared", i, t)

    def floor(self, i: int) -> int:
        return self.var("Floor", i)

    def color(self, i: int, c: int) -> int:
        return self.var("Color", i, c)

    def size(self, i: int, s: int) -> int:
        return self.var("Size", i, s)

    def atom(self, index: int) -> Atom:
        if not 0 <= index < self.num_vars:
            raise IndexError(index)
        for rel in reversed(self.RELATIONS):
            off = self.offsets[rel]
            if index >= off:
                args = np.unravel_index(index - off, self.shapes[rel])
                return Atom(rel, tuple(int(a) for a in args))
        raise AssertionError("unreachable")

    def names(self) -> tuple[str, ...]:
        return tuple(str(self.atom(k)) for k in range(self.num_vars))

    def block(self, relation: str) -> slice:
        off = self.offsets[relation]
        return slice(off, off + int(np.prod(self.shapes[relation])))


def build_index(bounds: Bounds) -> CrossbarIndex:
    return CrossbarIndex(bounds)


# -- grounding ----------------------------------------------------------------


def _lits(*pairs) -> tuple[Literal, ...]:
    return tuple(Literal(v, p) for v, p in pairs)


def grounding_rows(bounds: Bounds, index: CrossbarIndex | None = None, frame: bool = True):
    """Yield ``(row_name, literal tuples)`` for every hard constraint row.

    Symmetric rows (two objects above one, one object above two) are grounded
    over unordered pairs so no clause is emitted twice.
    """
    ix = index or CrossbarIndex(bounds)
    N, K = bounds.n_objects, bounds.k_steps
    objs = range(N)
    A, M, C, F = ix.above, ix.move, ix.cleared, ix.floor

    yield "persist", [
        _lits((A(i, k, t), False), (A(i, k, t - 1), True), (M(i, t - 1), True))
        for i in objs for k in objs for t in range(1, K)
    ]
    yield "shared_below_is_floor", [
        _lits((A(i, k, t), False), (A(j, k, t), False), (F(k), True))
        for i, j in combinations(objs, 2) for k in objs for t in range(K)
    ]
    yield "not_above_self", [_lits((A(i, i, t), False)) for i in objs for t in range(K)]
    yield "single_below", [
        _lits((A(i, j, t), False), (A(i, k, t), False))
        for i in objs for j, k in combinations(objs, 2) for t in range(K)
    ]
    yield "floor_not_above", [
        _lits((F(j), False), (A(j, i, t), False)) for i in objs for j in objs for t in range(K)
    ]
    yield "covered_not_cleared", [
        _lits((F(j), True), (A(i, j, t), False), (C(j, t), False))
        for i in objs for j in objs for t in range(K)
    ]
    yield "move_cleared_before", [
        _lits((M(i, t), False), (C(i, t), True)) for i in objs for t in range(K - 1)
    ]
    yield "move_cleared_after", [
        _lits((M(i, t), False), (C(i, t + 1), True)) for i in objs for t in range(K - 1)
    ]
    yield "destination_cleared", [
        _lits((M(i, t), False), (A(i, j, t + 1), False), (C(j, t), True))
        for i in objs for j in objs for t in range(K - 1)
    ]
    yield "moved_was_above", [
        _lits((M(i, t), False), *((A(i, j, t), True) for j in objs))
        for i in objs for t in range(K - 1)
    ]
    if frame:
        # nothing lands on j during the step, so it stays cleared
        yield "frame_cleared", [
            _lits((C(j, t), False), *((A(i, j, t + 1), True) for i in objs), (C(j, t + 1), True))
            for j in objs for t in range(K - 1)
        ]
    yield "one_size", [
        _lits((ix.size(i, s), False), (ix.size(i, s2), False))
        for i in objs for s, s2 in combinations(range(bounds.n_sizes), 2)
    ]
    yield "one_color", [
        _lits((ix.color(i, c), False), (ix.color(i, c2), False))
        for i in objs for c, c2 in combinations(range(bounds.n_colors), 2)
    ]


def soft_rows(bounds: Bounds, index: CrossbarIndex | None = None):
    ix = index or CrossbarIndex(bounds)
    N, K = bounds.n_objects, bounds.k_steps
    yield "no_move", [_lits((ix.move(i, t), False)) for i in range(N) for t in range(K - 1)]
    yield "no_above", [
        _lits((ix.above(i, j, t), False)) for i in range(N) for j in range(N) for t in range(K)
    ]


def expected_row_counts(bounds: Bounds, frame: bool = True) -> dict[str, int]:
    """Clause count per row as the product of its quantifier ranges."""
    N, K, nc, ns = bounds.n_objects, bounds.k_steps, bounds.n_colors, bounds.n_sizes
    pairs = N * (N - 1) // 2
    counts = {
        "persist": N * N * (K - 1),
        "shared_below_is_floor": pairs * N * K,
        "not_above_self": N * K,
        "single_below": N * pairs * K,
        "floor_not_above": N * N * K,
        "covered_not_cleared": N * N * K,
        "move_cleared_before": N * (K - 1),
        "move_cleared_after": N * (K - 1),
        "destination_cleared": N * N * (K - 1),
        "moved_was_above": N * (K - 1),
        "frame_cleared": N * (K - 1),
        "one_size": N * (ns * (ns - 1) // 2),
        "one_color": N * (nc * (nc - 1) // 2),
        "no_move": N * (K - 1),
        "no_above": N * N * K,
    }
    if not frame:
        del counts["frame_cleared"]
    return counts


def ground(
    bounds: Bounds,
    hard_alpha: float = HARD_ALPHA,
    soft_alpha: float = SOFT_ALPHA,
    frame: bool = True,
    soft: bool = True,
) -> WeightedCnf:
    if not (hard_alpha > 0 and soft_alpha > 0):
        raise ValueError("penalties must be positive")
    ix = CrossbarIndex(bounds)
    clauses = []
    for _, rows in grounding_rows(bounds, ix, frame):
        clauses.extend(Clause(lits, hard_alpha) for lits in rows)
    if soft:
        for _, rows in soft_rows(bounds, ix):
            clauses.extend(Clause(lits, soft_alpha) for lits in rows)
    return WeightedCnf(ix.num_vars, tuple(clauses), ix.names())


def ground_report(bounds: Bounds, frame: bool = True) -> dict[str, int]:
    ix = CrossbarIndex(bounds)
    report = {name: len(rows) for name, rows in grounding_rows(bounds, ix, frame)}
    report.update({name: len(rows) for name, rows in soft_rows(bounds, ix)})
    return report


# -- instances and plans --------------------------------------------------------


@dataclass(frozen=True)
class PlanningInstance:
    """Initial and goal stacks for blocks ``1..n_blocks``.

    ``initial_parent[b-1]`` is the object block ``b`` rests on at t=0 and
    ``goal_parent[b-1]`` the one at the final step.
    """

    bounds: Bounds
    colors: tuple[int, ...]
    sizes: tuple[int, ...]
    initial_parent: tuple[int, ...]
    goal_parent: tuple[int, ...]

    def __post_init__(self):
        for name in ("colors", "sizes", "initial_parent", "goal_parent"):
            object.__setattr__(self, name, tuple(int(x) for x in getattr(self, name)))
        n = self.n_blocks
        if not 1 <= n <= self.bounds.max_blocks:
            raise ValueError(f"{n} blocks do not fit {self.bounds.n_objects} objects")
        if any(len(getattr(self, f)) != n for f in ("sizes", "initial_parent", "goal_parent")):
            raise ValueError("per-block fields must have equal length")
        if any(not 0 <= c < self.bounds.n_colors for c in self.colors):
            raise ValueError("color id out of range")
        if any(not 0 <= s < self.bounds.n_sizes for s in self.sizes):
            raise ValueError("size id out of range")
        for parents in (self.initial_parent, self.goal_parent):
            problem = configuration_error(parents)
            if problem:
                raise ValueError(problem)

    @property
    def n_blocks(self) -> int:
        return len(self.colors)


def configuration_error(parents) -> str | None:
    """Why ``parents`` is not a set of stacks rooted on the floor, or None."""
    n = len(parents)
    seen = set()
    for b, p in enumerate(parents, 1):
        if not 0 <= p <= n:
            return f"block {b} rests on unknown object {p}"
        if p == b:
            return f"block {b} rests on itself"
        if p != FLOOR:
            if p in seen:
                return f"two blocks rest on block {p}"
            seen.add(p)
    for b in range(1, n + 1):
        cur, steps = b, 0
        while cur != FLOOR:
            cur = parents[cur - 1]
            steps += 1
            if steps > n:
                return f"block {b} is part of a cycle"
    return None


def cleared_blocks(parents) -> set[int]:
    covered = {p for p in parents if p != FLOOR}
    return {b for b in range(1, len(parents) + 1) if b not in covered}


class Plan(NamedTuple):
    """Moves ``(block, t)`` plus, per time step, the parents of every object."""

    moves: tuple[tuple[int, int], ...]
    above_trajectory: tuple[tuple[tuple[int, ...], ...], ...]

    @classmethod
    def from_configurations(cls, moves, configs, n_objects: int) -> "Plan":
        traj = []
        for parents in configs:
            row = [()] * n_objects
            for b, p in enumerate(parents, 1):
                row[b] = (p,)
            traj.append(tuple(row))
        return cls(tuple(sorted((int(b), int(t)) for b, t in moves)), tuple(traj))


def generate_instance(
    rng: np.random.Generator,
    n_blocks: int,
    bounds: Bounds,
    max_resample: int = 1000,
) -> PlanningInstance:
    if n_blocks + 1 > bounds.n_objects:
        raise ValueError("not enough binders for that many blocks")
    for _ in range(max_resample):
        colors = rng.integers(bounds.n_colors, size=n_blocks)
        sizes = rng.integers(bounds.n_sizes, size=n_blocks)
        inst = PlanningInstance(
            bounds,
            tuple(colors),
            tuple(sizes),
            _random_stacks(rng, n_blocks),
            _random_stacks(rng, n_blocks),
        )
        if bfs_oracle(inst) is not None:
            return inst
    raise RuntimeError(f"no instance with {n_blocks} blocks solvable in {bounds.max_moves} moves")


def _random_stacks(rng: np.random.Generator, n_blocks: int) -> tuple[int, ...]:
    parents = [FLOOR] * n_blocks
    tops: list[int] = []
    for b in rng.permutation(np.arange(1, n_blocks + 1)):
        b = int(b)
        choice = int(rng.integers(len(tops) + 1))
        if choice == len(tops):
            parents[b - 1] = FLOOR
            tops.append(b)
        else:
            parents[b - 1] = tops[choice]
            tops[choice] = b
    return tuple(parents)


def clamp_literals(inst: PlanningInstance, index: CrossbarIndex) -> list[tuple[int, bool]]:
    """Clamped inputs: attributes, floor flags and the first/last time slices.

    Unused binders are clamped empty at every time step so blocks cannot be
    parked on objects that do not exist.
    """
    b = inst.bounds
    N, K = b.n_objects, b.k_steps
    n = inst.n_blocks
    ghosts = range(n + 1, N)
    clamps: dict[int, bool] = {}

    for i in range(N):
        clamps[index.floor(i)] = i == FLOOR
        for c in range(b.n_colors):
            clamps[index.color(i, c)] = 1 <= i <= n and inst.colors[i - 1] == c
        for s in range(b.n_sizes):
            clamps[index.size(i, s)] = 1 <= i <= n and inst.sizes[i - 1] == s

    for t, parents in ((0, inst.initial_parent), (K - 1, inst.goal_parent)):
        clear = cleared_blocks(parents)
        for i in range(N):
            for j in range(N):
                clamps[index.above(i, j, t)] = 1 <= i <= n and parents[i - 1] == j
            clamps[index.cleared(i, t)] = i == FLOOR or i in clear

    for g in ghosts:
        for t in range(K):
            clamps[index.cleared(g, t)] = False
            for j in range(N):
                clamps[index.above(g, j, t)] = False
                clamps[index.above(j, g, t)] = False
        for t in range(K - 1):
            clamps[index.move(g, t)] = False
    return sorted(clamps.items())


def encode_plan(plan: Plan, inst: PlanningInstance, index: CrossbarIndex) -> Activations:
    """Boolean assignment for a plan; Cleared is derived from the stacks."""
    b = inst.bounds
    N, K = b.n_objects, b.k_steps
    y = np.zeros(index.num_vars)
    for var, val in clamp_literals(inst, index):
        y[var] = float(val)
    for t, row in enumerate(plan.above_trajectory):
        covered = set()
        for i, parents in enumerate(row):
            for j in parents:
                y[index.above(i, j, t)] = 1.0
                covered.add(j)
        for j in range(N):
            if j == FLOOR or (1 <= j <= inst.n_blocks and j not in covered):
                y[index.cleared(j, t)] = 1.0
    for blk, t in plan.moves:
        y[index.move(blk, t)] = 1.0
    mask = np.zeros(index.num_vars, dtype=bool)
    for var, _ in clamp_literals(inst, index):
        mask[var] = True
    return Activations(y, mask)


def decode_plan(y, index: CrossbarIndex) -> Plan:
    v = y.values if isinstance(y, Activations) else np.asarray(y, dtype=np.float64)
    b = index.bounds
    N, K = b.n_objects, b.k_steps
    above = v[index.block("Above")].reshape(N, N, K) >= 0.5
    move = v[index.block("Move")].reshape(N, K - 1) >= 0.5
    moves = tuple((int(i), int(t)) for i, t in zip(*np.nonzero(move)))
    traj = tuple(
        tuple(tuple(int(j) for j in np.nonzero(above[i, :, t])[0]) for i in range(N))
        for t in range(K)
    )
    return Plan(tuple(sorted(moves)), traj)


# -- semantic oracles -------------------------------------------------------------


def _parents_at(row, n_blocks: int, n_objects: int) -> tuple[tuple[int, ...] | None, str | None]:
    if row[FLOOR]:
        return None, "the floor rests on an object"
    for g in range(n_blocks + 1, n_objects):
        if row[g]:
            return None, f"unused object {g} rests on an object"
    parents = []
    for blk in range(1, n_blocks + 1):
        if len(row[blk]) != 1:
            return None, f"block {blk} rests on {len(row[blk])} objects"
        parents.append(row[blk][0])
    if any(p > n_blocks for p in parents):
        return None, "a block rests on an unused object"
    problem = configuration_error(parents)
    return (tuple(parents), None) if problem is None else (None, problem)


def validate_plan(plan: Plan, inst: PlanningInstance) -> tuple[bool, str]:
    """Simulate the plan in the stacking world; return ``(ok, diagnostic)``.

    Several moves may share a time step when they are independent: every
    moved block is clear before and after the step, and every non-floor
    destination is clear before the step and not moved itself.  Such a
    step serialises into single moves.
    """
    b = inst.bounds
    N, K, n = b.n_objects, b.k_steps, inst.n_blocks
    if len(plan.above_trajectory) != K:
        return False, f"trajectory has {len(plan.above_trajectory)} steps, expected {K}"
    configs = []
    for t, row in enumerate(plan.above_trajectory):
        parents, problem = _parents_at(row, n, N)
        if problem:
            return False, f"t={t}: {problem}"
        configs.append(parents)
    if configs[0] != inst.initial_parent:
        return False, "t=0 differs from the initial configuration"
    if configs[-1] != inst.goal_parent:
        return False, f"t={K - 1} differs from the goal configuration"

    moved_at: dict[int, set[int]] = {}
    for blk, t in plan.moves:
        if not 1 <= blk <= n:
            return False, f"move ({blk}, {t}) names a non-block"
        if not 0 <= t < K - 1:
            return False, f"move ({blk}, {t}) outside the plan horizon"
        moved_at.setdefault(t, set()).add(blk)

    for t in range(K - 1):
        before, after = configs[t], configs[t + 1]
        moved = moved_at.get(t, set())
        clear_before, clear_after = cleared_blocks(before), cleared_blocks(after)
        for blk in range(1, n + 1):
            if before[blk - 1] != after[blk - 1] and blk not in moved:
                return False, f"t={t}: block {blk} changed place without a move"
        for blk in sorted(moved):
            if blk not in clear_before:
                return False, f"move ({blk}, {t}): block is not cleared"
            if blk not in clear_after:
                return False, f"move ({blk}, {t}): something lands on the moving block"
            dest = after[blk - 1]
            if dest != FLOOR:
                if dest not in clear_before:
                    return False, f"move ({blk}, {t}): destination {dest} is not cleared"
                if dest in moved:
                    return False, f"move ({blk}, {t}): destination {dest} moves too"
    return True, "valid"


def bfs_oracle(inst: PlanningInstance, max_moves: int | None = None) -> Plan | None:
    """Shortest single-move plan by breadth-first search, or None."""
    n = inst.n_blocks
    if n > 7:
        raise ValueError("breadth-first oracle supports at most 7 blocks")
    limit = inst.bounds.max_moves if max_moves is None else max_moves
    start, goal = inst.initial_parent, inst.goal_parent
    prev: dict[tuple, tuple | None] = {start: None}
    frontier = deque([(start, 0)])
    found = start == goal
    while frontier and not found:
        state, depth = frontier.popleft()
        if depth >= limit:
            continue
        for blk, dest in _successors(state):
            nxt = list(state)
            nxt[blk - 1] = dest
            nxt = tuple(nxt)
            if nxt in prev:
                continue
            prev[nxt] = (state, blk)
            if nxt == goal:
                found = True
                break
            frontier.append((nxt, depth + 1))
    if not found:
        return None
    path, moved = [goal], []
    while prev[path[-1]] is not None:
        parent, blk = prev[path[-1]]
        moved.append(blk)
        path.append(parent)
    path.reverse()
    moved.reverse()
    K = inst.bounds.k_steps
    configs = path + [goal] * (K - len(path))
    moves = [(blk, t) for t, blk in enumerate(moved)]
    return Plan.from_configurations(moves, configs, inst.bounds.n_objects)


def _successors(state):
    clear = sorted(cleared_blocks(state))
    for blk in clear:
        if state[blk - 1] != FLOOR:
            yield blk, FLOOR
        for dest in clear:
            if dest != blk and state[blk - 1] != dest:
                yield blk, dest


# -- instance files -----------------------------------------------------------------

INSTANCE_BANNER = "# consat blockworld instance v1"
INSTANCE_KEYS = (
    "n_objects", "k_steps", "n_colors", "n_sizes", "n_blocks",
    "colors", "sizes", "initial_parent", "goal_parent",
)


def dumps_instance(inst: PlanningInstance) -> str:
    b = inst.bounds

    def seq(xs):
        return "[" + ", ".join(str(x) for x in xs) + "]"

    lines = [
        INSTANCE_BANNER,
        f"n_objects = {b.n_objects}",
        f"k_steps = {b.k_steps}",
        f"n_colors = {b.n_colors}",
        f"n_sizes = {b.n_sizes}",
        f"n_blocks = {inst.n_blocks}",
        f"colors = {seq(inst.colors)}",
        f"sizes = {seq(inst.sizes)}",
        f"initial_parent = {seq(inst.initial_parent)}",
        f"goal_parent = {seq(inst.goal_parent)}",
    ]
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> PlanningInstance:
    import tomli

    data = tomli.loads(text)
    missing = [k for k in INSTANCE_KEYS if k not in data]
    if missing:
        raise ValueError(f"instance file lacks {', '.join(missing)}")
    bounds = Bounds(data["n_objects"], data["k_steps"], data["n_colors"], data["n_sizes"])
    inst = PlanningInstance(
        bounds, data["colors"], data["sizes"], data["initial_parent"], data["goal_parent"]
    )
    if inst.n_blocks != data["n_blocks"]:
        raise ValueError("n_blocks disagrees with the per-block lists")
    return inst
