import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consat import blockworld as bw
from consat.cnf import Clause, Literal, violation, dumps_wcnf

RED, BLUE, GREEN = 0, 1, 2


@pytest.fixture(scope="module")
def four_block_instance():
    """Four blocks; the floor is object 0 and picture binders 2..5 are blocks 1..4."""
    bounds = bw.Bounds(5, 6)
    return bw.PlanningInstance(
        bounds,
        colors=(RED, GREEN, BLUE, GREEN),
        sizes=(0, 1, 1, 2),
        initial_parent=(3, 0, 4, 0),
        goal_parent=(0, 4, 0, 3),
    )


@pytest.fixture(scope="module")
def four_move_plan(four_block_instance):
    configs = [
        (3, 0, 4, 0),
        (0, 0, 4, 0),
        (0, 0, 0, 0),
        (0, 0, 0, 3),
        (0, 4, 0, 3),
        (0, 4, 0, 3),
    ]
    return bw.Plan.from_configurations([(1, 0), (3, 1), (4, 2), (2, 3)], configs, 5)


def random_walk_instance(rng, n_blocks, bounds, move_prob=0.7):
    """Instance plus a valid plan made by random single moves."""
    start = bw._random_stacks(rng, n_blocks)
    state, configs, moves = start, [start], []
    for t in range(bounds.k_steps - 1):
        options = list(bw._successors(state))
        if options and rng.random() < move_prob:
            blk, dest = options[int(rng.integers(len(options)))]
            nxt = list(state)
            nxt[blk - 1] = dest
            state = tuple(nxt)
            moves.append((blk, t))
        configs.append(state)
    inst = bw.PlanningInstance(bounds, (0,) * n_blocks, (0,) * n_blocks, start, state)
    return inst, bw.Plan.from_configurations(moves, configs, bounds.n_objects)


class TestIndex:
    def test_above_comes_first(self):
        ix = bw.build_index(bw.Bounds(2, 2))
        assert {ix.above(i, j, t) for i in range(2) for j in range(2) for t in range(2)} == set(range(8))

    def test_layout_order_and_total(self):
        b = bw.Bounds(6, 7)
        ix = bw.build_index(b)
        N, K = 6, 7
        assert ix.num_vars == N * N * K + N * (K - 1) + N * K + N + N * 3 + N * 3
        offsets = [ix.offsets[r] for r in ("Above", "Move", "Cleared", "Floor", "Color", "Size")]
        assert offsets == sorted(offsets)

    def test_round_trip(self):
        ix = bw.build_index(bw.Bounds(4, 3, 2, 2))
        for k in range(ix.num_vars):
            atom = ix.atom(k)
            assert ix.var(atom.relation, *atom.args) == k

    def test_out_of_range(self):
        ix = bw.build_index(bw.Bounds(3, 3))
        with pytest.raises(IndexError):
            ix.move(0, 2)  # no move after the final step
        with pytest.raises(IndexError):
            ix.atom(ix.num_vars)

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            bw.Bounds(1, 3)
        with pytest.raises(ValueError):
            bw.Bounds(3, 1)


class TestGround:
    def test_row_counts_match_quantifier_ranges(self):
        for b in (bw.Bounds(3, 3), bw.Bounds(5, 4, 2, 4), bw.Bounds(6, 7)):
            assert bw.ground_report(b) == bw.expected_row_counts(b)
            cnf = bw.ground(b)
            assert len(cnf.clauses) == sum(bw.expected_row_counts(b).values())

    def test_frame_rows_can_be_dropped(self):
        b = bw.Bounds(4, 4)
        assert "frame_cleared" not in bw.ground_report(b, frame=False)
        assert len(bw.ground(b, frame=False).clauses) == len(bw.ground(b).clauses) - 4 * 3

    def test_existential_row(self):
        b = bw.Bounds(3, 3)
        ix = bw.build_index(b)
        cnf = bw.ground(b)
        expected = Clause((Literal(ix.move(1, 1), False),
                           *(Literal(ix.above(1, j, 1), True) for j in range(3))), 1000.0)
        assert expected in cnf.clauses

    def test_not_above_self_units(self):
        b = bw.Bounds(3, 3)
        ix = bw.build_index(b)
        cnf = bw.ground(b)
        for i in range(3):
            for t in range(3):
                assert Clause((Literal(ix.above(i, i, t), False),), 1000.0) in cnf.clauses

    def test_penalties(self):
        cnf = bw.ground(bw.Bounds(3, 3))
        assert {c.alpha for c in cnf.clauses} == {1000.0, 1.0}
        soft = [c for c in cnf.clauses if c.alpha == 1.0]
        assert all(len(c) == 1 and not c.literals[0].positive for c in soft)
        with pytest.raises(ValueError):
            bw.ground(bw.Bounds(3, 3), hard_alpha=0)

    def test_deterministic_file(self):
        b = bw.Bounds(4, 4)
        assert dumps_wcnf(bw.ground(b)) == dumps_wcnf(bw.ground(b))

    def test_four_move_plan_satisfies_every_hard_clause(self, four_block_instance, four_move_plan):
        ix = bw.build_index(four_block_instance.bounds)
        y = bw.encode_plan(four_move_plan, four_block_instance, ix)
        v = violation(bw.ground(four_block_instance.bounds), y)
        assert v.hard == 0
        # soft cost: one per move and one per true Above atom
        assert v.soft == len(four_move_plan.moves) + 4 * four_block_instance.bounds.k_steps

    def test_oracle_plans_have_expected_soft_cost(self, rng):
        b = bw.Bounds(5, 5)
        ix = bw.build_index(b)
        cnf = bw.ground(b)
        for _ in range(30):
            inst = bw.generate_instance(rng, int(rng.integers(1, 5)), b)
            plan = bw.bfs_oracle(inst)
            v = violation(cnf, bw.encode_plan(plan, inst, ix))
            assert v.hard == 0
            assert v.soft == len(plan.moves) + inst.n_blocks * b.k_steps


class TestInstances:
    def test_validation(self):
        b = bw.Bounds(4, 3)
        with pytest.raises(ValueError):
            bw.PlanningInstance(b, (0, 0), (0, 0), (2, 1), (0, 0))  # cycle
        with pytest.raises(ValueError):
            bw.PlanningInstance(b, (0, 0, 0), (0, 0, 0), (3, 3, 0), (0, 0, 0))  # two on one
        with pytest.raises(ValueError):
            bw.PlanningInstance(b, (5,), (0,), (0,), (0,))
        with pytest.raises(ValueError):
            bw.PlanningInstance(b, (0,) * 4, (0,) * 4, (0,) * 4, (0,) * 4)  # too many blocks

    def test_single_block(self, rng):
        inst = bw.generate_instance(rng, 1, bw.Bounds(3, 3))
        assert inst.initial_parent == inst.goal_parent == (0,)
        assert bw.bfs_oracle(inst).moves == ()

    def test_attributes_in_range(self, rng):
        b = bw.Bounds(6, 7)
        for _ in range(20):
            inst = bw.generate_instance(rng, 4, b)
            assert all(0 <= c < 3 for c in inst.colors)
            assert all(0 <= s < 3 for s in inst.sizes)

    def test_too_many_blocks(self, rng):
        with pytest.raises(ValueError):
            bw.generate_instance(rng, 5, bw.Bounds(5, 5))

    def test_resample_limit(self, rng):
        # one step cannot rebuild most three-block configurations
        with pytest.raises(RuntimeError):
            for _ in range(50):
                bw.generate_instance(rng, 3, bw.Bounds(4, 2), max_resample=1)

    def test_five_block_instances_fit_six_moves(self, rng):
        b = bw.Bounds(6, 7)
        for _ in range(20):
            inst = bw.generate_instance(rng, 5, b)
            plan = bw.bfs_oracle(inst, max_moves=6)
            assert plan is not None and len(plan.moves) <= 6

    def test_many_generated_instances_validate(self):
        rng = np.random.default_rng(2024)
        b = bw.Bounds(6, 7)
        for _ in range(10000):
            inst = bw.generate_instance(rng, 3, b)
            ok, msg = bw.validate_plan(bw.bfs_oracle(inst), inst)
            assert ok, msg

    def test_file_round_trip(self, four_block_instance):
        text = bw.dumps_instance(four_block_instance)
        assert text.startswith("# ")
        again = bw.loads_instance(text)
        assert again == four_block_instance
        assert bw.dumps_instance(again) == text

    def test_bad_file(self, four_block_instance):
        with pytest.raises(ValueError):
            bw.loads_instance("n_objects = 3\n")
        text = bw.dumps_instance(four_block_instance).replace("n_blocks = 4", "n_blocks = 3")
        with pytest.raises(ValueError):
            bw.loads_instance(text)


class TestClamps:
    def test_initial_and_goal_slices(self, four_block_instance):
        ix = bw.build_index(four_block_instance.bounds)
        clamps = dict(bw.clamp_literals(four_block_instance, ix))
        K = four_block_instance.bounds.k_steps
        for i, j in [(1, 3), (3, 4), (4, 0), (2, 0)]:
            assert clamps[ix.above(i, j, 0)] is True
        for i, j in [(2, 4), (4, 3), (3, 0), (1, 0)]:
            assert clamps[ix.above(i, j, K - 1)] is True
        assert clamps[ix.above(1, 0, 0)] is False
        assert sum(clamps[ix.above(i, j, 0)] for i in range(5) for j in range(5)) == 4

    def test_each_variable_once_and_middle_free(self, four_block_instance):
        ix = bw.build_index(four_block_instance.bounds)
        clamps = bw.clamp_literals(four_block_instance, ix)
        vars_ = [v for v, _ in clamps]
        assert len(vars_) == len(set(vars_))
        clamped = set(vars_)
        for t in range(1, four_block_instance.bounds.k_steps - 1):
            assert ix.above(1, 0, t) not in clamped
        assert all(ix.move(i, t) not in clamped for i in range(1, 5) for t in range(5))

    def test_attributes_and_floor(self, four_block_instance):
        ix = bw.build_index(four_block_instance.bounds)
        clamps = dict(bw.clamp_literals(four_block_instance, ix))
        assert clamps[ix.floor(0)] is True
        assert clamps[ix.floor(1)] is False
        assert clamps[ix.color(1, RED)] is True
        assert clamps[ix.color(1, BLUE)] is False
        assert clamps[ix.cleared(0, 0)] is True
        assert clamps[ix.cleared(1, 0)] is True
        assert clamps[ix.cleared(3, 0)] is False

    def test_ghost_binders_are_empty(self, rng):
        b = bw.Bounds(6, 4)
        ix = bw.build_index(b)
        inst = bw.generate_instance(rng, 2, b)
        clamps = dict(bw.clamp_literals(inst, ix))
        for g in (3, 4, 5):
            assert clamps[ix.move(g, 1)] is False
            assert clamps[ix.above(1, g, 2)] is False
            assert clamps[ix.cleared(g, 2)] is False


class TestDecodeValidate:
    def test_four_move_decode(self, four_block_instance, four_move_plan):
        ix = bw.build_index(four_block_instance.bounds)
        plan = bw.decode_plan(bw.encode_plan(four_move_plan, four_block_instance, ix), ix)
        assert plan.moves == ((1, 0), (2, 3), (3, 1), (4, 2))
        assert plan == four_move_plan
        assert bw.validate_plan(plan, four_block_instance) == (True, "valid")

    def test_no_moves(self, four_block_instance):
        ix = bw.build_index(four_block_instance.bounds)
        assert bw.decode_plan(np.zeros(ix.num_vars), ix).moves == ()

    def test_moving_covered_block_is_named(self, four_block_instance, four_move_plan):
        traj = list(four_move_plan.above_trajectory)
        bad = bw.Plan(((3, 0), (1, 1), (4, 2), (2, 3)), tuple(traj))
        ok, msg = bw.validate_plan(bad, four_block_instance)
        assert not ok
        assert "(3, 0)" in msg or "without a move" in msg

    def test_unmoved_change_is_rejected(self, four_block_instance, four_move_plan):
        ok, msg = bw.validate_plan(four_move_plan._replace(moves=four_move_plan.moves[1:]), four_block_instance)
        assert not ok and "without a move" in msg

    def test_wrong_goal(self, four_block_instance, four_move_plan):
        traj = list(four_move_plan.above_trajectory)
        traj[-1] = traj[-2][:2] + ((0,),) + traj[-2][3:]
        ok, msg = bw.validate_plan(four_move_plan._replace(above_trajectory=tuple(traj)), four_block_instance)
        assert not ok

    def test_round_trip_oracle_plans(self, rng):
        b = bw.Bounds(6, 7)
        ix = bw.build_index(b)
        for _ in range(50):
            inst = bw.generate_instance(rng, int(rng.integers(1, 6)), b)
            plan = bw.bfs_oracle(inst)
            assert bw.decode_plan(bw.encode_plan(plan, inst, ix), ix) == plan

    def test_valid_plans_satisfy_hard_clauses(self, rng):
        b = bw.Bounds(5, 5)
        ix = bw.build_index(b)
        cnf = bw.ground(b)
        for _ in range(1000):
            inst, plan = random_walk_instance(rng, int(rng.integers(1, 5)), b)
            ok, msg = bw.validate_plan(plan, inst)
            assert ok, msg
            y = bw.encode_plan(plan, inst, ix)
            # corrupt one Above or Move bit, then re-derive Cleared
            k = int(rng.integers(ix.offsets["Cleared"]))
            y.values[k] = 1.0 - y.values[k]
            mutated = bw.decode_plan(y, ix)
            if bw.validate_plan(mutated, inst)[0]:
                assert violation(cnf, bw.encode_plan(mutated, inst, ix)).hard == 0

    def test_parallel_moves(self):
        b = bw.Bounds(5, 2)
        flat = (0, 0, 0, 0)
        # two independent moves in one step serialise, so they are accepted
        inst = bw.PlanningInstance(b, (0,) * 4, (0,) * 4, flat, (2, 0, 4, 0))
        plan = bw.Plan.from_configurations([(1, 0), (3, 0)], [flat, (2, 0, 4, 0)], 5)
        assert bw.validate_plan(plan, inst) == (True, "valid")
        # a block cannot land on a block that moves in the same step
        inst = bw.PlanningInstance(b, (0,) * 4, (0,) * 4, flat, (2, 3, 0, 0))
        plan = bw.Plan.from_configurations([(1, 0), (2, 0)], [flat, (2, 3, 0, 0)], 5)
        ok, msg = bw.validate_plan(plan, inst)
        assert not ok and "moves too" in msg


class TestOracle:
    def test_identity(self, four_block_instance):
        inst = bw.PlanningInstance(four_block_instance.bounds, four_block_instance.colors, four_block_instance.sizes, four_block_instance.initial_parent, four_block_instance.initial_parent)
        assert bw.bfs_oracle(inst).moves == ()

    def test_four_block_instance_within_four_moves(self, four_block_instance):
        plan = bw.bfs_oracle(four_block_instance)
        assert len(plan.moves) <= 4
        assert bw.validate_plan(plan, four_block_instance)[0]

    def test_unsolvable_within_horizon(self, four_block_instance):
        assert bw.bfs_oracle(four_block_instance, max_moves=1) is None

    def test_block_limit(self):
        b = bw.Bounds(9, 3)
        inst = bw.PlanningInstance(b, (0,) * 8, (0,) * 8, (0,) * 8, (0,) * 8)
        with pytest.raises(ValueError):
            bw.bfs_oracle(inst)

    @given(st.integers(1, 5), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_plan_length_bound_and_validity(self, n_blocks, seed):
        b = bw.Bounds(6, 2 * n_blocks + 1)
        inst = bw.generate_instance(np.random.default_rng(seed), n_blocks, b)
        plan = bw.bfs_oracle(inst)
        assert len(plan.moves) <= 2 * n_blocks
        assert bw.validate_plan(plan, inst)[0]
