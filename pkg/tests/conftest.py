import numpy as np
import pytest
from hypothesis import strategies as st

from consat.cnf import Clause, Literal, WeightedCnf


def random_clause(rng, num_vars, max_len=4, alpha=1.0):
    k = int(rng.integers(1, min(max_len, num_vars) + 1))
    vars_ = rng.choice(num_vars, size=k, replace=False)
    return Clause(tuple(Literal(int(v), bool(rng.integers(2))) for v in vars_), alpha)


def random_cnf(rng, num_vars, num_clauses, max_len=4, alphas=(1.0,)):
    clauses = [random_clause(rng, num_vars, max_len, float(rng.choice(alphas))) for _ in range(num_clauses)]
    return WeightedCnf(num_vars, tuple(clauses))


@st.composite
def cnfs(draw, max_vars=8, max_clauses=10, max_len=4, alphas=(1.0, 2.0, 1000.0)):
    n = draw(st.integers(1, max_vars))
    m = draw(st.integers(1, max_clauses))
    clauses = []
    for _ in range(m):
        vars_ = draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=min(max_len, n), unique=True))
        signs = draw(st.lists(st.booleans(), min_size=len(vars_), max_size=len(vars_)))
        alpha = draw(st.sampled_from(alphas))
        clauses.append(Clause(tuple(Literal(v, s) for v, s in zip(vars_, signs)), alpha))
    return WeightedCnf(n, tuple(clauses))


def boolean_states(n):
    """All 2**n Boolean assignments as a float array, first variable fastest."""
    codes = np.arange(1 << n)[:, None]
    return ((codes >> np.arange(n)) & 1).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def worked_clause():
    # (A or B or not C or not D)
    return Clause.of(1, 2, -3, -4)


@pytest.fixture
def worked_values():
    return np.array([0.1, 0.2, 0.6, 0.7])


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the outcome comes from the test itself."""
    entry = {"detail": ""}

    def note(number, title):
        entry["number"], entry["title"] = number, title
        return entry

    yield note
    if "number" in entry:
        rep = getattr(request.node, "rep_call", None)
        entry["passed"] = rep is not None and rep.passed
        _ACCEPTANCE[entry["number"]] = entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {status}: {e['title']}; {e['detail']}")
