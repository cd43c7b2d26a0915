import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_instance
from repmatch.data import CovariateSchema, category_counts
from repmatch.lp import solve_lp
from repmatch.model import (
    Formulation,
    ModelError,
    ModelTooLarge,
    aggregate,
    build_model,
    disaggregate,
    formulation_stats,
    lift_to_quadratic,
    lp_gap,
    objective_of,
)

KINDS = list(Formulation)


def test_stats_hand_counts():
    s = formulation_stats("linear", 3, 5, 7)
    assert (s.n_vars, s.n_constraints, s.n_rows, s.n_integer) == (12, 8, 15, 5)
    s = formulation_stats("quadratic", 3, 5, 7)
    assert (s.n_vars, s.n_constraints, s.n_rows, s.n_integer) == (22, 15, 22, 15)
    s = formulation_stats("intermediate", 3, 5, 7)
    assert (s.n_vars, s.n_constraints, s.n_rows) == (22, 13, 20)
    assert s.predicted_memory_bytes == 8 * 20 * 22


def test_stats_at_case_study_scale():
    lin = formulation_stats("linear", 1000, 70118, 78)
    assert lin.n_vars == 70118 + 78 and lin.n_integer == 70118
    quad = formulation_stats("quadratic", 1000, 70118, 78)
    assert quad.n_vars == 1000 * 70118 + 78
    assert quad.n_rows == 1000 + 70118 + 2 * 78
    assert quad.predicted_memory_bytes == 8 * quad.n_rows * quad.n_vars


@pytest.mark.parametrize("kind", KINDS)
def test_built_size_matches_stats(kind, rng):
    schema, tx, lx = random_instance(rng)
    m = build_model(kind, tx, lx, schema)
    assert (m.lp.n_vars, m.lp.n_rows) == (m.stats.n_vars, m.stats.n_rows)
    assert len(m.var_map) == m.lp.n_vars


@pytest.mark.parametrize("kind", KINDS)
def test_integer_points_feasible_with_exact_objective(kind):
    rng = np.random.default_rng(5)
    for _ in range(20):
        schema, tx, lx = random_instance(rng, max_L=8)
        m = build_model(kind, tx, lx, schema)
        tc = category_counts(tx, None, schema)
        for sel in itertools.islice(itertools.permutations(range(m.L), m.T), 30):
            x = m.point_from_selection(sel)
            assert m.lp.max_violation(x) <= 1e-9
            # independent count of the violation
            want = sum(abs(sum(lx[u, p] == k for u in sel) - sum(tx[:, p] == k))
                       for p in range(schema.P) for k in range(schema.sizes[p]))
            assert m.lp.c @ x == pytest.approx(want)
            assert objective_of(lx, sel, tc) == want
            assert sorted(m.selection_from_point(x)) == sorted(sel)


def test_var_map_round_trip(rng):
    schema, tx, lx = random_instance(rng)
    for kind in KINDS:
        vm = build_model(kind, tx, lx, schema).var_map
        for i, name in enumerate(vm.names()):
            assert vm.index(name) == i
        with pytest.raises(KeyError):
            vm.index("w[0]")
    assert build_model("quadratic", tx, lx, schema).var_map.name(lx.shape[0] + 1) == "m[1,1]"


def test_size_guard():
    schema = CovariateSchema.from_sizes([2])
    tx = np.zeros((3, 1), dtype=int)
    lx = np.zeros((10, 1), dtype=int)
    with pytest.raises(ModelTooLarge) as err:
        build_model("quadratic", tx, lx, schema, size_cap=20)
    assert err.value.stats.n_vars == 32 and "predicted" in str(err.value)
    build_model("linear", tx, lx, schema, size_cap=20)  # never guarded
    with pytest.raises(ModelError):
        build_model("linear", np.zeros((11, 1), dtype=int), lx, schema)


@given(st.data())
def test_disaggregate_is_valid_assignment(data):
    L = data.draw(st.integers(1, 10))
    T = data.draw(st.integers(1, L))
    w = np.array(data.draw(st.lists(st.floats(0.01, 1.0), min_size=L, max_size=L)))
    # scale into the box with sum T by water-filling
    z = np.clip(w * T / w.sum(), 0, 1)
    for _ in range(50):
        free = z < 1 - 1e-12
        deficit = T - z.sum()
        if abs(deficit) < 1e-12:
            break
        z[free] = np.clip(z[free] + deficit * w[free] / w[free].sum(), 0, 1)
    a = disaggregate(z, T)
    viol = a.violations()
    assert max(viol.values()) <= 1e-9
    assert np.allclose(aggregate(a.dense()), z)
    # prefix filling: each row touches at most two units more than it needs
    assert all(len([1 for (t, _) in a.m if t == r]) <= L for r in range(T))


def test_disaggregate_rejects_bad_input():
    with pytest.raises(ModelError):
        disaggregate([0.5, 0.5], 2)
    with pytest.raises(ModelError):
        disaggregate([1.5, 0.5], 2)


def test_lifted_relaxation_point_is_feasible():
    rng = np.random.default_rng(9)
    for _ in range(25):
        schema, tx, lx = random_instance(rng)
        lin = build_model("linear", tx, lx, schema)
        sol = solve_lp(lin.lp)
        z, v = sol.x[: lin.L], sol.x[lin.v_slice]
        point = lift_to_quadratic(disaggregate(z, lin.T, v), v)
        for kind in ("quadratic", "intermediate"):
            q = build_model(kind, tx, lx, schema)
            assert q.lp.max_violation(point) <= 1e-7
            assert q.lp.c @ point == pytest.approx(sol.objective_value, abs=1e-9)


def test_lp_gap_single_covariate_is_zero():
    # one unit of the needed category exists: best selection misses by 2,
    # and the relaxation cannot do better with one covariate
    schema = CovariateSchema.from_sizes([2])
    lx = np.array([[0], [0], [1]])
    tx = np.array([[1], [1]])
    m = build_model("linear", tx, lx, schema)
    assert lp_gap(m, 2.0) == pytest.approx(0.0, abs=1e-9)
