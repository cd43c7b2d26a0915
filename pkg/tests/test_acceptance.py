"""Acceptance suite: nine end-to-end criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed even when output capture is on.
"""

import itertools
import math
import time
from math import comb

import numpy as np
import pytest
from scipy.stats import rankdata, wilcoxon

from conftest import random_instance
from repmatch.cli import main
from repmatch.data import CovariateSchema
from repmatch.design import build_design, match_level, select_template
from repmatch.diagnostics import balance_table, smd_report
from repmatch.inference import (
    MatchedGroups,
    hodges_lehmann,
    pair_differences,
    rosenbaum_gamma,
    signed_rank_upper_p,
    simultaneous_contrasts,
)
from repmatch.lp import solve_lp
from repmatch.mip import BnbConfig, MipStatus, solve_mip
from repmatch.model import (
    Formulation,
    ModelTooLarge,
    build_model,
    disaggregate,
    lift_to_quadratic,
    objective_of,
)
from repmatch.polytope import lemma_model, polytope_report
from repmatch.synth import SynthConfig, generate_study, superset_rows


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
        assert ok, detail

    return emit


def _integral(x, tol=1e-7):
    return bool(np.all(np.abs(x - np.round(x)) <= tol))


# -- 1 ---------------------------------------------------------------------


def test_1_lemma_vertices(report):
    t0 = time.perf_counter()
    model = lemma_model()
    at_T = polytope_report(model)
    at_one = polytope_report(model, cardinality=1)
    elapsed = time.perf_counter() - t0
    ok = (
        at_T.half_vertex_found
        and (at_T.n_vertices, at_T.n_fractional) == (31, 11)
        and elapsed < 10
    )
    detail = (
        f"sum z = {at_T.cardinality:g}: {at_T.n_vertices} vertices, {at_T.n_fractional} fractional, "
        f"all-halves vertex {'found' if at_T.half_vertex_found else 'missing'}; "
        f"sum z = 1: {at_one.n_vertices} vertices, {at_one.n_fractional} fractional; {elapsed:.2f}s"
    )
    report(1, "fractional vertex instance", ok, detail)


# -- 2 ---------------------------------------------------------------------


def test_2_linear_and_quadratic_relaxations_agree(report):
    rng = np.random.default_rng(2002)
    t0 = time.perf_counter()
    worst_gap = worst_viol = worst_obj = 0.0
    n = 0
    for _ in range(220):
        schema, tx, lx = random_instance(rng, max_T=6, max_L=12, max_P=3, max_K=3)
        lin = build_model(Formulation.LINEAR, tx, lx, schema)
        quad = build_model(Formulation.QUADRATIC, tx, lx, schema)
        s_lin, s_quad = solve_lp(lin.lp), solve_lp(quad.lp)
        worst_gap = max(worst_gap, abs(s_lin.objective_value - s_quad.objective_value))
        z, v = s_lin.x[: lin.L], s_lin.x[lin.v_slice]
        assignment = disaggregate(z, lin.T, v)
        point = lift_to_quadratic(assignment, v)
        worst_viol = max(worst_viol, quad.lp.max_violation(point), *assignment.violations().values())
        worst_obj = max(worst_obj, abs(quad.lp.c @ point - s_lin.objective_value))
        n += 1
    elapsed = time.perf_counter() - t0
    ok = worst_gap <= 1e-7 and worst_viol <= 1e-7 and worst_obj <= 1e-7 and elapsed < 120
    detail = (
        f"{n} instances; max |LP(lin) - LP(quad)| = {worst_gap:.1e}, disaggregated point max violation "
        f"{worst_viol:.1e}, objective drift {worst_obj:.1e}; {elapsed:.1f}s"
    )
    report(2, "relaxation equivalence", ok, detail)


# -- 3 ---------------------------------------------------------------------


def nested_instance(rng):
    """Covariates whose categories refine one another (each finer one inside a coarser one)."""
    P = int(rng.integers(2, 4))
    finest = int(rng.integers(3, 7))
    sizes, maps = [finest], []
    for _ in range(P - 1):
        k = int(rng.integers(2, sizes[-1] + 1))
        f = np.concatenate([np.arange(k), rng.integers(0, k, sizes[-1] - k)])
        rng.shuffle(f)
        maps.append(f)
        sizes.append(k)
    L = int(rng.integers(3, 25))
    T = int(rng.integers(1, min(L, 10) + 1))

    def draw(n):
        cols = [rng.integers(0, finest, n)]
        for f in maps:
            cols.append(f[cols[-1]])
        return np.column_stack(cols[::-1])

    return CovariateSchema.from_sizes(sizes[::-1]), draw(T), draw(L)


def test_3_two_covariate_and_nested_integrality(report):
    rng = np.random.default_rng(3003)
    t0 = time.perf_counter()
    failures = {"two": 0, "nested": 0}
    counts = {"two": 0, "nested": 0}
    for i in range(320):
        if i < 210:
            kind = "two"
            schema, tx, lx = random_instance(rng, max_T=10, max_L=24, max_P=2, max_K=5)
        else:
            kind = "nested"
            schema, tx, lx = nested_instance(rng)
        model = build_model(Formulation.LINEAR, tx, lx, schema)
        root = solve_lp(model.lp)
        sol = solve_mip(model, BnbConfig())
        counts[kind] += 1
        if not _integral(root.x) or sol.node_count != 1 or sol.status is not MipStatus.OPTIMAL:
            failures[kind] += 1
    elapsed = time.perf_counter() - t0
    ok = counts["two"] >= 200 and counts["nested"] >= 100 and not any(failures.values()) and elapsed < 120
    detail = (
        f"P <= 2: {counts['two'] - failures['two']}/{counts['two']} integral at node 1; "
        f"nested: {counts['nested'] - failures['nested']}/{counts['nested']}; {elapsed:.1f}s"
    )
    report(3, "root integrality", ok, detail)


# -- 4 ---------------------------------------------------------------------


def test_4_mip_matches_enumeration(report):
    rng = np.random.default_rng(4004)
    t0 = time.perf_counter()
    mismatches, n, largest = 0, 0, 0
    while n < 120:
        schema, tx, lx = random_instance(rng, max_T=8, max_L=18, max_P=4, max_K=4)
        L, T = lx.shape[0], tx.shape[0]
        if comb(L, T) > 10**5:
            continue
        targets = build_model(Formulation.LINEAR, tx, lx, schema).targets
        best = min(objective_of(lx, c, targets) for c in itertools.combinations(range(L), T))
        sol = solve_mip(build_model(Formulation.LINEAR, tx, lx, schema), BnbConfig())
        if sol.status is not MipStatus.OPTIMAL or sol.objective_value != best \
                or objective_of(lx, sol.selection, targets) != best:
            mismatches += 1
        largest = max(largest, comb(L, T))
        n += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 300
    detail = f"{n} instances (up to {largest} subsets each), {mismatches} mismatches; {elapsed:.1f}s"
    report(4, "optimum equals enumeration", ok, detail)


# -- 5 ---------------------------------------------------------------------


def test_5_scaling_single_level(report):
    L, T = 70118, 1000
    t0 = time.perf_counter()
    ds = generate_study(SynthConfig(level_sizes=(L, L), seed=5))
    choice = select_template(ds.x, ds.schema, T, R=100, seed=5)
    level = ds.level("1")
    selection, objective, sol = match_level(ds.x[choice.sample], ds.x[level], ds.schema,
                                            BnbConfig(time_limit=240))
    elapsed = time.perf_counter() - t0
    try:
        build_model(Formulation.QUADRATIC, ds.x[choice.sample], ds.x[level], ds.schema)
        guard = "quadratic build was not refused"
        refused = False
    except ModelTooLarge as exc:
        guard = f"quadratic build refused ({exc.stats.n_vars:,} predicted variables)"
        refused = exc.stats.n_vars == T * L + ds.schema.total_categories
    ok = (
        ds.schema.total_categories == 78
        and len(ds.schema.covariates) == 14
        and selection.size == T
        and sol.status is MipStatus.OPTIMAL
        and elapsed < 300
        and refused
    )
    detail = (
        f"T={T}, L={level.size}, K={ds.schema.total_categories}: imbalance {objective} "
        f"({sol.status.value}, {sol.node_count} nodes) in {elapsed:.1f}s end to end; {guard}"
    )
    report(5, "desk-scale case study", ok, detail)


# -- 6 ---------------------------------------------------------------------


def test_6_fine_balance_transitivity(report):
    t0 = time.perf_counter()
    parts, ok = [], True
    for n_levels in (3, 5, 10):
        cfg = SynthConfig(level_sizes=(250,) * n_levels, seed=60 + n_levels,
                          template_superset=True, superset_size=120)
        ds = generate_study(cfg)
        design = build_design(ds, 120, template=superset_rows(cfg), cfg=BnbConfig(time_limit=60))
        table = balance_table(design, ds.x)
        smd = smd_report(design, ds)
        same_columns = bool(np.all(table.counts == table.template[:, None]))
        after = np.nan_to_num(smd.after, nan=0.0)
        objectives_zero = set(design.objectives.values()) == {0}
        ok &= objectives_zero and same_columns and bool(np.all(after == 0.0))
        parts.append(f"{n_levels} levels: objectives {sorted(set(design.objectives.values()))}, "
                     f"columns identical {same_columns}, max |SMD after| {np.abs(after).max():g}")
    detail = "; ".join(parts) + f"; {time.perf_counter() - t0:.1f}s"
    report(6, "fine balance across levels", ok, detail)


# -- 7 ---------------------------------------------------------------------


def test_7_inference(report):
    rng = np.random.default_rng(7007)
    hl_bad = 0
    for _ in range(1000):
        d = rng.normal(size=int(rng.integers(1, 40))) * rng.choice([1.0, 10.0])
        if rng.random() < 0.3:
            d = np.round(d)  # ties
        i, j = np.triu_indices(d.size)
        if hodges_lehmann(d) != np.median((d[i] + d[j]) / 2):
            hl_bad += 1

    draws, null_bad, cells = 40_000, 0, 0
    for n in (6, 9, 12):
        vals = rng.normal(size=(n, 2))
        fam = simultaneous_contrasts(MatchedGroups(vals, ["1", "2"]), alpha=0.05, mc_draws=draws, seed=n)
        r = rankdata(vals, axis=1)
        gap = r[:, 1] - r[:, 0]
        exact = np.array([abs(np.dot(s, gap)) for s in itertools.product([-1, 1], repeat=n)])
        for c in np.unique(exact):
            p = float(np.mean(exact >= c - 1e-9))
            se = math.sqrt(max(p * (1 - p), 1e-12) / draws)
            null_bad += abs(fam.tail(c) - p) > 3 * se + 1e-12
            cells += 1

    alpha, reps, hits = 0.05, 1000, 0
    for r in range(reps):
        g = MatchedGroups(rng.normal(size=(15, 4)), ["1", "2", "3", "4"])
        hits += any(e.significant for e in simultaneous_contrasts(g, alpha, mc_draws=2000, seed=r))
    bound = alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)
    ok = hl_bad == 0 and null_bad == 0 and hits / reps <= bound
    detail = (
        f"Hodges-Lehmann {1000 - hl_bad}/1000 exact; two-level null {cells - null_bad}/{cells} tail "
        f"probabilities within 3 SE of enumeration (n = 6, 9, 12); FWER {hits / reps:.3f} <= {bound:.3f}"
    )
    report(7, "inference", ok, detail)


# -- 8 ---------------------------------------------------------------------


def test_8_sensitivity(report):
    rng = np.random.default_rng(8008)
    worst = 0.0
    for _ in range(50):
        d = rng.normal(0.3, 1, size=int(rng.integers(10, 300)))
        ref = wilcoxon(d, alternative="greater", method="approx", correction=True).pvalue
        worst = max(worst, abs(signed_rank_upper_p(d, 1.0) - ref))
    d = rng.normal(0.6, 1, size=200)
    base = rosenbaum_gamma(d).gamma_critical
    invariant = all(rosenbaum_gamma(c * d).gamma_critical == base for c in (1e-3, 0.5, 7.0, 1e4))

    cfg = SynthConfig(level_sizes=(300,) * 3, seed=1, attendance_effect=5.0,
                      template_superset=True, superset_size=200)
    ds = generate_study(cfg)
    design = build_design(ds, 200, template=superset_rows(cfg), cfg=BnbConfig(time_limit=60))
    groups = MatchedGroups.from_design(design, ds, "attendance_rate")
    planted = rosenbaum_gamma(pair_differences(groups, "3"))
    null = rosenbaum_gamma(rng.normal(size=groups.n))
    ok = worst <= 1e-9 and invariant and planted.gamma_critical >= 10 and not planted.capped
    detail = (
        f"max |p - scipy| at gamma 1 = {worst:.1e}; gamma_c scale invariant {invariant}; "
        f"planted effect gamma_c = {planted.gamma_critical:.1f} (pure noise: {null.gamma_critical:.1f})"
    )
    report(8, "sensitivity", ok, detail)


# -- 9 ---------------------------------------------------------------------


def _pipeline(root):
    gen = root / "gen"
    data = ["--input", gen / "data.csv", "--schema", gen / "schema.json"]
    steps = [
        ["gen", "--levels", 3, "--level-size", 200, "--superset-size", 40, "--seed", 9, "--out", gen],
        ["match", *data, "--template", gen / "template.json", "--template-size", 40, "--out", root / "exact"],
        ["match", *data, "--template-size", 30, "--candidates", 50, "--node-limit", 20,
         "--time-limit", 600, "--seed", 9, "--out", root / "limited"],
    ]
    for d in ("exact", "limited"):
        design = ["--design", root / d / "design.json"]
        steps += [
            ["balance", *data, *design, "--out", root / d / "balance"],
            ["estimate", *data, *design, "--mc-draws", 2000, "--seed", 9, "--out", root / d / "estimate"],
            ["sensitivity", *data, *design, "--out", root / d / "sensitivity"],
        ]
    return [main([str(a) for a in step]) for step in steps]


def _artifacts(root):
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "timings.json"
    }


def test_9_determinism(report, tmp_path):
    codes = [_pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")]
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    differing = sorted(k for k in a.keys() | b.keys() if a.get(k) != b.get(k))
    ok = all(c == 0 for run in codes for c in run) and not differing and len(a) > 10
    detail = f"{len(a)} CSV/JSON artifacts compared, {len(differing)} differ" + (
        f" ({', '.join(differing)})" if differing else "")
    report(9, "determinism", ok, detail)
