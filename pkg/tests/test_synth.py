import numpy as np
import pytest

from repmatch.data import category_counts
from repmatch.diagnostics import smd
from repmatch.polytope import lemma_model, polytope_report, with_cardinality
from repmatch.model import build_model
from repmatch.synth import STUDENT_MARGINALS, STUDENT_SCHEMA, SynthConfig, generate_study


def test_schema_shape():
    assert STUDENT_SCHEMA.P == 14 and STUDENT_SCHEMA.total_categories == 78
    assert all(abs(p.sum() - 1) < 1e-12 for p in STUDENT_MARGINALS.values())


def test_marginals_are_reproduced():
    ds = generate_study(SynthConfig(level_sizes=(20000,), seed=1))
    counts = category_counts(ds.x, None, ds.schema)
    for p, cov in enumerate(ds.schema.covariates):
        freq = counts.covariate(p) / len(ds)
        assert np.abs(freq - STUDENT_MARGINALS[cov.name]).max() < 0.015, cov.name


def test_levels_confounded_and_effect_planted():
    ds = generate_study(SynthConfig(level_sizes=(3000, 3000, 3000), seed=2, attendance_effect=3.0))
    assert ds.levels == ["1", "2", "3"] and [ds.level(v).size for v in ds.levels] == [3000] * 3
    ses = ds.x[:, [p for p, c in enumerate(ds.schema.covariates) if c.name == "school_ses"][0]]
    lo, hi = ses[ds.level("1")], ses[ds.level("3")]
    b, _ = smd((hi.astype(float), lo.astype(float)))
    assert b > 0.1  # exposure rises with the latent factor
    att = ds.outcomes["attendance_rate"]
    assert att[ds.level("3")].mean() < att[ds.level("1")].mean()


def test_superset_and_determinism():
    cfg = SynthConfig(level_sizes=(50, 60), seed=3, template_superset=True, superset_size=20)
    a, b = generate_study(cfg), generate_study(cfg)
    assert np.array_equal(a.x, b.x) and a.ids == b.ids
    assert np.array_equal(a.outcomes["psu"], b.outcomes["psu"])
    assert [a.level(v).size for v in a.levels] == [70, 80]
    core = {tuple(r) for r in a.x[110:130]}
    for v in a.levels:
        rows = {tuple(r) for r in a.x[a.level(v)]}
        assert core <= rows
    with pytest.raises(ValueError):
        generate_study(SynthConfig(level_sizes=(0,)))


def test_lemma_polytope_both_conventions():
    m = lemma_model()
    at_T = polytope_report(m)
    assert (at_T.n_vertices, at_T.n_fractional, at_T.half_vertex_found) == (31, 11, True)
    at_1 = polytope_report(m, 1)
    assert (at_1.n_vertices, at_1.n_fractional, at_1.half_vertex_found) == (6, 0, False)
    doc = at_T.to_dict()
    assert len(doc["fractional_points"]) == 11
    assert {"z[0]": 0.5, "z[1]": 0.5, "z[2]": 0.5, "z[3]": 0.5, "z[4]": 0.5, "z[5]": 0.5} in doc["fractional_points"]


def test_with_cardinality_needs_linear_model():
    m = lemma_model()
    q = build_model("quadratic", m.level_x[:3], m.level_x, m.schema)
    with pytest.raises(ValueError):
        with_cardinality(q, 1)
    assert with_cardinality(m, 2).b[-1] == 2 and m.lp.b[-1] == 3
