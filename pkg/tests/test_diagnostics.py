import csv
import json
import math
import statistics

import numpy as np
import pytest

from repmatch.design import build_design
from repmatch.diagnostics import balance_table, smd, smd_report
from repmatch.mip import BnbConfig
from test_design import superset_study


def test_smd_by_hand():
    g1, g2 = [0, 1, 1, 1], [0, 0, 1, 1]
    sd = math.sqrt((statistics.variance(g1) + statistics.variance(g2)) / 2)
    b, a = smd((g1, g2), ([1, 1, 0], [1, 0, 1]))
    assert b == pytest.approx((0.75 - 0.5) / sd)
    assert a == pytest.approx(0.0)
    b, a = smd((g1, g2))
    assert math.isnan(a)


def test_smd_zero_variance_and_errors():
    assert smd(([1, 1], [1, 1]), ([1, 1], [1, 1])) == (0.0, 0.0)
    b, _ = smd(([1, 1], [0, 0]))
    assert math.isnan(b)
    with pytest.raises(ValueError):
        smd(([1], [0, 1]))


def test_balance_and_smd_on_exact_design(tmp_path):
    ds, template = superset_study(levels=3, seed=2)
    d = build_design(ds, 12, template=template, cfg=BnbConfig(time_limit=30))
    tab = balance_table(d, ds.x)
    assert not tab.flags.any() and tab.flagged_cells() == []
    assert all(tab.deviation(lv) == 0 for lv in d.levels)
    assert (tab.counts == tab.template[:, None]).all()
    tab.write_csv(tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["covariate", "category", "template", "1", "2", "3"]
    assert len(rows) == 1 + ds.schema.total_categories
    tab.write_json(tmp_path / "b.json")
    assert json.loads((tmp_path / "b.json").read_text())["deviation"] == {"1": 0, "2": 0, "3": 0}
    rep = smd_report(d, ds)
    assert np.all(rep.after == 0)
    assert np.nanmax(np.abs(rep.before)) > 0
    rep.write_csv(tmp_path / "s.csv")
    assert len(list(csv.reader(open(tmp_path / "s.csv")))) == 1 + 3 * ds.schema.total_categories


def test_deviation_equals_objective_when_imbalanced():
    ds, _ = superset_study(levels=2, T=6, extra=10, seed=11)
    # template from outside the exact copies forces some levels off balance
    d = build_design(ds, 8, R=10, seed=1, cfg=BnbConfig(time_limit=30))
    tab = balance_table(d, ds.x)
    for lv in d.levels:
        assert tab.deviation(lv) == d.matches[lv].objective
    flagged = tab.flagged_cells()
    assert len(flagged) == int(tab.flags.sum())
    for cov, cat, lv, t, n in flagged:
        assert t != n
