import json

import numpy as np
import pytest

from patgen import drc
from patgen.geometry import Layout
from patgen.rules import DesignRules

# 1 normalized unit = 100 nm on a 1000 nm, 10-unit extent
RULES = DesignRules(space_min=1.0, width_min=1.0, area_min=2.0, area_max=50.0, extent_nm=1000, total_extent=10)


def rect(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


def lay(*rings):
    return Layout(1000, 1000, tuple(rings))


def test_clean_rectangle():
    assert drc.check(lay(rect(100, 100, 400, 400)), RULES).clean


def test_width_violation_reports_measurement():
    report = drc.check(lay(rect(100, 100, 150, 600)), RULES)
    widths = [v for v in report.violations if v.rule == "width"]
    assert len(widths) == 1
    assert widths[0].measured == 50
    assert widths[0].bound == 100


def test_space_violation_between_polygons():
    report = drc.check(lay(rect(100, 100, 400, 400), rect(450, 100, 800, 400)), RULES)
    spaces = [v for v in report.violations if v.rule == "space"]
    assert [v.measured for v in spaces] == [50]


def test_notch_inside_one_polygon_is_not_a_space():
    u_shape = ((100, 100), (700, 100), (700, 600), (450, 600), (450, 300), (400, 300), (400, 600), (100, 600))
    report = drc.check(lay(u_shape), RULES)
    assert not [v for v in report.violations if v.rule == "space"]


def test_area_bounds():
    small = drc.check(lay(rect(100, 100, 200, 200)), RULES)
    assert [v.rule for v in small.violations] == ["area"]
    assert small.violations[0].measured == 10_000
    big = drc.check(lay(rect(0, 0, 800, 800)), RULES)
    assert [v.rule for v in big.violations] == ["area"]


def test_exact_bounds_pass():
    assert drc.check(lay(rect(100, 100, 200, 300), rect(300, 100, 400, 300)), RULES).clean


def test_needs_resolved_rules():
    with pytest.raises(ValueError):
        drc.check(lay(rect(100, 100, 400, 400)), DesignRules(1, 1, 0, 5))


def test_report_jsonl():
    report = drc.check(lay(rect(100, 100, 150, 600)), RULES)
    lines = report.to_jsonl().splitlines()
    assert len(lines) == len(report.violations)
    assert set(json.loads(lines[0])) == {"rule", "location", "measured", "bound"}


def test_prefilter_bowties():
    assert not drc.prefilter(np.array([[1, 0], [0, 1]]))
    assert not drc.prefilter(np.array([[0, 1, 1], [1, 0, 0]]))
    assert drc.prefilter(np.array([[1, 1], [0, 1]]))
    assert drc.prefilter(np.zeros((1, 5)))


def test_prefilter_rules_are_pluggable(monkeypatch):
    monkeypatch.setattr(drc, "PREFILTER_RULES", drc.PREFILTER_RULES + [lambda t: t.sum() > 3])
    assert not drc.prefilter(np.ones((2, 2)))
    assert drc.prefilter(np.ones((1, 3)))
