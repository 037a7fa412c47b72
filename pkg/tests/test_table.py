import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from billiard_mme.errors import (EmptyTable, HorizonNotCertified, IndexOutOfRange,
                                 OverlappingScatterers, ParseError)
from billiard_mme.table import (OPEN_TABLE, REFERENCE_TABLE, ScattererDisk, TableConfig,
                                boundary_gaps, boundary_point, corridor_scan, format_table,
                                parse_table, validate_table)


def test_single_disk_has_open_corridor():
    cfg = TableConfig((ScattererDisk(0.0, 0.0, 0.49),))
    with pytest.raises(HorizonNotCertified) as exc:
        validate_table(cfg)
    assert exc.value.report["report"]["open_corridors"]


def test_overlapping_disks_rejected():
    cfg = TableConfig((ScattererDisk(0.0, 0.0, 0.4), ScattererDisk(0.5, 0.0, 0.4)))
    with pytest.raises(OverlappingScatterers):
        validate_table(cfg)


def test_empty_table_rejected():
    with pytest.raises(EmptyTable):
        validate_table(TableConfig(()))


@pytest.mark.parametrize("cfg", [REFERENCE_TABLE, OPEN_TABLE])
def test_shipped_tables_are_certified(cfg):
    d = validate_table(cfg)
    assert d.finite_horizon_certified
    assert d.report["open_corridors"] == []
    assert d.report["escaped_rays"] == 0
    assert 0 < d.tau_min < d.tau_max < cfg.horizon_budget


def test_reference_constants():
    d = validate_table(REFERENCE_TABLE)
    # nearest boundaries: centre distance sqrt(0.5) minus both radii
    assert d.tau_min == pytest.approx(math.sqrt(0.5) - 0.47 - 0.23, abs=1e-15)
    assert d.k_min == pytest.approx(1 / 0.47)
    assert d.k_max == pytest.approx(1 / 0.23)
    assert d.lambda_hyp == pytest.approx(1 + 2 * d.tau_min / 0.47)
    lo, hi = d.cone
    assert lo == d.k_min and hi == pytest.approx(d.k_max + 1 / d.tau_min)


def test_boundary_gaps_self_translates():
    gaps = boundary_gaps(TableConfig((ScattererDisk(0.0, 0.0, 0.3),)))
    assert gaps[(0, 0)] == pytest.approx(1.0 - 0.6)


def test_corridor_scan_blocks_reference_directions():
    corridors, margin = corridor_scan(REFERENCE_TABLE)
    assert corridors == [] and margin > 0


def test_boundary_point_conventions():
    cfg = TableConfig((ScattererDisk(0.0, 0.0, 0.4),))
    p, n = boundary_point(cfg, 0, 0.0)
    np.testing.assert_allclose(p, [0.4, 0.0], atol=1e-15)
    np.testing.assert_allclose(n, [1.0, 0.0], atol=1e-15)
    quarter = 0.25 * 2 * math.pi * 0.4
    p, n = boundary_point(cfg, 0, quarter)
    np.testing.assert_allclose(p, [0.0, -0.4], atol=1e-15)
    np.testing.assert_allclose(n, [0.0, -1.0], atol=1e-15)
    p_wrap, _ = boundary_point(cfg, 0, 2 * math.pi * 0.4 + 0.1)
    p_ref, _ = boundary_point(cfg, 0, 0.1)
    np.testing.assert_allclose(p_wrap, p_ref, atol=1e-14)
    with pytest.raises(IndexOutOfRange):
        boundary_point(cfg, 1, 0.0)


@given(st.floats(0.0, 10.0, allow_nan=False))
def test_boundary_point_normal_is_unit(r):
    p, n = boundary_point(REFERENCE_TABLE, 1, r)
    assert np.linalg.norm(n) == pytest.approx(1.0)
    d = REFERENCE_TABLE.scatterers[1]
    np.testing.assert_allclose(p, [d.cx + d.radius * n[0], d.cy + d.radius * n[1]])


def test_table_file_round_trip():
    text = format_table(REFERENCE_TABLE)
    assert parse_table(text) == REFERENCE_TABLE
    cfg = parse_table("# comment\ndisk 0 0 0.4  # big\n\ndisk 0.5 0.5 0.22\nhorizon_budget 2.5\n")
    assert len(cfg) == 2 and cfg.horizon_budget == 2.5


@pytest.mark.parametrize("text", ["disk 0 0", "disk 0 0 -1", "circle 0 0 1", "disk 0 0 x",
                                  "disk 0 0 0.3\nhorizon_budget 1\nhorizon_budget 2"])
def test_table_parse_errors(text):
    with pytest.raises(ParseError):
        parse_table(text)


def test_table_file_without_disks():
    with pytest.raises(EmptyTable):
        parse_table("horizon_budget 2\n")


@settings(max_examples=25)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.01, 0.5))
def test_disk_centre_reduced_to_torus(cx, cy, rad):
    d = ScattererDisk(cx, cy, rad)
    assert 0 <= d.cx < 1 and 0 <= d.cy < 1
    assert d.perimeter == pytest.approx(2 * math.pi * rad)
