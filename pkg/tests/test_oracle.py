import math

import numpy as np
import pytest
from _support import KT300, closed_forms

from scnoise.circuits import rc_netlist, sc_amplifier_netlist
from scnoise.errors import NotConverged, SingularAtFrequency
from scnoise.netlist import parse_netlist
from scnoise.oracle import VarianceQuadrature, build_system, integrate_variance, phase_variance, transfer_impedance

CF = closed_forms()
SETUP = CF["table_setup"]
GM = SETUP["gm_ron"] / SETUP["ron"]


def sc(**kw):
    kw.setdefault("gm", GM)
    kw.setdefault("gamma", SETUP["gamma"])
    return parse_netlist(sc_amplifier_netlist(**kw))


def test_source_counts():
    c = sc()
    assert [s.name for s in build_system(c, 1, 300.0).sources] == ["s1", "s2", "ota1"]
    assert [s.name for s in build_system(c, 2, 300.0).sources] == ["s1", "ota1"]
    pure = parse_netlist(".ground 0\nC a x 0 1p\n")
    assert build_system(pure, 1, 300.0).sources == []


def test_source_psds():
    sys = build_system(sc(), 1, 300.0)
    psd = {s.name: s.psd for s in sys.sources}
    assert psd["s1"] == pytest.approx(4 * KT300 / 5e3, rel=1e-14)
    assert psd["ota1"] == pytest.approx(4 * KT300 * 2.0 * GM, rel=1e-14)


def test_rc_dc_transimpedance_is_r():
    sys = build_system(parse_netlist(rc_netlist(r=5e3, c=1e-12)), 1, 300.0)
    assert transfer_impedance(sys, 0, ("out", "0"), 0.0) == pytest.approx(5e3, rel=1e-12)


def test_sc_phase1_ota_dc_ntf():
    sys = build_system(sc(), 1, 300.0)
    z = transfer_impedance(sys, 2, ("a", "vg"), 1e-3)
    assert abs(z) == pytest.approx(1 / GM, rel=1e-6)


def test_sc_phase2_ota_dc_ntf():
    sys = build_system(sc(), 2, 300.0)
    z = transfer_impedance(sys, 1, ("out", "0"), 1e-3)
    c1 = c2 = 0.5e-12
    cin = 20e-15
    assert abs(z) == pytest.approx((c1 + c2 + cin) / (GM * c2), rel=1e-6)


def test_vccs_sign_follower_gain():
    # unity-gain follower driven from a resistive source: DC gain must be +1, not -1
    c = parse_netlist(".ground 0\nR rs in 0 1k\nR rl out 0 1meg\nC cl out 0 1p\nC cs in 0 1p\n"
                      "OTA u inp=in inn=out out=out gm=1 gamma=1\n")
    sys = build_system(c, 1, 300.0)
    z_in = transfer_impedance(sys, 0, ("in", "0"), 1e-3)
    z_out = transfer_impedance(sys, 0, ("out", "0"), 1e-3)
    assert (z_out / z_in).real == pytest.approx(1.0, abs=1e-5)


def test_phase1_virtual_ground_follows():
    # s2 closed: the OTA noise current reaches vg and out alike at DC
    sys = build_system(sc(gm=1e-2), 1, 300.0)
    zv = transfer_impedance(sys, 2, ("vg", "0"), 1e-3)
    zo = transfer_impedance(sys, 2, ("out", "0"), 1e-3)
    assert (zv / zo).real == pytest.approx(1.0, abs=1e-3)


def test_singular_at_dc():
    c = parse_netlist(".ground 0\nR r x y 1k\nC c y 0 1p\nC d x 0 1p\nSW s y 0 ron=1k closed=2\n.phases 2\n")
    sys = build_system(c, 1, 300.0)
    with pytest.raises(SingularAtFrequency):
        transfer_impedance(sys, 0, ("x", "0"), 0.0)


def test_rc_integral():
    res = phase_variance(parse_netlist(rc_netlist(c=1e-12)), 1, ("out", "0"), 300.0)
    assert res.total == pytest.approx(4.141947e-9, rel=1e-6)
    assert res.total == pytest.approx(KT300 / 1e-12, rel=1e-7)
    assert res.quad.converged


@pytest.mark.parametrize("row", CF["table_ii"], ids=lambda r: f"c2={r['c2']:g}")
def test_table_ii_rows(row):
    res = phase_variance(sc(c2=row["c2"]), 1, ("a", "vg"), 300.0)
    for name in ("s1", "s2", "ota1"):
        assert res.per_source[name] == pytest.approx(row[name], rel=0.01)
    assert res.per_source["s1"] + res.per_source["s2"] == pytest.approx(row["switches"], rel=0.01)
    assert res.total == pytest.approx(row["total"], rel=0.01)


def test_table_ii_switches_c2_invariant():
    sums = [sum(phase_variance(sc(c2=c2), 1, ("a", "vg"), 300.0).per_source[n] for n in ("s1", "s2"))
            for c2 in (0.1e-12, 0.5e-12, 2e-12)]
    assert max(sums) / min(sums) - 1 < 0.01
    rows = [phase_variance(sc(c2=c2), 1, ("a", "vg"), 300.0).per_source["s1"] for c2 in (0.1e-12, 2e-12)]
    assert abs(rows[0] / rows[1] - 1) > 0.05


def test_table_iv_rows():
    row = CF["table_iv"][0]
    res = phase_variance(sc(), 2, ("out", "0"), 300.0)
    for name in ("s1", "ota1"):
        assert res.per_source[name] == pytest.approx(row[name], rel=0.01)
    assert res.total == pytest.approx(row["total"], rel=0.01)


def test_quadrature_self_consistency():
    c = sc(gm=1.54e-5, gamma=1.0)
    a = phase_variance(c, 2, ("out", "0"), 300.0, VarianceQuadrature(rel_tol=1e-6)).total
    b = phase_variance(c, 2, ("out", "0"), 300.0, VarianceQuadrature(rel_tol=5e-7)).total
    assert abs(a - b) / b < 1e-6


def test_deterministic():
    c = sc()
    a = phase_variance(c, 1, ("a", "vg"), 300.0)
    b = phase_variance(c, 1, ("a", "vg"), 300.0)
    assert a.per_source == b.per_source


def test_not_converged():
    sys = build_system(sc(), 1, 300.0)
    with pytest.raises(NotConverged):
        integrate_variance(sys, ("a", "vg"), VarianceQuadrature(rel_tol=1e-14, max_levels=2))


def test_time_constants_rc():
    sys = build_system(parse_netlist(rc_netlist(r=5e3, c=1e-12)), 1, 300.0)
    assert np.allclose(sys.time_constants(), [5e-9], rtol=1e-12)


def test_no_sources_zero():
    c = parse_netlist(".ground 0\nC a x 0 1p\n.port out x 0\n")
    res = phase_variance(c, 1, ("x", "0"), 300.0)
    assert res.total == 0.0 and res.quad.converged


def test_large_gm_ron_exceeds_bode():
    from scnoise.bode import ota_variance

    c = sc(gm=0.3 / 5e3, gamma=0.0)
    o = phase_variance(c, 2, ("out", "0"), 300.0).total
    assert o > ota_variance(c, 2, ("out", "0"), 300.0).variance
    assert math.isfinite(o)
