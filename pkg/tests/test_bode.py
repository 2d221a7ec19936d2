import random

import pytest
from _support import KT300, random_rc_oneport

from scnoise.bode import compute_hfb, ota_variance, passive_variance
from scnoise.circuits import rc_netlist, sc_amplifier_netlist, track_hold_netlist
from scnoise.errors import MultipleOtas, NoFeedbackPath, OtaPresent
from scnoise.netlist import parse_netlist
from scnoise.oracle import phase_variance

C1 = C2 = CL = 0.5e-12
CIN = 20e-15


def sc(**kw):
    return parse_netlist(sc_amplifier_netlist(**kw))


def test_rc_kt_over_c():
    c = parse_netlist(rc_netlist(c=1e-12))
    v = passive_variance(c, 1, ("out", "0"), 300.0)
    assert v == pytest.approx(4.141947e-9, rel=1e-6)
    assert v == pytest.approx(KT300 / 1e-12, rel=1e-14)


def test_pure_capacitor_is_noiseless():
    c = parse_netlist(".ground 0\nC a x 0 1p\nC b x y 2p\n")
    assert passive_variance(c, 1, ("x", "0"), 300.0) == 0.0


def test_resistor_shorted_port():
    c = parse_netlist(".ground 0\nR r x y 1k\nC a x 0 1p\nC b y 0 3p\n")
    c_inf = 1e-12 * 3e-12 / 4e-12
    assert passive_variance(c, 1, ("x", "y"), 300.0) == pytest.approx(KT300 / c_inf, rel=1e-12)


def test_passive_rejects_ota():
    with pytest.raises(OtaPresent):
        passive_variance(sc(), 1, ("a", "vg"), 300.0)


def test_hfb_values():
    assert compute_hfb(sc(), 1, "ota1") == 1.0
    assert compute_hfb(sc(), 2, "ota1") == pytest.approx(0.4901961, rel=1e-7)
    assert compute_hfb(sc(c1=1e-30, cin=1e-30), 2, "ota1") == pytest.approx(1.0, rel=1e-12)


def test_no_feedback_path():
    c = parse_netlist(".ground 0\nC a x 0 1p\nC b o 0 1p\nOTA u inp=0 inn=x out=o gm=1u gamma=1\n")
    with pytest.raises(NoFeedbackPath):
        compute_hfb(c, 1, "u")


def test_multiple_otas():
    c = parse_netlist(".ground 0\nC a x o 1p\nC b o 0 1p\nOTA u inp=0 inn=x out=o gm=1u gamma=1\n"
                      "OTA w inp=0 inn=x out=o gm=1u gamma=1\n")
    with pytest.raises(MultipleOtas):
        ota_variance(c, 1, ("o", "0"), 300.0)


def test_sc_phase1_across_c1():
    bd = ota_variance(sc(), 1, ("a", "vg"), 300.0)
    expected = KT300 / (C1 + CIN + CL) * (1.0 + (CIN + CL) / C1)
    assert bd.variance == pytest.approx(expected, rel=1e-12)
    assert bd.variance == pytest.approx(8.2838e-9, rel=1e-4)
    assert bd.variance == bd.ota_term + bd.switch_term


def test_th_phase1_c1_is_kt_over_c1():
    th = parse_netlist(track_hold_netlist())
    bd = ota_variance(th, 1, ("a", "vg"), 300.0)
    assert bd.c_inf_prime.is_infinite and bd.c_zero.is_infinite
    assert bd.variance == pytest.approx(KT300 / C1, rel=1e-14)


def test_unity_hfb_special_cases():
    kt = 1.380649e-23 * 300.0
    # gamma/h_fb = 1: the OTA is a plain conductance at temperature T, so the passive form holds
    bd = ota_variance(sc(gamma=1.0), 1, ("a", "vg"), 300.0)
    assert bd.h_fb == 1.0
    assert bd.variance == pytest.approx(kt * (bd.c_inf.reciprocal() - bd.c_zero.reciprocal()), rel=1e-12)
    # gamma = 0: a noiseless OTA, only the switch term survives
    bd0 = ota_variance(sc(gamma=0.0), 1, ("a", "vg"), 300.0)
    assert bd0.ota_term == 0.0
    assert bd0.variance == pytest.approx(kt * (bd0.c_inf.reciprocal() - bd0.c_inf_prime.reciprocal()), rel=1e-12)


@pytest.mark.parametrize("phase,port", [(1, ("a", "vg")), (2, ("out", "0"))])
def test_temperature_linearity(phase, port):
    c = sc()
    v300 = ota_variance(c, phase, port, 300.0).variance
    for T in (1.0, 77.0, 450.0):
        assert ota_variance(c, phase, port, T).variance == pytest.approx(T / 300.0 * v300, rel=1e-14)


@pytest.mark.parametrize("phase,port", [(1, ("a", "vg")), (2, ("out", "0"))])
def test_gamma_affinity(phase, port):
    vals = [ota_variance(sc(gamma=g), phase, port, 300.0) for g in (0.0, 0.5, 1.0, 2.0, 3.0)]
    slope = vals[0].ota_slope
    assert slope >= 0
    for g, bd in zip((0.0, 0.5, 1.0, 2.0, 3.0), vals):
        assert bd.variance == pytest.approx(vals[0].variance + g * slope, rel=1e-12)
        expected_slope = 1.380649e-23 * 300.0 / bd.h_fb * (bd.c_inf_prime.reciprocal() - bd.c_zero.reciprocal())
        assert bd.ota_slope == pytest.approx(expected_slope, rel=1e-12)


def test_c2_independence_phase1():
    base = ota_variance(sc(), 1, ("a", "vg"), 300.0).variance
    for f in (0.1, 0.3, 1.0, 3.0, 10.0):
        assert ota_variance(sc(c2=f * C2), 1, ("a", "vg"), 300.0).variance == pytest.approx(base, rel=1e-13)


@pytest.mark.parametrize("phase,port", [(1, ("a", "vg")), (2, ("out", "0"))])
def test_capacitance_homogeneity(phase, port):
    v = ota_variance(sc(), phase, port, 300.0).variance
    for s in (0.1, 2.0, 7.0):
        scaled = sc(c1=s * C1, c2=s * C2, cin=s * CIN, cl=s * CL)
        assert ota_variance(scaled, phase, port, 300.0).variance == pytest.approx(v / s, rel=1e-12)


def test_random_rc_against_oracle():
    rng = random.Random(2024)
    for _ in range(100):
        c, port = random_rc_oneport(rng)
        b = passive_variance(c, 1, port, 300.0)
        o = phase_variance(c, 1, port, 300.0).total
        assert b == pytest.approx(o, rel=1e-3)


@pytest.mark.parametrize("phase,port", [(1, ("a", "vg")), (2, ("out", "0"))])
def test_oracle_convergence_small_gm_ron(phase, port):
    devs = []
    for gm_ron in (1e-1, 1e-2, 1e-3):
        c = sc(gm=gm_ron / 5e3, gamma=1.0)
        b = ota_variance(c, phase, port, 300.0).variance
        o = phase_variance(c, phase, port, 300.0).total
        devs.append(abs(b - o) / o)
    assert devs[-1] < 0.01
    assert devs[0] > devs[1] > devs[2]
