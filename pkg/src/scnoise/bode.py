"""Thermal-noise variance at a port from three capacitor-only views.

Passive networks use kT*(1/C_inf - 1/C_0). With one OTA in capacitive
feedback the OTA noise is split into a part at the ambient temperature and an
excess part at temperature (gamma/h_fb - 1)*T, which gives::

    v2 = kT * [1/C_inf + (gamma/h_fb - 1)/C_inf' - (gamma/h_fb)/C_0]
"""

from __future__ import annotations

from dataclasses import dataclass

from .capnet import ExtendedCapacitance, ViewKind, build_view, divider_gain, equivalent_capacitance
from .errors import (
    MultipleOtas,
    NegativeVariance,
    NoFeedbackPath,
    OtaPresent,
    SenseNodeIsolated,
    SingularNetwork,
)
from .constants import K_B
from .netlist import Circuit, Ota


_NEGATIVE_FLOOR = -1e-30


@dataclass(frozen=True)
class BodeBreakdown:
    c_inf: ExtendedCapacitance
    c_inf_prime: ExtendedCapacitance
    c_zero: ExtendedCapacitance
    h_fb: float
    gamma: float
    variance: float
    ota_term: float
    switch_term: float
    ota_slope: float  # d(variance)/d(gamma) = ota_term / gamma, defined at gamma = 0 too

    def as_dict(self) -> dict:
        return {
            "c_inf_f": str(self.c_inf),
            "c_inf_prime_f": str(self.c_inf_prime),
            "c_zero_f": str(self.c_zero),
            "h_fb": self.h_fb,
            "gamma": self.gamma,
            "variance_v2": self.variance,
            "ota_term_v2": self.ota_term,
            "switch_term_v2": self.switch_term,
        }


def _single_ota(circuit: Circuit) -> Ota | None:
    otas = circuit.otas
    if len(otas) > 1:
        raise MultipleOtas(f"{len(otas)} OTAs found; only one OTA per circuit is supported")
    return otas[0] if otas else None


def compute_hfb(circuit: Circuit, phase: int, ota: str) -> float:
    """Capacitive feedback gain V(inn)-V(inp) per volt at the OTA output.

    If closed switches tie the OTA output to ground, its noise source is shorted
    and the excess term vanishes whatever h_fb is; unity is returned then.
    """
    amp = circuit.element(ota, Ota)
    view = build_view(circuit, phase, ViewKind.FEEDBACK)
    if view.group(amp.out) == view.ground:
        return 1.0
    try:
        h = divider_gain(view, amp.out, amp.inn, amp.inp)
    except (SenseNodeIsolated, SingularNetwork) as exc:
        raise NoFeedbackPath(f"{ota} in phase {phase}: {exc}") from None
    if not h > 0:
        raise NoFeedbackPath(f"{ota} in phase {phase}: feedback gain {h:g} is not positive")
    return min(h, 1.0)


def _capacitances(circuit: Circuit, phase: int, k: str, l: str):
    return tuple(
        equivalent_capacitance(build_view(circuit, phase, kind), k, l)
        for kind in (ViewKind.C_INF, ViewKind.C_INF_PRIME, ViewKind.C_ZERO)
    )


def _check(variance: float) -> float:
    if variance < _NEGATIVE_FLOOR:
        raise NegativeVariance(f"variance {variance:g} V^2 < 0")
    return max(variance, 0.0)


def passive_variance(circuit: Circuit, phase: int, port: tuple[str, str], T: float) -> float:
    if circuit.otas:
        raise OtaPresent("passive_variance needs a circuit without OTAs")
    k, l = port
    c_inf = equivalent_capacitance(build_view(circuit, phase, ViewKind.C_INF), k, l)
    c_zero = equivalent_capacitance(build_view(circuit, phase, ViewKind.C_ZERO), k, l)
    return _check(K_B * T * (c_inf.reciprocal() - c_zero.reciprocal()))


def ota_variance(circuit: Circuit, phase: int, port: tuple[str, str], T: float) -> BodeBreakdown:
    ota = _single_ota(circuit)
    k, l = port
    c_inf, c_inf_p, c_zero = _capacitances(circuit, phase, k, l)
    kt = K_B * T
    if ota is None:
        v = passive_variance(circuit, phase, port, T)
        return BodeBreakdown(c_inf, c_inf_p, c_zero, 1.0, 0.0, v, 0.0, v, 0.0)

    h_fb = compute_hfb(circuit, phase, ota.name)
    excess_span = c_inf_p.reciprocal() - c_zero.reciprocal()
    ota_slope = kt / h_fb * excess_span
    ota_term = ota.gamma * ota_slope
    switch_term = kt * (c_inf.reciprocal() - c_inf_p.reciprocal())
    variance = switch_term + ota_term
    if variance < 0:
        _check(variance)
        switch_term, variance = -ota_term, 0.0
    return BodeBreakdown(c_inf, c_inf_p, c_zero, h_fb, ota.gamma, variance,
                         ota_term, switch_term, ota_slope)
