"""Cross-phase noise budgets.

Noise charge frozen on capacitors at the end of one phase is pushed into an
OTA virtual ground in a later phase and appears at the output through the
ideal-OTA charge-to-voltage gain. Direct entries are read at the output port
with the extended Bode estimate. The budget total is the plain sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bode import K_B, BodeBreakdown, ota_variance
from .capnet import ViewKind, build_view
from .errors import IndeterminateSolve, NoFeedbackPath
from .netlist import Capacitor, Circuit, Direct, NoiseBudget, Ota, SampledTransfer


@dataclass(frozen=True)
class SampledCharge:
    capacitor: str
    phase: int
    capacitance: float
    voltage_variance: float  # V^2 across the capacitor at the end of `phase`
    variance_q2: float       # C^2 * voltage_variance
    breakdown: BodeBreakdown


@dataclass(frozen=True)
class ContributionRecord:
    label: str
    variance: float
    ota_slope: float     # variance per unit gamma
    switch_part: float   # gamma-independent variance
    breakdown: BodeBreakdown | None = None
    charges: tuple[SampledCharge, ...] = ()
    gain_v_per_c: float | None = None

    @property
    def rms(self) -> float:
        return math.sqrt(self.variance)

    def as_dict(self) -> dict:
        d = {"label": self.label, "variance_v2": self.variance, "rms_v": self.rms}
        if self.breakdown is not None:
            d["breakdown"] = self.breakdown.as_dict()
        if self.charges:
            d["gain_v_per_c"] = self.gain_v_per_c
            d["charges"] = [
                {"capacitor": q.capacitor, "phase": q.phase, "voltage_variance_v2": q.voltage_variance,
                 "variance_q2": q.variance_q2, "breakdown": q.breakdown.as_dict()}
                for q in self.charges
            ]
        return d


@dataclass(frozen=True)
class Normalized:
    c_ref: float
    beta_ota: float
    beta_sw: float


@dataclass(frozen=True)
class NoiseReport:
    temperature: float
    contributions: tuple[ContributionRecord, ...]
    normalized: Normalized | None = None
    flags: tuple[str, ...] = field(default=())

    @property
    def total_variance(self) -> float:
        return sum(c.variance for c in self.contributions)

    @property
    def total_rms(self) -> float:
        return math.sqrt(self.total_variance)

    def as_dict(self) -> dict:
        d = {
            "temperature_k": self.temperature,
            "total_variance_v2": self.total_variance,
            "total_rms_v": self.total_rms,
            "contributions": [c.as_dict() for c in self.contributions],
            "flags": list(self.flags),
        }
        if self.normalized is not None:
            d["normalized"] = {
                "c_ref_f": self.normalized.c_ref,
                "beta_ota": self.normalized.beta_ota,
                "beta_sw": self.normalized.beta_sw,
            }
        return d


def charge_to_output_gain(circuit: Circuit, phase: int, inject_ota: str, port: tuple[str, str]) -> float:
    """Port voltage per coulomb dropped on the virtual ground of ``inject_ota``.

    Infinite-gain OTA: the input pair is held equal, the output group voltage
    is free, and every other non-ground group keeps zero net charge.
    """
    ota = circuit.element(inject_ota, Ota)
    view = build_view(circuit, phase, ViewKind.FEEDBACK)
    g_in, g_ref, g_out = view.group(ota.inn), view.group(ota.inp), view.group(ota.out)
    if g_in == view.ground:
        return 0.0
    keep = set()
    for comp in view.components():
        if comp & {view.ground, g_in, g_ref, g_out}:
            keep |= comp
    if g_out not in keep or g_in not in keep:
        raise NoFeedbackPath(f"{inject_ota} has no capacitive loop in phase {phase}")
    groups = sorted(keep - {view.ground})
    index = {g: i for i, g in enumerate(groups)}
    lap = view.laplacian(sorted(keep))
    full = {g: i for i, g in enumerate(sorted(keep))}
    rows = [full[g] for g in groups]
    a = lap[np.ix_(rows, rows)]
    rhs = np.zeros(len(groups))
    rhs[index[g_in]] = 1.0
    if g_out != view.ground:
        # the OTA sources whatever charge its output needs; replace that balance
        # by the virtual-ground constraint V(inn) - V(inp) = 0
        r = index[g_out]
        scale = np.abs(lap).max()  # keep the constraint row commensurate with the Laplacian
        a[r, :] = 0.0
        a[r, index[g_in]] += scale
        if g_ref != view.ground:
            a[r, index[g_ref]] -= scale
        rhs[r] = 0.0
    try:
        if np.linalg.cond(a) > 1e12:
            raise np.linalg.LinAlgError
        v = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        raise IndeterminateSolve(f"{inject_ota} phase {phase}: no capacitor closes the feedback loop") from None

    def volt(node):
        g = view.group(node)
        return v[index[g]] if g in index else 0.0

    k, l = port
    return float(volt(k) - volt(l))


def sampled_charge_variance(circuit: Circuit, phase: int, capacitor: str, T: float) -> SampledCharge:
    cap = circuit.element(capacitor, Capacitor)
    bd = ota_variance(circuit, phase, (cap.n1, cap.n2), T)
    return SampledCharge(capacitor, phase, cap.value, bd.variance, cap.value ** 2 * bd.variance, bd)


def _direct(circuit: Circuit, entry: Direct, port, T: float) -> ContributionRecord:
    bd = ota_variance(circuit, entry.phase, port, T)
    return ContributionRecord(entry.label, bd.variance, bd.ota_slope, bd.switch_term, breakdown=bd)


def _sampled(circuit: Circuit, entry: SampledTransfer, port, T: float) -> ContributionRecord:
    charges = tuple(sampled_charge_variance(circuit, entry.sample_phase, c, T) for c in entry.capacitors)
    gain = charge_to_output_gain(circuit, entry.transfer_phase, entry.inject_ota, port)
    g2 = gain * gain
    variance = g2 * sum(q.variance_q2 for q in charges)
    slope = g2 * sum(q.capacitance ** 2 * q.breakdown.ota_slope for q in charges)
    switch = g2 * sum(q.capacitance ** 2 * q.breakdown.switch_term for q in charges)
    return ContributionRecord(entry.label, variance, slope, switch, charges=charges, gain_v_per_c=gain)


def feedback_capacitance(circuit: Circuit, phase: int, ota: str) -> float | None:
    """Total capacitance joining the OTA's inverting input and output in ``phase``."""
    amp = circuit.element(ota, Ota)
    view = build_view(circuit, phase, ViewKind.FEEDBACK)
    pair = {view.group(amp.inn), view.group(amp.out)}
    if len(pair) != 2:
        return None
    total = sum(c for a, b, c in view.capacitors if {a, b} == pair)
    return total or None


def _correlation_flags(circuit: Circuit, entry: SampledTransfer) -> list[str]:
    caps = [circuit.element(c, Capacitor) for c in entry.capacitors]
    flags = []
    for i, a in enumerate(caps):
        for b in caps[i + 1:]:
            shared = sorted(set(a.nodes) & set(b.nodes))
            if shared:
                flags.append(
                    f"correlation-risk: {a.name} and {b.name} share node(s) {shared} "
                    f"sampled in phase {entry.sample_phase}; charges summed as independent"
                )
    return flags


def evaluate_budget(circuit: Circuit, budget: NoiseBudget) -> NoiseReport:
    port = circuit.port(budget.output_port)
    T = budget.temperature
    records = []
    flags: list[str] = []
    for entry in budget.contributions:
        if isinstance(entry, Direct):
            records.append(_direct(circuit, entry, port, T))
        else:
            records.append(_sampled(circuit, entry, port, T))
            flags.extend(_correlation_flags(circuit, entry))

    c_ref = None
    if budget.c_ref is not None:
        c_ref = circuit.element(budget.c_ref, Capacitor).value
    elif len(circuit.otas) == 1:
        ota = circuit.otas[0].name
        transfer_phase = next((e.transfer_phase for e in budget.contributions
                               if isinstance(e, SampledTransfer)), budget.readout_phase)
        c_ref = feedback_capacitance(circuit, transfer_phase, ota)
    normalized = None
    if c_ref is not None:
        scale = c_ref / (K_B * T)
        normalized = Normalized(
            c_ref,
            beta_ota=scale * sum(r.ota_slope for r in records),
            beta_sw=scale * sum(r.switch_part for r in records),
        )
    return NoiseReport(T, tuple(records), normalized, tuple(flags))
