"""Classical noise analysis of one clock phase: small-signal MNA with finite
switch resistance and OTA transconductance, per-source transimpedances, and
numeric integration of the output noise PSD.

This is the independent check of the capacitor-only estimates; it shares
nothing with ``capnet``/``bode`` beyond the parsed circuit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .errors import NotConverged, SingularAtFrequency, UnresolvedName
from .constants import K_B
from .netlist import Capacitor, Circuit, Direct, NoiseBudget, Ota, Resistor, Switch


@dataclass(frozen=True)
class NoiseSource:
    name: str
    n1: str          # current injected into n1 and drawn from n2
    n2: str
    psd: float       # one-sided, A^2/Hz


@dataclass
class SmallSignalSystem:
    nodes: list[str]                # ground eliminated
    index: dict[str, int]
    G: np.ndarray
    C: np.ndarray
    sources: list[NoiseSource]
    ground: str

    def injection(self, src: NoiseSource) -> np.ndarray:
        e = np.zeros(len(self.nodes))
        if src.n1 in self.index:
            e[self.index[src.n1]] += 1.0
        if src.n2 in self.index:
            e[self.index[src.n2]] -= 1.0
        return e

    def injections(self) -> np.ndarray:
        if not self.sources:
            return np.zeros((len(self.nodes), 0))
        return np.stack([self.injection(s) for s in self.sources], axis=1)

    def selector(self, port: tuple[str, str]) -> np.ndarray:
        """Row vector w with w @ x = V(k) - V(l)."""
        w = np.zeros(len(self.nodes))
        for node, sign in zip(port, (1.0, -1.0)):
            if node == self.ground:
                continue
            if node not in self.index:
                raise UnresolvedName(f"node {node!r} is not connected to ground in this phase")
            w[self.index[node]] += sign
        return w

    def time_constants(self) -> np.ndarray:
        """|1/lambda| for the finite, nonzero generalized eigenvalues of G v = lambda C v."""
        if not self.nodes:
            return np.array([])
        lam = scipy.linalg.eigvals(self.G, self.C)
        lam = lam[np.isfinite(lam)]
        lam = lam[np.abs(lam) > 0]
        return np.sort(1.0 / np.abs(lam))


def _connected_nodes(circuit: Circuit, phase: int) -> set[str]:
    adj: dict[str, set[str]] = {n: set() for n in circuit.nodes}

    def link(a, b):
        adj[a].add(b)
        adj[b].add(a)

    for el in circuit.elements:
        if isinstance(el, (Capacitor, Resistor)):
            link(el.n1, el.n2)
        elif isinstance(el, Switch) and el.is_closed(phase):
            link(el.n1, el.n2)
        elif isinstance(el, Ota):
            link(el.out, circuit.ground)
    seen = {circuit.ground}
    stack = [circuit.ground]
    while stack:
        for m in adj[stack.pop()]:
            if m not in seen:
                seen.add(m)
                stack.append(m)
    return seen


def build_system(circuit: Circuit, phase: int, T: float) -> SmallSignalSystem:
    """Stamp G and C for ``phase``. Nodes with no path to ground are dropped."""
    live = _connected_nodes(circuit, phase)
    nodes = sorted(live - {circuit.ground})
    index = {n: i for i, n in enumerate(nodes)}
    n = len(nodes)
    G = np.zeros((n, n))
    C = np.zeros((n, n))
    sources: list[NoiseSource] = []
    kt4 = 4.0 * K_B * T

    def stamp(mat, a, b, y):
        ia, ib = index.get(a), index.get(b)
        if ia is not None:
            mat[ia, ia] += y
        if ib is not None:
            mat[ib, ib] += y
        if ia is not None and ib is not None:
            mat[ia, ib] -= y
            mat[ib, ia] -= y

    for el in circuit.elements:
        if isinstance(el, Capacitor):
            stamp(C, el.n1, el.n2, el.value)
        elif isinstance(el, Resistor):
            stamp(G, el.n1, el.n2, 1.0 / el.value)
            sources.append(NoiseSource(el.name, el.n1, el.n2, kt4 / el.value))
        elif isinstance(el, Switch):
            if el.is_closed(phase):
                stamp(G, el.n1, el.n2, 1.0 / el.ron)
                sources.append(NoiseSource(el.name, el.n1, el.n2, kt4 / el.ron))
        elif isinstance(el, Ota):
            # gm*(V(inp) - V(inn)) flows into out: KCL row of out gets -gm*V(inp) + gm*V(inn)
            io = index.get(el.out)
            if io is not None:
                if el.inp in index:
                    G[io, index[el.inp]] -= el.gm
                if el.inn in index:
                    G[io, index[el.inn]] += el.gm
            if el.gamma > 0:
                sources.append(NoiseSource(el.name, el.out, circuit.ground, kt4 * el.gamma * el.gm))
    return SmallSignalSystem(nodes, index, G, C, sources, circuit.ground)


def _solve(sys: SmallSignalSystem, freqs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve (G + j2πfC) X = rhs for every frequency; returns (F, n, m)."""
    w = 2j * np.pi * np.asarray(freqs, dtype=float)
    a = sys.G[None, :, :] + w[:, None, None] * sys.C[None, :, :]
    return np.linalg.solve(a, np.broadcast_to(rhs, (len(freqs),) + rhs.shape))


def transfer_impedance(sys: SmallSignalSystem, source_index: int, port: tuple[str, str], f: float) -> complex:
    a = sys.G + 2j * np.pi * f * sys.C
    if a.size == 0 or np.linalg.cond(a) > 1e14:
        raise SingularAtFrequency(f)
    x = np.linalg.solve(a, sys.injection(sys.sources[source_index]))
    return complex(sys.selector(port) @ x)


@dataclass
class VarianceQuadrature:
    rel_tol: float = 1e-8
    f_min: float = 1e-2
    f_max: float | None = None    # None: 1e4 / (2π τ_min), then extended
    max_levels: int = 40
    max_decades: int = 40
    samples: int = 0
    converged: bool = False


@dataclass
class OracleResult:
    port: tuple[str, str]
    per_source: dict[str, float]
    quad: VarianceQuadrature
    time_constants: list[float] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(self.per_source.values()))

    def as_dict(self) -> dict:
        return {
            "port": list(self.port),
            "total_variance_v2": self.total,
            "total_rms_v": math.sqrt(self.total),
            "per_source_v2": dict(self.per_source),
            "quadrature": {
                "rel_tol": self.quad.rel_tol,
                "f_min_hz": self.quad.f_min,
                "f_max_hz": self.quad.f_max,
                "samples": self.quad.samples,
                "converged": self.quad.converged,
            },
        }


class _Integrand:
    """Per-source |Z(f)|^2 S f on the u = ln f axis, batched over u."""

    def __init__(self, sys: SmallSignalSystem, port):
        self.sys = sys
        self.rhs = sys.injections()
        self.w = sys.selector(port)
        self.psd = np.array([s.psd for s in sys.sources])
        self.calls = 0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        f = np.exp(u)
        self.calls += len(u)
        z = np.einsum("n,fnm->fm", self.w, _solve(self.sys, f, self.rhs))
        return (np.abs(z) ** 2) * self.psd[None, :] * f[:, None]

    def at(self, f: float) -> np.ndarray:
        return self(np.array([math.log(f)]))[0]


def _adaptive_simpson(fn: _Integrand, a: float, b: float, tol_abs: float, max_levels: int) -> tuple[np.ndarray, bool]:
    """Vector-valued adaptive Simpson, refined level by level (all open panels at once).
    Summation order is fixed by panel position, so results are reproducible."""
    n0 = 32
    edges = np.linspace(a, b, n0 + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fe, fm = fn(edges), fn(mids)
    # panel: (lo, hi, f_lo, f_mid, f_hi, whole)
    lo, hi = edges[:-1], edges[1:]
    flo, fmid, fhi = fe[:-1], fm, fe[1:]
    whole = (hi - lo)[:, None] / 6.0 * (flo + 4 * fmid + fhi)
    done = []
    span = b - a
    converged = True
    for _ in range(max_levels):
        if len(lo) == 0:
            break
        m = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + m), 0.5 * (m + hi)
        vals = fn(np.concatenate([lm, rm]))
        flm, frm = vals[: len(lo)], vals[len(lo):]
        left = (m - lo)[:, None] / 6.0 * (flo + 4 * flm + fmid)
        right = (hi - m)[:, None] / 6.0 * (fmid + 4 * frm + fhi)
        err = np.abs(left + right - whole).sum(axis=1)
        ok = err <= 15.0 * tol_abs * (hi - lo) / span
        refined = left + right + (left + right - whole) / 15.0
        done.extend(zip(lo[ok], refined[ok]))
        keep = ~ok
        lo, hi, m = lo[keep], hi[keep], m[keep]
        flo, flm, fmid, frm, fhi = flo[keep], flm[keep], fmid[keep], frm[keep], fhi[keep]
        left, right = left[keep], right[keep]
        lo, hi = np.concatenate([lo, m]), np.concatenate([m, hi])
        flo, fhi = np.concatenate([flo, fmid]), np.concatenate([fmid, fhi])
        fmid = np.concatenate([flm, frm])
        whole = np.concatenate([left, right])
    else:
        converged = len(lo) == 0
    if len(lo):
        converged = False
        done.extend(zip(lo, whole))
    done.sort(key=lambda t: t[0])
    total = np.zeros(len(fn.psd))
    for _, v in done:
        total = total + v
    return total, converged


def integrate_variance(sys: SmallSignalSystem, port: tuple[str, str],
                       quad: VarianceQuadrature | None = None) -> OracleResult:
    """Σ_i ∫ |Z_i(f)|^2 S_i df from 0 to the extended f_max."""
    quad = replace(quad) if quad is not None else VarianceQuadrature()
    names = [s.name for s in sys.sources]
    taus = sys.time_constants()
    if not sys.sources:
        quad.converged = True
        return OracleResult(port, {}, quad, taus.tolist())
    fn = _Integrand(sys, port)
    if quad.f_max is None:
        tau_min = taus[0] if len(taus) else 1e-9
        quad.f_max = 1e4 / (2 * math.pi * tau_min)

    # [0, f_min] as a rectangle: |Z|^2 S is flat there, and in u-space the integrand is |Z|^2 S f
    total = fn.at(quad.f_min)
    # coarse scale for the absolute tolerance
    u = np.linspace(math.log(quad.f_min), math.log(quad.f_max), 257)
    coarse = np.trapezoid(fn(u).sum(axis=1), u)
    scale = max(coarse, np.finfo(float).tiny)
    body, ok = _adaptive_simpson(fn, math.log(quad.f_min), math.log(quad.f_max),
                                 quad.rel_tol * scale, quad.max_levels)
    total = total + body
    converged = ok
    for _ in range(quad.max_decades):
        lo = math.log(quad.f_max)
        hi = lo + math.log(10.0)
        decade, ok = _adaptive_simpson(fn, lo, hi, quad.rel_tol * max(total.sum(), scale), quad.max_levels)
        converged &= ok
        total = total + decade
        quad.f_max *= 10.0
        if decade.sum() < quad.rel_tol * total.sum():
            break
    else:
        raise NotConverged(f"high-frequency tail still significant at f_max = {quad.f_max:g} Hz")
    quad.samples = fn.calls
    quad.converged = converged
    if not converged:
        raise NotConverged(f"adaptive Simpson did not reach rel_tol {quad.rel_tol:g}")
    return OracleResult(port, dict(zip(names, (float(v) for v in total))), quad, taus.tolist())


def phase_variance(circuit: Circuit, phase: int, port: tuple[str, str], T: float,
                   quad: VarianceQuadrature | None = None) -> OracleResult:
    return integrate_variance(build_system(circuit, phase, T), port, quad)


def evaluate_budget_oracle(circuit: Circuit, budget: NoiseBudget,
                           quad: VarianceQuadrature | None = None) -> dict:
    """Budget total with every Bode estimate replaced by the integrated PSD.

    The charge-to-output gain is still the ideal-OTA one from ``transfer``.
    """
    from .transfer import charge_to_output_gain

    port = circuit.port(budget.output_port)
    T = budget.temperature
    entries = []
    for entry in budget.contributions:
        if isinstance(entry, Direct):
            res = phase_variance(circuit, entry.phase, port, T, quad)
            entries.append({"label": entry.label, "variance_v2": res.total,
                            "per_source_v2": res.per_source})
        else:
            gain = charge_to_output_gain(circuit, entry.transfer_phase, entry.inject_ota, port)
            q2 = 0.0
            for name in entry.capacitors:
                cap = circuit.element(name, Capacitor)
                res = phase_variance(circuit, entry.sample_phase, cap.nodes, T, quad)
                q2 += cap.value ** 2 * res.total
            entries.append({"label": entry.label, "variance_v2": gain * gain * q2})
    total = sum(e["variance_v2"] for e in entries)
    return {"total_variance_v2": total, "total_rms_v": math.sqrt(total), "contributions": entries}
