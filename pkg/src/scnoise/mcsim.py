"""Transient-noise Monte Carlo of a switched circuit.

Each clock phase is a linear RC/VCCS network discretized with backward Euler;
every noise source is a white Gaussian current of variance S/(2 dt) per step
(one-sided PSD S band-limited to 1/(2 dt)). The state carried across a phase
boundary is the node-voltage vector; BE works on C*x, so charge on every
capacitor island that is floating in the new phase is conserved exactly.

Two propagation methods give the same distribution of end-of-phase states:

``"step"``
    draws one Gaussian vector per time step (vectorized in blocks).
``"phase"``
    draws the accumulated BE noise of a whole phase at once from its exact
    covariance sum_j A^j B B^T A^jT (computed by doubling). Much faster when
    the circuit has very fast poles.

Randomness: numpy ``PCG64`` bit generator seeded with the 64-bit ``seed``
(period 2^128), standard normals by numpy's ziggurat transform.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .capnet import ViewKind, build_view, equivalent_capacitance
from .errors import TimestepTooCoarse, UnstableIntegration
from .netlist import Circuit, Ota
from .oracle import build_system

V_LIMIT = 1e3
BLOCK = 2048


def settling_gm(c1: float, c2: float, cin: float, cl: float, t_set: float) -> float:
    """Gm keeping the closed-loop settling time constant at ``t_set``.

    beta = C2/(C1+C2+Cin), Cout = CL + (1-beta)*C2, Ceq = Cout/beta, Gm = Ceq/t_set
    """
    beta = c2 / (c1 + c2 + cin)
    c_out = cl + (1.0 - beta) * c2
    return c_out / beta / t_set


def settling_gm_for(circuit: Circuit, phase: int, ota: str, t_set: float) -> float:
    """Same rule read off any netlist: Cout is the capacitance at the OTA output
    with closed switches shorted and the OTA removed, beta the feedback gain."""
    from .bode import compute_hfb

    amp = circuit.element(ota, Ota)
    c_out = equivalent_capacitance(build_view(circuit, phase, ViewKind.C_INF_PRIME), amp.out, circuit.ground)
    return c_out.farads / compute_hfb(circuit, phase, ota) / t_set


@dataclass
class McConfig:
    period: float = 1e-6
    phase_split: tuple[float, ...] | None = None   # None: equal split
    dt: float | None = None                        # None: tau_min / 20
    n_periods: int = 103
    n_discard: int = 3
    n_runs: int = 40                               # independent runs, pooled
    seed: int = 0
    sample_phase: int = 2
    port: tuple[str, str] = ("out", "0")
    method: str = "phase"

    @property
    def n_samples(self) -> int:
        return self.n_runs * (self.n_periods - self.n_discard)

    def validate(self, n_phases: int) -> None:
        if self.n_discard < 2:
            raise ValueError("n_discard must be >= 2")
        if self.n_periods - self.n_discard < 100:
            raise ValueError("need at least 100 retained periods per run")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if not 1 <= self.sample_phase <= n_phases:
            raise ValueError(f"sample_phase {self.sample_phase} outside 1..{n_phases}")
        if self.method not in ("step", "phase"):
            raise ValueError(f"unknown method {self.method!r}")
        split = self.split(n_phases)
        if len(split) != n_phases or min(split) <= 0:
            raise ValueError("phase_split needs one positive fraction per phase")

    def split(self, n_phases: int) -> tuple[float, ...]:
        if self.phase_split is None:
            return (1.0 / n_phases,) * n_phases
        total = sum(self.phase_split)
        return tuple(f / total for f in self.phase_split)


@dataclass
class McEstimate:
    variance: float
    rms: float
    n_samples: int
    ci95_rel: float
    dt: float
    tau_min: float
    steps_per_phase: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def ci95_rel(n: int) -> float:
    """Relative 95 % half-width of a Gaussian sample variance."""
    return 1.96 * math.sqrt(2.0 / n)


class PhaseStepper:
    """Backward-Euler update x' = A x + B w for one phase (w ~ N(0, I))."""

    def __init__(self, circuit: Circuit, phase: int, T: float, dt: float, nodes: list[str]):
        self.phase = phase
        self.dt = dt
        self.nodes = nodes
        n = len(nodes)
        pruned = build_system(circuit, phase, T)
        idx = [nodes.index(v) for v in pruned.nodes]
        self.G = np.zeros((n, n))
        self.C = np.zeros((n, n))
        self.G[np.ix_(idx, idx)] = pruned.G
        self.C[np.ix_(idx, idx)] = pruned.C
        # nodes cut off from ground this phase only see capacitors among themselves: frozen
        self.held = sorted(set(range(n)) - set(idx))
        m = self.G + self.C / dt
        p = self.C / dt
        for i in self.held:
            m[i, :] = 0.0
            m[i, i] = 1.0
            p[i, :] = 0.0
            p[i, i] = 1.0
        inj = np.zeros((n, len(pruned.sources)))
        for j, src in enumerate(pruned.sources):
            for node, sign in ((src.n1, 1.0), (src.n2, -1.0)):
                if node in pruned.index:
                    inj[nodes.index(node), j] += sign
        scale = np.sqrt(np.array([s.psd for s in pruned.sources]) / (2.0 * dt))
        m_inv = np.linalg.inv(m)
        self.A = m_inv @ p
        self.B = m_inv @ inj * scale[None, :]
        self.source_names = [s.name for s in pruned.sources]

    @property
    def n_sources(self) -> int:
        return self.B.shape[1]

    def step(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ w

    def block(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        """(A^b, Q) with Q[j] = A^(b-1-j) B, so b steps are A^b x + sum_j Q[j] w_j."""
        q = np.empty((b,) + self.B.shape)
        acc = self.B.copy()
        for j in range(b - 1, -1, -1):
            q[j] = acc
            acc = self.A @ acc
        return np.linalg.matrix_power(self.A, b), q

    def aggregate(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        """(A^N, L) with L L^T = sum_{j<N} A^j B B^T A^jT, by binary doubling."""
        n = self.A.shape[0]
        pw, cov = self.A.copy(), self.B @ self.B.T        # for 2^i steps
        total_pw, total_cov = np.eye(n), np.zeros((n, n))
        k = steps
        while k:
            if k & 1:
                total_cov = pw @ total_cov @ pw.T + cov
                total_pw = pw @ total_pw
            k >>= 1
            if k:
                cov = cov + pw @ cov @ pw.T
                pw = pw @ pw
        total_cov = 0.5 * (total_cov + total_cov.T)
        vals, vecs = np.linalg.eigh(total_cov)
        return total_pw, vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


def floating_islands(circuit: Circuit, phase: int) -> list[list[str]]:
    """Node groups with no conductive path to ground in ``phase``.

    Conductive links are closed switches, resistors and the OTA output stage.
    No current reaches these groups, so their total charge is frozen.
    """
    from .netlist import Resistor, Switch

    parent = {v: v for v in circuit.nodes}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for el in circuit.elements:
        if isinstance(el, Resistor) or (isinstance(el, Switch) and el.is_closed(phase)):
            parent[find(el.n1)] = find(el.n2)
        elif isinstance(el, Ota):
            parent[find(el.out)] = find(circuit.ground)
    groups: dict[str, list[str]] = {}
    for v in sorted(circuit.nodes):
        groups.setdefault(find(v), []).append(v)
    g0 = find(circuit.ground)
    return [g for root, g in groups.items() if root != g0]


def capacitance_matrix(circuit: Circuit, nodes: list[str]) -> np.ndarray:
    """Full nodal capacitance matrix (all capacitors, ground eliminated)."""
    index = {v: i for i, v in enumerate(nodes)}
    c = np.zeros((len(nodes), len(nodes)))
    for cap in circuit.capacitors:
        for a, b in ((cap.n1, cap.n2), (cap.n2, cap.n1)):
            if a in index:
                c[index[a], index[a]] += cap.value
                if b in index:
                    c[index[a], index[b]] -= cap.value
    return c


def island_charges(circuit: Circuit, phase: int, nodes: list[str], x: np.ndarray) -> dict[tuple[str, ...], np.ndarray]:
    """Total charge of every floating island of ``phase`` for state(s) ``x``."""
    q = capacitance_matrix(circuit, nodes) @ x
    return {tuple(g): sum(q[nodes.index(v)] for v in g) for g in floating_islands(circuit, phase)}


class ChargeKeeper:
    """Restores the charge of floating islands after a phase.

    BE conserves C*x on an island only up to rounding of the solve; the
    residual is removed by shifting each island's voltages uniformly.
    """

    def __init__(self, circuit: Circuit, phase: int, nodes: list[str]):
        c = capacitance_matrix(circuit, nodes)
        islands = floating_islands(circuit, phase)
        self.e = np.zeros((len(islands), len(nodes)))
        for k, group in enumerate(islands):
            for v in group:
                self.e[k, nodes.index(v)] = 1.0
        self.ec = self.e @ c
        k_mat = self.ec @ self.e.T
        self.active = bool(islands) and abs(np.linalg.det(k_mat)) > 0
        if self.active:
            self.k_inv = np.linalg.inv(k_mat)

    def charges(self, x: np.ndarray) -> np.ndarray:
        return self.ec @ x

    def restore(self, x: np.ndarray, q0: np.ndarray) -> np.ndarray:
        if not self.active:
            return x
        return x + self.e.T @ (self.k_inv @ (q0 - self.ec @ x))


def min_time_constant(circuit: Circuit, T: float = 300.0) -> float:
    taus = [t for p in range(1, circuit.n_phases + 1) for t in build_system(circuit, p, T).time_constants()]
    return min(taus) if taus else math.inf


def _phase_steps(cfg: McConfig, n_phases: int, dt: float) -> list[tuple[int, float]]:
    out = []
    for frac in cfg.split(n_phases):
        duration = frac * cfg.period
        steps = max(1, math.ceil(duration / dt - 1e-9))
        out.append((steps, duration / steps))
    return out


def _setup(circuit: Circuit, cfg: McConfig, T: float):
    cfg.validate(circuit.n_phases)
    tau_min = min_time_constant(circuit, T)
    if cfg.dt is None:
        dt = tau_min / 20.0 if math.isfinite(tau_min) else cfg.period / 1000.0
    else:
        dt = cfg.dt
        if dt > tau_min / 10.0:
            raise TimestepTooCoarse(f"dt = {dt:g} s exceeds tau_min/10 = {tau_min / 10:g} s")
    nodes = sorted(circuit.nodes - {circuit.ground})
    plan = _phase_steps(cfg, circuit.n_phases, dt)
    steppers = [PhaseStepper(circuit, p + 1, T, h, nodes) for p, (_, h) in enumerate(plan)]
    sel = np.zeros(len(nodes))
    for node, sign in zip(cfg.port, (1.0, -1.0)):
        if node != circuit.ground:
            sel[nodes.index(node)] += sign
    return tau_min, nodes, plan, steppers, sel


def be_variance(circuit: Circuit, cfg: McConfig, T: float) -> float:
    """Expected value of the MC estimate: the port variance of the discretized
    chain at the sampling instant, by propagating the covariance over
    ``cfg.n_periods`` periods. No random numbers involved."""
    _, nodes, plan, steppers, sel = _setup(circuit, cfg, T)
    props = [st.aggregate(n) for st, (n, _) in zip(steppers, plan)]
    cov = np.zeros((len(nodes), len(nodes)))
    out = 0.0
    for _period in range(cfg.n_periods):
        for p, (a_n, l_n) in enumerate(props):
            cov = a_n @ cov @ a_n.T + l_n @ l_n.T
            if p + 1 == cfg.sample_phase:
                out = float(sel @ cov @ sel)
    return out


def run_mc(circuit: Circuit, cfg: McConfig, T: float, trace=None) -> McEstimate:
    """Pooled sample variance at the end of ``cfg.sample_phase``.

    ``trace(period, phase, nodes, x)`` is called after every phase if given.
    """
    tau_min, nodes, plan, steppers, sel = _setup(circuit, cfg, T)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    r = cfg.n_runs
    x = np.zeros((len(nodes), r))
    samples = []

    if cfg.method == "phase":
        props = [st.aggregate(n) for st, (n, _) in zip(steppers, plan)]
    else:
        props = []
        for st, (n, _) in zip(steppers, plan):
            full = st.block(min(n, BLOCK))
            tail = st.block(n % BLOCK) if n > BLOCK and n % BLOCK else None
            props.append((full, tail))

    keepers = [ChargeKeeper(circuit, p + 1, nodes) for p in range(circuit.n_phases)]
    for period in range(cfg.n_periods):
        for p, st in enumerate(steppers):
            q0 = keepers[p].charges(x)
            n_steps = plan[p][0]
            if cfg.method == "phase":
                a_n, l_n = props[p]
                x = a_n @ x + l_n @ rng.standard_normal((l_n.shape[1], r))
            else:
                (a_b, q_b), tail = props[p]
                left = n_steps
                while left:
                    if left >= q_b.shape[0]:
                        a_use, q_use = a_b, q_b
                    else:
                        a_use, q_use = tail
                    b = q_use.shape[0]
                    w = rng.standard_normal((b, st.n_sources, r))
                    x = a_use @ x + np.einsum("jnk,jkr->nr", q_use, w)
                    left -= b
            x = keepers[p].restore(x, q0)
            if not np.all(np.abs(x) <= V_LIMIT):
                raise UnstableIntegration(f"|V| > {V_LIMIT:g} V in period {period}, phase {p + 1}")
            if trace is not None:
                trace(period, p + 1, nodes, x)
            if p + 1 == cfg.sample_phase and period >= cfg.n_discard:
                samples.append(sel @ x)

    data = np.concatenate(samples)
    var = float(np.var(data, ddof=1)) if data.size > 1 else 0.0
    return McEstimate(
        variance=var,
        rms=math.sqrt(var),
        n_samples=int(data.size),
        ci95_rel=ci95_rel(int(data.size)),
        dt=max(h for _, h in plan),
        tau_min=tau_min,
        steps_per_phase=[n for n, _ in plan],
        config={**asdict(cfg), "port": list(cfg.port), "temperature_k": T},
    )
