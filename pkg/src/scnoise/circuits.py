"""Netlist and plan generators for the reference circuits (SC amplifier,
track & hold, first-order RC). Inputs are grounded for noise analysis.
"""

from __future__ import annotations

from .mcsim import settling_gm
from .netlist import Circuit, NoiseBudget, budget_from_dict, parse_netlist

# defaults of the validation setup: 1 us clock, 5 kOhm switches, 100 ns settling
RON = 5e3
T_SET = 100e-9
C2 = CL = 0.5e-12
CIN = 20e-15


def sc_amplifier_netlist(c1=0.5e-12, c2=C2, cin=CIN, cl=CL, ron=RON, gm=None, gamma=1.0,
                         t_set=T_SET) -> str:
    """Autozeroed SC amplifier: phase 1 resets (output tied to the inverting input),
    phase 2 amplifies with gain -C1/C2."""
    if gm is None:
        gm = settling_gm(c1, c2, cin, cl, t_set)
    return f"""\
# SC autozero amplifier
.phases 2
.ground 0
C c1 a vg {c1!r}
C c2 vg out {c2!r}
C cin vg 0 {cin!r}
C cl out 0 {cl!r}
SW s1 a 0 ron={ron!r} closed=1,2   # input switch: ground in phase 1, (grounded) input in phase 2
SW s2 vg out ron={ron!r} closed=1   # autozero
OTA ota1 inp=0 inn=vg out=out gm={gm!r} gamma={gamma!r}
.port out out 0
.port c1 a vg
"""


def track_hold_netlist(c1=0.5e-12, c2=C2, cin=CIN, cl=CL, ron=RON, gm=None, gamma=1.0,
                       t_set=T_SET) -> str:
    """SC track & hold: phase 1 samples on C1 and resets C2, phase 2 transfers the
    charge to C2 and samples the output onto CL."""
    if gm is None:
        gm = settling_gm(c1, c2, cin, cl, t_set)
    return f"""\
# SC track & hold
.phases 2
.ground 0
C c1 a vg {c1!r}
C c2 vg out {c2!r}
C cin vg 0 {cin!r}
C cl hold 0 {cl!r}
SW s1 a 0 ron={ron!r} closed=1,2    # input in phase 1, ground in phase 2
SW s2 vg 0 ron={ron!r} closed=1
SW s3 vg out ron={ron!r} closed=1   # C2 reset
SW s4 out hold ron={ron!r} closed=2
OTA ota1 inp=0 inn=vg out=out gm={gm!r} gamma={gamma!r}
.port out hold 0
.port c1 a vg
.port c2 vg out
.port cin vg 0
"""


def rc_netlist(r=RON, c=1e-12) -> str:
    return f"""\
# first-order RC low-pass, input grounded
.phases 1
.ground 0
R r1 out 0 {r!r}
C c1 out 0 {c!r}
.port out out 0
"""


SC_AMPLIFIER_PLAN = {
    "temperature_k": 300.0,
    "output_port": "out",
    "contributions": [
        {"type": "sampled_transfer", "sample_phase": 1, "capacitors": ["c1"],
         "inject_ota": "ota1", "transfer_phase": 2},
        {"type": "direct", "phase": 2},
    ],
}

TRACK_HOLD_PLAN = {
    "temperature_k": 300.0,
    "output_port": "out",
    "contributions": [
        {"type": "sampled_transfer", "sample_phase": 1, "capacitors": ["c1", "c2", "cin"],
         "inject_ota": "ota1", "transfer_phase": 2},
        {"type": "direct", "phase": 2},
    ],
}


def sc_amplifier(**kw) -> tuple[Circuit, NoiseBudget]:
    circuit = parse_netlist(sc_amplifier_netlist(**kw))
    return circuit, budget_from_dict(SC_AMPLIFIER_PLAN, circuit)


def track_hold(**kw) -> tuple[Circuit, NoiseBudget]:
    circuit = parse_netlist(track_hold_netlist(**kw))
    return circuit, budget_from_dict(TRACK_HOLD_PLAN, circuit)
