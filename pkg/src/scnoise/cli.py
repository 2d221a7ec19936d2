"""``scnoise`` command line.

Every command writes one JSON document (to ``-o`` or stdout) that embeds a
run manifest. ``sweep`` writes CSV instead, with the manifest as ``#`` lines
above the header. Floats are rounded to 9 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import itertools
import json
import math
import os
import sys
from pathlib import Path

from . import __version__, errors
from .mcsim import McConfig, run_mc, settling_gm_for
from .netlist import Circuit, NoiseBudget, parse_netlist, parse_plan, parse_value
from .oracle import VarianceQuadrature, evaluate_budget_oracle, phase_variance
from .transfer import evaluate_budget

# (code, name, error classes); the most specific class in an exception's MRO wins
EXIT_TABLE: list[tuple[int, str, tuple[type, ...]]] = [
    (0, "Ok", ()),
    (2, "Usage", ()),
    (3, "FileNotFound", (FileNotFoundError,)),
    (4, "NetlistSyntax", (errors.NetlistSyntaxError,)),
    (5, "DuplicateElementName", (errors.DuplicateElementName,)),
    (6, "UnknownPhase", (errors.UnknownPhase,)),
    (7, "NonPositiveValue", (errors.NonPositiveValue,)),
    (8, "MissingGround", (errors.MissingGround,)),
    (9, "NetlistInvalid", (errors.NetlistError,)),
    (10, "PlanInvalid", (errors.PlanError, errors.PhaseOutOfRange, errors.EmptyContributions)),
    (11, "UnresolvedName", (errors.UnresolvedName,)),
    (12, "SingularNetwork", (errors.SingularNetwork,)),
    (13, "SenseNodeIsolated", (errors.SenseNodeIsolated,)),
    (14, "NoFeedbackPath", (errors.NoFeedbackPath,)),
    (15, "MultipleOtas", (errors.MultipleOtas,)),
    (16, "OtaPresent", (errors.OtaPresent,)),
    (17, "NegativeVariance", (errors.NegativeVariance,)),
    (18, "IndeterminateSolve", (errors.IndeterminateSolve,)),
    (19, "SingularAtFrequency", (errors.SingularAtFrequency,)),
    (20, "NotConverged", (errors.NotConverged,)),
    (21, "TimestepTooCoarse", (errors.TimestepTooCoarse,)),
    (22, "UnstableIntegration", (errors.UnstableIntegration,)),
    (23, "SweepEmpty", (errors.SweepEmpty,)),
    (24, "ConfigInvalid", (ValueError,)),
    (70, "InternalError", (errors.ScNoiseError,)),
]
EXIT_CODES = {name: code for code, name, _ in EXIT_TABLE}

SWEEP_HEADER = ["point", "method", "gm_s", "variance_v2", "rms_v", "ci95_rel"]


def exit_code_for(exc: BaseException) -> int:
    by_class = {cls: code for code, _, classes in EXIT_TABLE for cls in classes}
    for cls in type(exc).__mro__:
        if cls in by_class:
            return by_class[cls]
    return EXIT_CODES["InternalError"]


def _exit_help() -> str:
    lines = ["exit codes:"]
    lines += [f"  {code:3d}  {name}" for code, name, _ in EXIT_TABLE]
    return "\n".join(lines)


# -- output helpers ----------------------------------------------------------

def sig9(x):
    """Round floats (recursively) to 9 significant digits; inf/nan become strings."""
    if isinstance(x, bool) or x is None:
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            return str(x)
        return float(f"{x:.9g}")
    if isinstance(x, dict):
        return {k: sig9(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [sig9(v) for v in x]
    return x


def fmt9(x) -> str:
    if x is None:
        return ""
    return f"{x:.9g}"


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest(args: argparse.Namespace, inputs: list[str], resolved: dict) -> dict:
    return {
        "tool": "scnoise",
        "version": __version__,
        "command": args.command,
        "argv": list(args.argv),
        "inputs": {p: {"sha256": _digest(p)} for p in inputs},
        "resolved": resolved,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_json(doc: dict, out: str | None) -> None:
    _emit(json.dumps(sig9(doc), indent=2, sort_keys=False) + "\n", out)


# -- input helpers -----------------------------------------------------------

def _read(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load(args, need_plan: bool) -> tuple[Circuit, NoiseBudget | None, list[str]]:
    inputs = [args.netlist]
    circuit = parse_netlist(_read(args.netlist))
    budget = None
    if need_plan or getattr(args, "plan", None):
        if not args.plan:
            raise ValueError("--plan is required for this command")
        inputs.append(args.plan)
        budget = parse_plan(_read(args.plan), circuit)
    return circuit, budget, inputs


def _port(circuit: Circuit, spec: str | None, budget: NoiseBudget | None) -> tuple[str, str]:
    if spec is None:
        if budget is not None:
            return circuit.port(budget.output_port)
        return circuit.port("out")
    if "," in spec:
        k, l = (s.strip() for s in spec.split(",", 1))
        for node in (k, l):
            if node not in circuit.nodes:
                raise errors.UnresolvedName(f"unknown node {node!r}")
        return k, l
    return circuit.port(spec)


def _temperature(args, budget: NoiseBudget | None) -> float:
    if args.temp_k is not None:
        if not args.temp_k > 0:
            raise ValueError("--temp-k must be > 0")
        return args.temp_k
    return budget.temperature if budget is not None else 300.0


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SCNOISE_SEED")
    if env is not None:
        try:
            return int(env, 0)
        except ValueError:
            raise ValueError(f"SCNOISE_SEED={env!r} is not an integer") from None
    return 0


def _mc_config(args, circuit: Circuit, port, sample_phase: int) -> McConfig:
    cfg = McConfig(
        period=args.period,
        dt=args.dt,
        n_periods=args.periods,
        n_discard=args.discard,
        n_runs=args.runs,
        seed=_seed(args),
        sample_phase=sample_phase,
        port=tuple(port),
        method=args.method,
    )
    cfg.validate(circuit.n_phases)
    return cfg


def _quad(args) -> VarianceQuadrature:
    if not args.rel_tol > 0:
        raise ValueError("--rel-tol must be > 0")
    return VarianceQuadrature(rel_tol=args.rel_tol)


# -- commands ------------------------------------------------------------------

def cmd_bode(args) -> int:
    circuit, budget, inputs = _load(args, need_plan=True)
    if args.temp_k is not None:
        budget = NoiseBudget(_temperature(args, budget), budget.output_port, budget.contributions, budget.c_ref)
    report = evaluate_budget(circuit, budget)
    doc = {"manifest": manifest(args, inputs, {"temperature_k": budget.temperature,
                                               "output_port": budget.output_port}),
           "report": report.as_dict()}
    _emit_json(doc, args.out)
    return 0


def cmd_oracle(args) -> int:
    circuit, budget, inputs = _load(args, need_plan=False)
    T = _temperature(args, budget)
    quad = _quad(args)
    if budget is not None and args.phase is None:
        if args.temp_k is not None:
            budget = NoiseBudget(T, budget.output_port, budget.contributions, budget.c_ref)
        result = evaluate_budget_oracle(circuit, budget, quad)
        resolved = {"temperature_k": T, "rel_tol": quad.rel_tol, "output_port": budget.output_port}
    else:
        phase = args.phase if args.phase is not None else 1
        if not 1 <= phase <= circuit.n_phases:
            raise errors.PhaseOutOfRange(f"--phase {phase} outside 1..{circuit.n_phases}")
        port = _port(circuit, args.port, budget)
        res = phase_variance(circuit, phase, port, T, quad)
        result = {"phase": phase, **res.as_dict(), "time_constants_s": res.time_constants}
        resolved = {"temperature_k": T, "rel_tol": quad.rel_tol, "phase": phase, "port": list(port),
                    "f_min_hz": res.quad.f_min}
    _emit_json({"manifest": manifest(args, inputs, resolved), "oracle": result}, args.out)
    return 0


def cmd_mc(args) -> int:
    circuit, budget, inputs = _load(args, need_plan=False)
    T = _temperature(args, budget)
    port = _port(circuit, args.port, budget)
    sample_phase = args.sample_phase or (budget.readout_phase if budget else circuit.n_phases)
    cfg = _mc_config(args, circuit, port, sample_phase)
    est = run_mc(circuit, cfg, T)
    resolved = {"temperature_k": T, "seed": cfg.seed, "dt_s": est.dt, "tau_min_s": est.tau_min,
                "period_s": cfg.period, "phase_split": list(cfg.split(circuit.n_phases)),
                "n_periods": cfg.n_periods, "n_discard": cfg.n_discard, "n_runs": cfg.n_runs,
                "sample_phase": cfg.sample_phase, "port": list(port), "method": cfg.method}
    est_doc = est.as_dict()
    est_doc.pop("config", None)
    _emit_json({"manifest": manifest(args, inputs, resolved), "estimate": est_doc}, args.out)
    return 0


def parse_sweep(spec: str) -> tuple[str, str, list[float]]:
    """``element.param=v1,v2,...`` (SI suffixes allowed)."""
    if "=" not in spec or "." not in spec.split("=", 1)[0]:
        raise ValueError(f"sweep {spec!r} is not ELEMENT.PARAM=v1,v2,...")
    target, values = spec.split("=", 1)
    element, param = target.split(".", 1)
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not items:
        raise errors.SweepEmpty(f"sweep over {target} has no values")
    return element, param, [parse_value(v) for v in items]


def sweep_points(circuit: Circuit, sweeps: list[tuple[str, str, list[float]]], hold_tset: bool,
                 t_set: float, phase: int):
    """Yield (values, circuit) for the Cartesian product of the sweeps."""
    otas = circuit.otas
    for combo in itertools.product(*(vals for _, _, vals in sweeps)):
        c = circuit
        for (element, param, _), value in zip(sweeps, combo):
            c = c.with_value(element, param, value)
        if hold_tset:
            if len(otas) != 1:
                raise errors.MultipleOtas("--hold-tset needs exactly one OTA")
            c = c.with_value(otas[0].name, "gm", settling_gm_for(c, phase, otas[0].name, t_set))
        yield combo, c


def cmd_sweep(args) -> int:
    circuit, budget, inputs = _load(args, need_plan=True)
    if not args.sweep:
        raise errors.SweepEmpty("no --sweep given")
    sweeps = [parse_sweep(s) for s in args.sweep]
    for element, param, _ in sweeps:
        circuit.with_value(element, param, 1.0 if param != "gamma" else 0.0)  # validates the target
    methods = []
    for m in args.with_:
        methods += [x.strip() for x in m.split(",") if x.strip()]
    methods = methods or ["bode"]
    for m in methods:
        if m not in ("bode", "oracle", "mc"):
            raise ValueError(f"--with: unknown method {m!r}")
    T = _temperature(args, budget)
    budget = NoiseBudget(T, budget.output_port, budget.contributions, budget.c_ref)
    port = circuit.port(budget.output_port)
    quad = _quad(args)
    cfg = _mc_config(args, circuit, port, args.sample_phase or budget.readout_phase) if "mc" in methods else None

    columns = [f"{e}.{p}" for e, p, _ in sweeps]
    buf = io.StringIO()
    resolved = {"temperature_k": T, "methods": methods, "hold_tset": bool(args.hold_tset),
                "tset_s": args.tset, "rel_tol": quad.rel_tol}
    if cfg is not None:
        resolved.update({"seed": cfg.seed, "n_periods": cfg.n_periods, "n_discard": cfg.n_discard,
                         "n_runs": cfg.n_runs, "period_s": cfg.period, "dt_s": cfg.dt,
                         "method": cfg.method, "sample_phase": cfg.sample_phase})
    for line in json.dumps(sig9(manifest(args, inputs, resolved)), indent=1).splitlines():
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["point"] + columns + SWEEP_HEADER[1:])
    ota = circuit.otas[0].name if len(circuit.otas) == 1 else None
    for i, (combo, c) in enumerate(sweep_points(circuit, sweeps, args.hold_tset, args.tset,
                                                budget.readout_phase)):
        gm = c.element(ota).gm if ota else None
        for m in methods:
            ci = None
            if m == "bode":
                var = evaluate_budget(c, budget).total_variance
            elif m == "oracle":
                var = evaluate_budget_oracle(c, budget, quad)["total_variance_v2"]
            else:
                est = run_mc(c, cfg, T)
                var, ci = est.variance, est.ci95_rel
            writer.writerow([i] + [fmt9(v) for v in combo] + [m, fmt9(gm), fmt9(var), fmt9(math.sqrt(var)), fmt9(ci)])
    _emit(buf.getvalue(), args.out)
    return 0


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="scnoise",
        description="Thermal-noise analysis of switched-capacitor circuits.",
        epilog=_exit_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("--version", action="version", version=f"scnoise {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, plan_required: bool):
        sp.add_argument("-n", "--netlist", required=True, help="netlist file")
        sp.add_argument("-p", "--plan", required=plan_required, help="JSON analysis plan")
        sp.add_argument("-o", "--out", help="output file (default: stdout)")
        sp.add_argument("--temp-k", type=float, default=None,
                        help="temperature in K (default: plan's temperature_k, else 300)")

    def mc_flags(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: $SCNOISE_SEED, then 0)")
        sp.add_argument("--periods", type=int, default=103, help="clock periods per run, incl. discarded")
        sp.add_argument("--discard", type=int, default=3, help="initial periods dropped per run")
        sp.add_argument("--runs", type=int, default=40, help="independent runs, pooled")
        sp.add_argument("--dt", type=float, default=None, help="time step in s (default: tau_min/20)")
        sp.add_argument("--period", type=float, default=1e-6, help="clock period in s")
        sp.add_argument("--sample-phase", type=int, default=None,
                        help="phase at whose end the port is sampled (default: plan readout phase)")
        sp.add_argument("--method", choices=("phase", "step"), default="phase",
                        help="noise propagation: exact per-phase draws or per-step draws")

    def quad_flags(sp):
        sp.add_argument("--rel-tol", type=float, default=1e-8, help="oracle quadrature tolerance")

    sp = sub.add_parser("bode", help="extended Bode noise budget")
    common(sp, plan_required=True)
    sp.set_defaults(func=cmd_bode)

    sp = sub.add_parser("oracle", help="frequency-domain noise integration")
    common(sp, plan_required=False)
    sp.add_argument("--phase", type=int, default=None, help="phase to analyse (default 1; with -p and no --phase: whole budget)")
    sp.add_argument("--port", default=None, help="port name or 'k,l' node pair")
    quad_flags(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("mc", help="transient-noise Monte Carlo")
    common(sp, plan_required=False)
    sp.add_argument("--port", default=None, help="port name or 'k,l' node pair")
    mc_flags(sp)
    sp.set_defaults(func=cmd_mc)

    sp = sub.add_parser("sweep", help="parameter sweep to CSV")
    common(sp, plan_required=True)
    sp.add_argument("--sweep", action="append", default=[], metavar="ELEM.PARAM=V1,V2,...",
                    help="values for one element parameter; repeat for a Cartesian product")
    sp.add_argument("--with", dest="with_", action="append", default=[],
                    help="bode, oracle and/or mc (repeatable or comma list; default bode)")
    sp.add_argument("--hold-tset", action="store_true", help="re-derive Gm per point for constant settling")
    sp.add_argument("--tset", type=float, default=100e-9, help="settling time constant in s")
    quad_flags(sp)
    mc_flags(sp)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    try:
        return args.func(args)
    except (errors.ScNoiseError, FileNotFoundError, ValueError) as exc:
        code = exit_code_for(exc)
        name = next(n for c, n, _ in EXIT_TABLE if c == code)
        print(f"scnoise: error [{name}]: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
