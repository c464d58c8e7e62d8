"""Command-line front end: parameter sweeps written as CSV plus a JSON sidecar.

Every run writes ``<name>.csv`` and ``<name>.json`` into the output directory
(``--out``, else ``$BAE_OUTPUT_ROOT``, else the working directory).  The
sidecar records the resolved parameters, the command line and a version
stamp, so identical invocations give byte-identical files.

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import subprocess
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .closedloop import StabilityError, feedback_variances
from .conditional import (ConvergenceError, PhysicalityError, conditional_state, duan,
                          entanglement_threshold, log_negativity)
from .linmodel import ConfigurationError, ModelConfig, Tag, build
from .params import DerivedParams, ParameterError, SystemParams, derive
from .sensing import added_noise, optimal_cooperativity, quantum_limits, resonance
from .spectra import AccuracyError, frequency_grid, measured_spectrum
from .trajectory import PreconditionError, SimulationError, ensemble_stats, record_duan_estimate, simulate

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

#: parameter names accepted by ``--sweep`` (dimensionless inputs)
SWEEPABLE = ("Omega", "C", "G_d_over_G", "p", "d", "nbar_a", "nbar_b", "nbar_th", "nbar_c",
             "eta", "kappa", "delta")

#: default device: kappa/2pi = 200 kHz, gamma/2pi = 100 Hz, G/2pi = 70.7 kHz, Omega/2pi = 20 kHz
DEFAULTS = {"Omega": 200.0, "C": 2 * 70.7e3**2 / (100.0 * 200e3), "kappa": 2000.0}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def version_stamp() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def parse_values(text: str) -> list[float]:
    """``1,2,3`` or ``log:lo:hi:n`` or ``lin:lo:hi:n``."""
    if text.startswith(("log:", "lin:")):
        kind, lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
        vals = np.geomspace(lo, hi, n) if kind == "log" else np.linspace(lo, hi, n)
        return [float(v) for v in vals]
    return [float(v) for v in text.split(",") if v.strip()]


def parse_sweep(text: str | None):
    if not text:
        return None, None
    if "=" not in text:
        raise ConfigError("--sweep expects NAME=VALUES")
    name, vals = text.split("=", 1)
    name = name.strip()
    if name not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {name!r}; choose from {', '.join(SWEEPABLE)}")
    try:
        values = parse_values(vals)
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {vals!r}: {exc}") from exc
    if not values:
        raise ConfigError("empty sweep")
    return name, values


def base_inputs(args) -> dict:
    """Dimensionless inputs from flags (rates in units of gamma)."""
    out = {
        "Omega": args.Omega, "C": args.C, "d": args.d, "eta": args.eta, "kappa": args.kappa,
        "nbar_a": args.nbar_a, "nbar_b": args.nbar_b, "nbar_c": args.nbar_c,
    }
    if args.nbar_th is not None:
        out["nbar_a"] = out["nbar_b"] = args.nbar_th
    if args.p is not None:
        out["p"] = args.p
    else:
        out["G_d_over_G"] = args.gd
    return out


#: flag destination for each dimensionless input
_FLAG_OF = {"G_d_over_G": "gd", "nbar_a": "nbar_a", "nbar_b": "nbar_b"}


def make_params(inputs: dict, args=None, forced=()) -> DerivedParams:
    """Resolve flags or a parameter file into :class:`DerivedParams`.

    With ``--params`` the file is the base and only flags given explicitly
    (plus the swept names in ``forced``) override it.
    """
    kw = dict(inputs)
    for k in ("delta",):
        kw.pop(k, None)
    if args is not None and getattr(args, "params", None):
        try:
            dp = derive(SystemParams.load(args.params))
        except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
            raise ConfigError(f"cannot read parameter file: {exc}") from exc
        given = set(args.explicit) | set(forced)
        if "nbar_th" in given:
            given |= {"nbar_a", "nbar_b"}
        overrides = {k: v for k, v in kw.items() if _FLAG_OF.get(k, k) in given}
        return dp.with_(**overrides) if overrides else dp
    return DerivedParams.dimensionless(**kw)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_outputs(out_dir: Path, name: str, header, rows, meta: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path = out_dir / f"{name}.csv"
    path.write_text(buf.getvalue())
    (out_dir / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")
    return path


def _meta(args, params, **extra) -> dict:
    meta = {"version": version_stamp(), "command": args.command,
            "argv": [a for a in getattr(args, "argv", [])]}
    if isinstance(params, DerivedParams):
        meta["params"] = params.to_dict()
    elif params is not None:
        meta["params"] = params
    meta.update(extra)
    return meta


def _config(dp: DerivedParams, compensated: bool) -> ModelConfig:
    if dp.symmetric:
        return ModelConfig(Tag.SYMMETRIC)
    return ModelConfig(Tag.COMPENSATED if compensated else Tag.ORIGINAL)


def _sweep_points(args):
    inputs = base_inputs(args)
    name, values = parse_sweep(getattr(args, "sweep", None))
    if name is None:
        return [(None, None, inputs)]
    pts = []
    for v in values:
        d = dict(inputs)
        if name == "nbar_th":
            d["nbar_a"] = d["nbar_b"] = v
        elif name == "p":
            d.pop("G_d_over_G", None)
            d["p"] = v
        else:
            d[name] = v
        pts.append((name, v, d))
    return pts


def _point_params(args, name, inputs):
    forced = () if name is None else ({"gd"} if name == "G_d_over_G" else {name})
    return make_params(inputs, args, forced)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_spectra(args, out: Path):
    dp = make_params(base_inputs(args), args)
    model = build(dp, _config(dp, args.compensated))
    w = frequency_grid(dp, span=args.span) if args.span else frequency_grid(dp)
    s = measured_spectrum(model, dp, w)
    write_outputs(out, args.name or "spectra",
                  ["omega_over_gamma", "S_th", "S_ba", "S_imp", "S_total"], s.rows(),
                  _meta(args, dp, tag=model.config.tag.value))


def cmd_sense(args, out: Path):
    rows = []
    header = ["delta_over_gamma", "n_aux", "n_ba", "n_imp", "n_total", "SQL", "fullQL"]
    pts = _sweep_points(args)
    name = pts[0][0]
    if name is not None and name != "delta":
        header = [name] + header
    deltas = parse_values(args.delta) if args.delta else [0.0]
    for sname, sval, inputs in pts:
        dp = _point_params(args, sname, inputs)
        ds = [sval] if sname == "delta" else deltas
        for delta in ds:
            led = added_noise(dp, delta * dp.gamma, compensated=args.compensated)
            ql = quantum_limits(delta * dp.gamma, dp.gamma_a)
            row = [delta, led.aux, led.ba, led.imp, led.total, ql.standard, ql.full]
            rows.append(([sval] if name not in (None, "delta") else []) + row)
    extra = {}
    if args.case == "optimal":
        dp = make_params(base_inputs(args), args)
        case = "detuned_compensated" if deltas[0] else "resonant_matched_extreme"
        closed, c_num, n_min = optimal_cooperativity(dp, case, delta=deltas[0] * dp.gamma,
                                                     compensated=args.compensated)
        extra = {"optimal": {"case": case, "C0_closed": closed, "C0_numeric": c_num,
                             "n_min": n_min}}
    write_outputs(out, args.name or "sense", header, rows,
                  _meta(args, make_params(base_inputs(args), args), case=args.case, **extra))


def cmd_conditional(args, out: Path):
    rows = []
    pts = _sweep_points(args)
    for sname, _, inputs in pts:
        dp = _point_params(args, sname, inputs)
        cfg = _config(dp, args.compensated)
        cov = conditional_state(dp, cfg)
        val, _ = duan(cov, dp.theta)
        thr = entanglement_threshold(dp.nbar_th, dp.eta)
        rows.append([dp.C, cov["V_Xp"], cov["V_Pm"], val, log_negativity(cov, dp.theta),
                     val < math.cos(2 * dp.theta), dp.C > thr])
    header = ["C", "V_Xp", "V_Pm", "duan", "E_N", "duan_entangled", "above_threshold"]
    write_outputs(out, args.name or "conditional", header, rows,
                  _meta(args, make_params(base_inputs(args), args), sweep=args.sweep))


def cmd_feedback(args, out: Path):
    dp = make_params(base_inputs(args), args)
    alphas = parse_values(args.alpha)
    if any(a < 0 for a in alphas):
        raise ConfigError("feedback gain must be non-negative")
    x_only = True if args.x_only else (False if args.both else None)
    res = feedback_variances(dp, alphas, config=_config(dp, args.compensated), x_only=x_only,
                             reduced=False if args.full else None)
    header = ["alpha", "V_fb_Xp", "V_fb_Pm", "V_cond_Xp", "V_cond_Pm"]
    write_outputs(out, args.name or "feedback", header, [[r[h] for h in header] for r in res],
                  _meta(args, dp))


def cmd_trajectory(args, out: Path):
    dp = make_params(base_inputs(args), args)
    rec = simulate(dp, n_traj=args.n_traj, seed=args.seed, alpha=args.alpha_gain,
                   duration=args.duration, config=_config(dp, args.compensated))
    summary = ensemble_stats(rec)
    if args.alpha_gain == 0 and dp.symmetric:
        summary["record_duan"] = record_duan_estimate(rec)
    meta = _meta(args, dp, summary=summary)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or "trajectory"
    (out / f"{name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n")
    if args.csv:
        for i in range(rec.truth.shape[0]):
            rows = ([t] + list(x) + list(e) for t, x, e in zip(rec.t, rec.truth[i], rec.estimate[i]))
            n = rec.n
            write_outputs(out, f"{name}_{i:04d}",
                          ["t"] + list(rec.order[n:2 * n]) + list(rec.order[:n]), rows,
                          {"version": meta["version"], "seed": rec.seed, "index": i,
                           "params_hash": rec.params_hash})


def cmd_matrices(args, out: Path):
    dp = make_params(base_inputs(args), args)
    model = build(dp, ModelConfig(_config(dp, args.compensated).tag, damping=args.damping))
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(args, dp, model=model.to_dict())
    text = json.dumps(meta, indent=2, sort_keys=True, default=float) + "\n"
    (out / f"{args.name or 'matrices'}.json").write_text(text)


# ---- figure-level tables ---------------------------------------------------

def _fig_spectra(args, out):
    cases = [(0.0, 0.0), (0.05, 0.025), (0.05, -0.025), (0.2, 0.1), (0.2, -0.1),
             (1.0, 0.414), (1.0, -0.414)]
    rows = []
    ref = None
    for d, r in cases:
        dp = DerivedParams.dimensionless(Omega=args.Omega, C=args.C, G_d_over_G=r, d=d,
                                         kappa=args.kappa)
        model = build(dp)
        w = np.arange(dp.Omega - 10, dp.Omega + 10 + 1e-9, 0.05) * dp.gamma
        s = measured_spectrum(model, dp, w)
        if ref is None:
            sym = DerivedParams.dimensionless(Omega=args.Omega, C=args.C, kappa=args.kappa)
            ref = float(measured_spectrum(build(sym), sym, [sym.Omega]).total[0])
        for wi, b in zip(w, s.ba):
            rows.append([d, r, wi / dp.gamma, b * dp.gamma, b / ref])
    return "fig-spectra", ["d", "G_d_over_G", "omega_over_gamma", "S_ba", "S_ba_normalized"], rows


def _fig_nadd(args, out):
    rows = []
    for r in (0.0, -0.162, -0.414):
        for d in np.linspace(0.0, 0.99, 34):
            dp = DerivedParams.dimensionless(Omega=args.Omega, C=args.C, G_d_over_G=r, d=float(d),
                                             kappa=args.kappa)
            led = added_noise(dp)
            rows.append(["resonant", r, (1 - d) / (1 + d), led.aux, led.ba, led.imp, led.total])
    delta = 100.0
    for d in np.linspace(0.03, 0.99, 33):
        dp = DerivedParams.dimensionless(Omega=args.Omega, C=args.C, d=float(d), kappa=args.kappa)
        _, c0, _ = optimal_cooperativity(dp, "detuned_compensated", delta=delta)
        led = added_noise(dp.with_(C=c0), delta)
        rows.append(["detuned_optimal", 0.0, (1 - d) / (1 + d), led.aux, led.ba, led.imp, led.total])
    header = ["case", "G_d_over_G", "gamma_b_over_gamma_a", "n_aux", "n_ba", "n_imp", "n_total"]
    return "fig-nadd", header, rows


def _fig_duan(args, out):
    rows = []
    for nth in (0.0, 1.0, 25.0):
        for C in np.geomspace(0.1, 1e4, 121):
            dp = DerivedParams.dimensionless(Omega=args.Omega, C=float(C), nbar_a=nth, nbar_b=nth,
                                             kappa=args.kappa)
            cov = conditional_state(dp)
            rows.append([nth, float(C), duan(cov)[0], log_negativity(cov)])
    return "fig-duan", ["nbar_th", "C", "duan", "E_N"], rows


def _fig_asym(args, out):
    rows = []
    for nth in (0.0, 5.0):
        for r in np.linspace(0.0, 0.9, 46):
            for tag in ("original", "compensated"):
                dp = DerivedParams.dimensionless(Omega=args.Omega, C=100.0, G_d_over_G=float(r),
                                                 nbar_a=nth, nbar_b=nth, kappa=args.kappa)
                cfg = ModelConfig(Tag.SYMMETRIC) if r == 0 else ModelConfig(Tag(tag))
                cov = conditional_state(dp, cfg)
                rows.append([nth, tag, float(r), cov["V_Pm"], duan(cov, dp.theta)[0],
                             math.cos(2 * dp.theta)])
    return "fig-asym", ["nbar_th", "tag", "G_d_over_G", "V_Pm", "duan", "bound"], rows


def _fig_feedback(args, out):
    dp = DerivedParams.dimensionless(Omega=args.Omega, C=500.0, G_d_over_G=0.05, nbar_a=25.0,
                                     nbar_b=25.0, kappa=args.kappa)
    alphas = [0, 0.3, 1, 3, 10, 30, 100, 300, 1000]
    res = feedback_variances(dp, alphas)
    header = ["alpha", "V_fb_Xp", "V_fb_Pm", "V_cond_Xp", "V_cond_Pm"]
    return "fig-feedback", header, [[r[h] for h in header] for r in res]


FIGURES = {"fig-spectra": _fig_spectra, "fig-nadd": _fig_nadd, "fig-duan": _fig_duan,
           "fig-asym": _fig_asym, "fig-feedback": _fig_feedback}


def cmd_reproduce(args, out: Path):
    targets = list(FIGURES) if args.target == "all" else [args.target]
    for t in targets:
        name, header, rows = FIGURES[t](args, out)
        write_outputs(out, name, header, rows,
                      _meta(args, {"Omega": args.Omega, "C": args.C, "kappa": args.kappa}, target=t))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Track(argparse.Action):
    """Store a value and remember that the flag was given explicitly."""

    def __call__(self, parser, ns, values, option_string=None):
        setattr(ns, self.dest, values)
        ns.explicit = set(getattr(ns, "explicit", set())) | {self.dest}


def _add_params(p):
    g = p.add_argument_group("parameters (rates in units of gamma)")
    g.add_argument("--params", help="JSON parameter file (SystemParams fields, Hz)")
    g.add_argument("--Omega", "--omega", type=float, default=DEFAULTS["Omega"], action=_Track)
    g.add_argument("--C", type=float, default=DEFAULTS["C"], action=_Track)
    g.add_argument("--p", type=float, default=None, action=_Track)
    g.add_argument("--gd", type=float, default=0.0, action=_Track, help="G_d / G")
    g.add_argument("--d", type=float, default=0.0, action=_Track)
    g.add_argument("--nbar-a", dest="nbar_a", type=float, default=0.0, action=_Track)
    g.add_argument("--nbar-b", dest="nbar_b", type=float, default=0.0, action=_Track)
    g.add_argument("--nbar-th", dest="nbar_th", type=float, default=None, action=_Track)
    g.add_argument("--nbar-c", dest="nbar_c", type=float, default=0.0, action=_Track)
    g.add_argument("--eta", type=float, default=1.0, action=_Track)
    g.add_argument("--kappa", type=float, default=DEFAULTS["kappa"], action=_Track)
    g.add_argument("--compensated", action="store_true")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--name", default=None, help="output file stem")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bae-optomech", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectra", help="measured-quadrature noise spectrum")
    _add_params(p)
    p.add_argument("--span", type=float, default=None, help="grid half-width (gamma units)")

    p = sub.add_parser("sense", help="added-noise ledger")
    _add_params(p)
    p.add_argument("--case", choices=("ledger", "optimal"), default="ledger")
    p.add_argument("--delta", default=None, help="detuning(s) from resonance, gamma units")
    p.add_argument("--sweep", default=None)

    p = sub.add_parser("conditional", help="conditional variances and entanglement")
    _add_params(p)
    p.add_argument("--sweep", default=None)

    p = sub.add_parser("feedback", help="feedback-closed-loop variances")
    _add_params(p)
    p.add_argument("--alpha", default="0,1,3,10,30,100")
    p.add_argument("--x-only", action="store_true", help="feed back the X+ estimate only")
    p.add_argument("--both", action="store_true", help="feed back X+ and P- estimates")
    p.add_argument("--full", action="store_true", help="always use the 8-dim model")

    p = sub.add_parser("trajectory", help="Monte Carlo ensemble")
    _add_params(p)
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--alpha-gain", type=float, default=0.0)
    p.add_argument("--csv", action="store_true", help="write kept trajectories as CSV")

    p = sub.add_parser("matrices", help="dump M, N and the back-action vector as JSON")
    _add_params(p)
    p.add_argument("--damping", choices=("exchange", "exact"), default="exchange")

    p = sub.add_parser("reproduce", help="figure-level data tables")
    p.add_argument("target", choices=list(FIGURES) + ["all"])
    p.add_argument("--Omega", type=float, default=DEFAULTS["Omega"])
    p.add_argument("--C", type=float, default=DEFAULTS["C"])
    p.add_argument("--kappa", type=float, default=DEFAULTS["kappa"])
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    return ap


COMMANDS = {"spectra": cmd_spectra, "sense": cmd_sense, "conditional": cmd_conditional,
            "feedback": cmd_feedback, "trajectory": cmd_trajectory, "matrices": cmd_matrices,
            "reproduce": cmd_reproduce}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    args.argv = argv
    if not hasattr(args, "explicit"):
        args.explicit = set()
    out = Path(args.out or os.environ.get("BAE_OUTPUT_ROOT", "."))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args, out)
    except (ConfigError, ParameterError, ConfigurationError, PreconditionError, ValueError) as exc:
        if isinstance(exc, (AccuracyError, PhysicalityError, StabilityError)):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SimulationError, np.linalg.LinAlgError, ArithmeticError) as exc:
        residual = getattr(exc, "residual", None)
        extra = f" (residual {residual:.3e})" if residual is not None else ""
        print(f"numerical failure: {exc}{extra}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
