"""Command-line front end.

Every subcommand writes ``data.csv``, ``summary.json`` and ``manifest.json``
(plus any extra files) to ``<outdir>/<subcommand>/<timestamp>/``.
Exit status: 0 success, 1 user error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import budget as bd
from . import calibration as cb
from . import fockspace as fs
from . import protocols as pr
from . import tomography as tomo
from .device import load_config
from .errors import BosonicLinkError, ConfigError, NumericalError

log = logging.getLogger("bosonic_link")


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    outputs: list = field(default_factory=list)
    wall_time: float = 0.0
    argv: list = field(default_factory=list)
    version: str = __version__


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


class Run:
    """Output directory and manifest bookkeeping for one CLI invocation."""

    def __init__(self, args, config_hash):
        stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        self.dir = Path(args.outdir) / args.command / stamp
        self.dir.mkdir(parents=True, exist_ok=False)
        self.manifest = RunManifest(args.command, config_hash, args.seed, argv=list(args.argv))
        self.t0 = time.perf_counter()

    def path(self, name):
        self.manifest.outputs.append(name)
        return self.dir / name

    def csv(self, name, header, rows):
        write_csv(self.path(name), header, rows)

    def json(self, name, payload):
        self.path(name).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")

    def text(self, name, body):
        self.path(name).write_text(body)

    def finish(self):
        self.manifest.wall_time = time.perf_counter() - self.t0
        missing = [o for o in self.manifest.outputs if not (self.dir / o).exists()]
        if missing:
            raise RuntimeError(f"declared outputs missing: {missing}")
        names = self.manifest.outputs + ["manifest.json"]
        payload = asdict(self.manifest)
        payload["outputs"] = names
        (self.dir / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return self.dir


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


# ---- subcommands ----------------------------------------------------------------------


def cmd_transfer(args, cfg, run):
    state = fs.make_state(args.state, args.dim, n=args.n)
    rep = pr.full_transfer(cfg, input_state=state, n_points=args.points)
    traj = rep.trajectory
    n_in = state.mean_photon_number()
    eff = traj.populations[:, 0] / n_in if n_in > 0 else np.full(traj.times.size, np.nan)
    run.csv("data.csv", ["time_ns", "n1", "n2", "nb", "efficiency"],
            [(t, *p, e) for t, p, e in zip(traj.times, traj.populations, eff)])
    run.json("summary.json", {
        "efficiency": rep.efficiency, "state_fidelity": rep.state_fidelity, "raw_fidelity": rep.raw_fidelity,
        "swap_time_ns": rep.swap_time, "hold_ns": rep.hold, "duration_ns": rep.duration,
        "compensation_phase_rad": rep.compensation_phase,
        "truncation_top_population": rep.truncation.top_population,
    })


def cmd_bell(args, cfg, run):
    rep = pr.bell_transfer(cfg, n_points=args.points)
    traj = rep.trajectory
    run.csv("data.csv", ["time_ns", "n1", "n2", "nb"], [(t, *p) for t, p in zip(traj.times, traj.populations)])
    run.csv("paulis.csv", ["operator", "expectation"], sorted(rep.paulis.items()))
    run.json("summary.json", {
        "t_star_ns": rep.t_star, "detuning_mhz": rep.detuning, "bell_fidelity": rep.bell_fidelity,
        "bell_phase_rad": rep.bell_phase, "pauli_fidelity": rep.pauli_fidelity, "paulis": rep.paulis,
    })


def cmd_repeat(args, cfg, run):
    res = pr.repeated_transfer(cfg, encoding=args.encoding, rounds=args.rounds)
    run.csv("data.csv", ["rounds", "process_fidelity", "fit"],
            [(k, f, res.amplitude * res.decay**k + res.offset) for k, f in zip(res.rounds, res.process_fidelities)])
    run.json("summary.json", {
        "per_transfer_fidelity": res.per_transfer_fidelity, "per_transfer_infidelity": res.per_transfer_infidelity,
        "amplitude": res.amplitude, "offset": res.offset, "residual_rms": res.residual_rms,
        "rounds": res.rounds, "process_fidelities": res.process_fidelities,
    })


def cmd_binomial(args, cfg, run):
    dims = (args.dim,) * 3
    grid = tomo.wigner_grid(args.extent, args.grid)
    rows, summary = [], {}
    for kind in bd.BINOMIAL_STATES:
        state = fs.make_state(kind, args.dim)
        rep = pr.full_transfer(cfg, input_state=state, dims=dims, n_points=3)
        received, _ = pr.phase_compensate(rep.received_state, fs.embed_state(state, args.dim))
        tomo.wigner(received, grid).to_csv(run.path(f"wigner_{kind}.csv"))
        rows.append((kind, rep.state_fidelity, rep.compensation_phase))
        summary[kind] = {"state_fidelity": rep.state_fidelity, "compensation_phase_rad": rep.compensation_phase}
    mean = float(np.mean([r[1] for r in rows]))
    run.csv("data.csv", ["state", "fidelity", "compensation_phase_rad"], rows)
    summary["mean_fidelity"] = mean
    summary["mean_infidelity"] = 1 - mean
    run.json("summary.json", summary)


def cmd_budget(args, cfg, run):
    rows = bd.run_budget(cfg, rounds=args.rounds, binomial=not args.fock_only)
    bd.write_budget_csv(rows, run.path("data.csv"))
    table = bd.format_budget_table(rows)
    run.text("table.txt", table)
    run.json("summary.json", {r.scenario: {"fock_process_infidelity": r.fock_process_infidelity,
                                           "binomial_state_infidelity": r.binomial_state_infidelity} for r in rows})
    print(table, end="")


def cmd_kerr_sweep(args, cfg, run):
    res = bd.kerr_sweep(cfg, args.kerr_list, decoherence=args.with_decoherence)
    run.csv("data.csv", ["kerr_mhz", "raw_fidelity", "corrected_fidelity"],
            zip(res.parameter, res.raw, res.corrected))
    run.json("summary.json", {"kerr_mhz": res.parameter, "raw_fidelity": res.raw, "corrected_fidelity": res.corrected,
                              "per_state_raw": dict(zip(res.labels, res.raw_per_state.T)),
                              "per_state_corrected": dict(zip(res.labels, res.corrected_per_state.T))})


def cmd_n_sweep(args, cfg, run):
    res = bd.photon_number_sweep(cfg, args.n_list, decoherence=args.with_decoherence)
    run.csv("data.csv", ["n", "raw_fidelity", "corrected_fidelity"],
            [(int(n), a, b) for n, a, b in zip(res.parameter, res.raw, res.corrected)])
    run.json("summary.json", {"n": res.parameter, "raw_fidelity": res.raw, "corrected_fidelity": res.corrected,
                              "kerr_mhz": [cfg.module1.self_kerr, cfg.module2.self_kerr]})


def cmd_tune(args, cfg, run):
    d1 = args.common_offset + args.differential_offset
    d2 = args.common_offset - args.differential_offset
    initial = pr.transfer_pumps(cfg, g=args.g, delta=(d1, d2), ramp=0.0)
    res = pr.tune_pumps(cfg, initial, scan_half_width=args.scan_width, points=args.points,
                        include_decoherence=args.with_decoherence)
    rows = [("common", x, s) for x, s in zip(res.common_scan.offsets, res.common_scan.scores)]
    rows += [("differential", x, s) for x, s in zip(res.differential_scan.offsets, res.differential_scan.scores)]
    run.csv("data.csv", ["stage", "offset_mhz", "score"], rows)
    run.json("summary.json", {
        "common_correction_mhz": res.common_correction, "differential_correction_mhz": res.differential_correction,
        "residual_common_mhz": res.residual_common, "residual_differential_mhz": res.residual_differential,
        "tuned_delta_mhz": [p.delta for p in res.pumps], "final_population": res.final_population,
        "common_unimodal": res.common_scan.unimodal, "differential_unimodal": res.differential_scan.unimodal,
    })


def cmd_chevron(args, cfg, run):
    rng = np.random.default_rng(args.seed)
    g = cfg.pumps.g_bs if args.g is None else args.g
    det = np.linspace(-args.scan_width, args.scan_width, args.detuning_points)
    t = np.linspace(0.0, args.duration, args.time_points)
    pops = cb.chevron_model(g, det - args.offset, t)
    if args.noise > 0:
        pops = pops + args.noise * rng.normal(size=pops.shape)
    fit = cb.fit_chevron(pops, det, t, g_init=g)
    run.csv("data.csv", ["detuning_mhz", "time_ns", "population"],
            [(d, tt, pops[i, j]) for i, d in enumerate(det) for j, tt in enumerate(t)])
    run.json("summary.json", {"g_true_mhz": g, "offset_true_mhz": args.offset, "g_fit_mhz": fit.g,
                              "offset_fit_mhz": fit.offset, "residual_rms": fit.residual_rms})


def _snail(cfg, module):
    p = cfg.snail1 if module == 1 else cfg.snail2
    if p is None:
        raise UserError(f"config has no snail{module} section")
    return p


def cmd_fit_snail(args, cfg, run):
    truth = _snail(cfg, args.module)
    if args.data:
        data = cb.SpectrumData.from_csv(args.data)
    else:
        rng = np.random.default_rng(args.seed)
        flux = np.linspace(0.0, 0.5, args.points)
        freq = cb.snail_spectrum(truth, flux) + args.noise / 1000.0 * rng.normal(size=flux.size)
        data = cb.SpectrumData(flux, freq)
    init = truth.__class__(truth.beta * 1.1, truth.e_j * 0.9, truth.e_l * 1.1, truth.e_c)
    fitted, report = cb.fit_snail_spectrum(data, init)
    model = cb.snail_spectrum(fitted, data.flux)
    run.csv("data.csv", ["flux", "freq_ghz", "model_ghz"], zip(data.flux, data.freq, model))
    run.json("summary.json", {"fitted": asdict(fitted), "reference": asdict(truth), "stderr": report.stderr,
                              "residual_rms_ghz": report.residual_rms, "fixed": ["e_c"]})


def cmd_fit_anticrossing(args, cfg, run):
    if args.data:
        data = cb.SpectrumData.from_csv(args.data)
        truth = None
    else:
        rng = np.random.default_rng(args.seed)
        g_true = cfg.couplings.g_snail_bus[args.module - 1]
        om0 = cfg.bus.frequency
        snail = _snail(cfg, args.module)
        # centre a 0.1 flux-quantum window on the crossing with the bus
        fine = np.linspace(0.0, 0.5, 501)
        cross = fine[int(np.argmin(np.abs(cb.snail_spectrum(snail, fine) - om0)))]
        flux = np.linspace(max(cross - 0.05, 0.0), min(cross + 0.05, 0.5), args.points)
        bare = cb.snail_spectrum(snail, flux)
        up, lo = cb.avoided_crossing_branches(bare, om0, g_true)
        noise = args.noise / 1000.0
        data = cb.SpectrumData(flux, up + noise * rng.normal(size=flux.size), lo + noise * rng.normal(size=flux.size))
        truth = {"g_mhz": g_true, "omega0_ghz": om0}
    fit = cb.fit_anticrossing(data, (args.g_init, args.omega0_init))
    run.csv("data.csv", ["flux", "upper_ghz", "lower_ghz", "bare_ghz"], zip(data.flux, data.freq, data.freq2, fit.bare))
    run.json("summary.json", {"g_mhz": fit.g, "omega0_ghz": fit.omega0, "residual_rms": fit.residual_rms,
                              "reference": truth})


def cmd_wigner(args, cfg, run):
    alpha = complex(args.alpha) if args.alpha is not None else None
    state = fs.make_state(args.state, args.dim, n=args.n, alpha=alpha)
    wmap = tomo.wigner(state, tomo.wigner_grid(args.extent, args.grid))
    wmap.to_csv(run.path("data.csv"))
    run.json("summary.json", {"state": args.state, "dim": args.dim, "integral": wmap.integral(),
                              "w_origin": float(tomo.wigner(state, np.array([0j])).values[0])})


# ---- parser -------------------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="paper_device",
                        help="device config JSON path, or a bundled name (paper_device, lossless)")
    common.add_argument("--outdir", default="runs", help="output root directory (path)")
    common.add_argument("--seed", type=int, default=0, help="seed for all random draws (integer)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="bosonic-link", description="Simulate and analyze bosonic-module state transfer.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=fn)
        return p

    p = add("transfer", cmd_transfer, "single-pulse transfer from module 2 to module 1")
    p.add_argument("--state", default="fock", help="input state kind (fock, coherent, binomial_0L, ...)")
    p.add_argument("--n", type=int, default=1, help="Fock level / N for zero_plus_n (photons)")
    p.add_argument("--dim", type=int, default=2, help="cavity truncation (levels)")
    p.add_argument("--points", type=int, default=201, help="time samples over the pulse (count)")

    p = add("bell", cmd_bell, "50:50 conversion and joint Pauli correlations")
    p.add_argument("--points", type=int, default=201, help="time samples up to t* (count)")

    p = add("repeat", cmd_repeat, "repeated transfer with process tomography and decay fit")
    p.add_argument("--rounds", type=_ints, default=[1, 3, 5, 7], help="comma-separated transfer counts (integers)")
    p.add_argument("--encoding", choices=["fock01", "binomial"], default="fock01",
                   help="qubit encoding (fock01 or binomial)")

    p = add("binomial", cmd_binomial, "binomial logical-state transfer with received Wigner maps")
    p.add_argument("--dim", type=int, default=7, help="truncation of every mode (levels)")
    p.add_argument("--grid", type=int, default=41, help="Wigner grid points per axis (count)")
    p.add_argument("--extent", type=float, default=2.5, help="Wigner grid half-width in |alpha| (dimensionless)")

    p = add("budget", cmd_budget, "error budget, one error family at a time")
    p.add_argument("--rounds", type=_ints, default=[1, 3, 5, 7], help="transfer counts for the Fock fit (integers)")
    p.add_argument("--fock-only", action="store_true", help="skip the binomial column")

    p = add("kerr-sweep", cmd_kerr_sweep, "binomial fidelity versus cavity self-Kerr")
    p.add_argument("--kerr-list", type=_floats, default=[0.0, -0.001, -0.002, -0.003, -0.005, -0.01, -0.02],
                   help="comma-separated self-Kerr values (MHz)")
    p.add_argument("--with-decoherence", action="store_true", help="include cavity and bus decoherence")

    p = add("n-sweep", cmd_n_sweep, "fidelity of (|0>+|N>)/sqrt(2) using the configured Kerr")
    p.add_argument("--n-list", type=_ints, default=[1, 2, 3, 4, 5, 6, 7, 8], help="photon numbers N (integers)")
    p.add_argument("--with-decoherence", action="store_true", help="include cavity and bus decoherence")

    p = add("tune", cmd_tune, "two-stage pump detuning calibration")
    p.add_argument("--g", type=float, default=None, help="probe coupling (MHz); defaults to the config pump rate")
    p.add_argument("--common-offset", type=float, default=0.2, help="injected common detuning (MHz)")
    p.add_argument("--differential-offset", type=float, default=0.0, help="injected differential detuning (MHz)")
    p.add_argument("--scan-width", type=float, default=0.5, help="scan half-width (MHz)")
    p.add_argument("--points", type=int, default=51, help="scan points per stage (count)")
    p.add_argument("--with-decoherence", action="store_true", help="probe with the lossy master equation")

    p = add("chevron", cmd_chevron, "synthetic conversion chevron and its fit")
    p.add_argument("--g", type=float, default=None, help="true coupling (MHz); defaults to the config pump rate")
    p.add_argument("--offset", type=float, default=0.1, help="true resonance offset (MHz)")
    p.add_argument("--noise", type=float, default=0.01, help="Gaussian population noise (absolute)")
    p.add_argument("--scan-width", type=float, default=2.0, help="detuning half-width (MHz)")
    p.add_argument("--detuning-points", type=int, default=41, help="detuning samples (count)")
    p.add_argument("--duration", type=float, default=2000.0, help="longest interaction time (ns)")
    p.add_argument("--time-points", type=int, default=101, help="time samples (count)")

    p = add("fit-snail", cmd_fit_snail, "fit the SNAIL flux spectrum")
    p.add_argument("--data", default=None, help="CSV with flux (phi_e/phi_0), freq (GHz); synthetic if omitted")
    p.add_argument("--module", type=int, choices=[1, 2], default=1,
                   help="module whose SNAIL seeds the synthetic data (1 or 2)")
    p.add_argument("--noise", type=float, default=1.0, help="synthetic frequency noise (MHz)")
    p.add_argument("--points", type=int, default=41, help="synthetic flux points (count)")

    p = add("fit-anticrossing", cmd_fit_anticrossing, "fit a SNAIL-mode avoided crossing")
    p.add_argument("--data", default=None, help="CSV with flux, freq, freq2 (GHz); synthetic if omitted")
    p.add_argument("--module", type=int, choices=[1, 2], default=1, help="module for synthetic data (1 or 2)")
    p.add_argument("--noise", type=float, default=0.0, help="synthetic frequency noise (MHz)")
    p.add_argument("--points", type=int, default=30, help="synthetic flux points (count)")
    p.add_argument("--g-init", type=float, default=20.0, help="initial coupling guess (MHz)")
    p.add_argument("--omega0-init", type=float, default=None, help="initial mode frequency guess (GHz)")

    p = add("wigner", cmd_wigner, "Wigner map of a prepared single-mode state")
    p.add_argument("--state", default="binomial_0L", help="state kind (fock, coherent, binomial_0L, zero_plus_n, ...)")
    p.add_argument("--n", type=int, default=None, help="Fock level or N (photons)")
    p.add_argument("--alpha", default=None, help="coherent amplitude, Python complex literal (dimensionless)")
    p.add_argument("--dim", type=int, default=12, help="truncation (levels)")
    p.add_argument("--grid", type=int, default=41, help="grid points per axis (count)")
    p.add_argument("--extent", type=float, default=2.5, help="grid half-width in |alpha| (dimensionless)")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        run = Run(args, cfg.digest())
        args.func(args, cfg, run)
        out = run.finish()
    except (ConfigError, UserError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, BosonicLinkError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
