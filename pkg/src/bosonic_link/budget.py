"""Error-budget decomposition and self-Kerr degradation studies."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from . import fockspace as fs
from . import tomography as tomo
from .device import DeviceConfig
from .errors import NumericalError
from .hamiltonian import ErrorModel
from .protocols import full_transfer, repeated_transfer

SCENARIOS = ("cavity_decoherence", "line_loss", "bs_dephasing", "ac_stark", "total")
BINOMIAL_STATES = ("binomial_0L", "binomial_1L", "binomial_plusL")
SCENARIO_LABELS = {
    "cavity_decoherence": "Cavity decoherence",
    "line_loss": "Transmission line loss",
    "bs_dephasing": "BS dephasing",
    "ac_stark": "ac-Stark shift",
    "total": "Total",
    "none": "No errors",
}


def scenario_errors(name):
    if name == "total":
        return ErrorModel()
    if name == "none":
        return ErrorModel.none()
    return ErrorModel.only(name)


@dataclass(frozen=True)
class BudgetRow:
    scenario: str
    fock_process_infidelity: float
    binomial_state_infidelity: float | None

    def __post_init__(self):
        for v in (self.fock_process_infidelity, self.binomial_state_infidelity):
            if v is not None and not -1e-9 <= v <= 1 + 1e-9:
                raise ValueError(f"infidelity {v} outside [0, 1]")


def fock_infidelity(config, errors, pumps=None, rounds=(1, 3, 5, 7)):
    """Per-transfer process infidelity 1 - p from the repeated-transfer fit."""
    return repeated_transfer(config, pumps, "fock01", rounds, errors=errors).per_transfer_infidelity


def binomial_infidelity(config, errors, pumps=None, dims=(7, 7, 7), states=BINOMIAL_STATES):
    """Mean single-transfer state infidelity over the logical states."""
    vals = []
    for kind in states:
        rep = full_transfer(config, pumps, fs.make_state(kind, dims[0]), dims=dims, errors=errors, n_points=3)
        vals.append(1.0 - rep.state_fidelity)
    return float(np.mean(vals))


def run_scenario(config, name, pumps=None, rounds=(1, 3, 5, 7), binomial=True, binomial_dims=(7, 7, 7)):
    errors = scenario_errors(name)
    fock = fock_infidelity(config, errors, pumps, rounds)
    bino = binomial_infidelity(config, errors, pumps, binomial_dims) if binomial else None
    return BudgetRow(name, max(fock, 0.0), None if bino is None else max(bino, 0.0))


def run_budget(config: DeviceConfig, pumps=None, scenarios=SCENARIOS, rounds=(1, 3, 5, 7), binomial=True,
               binomial_dims=(7, 7, 7)):
    """One row per scenario, each retaining only its error family (or all, for ``total``)."""
    return [run_scenario(config, s, pumps, rounds, binomial, binomial_dims) for s in scenarios]


def write_budget_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "fock_process_infidelity", "binomial_state_infidelity"])
        for r in rows:
            b = "" if r.binomial_state_infidelity is None else f"{r.binomial_state_infidelity:.12g}"
            w.writerow([r.scenario, f"{r.fock_process_infidelity:.12g}", b])


def format_budget_table(rows):
    """Aligned text table with percentages, laid out like a published budget."""
    head = ("Error type", "Fock {|0>,|1>}", "binomial state")
    sub = ("", "(process infidelity)", "(state infidelity)")
    body = []
    for r in rows:
        b = "-" if r.binomial_state_infidelity is None else f"{100 * r.binomial_state_infidelity:.1f}%"
        body.append((SCENARIO_LABELS.get(r.scenario, r.scenario), f"{100 * r.fock_process_infidelity:.1f}%", b))
    widths = [max(len(row[i]) for row in [head, sub] + body) for i in range(3)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    rule = "-" * (sum(widths) + 4)
    lines = [fmt.format(*head), fmt.format(*sub), rule] + [fmt.format(*row) for row in body]
    return "\n".join(lines) + "\n"


# ---- ac-Stark calibration ----------------------------------------------------------------


def fit_stark_coefficient(config: DeviceConfig, target_infidelity=0.006, bracket=(0.0, 0.5), rounds=(1, 3, 5, 7),
                          xtol=1e-5, max_expand=4):
    """Stark coefficient (MHz) at which the ac-Stark-only Fock row equals the target."""
    if target_infidelity == 0:
        return 0.0
    if not 0 < target_infidelity < 0.05:
        raise ValueError("target infidelity must lie in (0, 0.05)")
    errors = ErrorModel.only("ac_stark")

    def excess(c):
        return fock_infidelity(config.with_stark(c), errors, rounds=rounds) - target_infidelity

    lo, hi = bracket
    f_lo = excess(lo)
    f_hi = excess(hi)
    expansions = 0
    while f_hi < 0 and expansions < max_expand:
        lo, f_lo = hi, f_hi
        hi *= 2
        f_hi = excess(hi)
        expansions += 1
    if not (f_lo < 0 < f_hi):
        raise NumericalError(f"no bracket for the Stark fit in [{bracket[0]}, {hi}] MHz")
    probes = np.linspace(lo, hi, 5)[1:-1]
    ladder = [f_lo] + [excess(c) for c in probes] + [f_hi]
    if np.any(np.diff(ladder) <= 0):
        raise NumericalError("ac-Stark infidelity is not monotone on the bracket")
    return float(brentq(excess, lo, hi, xtol=xtol))


# ---- self-Kerr -------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseCorrection:
    state: fs.DensityState
    coefficients: np.ndarray
    fidelity: float
    converged: bool


def _phase_fidelity(m, ref, phases):
    u = np.exp(1j * phases)
    rotated = u[:, None] * m * u.conj()[None, :]
    return rotated, tomo.state_fidelity(rotated, ref)


def corrective_phase_gate(received: fs.DensityState, reference: fs.DensityState, max_order=2, seed=None,
                          grid=5):
    """Apply exp(i sum_k theta_k n^k), k = 1..max_order, maximizing the fidelity.

    Nelder-Mead from a ``grid``^2 lattice of starts over [-pi, pi) in the first
    two coefficients (higher orders start at 0), plus ``seed`` if given.
    """
    if len(received.dims) != 1 or received.dims != reference.dims:
        raise ValueError("phase correction needs single-mode states of equal dim")
    m, r = received.data, reference.data
    n = np.arange(m.shape[0], dtype=float)
    powers = np.stack([n**k for k in range(1, max_order + 1)])
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    pure = w[-1] > 1 - 1e-10
    psi = v[:, -1]

    def fidelity(theta):
        ph = np.asarray(theta) @ powers
        if pure:
            x = np.exp(-1j * ph) * psi
            return float(np.real(np.conj(x) @ m @ x))
        return _phase_fidelity(m, r, ph)[1]

    axis = np.linspace(-np.pi, np.pi, grid, endpoint=False)
    starts = []
    for a in axis:
        for b in axis if max_order >= 2 else [None]:
            x = np.zeros(max_order)
            x[0] = a
            if b is not None:
                x[1] = b
            starts.append(x)
    if seed is not None:
        x = np.zeros(max_order)
        x[: len(np.atleast_1d(seed))] = np.atleast_1d(seed)[:max_order]
        starts.insert(0, x)
    starts.insert(0, np.zeros(max_order))
    best, best_f, ok = starts[0], fidelity(starts[0]), True
    for x0 in starts:
        res = minimize(lambda x: -fidelity(x), x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 4000})
        if -res.fun > best_f:
            best, best_f, ok = res.x, -res.fun, bool(res.success)
    rotated, _ = _phase_fidelity(m, r, best @ powers)
    return PhaseCorrection(fs.DensityState(received.dims, rotated), np.asarray(best), float(min(best_f, 1.0)), ok)


@dataclass(frozen=True, eq=False)
class KerrSweepResult:
    parameter: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    raw_per_state: np.ndarray
    corrected_per_state: np.ndarray
    labels: tuple[str, ...]

    @property
    def raw_infidelity(self):
        return 1.0 - self.raw


def _transfer_fidelities(config, state, dims, decoherence, pumps=None):
    """(raw, corrected) received fidelity for one input state.

    "raw" removes only the deterministic phase of the error-free pulse (found
    from a Kerr-free lossless run), as a receiver calibrated without Kerr
    would; "corrected" further applies the optimized corrective phase gate.
    """
    errors = ErrorModel(True, True, True, False) if decoherence else ErrorModel.none()
    ideal = full_transfer(config.with_self_kerr(0.0), pumps, state, dims=dims, errors=ErrorModel.none(), n_points=3)
    rep = full_transfer(config, pumps, state, dims=dims, errors=errors, include_kerr=True, n_points=3)
    ref = fs.embed_state(state, dims[0])
    theta0 = ideal.compensation_phase
    n = np.arange(dims[0])
    _, raw = _phase_fidelity(rep.received_state.data, ref.data, theta0 * n)
    corr = corrective_phase_gate(rep.received_state, ref, seed=[theta0])
    return min(raw, 1.0), max(corr.fidelity, raw)


def kerr_sweep(config: DeviceConfig, kerr_values, states=BINOMIAL_STATES, dims=(7, 7, 7), decoherence=False):
    """Mean received fidelity of ``states`` versus a common cavity self-Kerr (MHz).

    "raw" removes only the error-free pulse's deterministic phase; "corrected"
    applies the optimized corrective phase gate. Lossless unless ``decoherence``.
    """
    raw, corr = [], []
    for k in kerr_values:
        cfg = config.with_self_kerr(float(k))
        row = [_transfer_fidelities(cfg, fs.make_state(s, dims[0]), dims, decoherence) for s in states]
        raw.append([a for a, _ in row])
        corr.append([b for _, b in row])
    raw, corr = np.array(raw), np.array(corr)
    return KerrSweepResult(np.asarray(kerr_values, dtype=float), raw.mean(axis=1), corr.mean(axis=1), raw, corr,
                           tuple(states))


def photon_number_sweep(config: DeviceConfig, n_values, margin=4, decoherence=False):
    """Received fidelity of (|0> + |N>)/sqrt(2) using the configured cavity Kerrs."""
    raw, corr = [], []
    for n in n_values:
        d = int(n) + margin
        state = fs.make_state("zero_plus_n", d, n=int(n))
        a, b = _transfer_fidelities(config, state, (d, d, d), decoherence)
        raw.append([a])
        corr.append([b])
    raw, corr = np.array(raw), np.array(corr)
    return KerrSweepResult(np.asarray(n_values, dtype=float), raw[:, 0], corr[:, 0], raw, corr, ("zero_plus_n",))
