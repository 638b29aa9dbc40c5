"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v``. Each test prints its verdict
and measured values before asserting, so the summary lines appear whether or
not the criterion holds.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from bosonic_link import fockspace as fs
from bosonic_link import tomography as tomo
from bosonic_link.budget import fit_stark_coefficient, kerr_sweep, photon_number_sweep, run_budget
from bosonic_link.calibration import (
    SpectrumData,
    avoided_crossing_branches,
    bayes_correct,
    confusion_matrix,
    fit_anticrossing,
    fit_snail_spectrum,
    snail_frequency,
    snail_spectrum,
)
from bosonic_link.cli import main
from bosonic_link.device import ReadoutParams
from bosonic_link.dynamics import (
    evolve_master,
    heisenberg_m,
    population_common_detuning,
    population_differential_detuning,
)
from bosonic_link.hamiltonian import (
    ErrorModel,
    PumpSchedule,
    build_collapse_operators,
    build_transfer_hamiltonian,
    total_excitation,
)
from bosonic_link.protocols import (
    bell_transfer,
    find_bell_time,
    full_transfer,
    initial_state,
    repeated_transfer,
    transfer_pumps,
)


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: {detail}  ({elapsed:.1f} s)")
        assert ok, detail

    return report


@pytest.fixture(scope="module")
def budget_rows(paper):
    t0 = time.perf_counter()
    rows = {r.scenario: r for r in run_budget(paper)}
    return rows, time.perf_counter() - t0


def within(value, target, tol):
    return abs(value - target) <= tol


# ---- 1 ------------------------------------------------------------------------------------


def test_criterion_01_analytic_oracles(lossless, verdict):
    t0 = time.perf_counter()
    dims = (2, 2, 2)
    times = np.linspace(0, 1500, 16)
    rho0 = initial_state(lossless, dims, fs.make_state("fock", 2, n=1), ErrorModel.none())
    worst_master = 0.0
    worst_formula = 0.0
    for g in np.linspace(0.3, 0.8, 5):
        for dc in np.linspace(-0.3, 0.3, 5):
            for dd in np.linspace(-0.3, 0.3, 5):
                d1, d2 = dc + dd, dc - dd
                pumps = (PumpSchedule(g, d1, ramp=0.0, hold=1500.0), PumpSchedule(g, d2, ramp=0.0, hold=1500.0))
                h = build_transfer_hamiltonian(lossless, pumps, dims, include_stark=False)
                traj = evolve_master(h, [], rho0, times)
                exact = np.array([heisenberg_m(g, d1, d2, t).populations() for t in times])
                worst_master = max(worst_master, float(np.max(np.abs(traj.populations - exact))))
            for t in times:
                m = heisenberg_m(g, dc, dc, t).m
                worst_formula = max(worst_formula, abs(population_common_detuning(g, dc, t) - abs(m[0, 1]) ** 2))
                m = heisenberg_m(g, dc, -dc, t).m
                worst_formula = max(worst_formula, abs(population_differential_detuning(g, dc, t) - abs(m[0, 1]) ** 2))
    ok = worst_master < 1e-6 and worst_formula < 1e-10
    verdict(1, "analytic-oracle equivalence", ok,
            f"max |master - Heisenberg| = {worst_master:.2e} (< 1e-6), max |closed form - Heisenberg| = "
            f"{worst_formula:.2e} (< 1e-10)", time.perf_counter() - t0)


# ---- 2 ------------------------------------------------------------------------------------


def test_criterion_02_transfer_efficiency(lossless, paper, verdict):
    t0 = time.perf_counter()
    ideal = full_transfer(lossless)
    tau = 1000 * math.pi / (math.sqrt(2) * 2 * math.pi * 0.5)
    real = full_transfer(paper)
    ok_ideal = ideal.efficiency > 1 - 1e-6 and abs(ideal.swap_time - tau) < 1e-9
    ok_paper = within(real.efficiency, 0.972, 0.010)
    verdict(2, "transfer time and efficiency", ok_ideal and ok_paper,
            f"lossless 1 - eta = {1 - ideal.efficiency:.2e} at tau_ST = {ideal.swap_time:.2f} ns; "
            f"paper_device eta = {real.efficiency:.4f} (target 0.972 +- 0.010)", time.perf_counter() - t0)


# ---- 3 ------------------------------------------------------------------------------------


def test_criterion_03_repeated_transfer(paper, verdict):
    t0 = time.perf_counter()
    res = repeated_transfer(paper)
    ok = within(res.per_transfer_infidelity, 0.018, 0.005)
    verdict(3, "repeated-transfer process fidelity", ok,
            f"per-transfer infidelity = {100 * res.per_transfer_infidelity:.2f}% (target 1.8 +- 0.5 pp), "
            f"fit rms = {res.residual_rms:.4f}", time.perf_counter() - t0)


# ---- 4 ------------------------------------------------------------------------------------


def test_criterion_04_error_budget(paper, budget_rows, verdict):
    t0 = time.perf_counter()
    rows, elapsed = budget_rows
    targets = {
        "line_loss": ((0.002, 0.002), (0.006, 0.002)),
        "cavity_decoherence": ((0.005, 0.003), (0.016, 0.003)),
        "bs_dephasing": ((0.005, 0.003), (0.018, 0.003)),
        "total": ((0.018, 0.005), (0.041, 0.010)),
    }
    ok = True
    parts = []
    for name, ((f_t, f_tol), (b_t, b_tol)) in targets.items():
        r = rows[name]
        good = within(r.fock_process_infidelity, f_t, f_tol) and within(r.binomial_state_infidelity, b_t, b_tol)
        ok &= good
        parts.append(f"{name} {100 * r.fock_process_infidelity:.2f}%/{100 * r.binomial_state_infidelity:.2f}%"
                     f"{'' if good else ' (out)'}")
    # the ac-Stark row is matched by construction: refit and compare with the bundled coefficient
    fitted = fit_stark_coefficient(paper, 0.006)
    stark = rows["ac_stark"].fock_process_infidelity
    stark_ok = within(stark, 0.006, 5e-4) and math.isclose(fitted, paper.pumps.stark_coeff, rel_tol=0.01)
    ok &= stark_ok
    parts.append(f"ac_stark {100 * stark:.2f}% (coefficient {fitted:.5f} MHz vs bundled "
                 f"{paper.pumps.stark_coeff:.5f})")
    verdict(4, "error-budget table", ok, "; ".join(parts), elapsed + time.perf_counter() - t0)


# ---- 5 ------------------------------------------------------------------------------------


def test_criterion_05_bell_generation(lossless, paper, verdict):
    t0 = time.perf_counter()
    ideal = bell_transfer(lossless)
    t_star = find_bell_time(0.5)
    analytic = 1000 / (2 * math.sqrt(8 / 3) * 0.5)
    real = bell_transfer(paper)
    ladder = []
    for scale in (1.0, 2.0, 4.0):
        bus = dataclasses.replace(paper.bus, t1=paper.bus.t1 / scale, t2_star=2 * paper.bus.t1 / scale)
        ladder.append(bell_transfer(paper.replace(bus=bus), n_points=3).bell_fidelity)
    ok_ideal = ideal.bell_fidelity > 1 - 1e-6 and abs(t_star - analytic) < 1e-3
    ok_time = within(t_star, 580.0, 20.0)
    ok_sub = 0.93 <= real.bell_fidelity <= 0.99 and ladder[0] > ladder[1] > ladder[2]
    verdict(5, "Bell generation", ok_ideal and ok_time and ok_sub,
            f"lossless F = {ideal.bell_fidelity:.8f}; t* = {t_star:.1f} ns (target 580 +- 20); "
            f"paper_device F = {real.bell_fidelity:.4f} (in [0.93, 0.99]); degradation ladder "
            f"{', '.join(f'{x:.4f}' for x in ladder)}", time.perf_counter() - t0)


# ---- 6 ------------------------------------------------------------------------------------


def test_criterion_06_binomial_transfer(budget_rows, verdict):
    rows, elapsed = budget_rows
    inf = rows["total"].binomial_state_infidelity
    ok = within(inf, 0.041, 0.010)
    verdict(6, "binomial transfer", ok,
            f"mean logical-state infidelity = {100 * inf:.2f}% (target 4.1 +- 1.0 pp); simulated fidelity "
            f"{100 * (1 - inf):.1f}% vs measured 94.8% (SPAM gap not modeled)", elapsed)


# ---- 7 ------------------------------------------------------------------------------------


def test_criterion_07_tomography(verdict):
    t0 = time.perf_counter()
    grid = tomo.wigner_grid(2.5, 21).ravel()
    fids = {}
    for kind, n in (("fock", 1), ("binomial_0L", None), ("binomial_plusL", None)):
        state = fs.make_state(kind, 7, n=n)
        values = tomo.wigner(state, grid).values
        fids[kind] = tomo.state_fidelity(tomo.mle_reconstruct((grid, values), 7), state)
    w0 = float(tomo.wigner(fs.make_state("fock", 4, n=0), np.array([0j])).values[0])
    ok = min(fids.values()) > 0.999 and abs(w0 - 2 / math.pi) < 1e-10
    verdict(7, "tomography round trip", ok,
            ", ".join(f"F({k}) = {v:.6f}" for k, v in fids.items()) + f"; |W_vac(0) - 2/pi| = {abs(w0 - 2 / math.pi):.1e}",
            time.perf_counter() - t0)


# ---- 8 ------------------------------------------------------------------------------------


def test_criterion_08_calibration(paper, verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    parts = []
    ok = True
    flux = np.linspace(0, 0.5, 41)
    for label, truth in (("module1", paper.snail1), ("module2", paper.snail2)):
        data = SpectrumData(flux, snail_spectrum(truth, flux) + rng.normal(0, 1e-3, flux.size))
        init = dataclasses.replace(truth, beta=1.1 * truth.beta, e_j=0.9 * truth.e_j, e_l=1.1 * truth.e_l)
        fitted, _ = fit_snail_spectrum(data, init)
        errs = {f: abs(getattr(fitted, f) / getattr(truth, f) - 1) for f in ("beta", "e_j", "e_l", "e_c")}
        ok &= max(errs.values()) < 0.03
        parts.append(f"{label} worst SNAIL error {100 * max(errs.values()):.2f}%")
    # anti-crossing: exact recovery from noiseless branches, plus the mean over
    # 20 draws with 1 MHz noise (a single draw scatters by ~0.7% in g)
    bare = np.linspace(3.55, 3.82, 30)
    fx = np.linspace(0.4, 0.5, 30)
    for label, g in (("module1", 28.8), ("module2", 30.6)):
        up, lo = avoided_crossing_branches(bare, 3.686, g)
        exact = fit_anticrossing(SpectrumData(fx, up, lo), init=(20.0, 3.7))
        noisy = [fit_anticrossing(SpectrumData(fx, up + rng.normal(0, 1e-3, 30), lo + rng.normal(0, 1e-3, 30)),
                                  init=(20.0, 3.7)) for _ in range(20)]
        g_mean = float(np.mean([f.g for f in noisy]))
        om_mean = float(np.mean([f.omega0 for f in noisy]))
        good = within(exact.g, g, 0.01 * g) and within(g_mean, g, 0.01 * g)
        good &= within(exact.omega0, 3.686, 0.01 * 3.686) and within(om_mean, 3.686, 0.01 * 3.686)
        ok &= good
        parts.append(f"{label} g = {exact.g:.2f} MHz noiseless, {g_mean:.2f} MHz mean under noise, "
                     f"omega_b = {om_mean:.4f} GHz")
    top, bottom = snail_frequency(paper.snail1, 0.0), snail_frequency(paper.snail1, math.pi)
    ok &= within(top, 5.116, 0.03 * 5.116) and within(bottom, 3.150, 0.03 * 3.150)
    parts.append(f"module1 extrema {top:.3f}/{bottom:.3f} GHz")
    verdict(8, "calibration round trips", ok, "; ".join(parts), time.perf_counter() - t0)


# ---- 9 ------------------------------------------------------------------------------------


def test_criterion_09_kerr(lossless, paper, verdict):
    t0 = time.perf_counter()
    ks = [0.0, -0.001, -0.002, -0.003, -0.005, -0.01, -0.02]
    sweep = kerr_sweep(lossless, ks)
    nsweep = photon_number_sweep(paper, [1, 2, 3, 4, 5, 6])
    mono_k = bool(np.all(np.diff(sweep.raw) < 0))
    mono_n = bool(np.all(np.diff(nsweep.raw) < 0))
    corr = bool(np.all(sweep.corrected >= sweep.raw - 1e-12) and np.all(nsweep.corrected >= nsweep.raw - 1e-12))
    exp_inf = sweep.raw_infidelity[2:4]
    scale = bool(np.all(np.abs(exp_inf - 0.001) <= 0.001))
    verdict(9, "Kerr properties", mono_k and mono_n and corr and scale,
            f"raw monotone in |K|: {mono_k}, in N: {mono_n}; corrected >= raw: {corr}; infidelity at 2/3 kHz = "
            f"{100 * exp_inf[0]:.3f}%/{100 * exp_inf[1]:.3f}% (target 0.1 +- 0.1 pp)", time.perf_counter() - t0)


# ---- 10 ------------------------------------------------------------------------------------


def test_criterion_10_universal_properties(lossless, paper, tmp_path, capsys, verdict):
    t0 = time.perf_counter()
    dims = (3, 3, 3)
    state = fs.make_state("zero_plus_n", 3, n=2)
    h = build_transfer_hamiltonian(paper, transfer_pumps(paper), dims)
    c = build_collapse_operators(paper, dims)
    traj = evolve_master(h, c, initial_state(paper, dims, state, ErrorModel()), np.linspace(0, h.total_duration, 25),
                         store_states=True)
    trace = max(abs(s.trace() - 1) for s in traj.states)
    herm = max(s.hermiticity_error() for s in traj.states)
    pos = min(s.min_eigenvalue() for s in traj.states)
    h0 = build_transfer_hamiltonian(lossless, transfer_pumps(lossless, delta=(0.1, -0.05)), dims, include_stark=False)
    traj0 = evolve_master(h0, [], initial_state(lossless, dims, state, ErrorModel.none()),
                          np.linspace(0, h0.total_duration, 25), store_states=True)
    n_tot = total_excitation(dims)
    drift = max(abs(s.expect(n_tot) - traj0.states[0].expect(n_tot)) for s in traj0.states)
    r = ReadoutParams(0.995, 0.976)
    bayes = max(float(np.max(np.abs(np.array(bayes_correct(confusion_matrix(r) @ [p, 1 - p], r).probabilities)
                                    - [p, 1 - p]))) for p in np.linspace(0, 1, 21))
    same = True
    for cmd in (["chevron"], ["fit-snail"]):
        outs = []
        for sub in ("a", "b"):
            assert main(cmd + ["--seed", "11", "--outdir", str(tmp_path / sub)]) == 0
            outs.append(capsys.readouterr().out.strip())
        same &= open(f"{outs[0]}/data.csv", "rb").read() == open(f"{outs[1]}/data.csv", "rb").read()
    ok = trace < 1e-6 and herm < 1e-10 and pos > -1e-6 and drift < 1e-8 and bayes < 1e-12 and same
    verdict(10, "universal properties", ok,
            f"trace err {trace:.1e}, Hermiticity err {herm:.1e}, min eig {pos:.1e}, excitation drift {drift:.1e}, "
            f"Bayes round trip {bayes:.1e}, seeded CLI CSVs identical: {same}", time.perf_counter() - t0)
