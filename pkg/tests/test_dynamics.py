import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from bosonic_link import fockspace as fs
from bosonic_link.dynamics import (
    apply_superoperator,
    check_truncation,
    evolve,
    evolve_master,
    heisenberg_m,
    population_common_detuning,
    population_differential_detuning,
    superoperator,
    transfer_time,
)
from bosonic_link.hamiltonian import (
    ErrorModel,
    PumpSchedule,
    TimeDependentHamiltonian,
    build_collapse_operators,
    build_transfer_hamiltonian,
    total_excitation,
)
from bosonic_link.protocols import full_transfer, initial_state, transfer_pumps
from conftest import random_density, random_hermitian


def static_h(matrix, dims):
    return TimeDependentHamiltonian(fs.Operator(dims, matrix), (), 1000.0)


def test_unitary_oracle(rng):
    h = random_hermitian(rng, 4)
    rho = random_density(rng, 4)
    traj = evolve_master(static_h(h, (4,)), [], fs.DensityState((4,), rho), [0.0, 1000.0])
    u = expm(-1j * h * 1.0)
    assert np.allclose(traj.final_state.data, u @ rho @ u.conj().T, atol=1e-8)


def test_relaxation_decay():
    dim, t1 = 3, 20.0
    c = [math.sqrt(1 / t1) * fs.annihilation(dim)]
    times = np.linspace(0, 40000, 9)
    traj = evolve_master(static_h(np.zeros((dim, dim)), (dim,)), c, fs.make_state("fock", dim, n=1), times)
    assert np.allclose(traj.populations[:, 0], np.exp(-times / 1000 / t1), atol=1e-6)


def test_dephasing_coherence_decay():
    t_phi = 10.0
    c = [math.sqrt(2 / t_phi) * fs.number(2)]
    times = np.linspace(0, 20000, 5)
    plus = fs.DensityState.from_ket(np.array([1, 1]) / math.sqrt(2), (2,))
    traj = evolve_master(static_h(np.zeros((2, 2)), (2,)), c, plus, times, store_states=True)
    coh = np.array([s.data[0, 1].real for s in traj.states])
    assert np.allclose(coh, 0.5 * np.exp(-times / 1000 / t_phi), atol=1e-8)


def test_heisenberg_complete_transfer():
    g = 0.5
    m = heisenberg_m(g, 0, 0, transfer_time(g)).m
    assert abs(m[1, 0]) ** 2 == pytest.approx(1, abs=1e-10)
    assert abs(m[0, 0]) ** 2 < 1e-10 and abs(m[2, 0]) ** 2 < 1e-10


def test_heisenberg_identity_at_zero():
    assert np.allclose(heisenberg_m(0.7, 0.1, -0.3, 0.0).m, np.eye(3))


@given(st.floats(0.05, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 5000))
@settings(max_examples=50, deadline=None)
def test_heisenberg_unitary(g, d1, d2, t):
    tm = heisenberg_m(g, d1, d2, t)
    assert tm.unitarity_error() < 1e-10
    assert np.allclose(np.sum(np.abs(tm.m) ** 2, axis=1), 1, atol=1e-10)


def test_transfer_time_value():
    assert transfer_time(0.5) == pytest.approx(1000 / (2 * math.sqrt(2) * 0.5))
    assert transfer_time(0.5) == pytest.approx(707.1, abs=0.05)


def test_common_formula_limits():
    g = 0.5
    assert population_common_detuning(g, 0.0, transfer_time(g)) == pytest.approx(1.0, abs=1e-12)
    assert population_common_detuning(g, 0.3, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_differential_formula_limits():
    g = 0.5
    assert population_differential_detuning(g, 0.0, transfer_time(g)) == pytest.approx(1.0, abs=1e-12)
    dd = 0.2
    om = math.sqrt(2 * g**2 + dd**2)
    t_peak = 1000 * math.pi / (2 * math.pi * om)
    assert population_differential_detuning(g, dd, t_peak) == pytest.approx(4 * g**4 / om**4, abs=1e-14)
    t = np.linspace(0, 5000, 2001)
    assert population_differential_detuning(g, dd, t).max() <= 4 * g**4 / om**4 + 1e-15


def test_formulas_match_heisenberg():
    for g in (0.3, 0.5, 0.8):
        for d in (-0.4, 0.0, 0.25):
            for t in (100.0, 650.0, 2100.0):
                m = heisenberg_m(g, d, d, t).m
                assert population_common_detuning(g, d, t) == pytest.approx(abs(m[0, 1]) ** 2, abs=1e-10)
                m = heisenberg_m(g, d, -d, t).m
                assert population_differential_detuning(g, d, t) == pytest.approx(abs(m[0, 1]) ** 2, abs=1e-10)


def test_master_matches_heisenberg(lossless):
    g, d1, d2 = 0.5, 0.2, -0.1
    pumps = (PumpSchedule(g, d1, ramp=0.0, hold=1500.0), PumpSchedule(g, d2, ramp=0.0, hold=1500.0))
    dims = (2, 2, 2)
    h = build_transfer_hamiltonian(lossless, pumps, dims, include_stark=False)
    rho0 = initial_state(lossless, dims, fs.make_state("fock", 2, n=1), ErrorModel.none())
    times = np.linspace(0, 1500, 31)
    traj = evolve_master(h, [], rho0, times)
    exact = np.array([heisenberg_m(g, d1, d2, t).populations() for t in times])
    assert np.max(np.abs(traj.populations - exact)) < 1e-6


def test_closed_dispatch_matches_master(lossless):
    dims = (2, 2, 3)
    h = build_transfer_hamiltonian(lossless, transfer_pumps(lossless), dims)
    rho0 = initial_state(lossless, dims, fs.make_state("fock", 2, n=1), ErrorModel.none())
    times = np.linspace(0, h.total_duration, 11)
    a = evolve(h, [], rho0, times)
    b = evolve_master(h, [], rho0, times)
    assert a.final_ket is not None
    assert np.max(np.abs(a.populations - b.populations)) < 1e-7


def test_superoperator_matches_master(paper):
    dims = (2, 2, 2)
    pumps = transfer_pumps(paper)
    h = build_transfer_hamiltonian(paper, pumps, dims)
    c = build_collapse_operators(paper, dims)
    rho0 = initial_state(paper, dims, fs.make_state("fock", 2, n=1), ErrorModel())
    s = superoperator(h, c)
    direct = evolve_master(h, c, rho0, [0.0, h.total_duration])
    assert np.allclose(apply_superoperator(s, rho0).data, direct.final_state.data, atol=1e-7)


def test_lossy_states_valid_and_trace_preserved(paper):
    dims = (2, 2, 3)
    h = build_transfer_hamiltonian(paper, transfer_pumps(paper), dims)
    c = build_collapse_operators(paper, dims)
    rho0 = initial_state(paper, dims, fs.make_state("fock", 2, n=1), ErrorModel())
    traj = evolve_master(h, c, rho0, np.linspace(0, h.total_duration, 15), store_states=True)
    assert np.max(np.abs(traj.traces - 1)) < 1e-6
    for s in traj.states:
        assert s.min_eigenvalue() > -1e-6
        assert s.hermiticity_error() < 1e-10


def test_excitation_conserved_lossless(lossless):
    dims = (3, 3, 3)
    h = build_transfer_hamiltonian(lossless, transfer_pumps(lossless, delta=(0.1, 0.1)), dims, include_stark=False)
    rho0 = initial_state(lossless, dims, fs.make_state("zero_plus_n", 3, n=2), ErrorModel.none())
    traj = evolve_master(h, [], rho0, np.linspace(0, h.total_duration, 21), store_states=True)
    n_tot = total_excitation(dims)
    vals = np.array([s.expect(n_tot) for s in traj.states])
    assert np.max(np.abs(vals - vals[0])) < 1e-8


def test_dims_mismatch_raises(lossless):
    h = build_transfer_hamiltonian(lossless, transfer_pumps(lossless), (2, 2, 3))
    with pytest.raises(ValueError):
        evolve_master(h, [], fs.make_state("fock", 2, n=1), [0.0, 10.0])


def test_truncation_single_photon_dim3(lossless):
    rep = full_transfer(lossless, input_state=fs.make_state("fock", 3, n=1), dims=(3, 3, 3), check=False,
                        truncation_threshold=1e-6)
    assert check_truncation(rep.trajectory).passed


def test_truncation_binomial_dim5_fails(lossless):
    rep = full_transfer(lossless, input_state=fs.make_state("binomial_0L", 5), dims=(5, 5, 5), check=False,
                        n_points=5)
    report = check_truncation(rep.trajectory)
    assert not report.passed
    assert report.top_population[1] == pytest.approx(0.5)


def test_truncation_binomial_dim7_passes(lossless):
    rep = full_transfer(lossless, input_state=fs.make_state("binomial_0L", 7), dims=(7, 7, 7), check=False,
                        n_points=21)
    assert check_truncation(rep.trajectory).passed
