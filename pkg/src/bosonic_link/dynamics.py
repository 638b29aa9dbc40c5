"""Time evolution: Lindblad integration, closed-system propagation and the
lossless Heisenberg-picture solution of the three-mode chain.

Public time arguments are in ns; generators are in rad/us, so the integrators
run on a microsecond clock internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import RK45, DOP853
from scipy.linalg import expm

from . import fockspace as fs
from .errors import IntegrationError
from .hamiltonian import TWO_PI, TimeDependentHamiltonian

NS_PER_US = 1000.0

_METHODS = {"RK45": RK45, "DOP853": DOP853}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Result of an evolution sampled on ``times`` (ns).

    ``populations[i, k]`` is <n_k> at ``times[i]``; ``fock_populations[k]`` holds
    the marginal level occupations of mode k (shape ``(len(times), d_k)``).
    ``states`` is only filled when full states were requested.
    """

    times: np.ndarray
    dims: tuple[int, ...]
    populations: np.ndarray
    fock_populations: tuple[np.ndarray, ...]
    traces: np.ndarray
    final_state: fs.DensityState | None = None
    final_ket: np.ndarray | None = None
    states: tuple[fs.DensityState, ...] | None = None

    def reduced_final(self, keep):
        """Reduced density matrix of the final state on the listed modes."""
        if self.final_state is not None:
            return self.final_state.ptrace(keep)
        keep = [keep] if isinstance(keep, int) else list(keep)
        psi = self.final_ket.reshape(self.dims)
        rest = [k for k in range(len(self.dims)) if k not in keep]
        mat = np.moveaxis(psi, keep + rest, range(len(self.dims)))
        kd = tuple(self.dims[k] for k in keep)
        mat = mat.reshape(math.prod(kd), -1)
        return fs.DensityState(kd, mat @ mat.conj().T)


@dataclass(frozen=True)
class TransferMatrix:
    """Lossless propagator of (a1, a2, b): a_i(t) = sum_j M_ij a_j(0)."""

    m: np.ndarray

    def populations(self, n0=(0.0, 1.0, 0.0)):
        """<n_i(t)> for initial occupations ``n0`` of (module1, module2, bus)."""
        return (np.abs(self.m) ** 2) @ np.asarray(n0, dtype=float)

    def unitarity_error(self):
        return float(np.max(np.abs(self.m @ self.m.conj().T - np.eye(3))))


@dataclass(frozen=True)
class TruncationReport:
    passed: bool
    threshold: float
    top_population: tuple[float, ...]
    worst_mode: int
    worst_time: float


def _level_diagonals(dims):
    """Per-mode index arrays mapping the product basis to each mode's level."""
    grids = np.indices(dims).reshape(len(dims), -1)
    return grids


class _Observer:
    def __init__(self, dims):
        self.dims = tuple(dims)
        self.levels = _level_diagonals(self.dims)
        self.times, self.pops, self.fock, self.traces, self.states = [], [], [[] for _ in dims], [], []

    def record(self, t, diag, state=None):
        diag = np.real(diag)
        self.times.append(t)
        self.traces.append(diag.sum())
        self.pops.append([np.dot(lv, diag) for lv in self.levels])
        for k, d in enumerate(self.dims):
            self.fock[k].append(np.bincount(self.levels[k], weights=diag, minlength=d))
        if state is not None:
            self.states.append(state)

    def finish(self, **kwargs):
        states = tuple(self.states) if self.states else None
        return Trajectory(
            times=np.asarray(self.times),
            dims=self.dims,
            populations=np.asarray(self.pops),
            fock_populations=tuple(np.asarray(f) for f in self.fock),
            traces=np.asarray(self.traces),
            states=states,
            **kwargs,
        )


def _sparse_terms(h: TimeDependentHamiltonian):
    static = sp.csr_matrix(h.static.data)
    drives = [(sp.csr_matrix(op.data), f) for op, f in h.drive_terms]
    return static, drives


def _integrate(fun, y0, t_grid_ns, rtol, atol, method, on_sample, max_step=np.inf):
    """Step an embedded RK solver across ``t_grid_ns``, sampling via dense output."""
    t_us = np.asarray(t_grid_ns, dtype=float) / NS_PER_US
    if t_us.ndim != 1 or t_us.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D sequence")
    if np.any(np.diff(t_us) < 0):
        raise ValueError("t_grid must be ascending")
    on_sample(0, y0)
    if t_us.size == 1 or t_us[-1] == t_us[0]:
        for i in range(1, t_us.size):
            on_sample(i, y0)
        return y0
    solver = _METHODS[method](fun, t_us[0], y0, t_us[-1], rtol=rtol, atol=atol, max_step=max_step)
    idx = 1
    while idx < t_us.size:
        msg = solver.step()
        if solver.status == "failed":
            raise IntegrationError(f"integration failed at t={solver.t * NS_PER_US:.3f} ns: {msg}")
        if idx < t_us.size and t_us[idx] <= solver.t:
            interp = solver.dense_output()
            while idx < t_us.size and t_us[idx] <= solver.t:
                on_sample(idx, solver.y if t_us[idx] == solver.t else interp(t_us[idx]))
                idx += 1
    return solver.y


def evolve_master(h: TimeDependentHamiltonian, c_ops, rho0: fs.DensityState, t_grid,
                  tol=1e-8, atol=1e-10, store_states=False, method="RK45"):
    """Integrate d rho/dt = -i[H(t), rho] + sum_c D[c] rho on ``t_grid`` (ns).

    ``tol`` is the solver's relative tolerance. Envelopes are evaluated inside
    the derivative, so smooth pump edges are resolved by step-size control.
    Only the final state is kept unless ``store_states`` is set; populations are
    always recorded.
    """
    dims = tuple(h.dims)
    if rho0.dims != dims:
        raise ValueError(f"initial state dims {rho0.dims} do not match Hamiltonian dims {dims}")
    n = math.prod(dims)
    static, drives = _sparse_terms(h)
    cs = [sp.csr_matrix(c.data) for c in c_ops]
    for c in c_ops:
        if c.dims != dims:
            raise ValueError("collapse operator dims do not match the Hamiltonian")
    loss = sum((c.conj().T @ c for c in cs), sp.csr_matrix((n, n), dtype=complex))
    static_eff = (static - 0.5j * loss).tocsr()

    def rhs(t_us, y):
        x = y.reshape(n, n)
        a = static_eff @ x
        t_ns = t_us * NS_PER_US
        for op, f in drives:
            coeff = float(f(t_ns))
            if coeff:
                a = a + coeff * (op @ x)
        out = -1j * (a - a.conj().T)
        for c in cs:
            cx = c @ x
            out += (c @ cx.conj().T).conj().T
        return out.ravel()

    obs = _Observer(dims)
    times = np.asarray(t_grid, dtype=float)

    def sample(i, y):
        x = y.reshape(n, n)
        state = fs.DensityState(dims, 0.5 * (x + x.conj().T)) if store_states else None
        obs.record(times[i], np.diag(x), state)

    y_end = _integrate(rhs, rho0.data.astype(complex).ravel(), times, tol, atol, method, sample)
    x = y_end.reshape(n, n)
    return obs.finish(final_state=fs.DensityState(dims, 0.5 * (x + x.conj().T)))


def evolve_closed(h: TimeDependentHamiltonian, psi0, t_grid, tol=1e-10, atol=1e-12, method="RK45"):
    """Schroedinger evolution of a ket; the final ket is kept on the trajectory."""
    dims = tuple(h.dims)
    psi0 = np.asarray(psi0, dtype=complex).ravel()
    if psi0.size != math.prod(dims):
        raise ValueError("ket size does not match the Hamiltonian")
    static, drives = _sparse_terms(h)

    def rhs(t_us, y):
        out = static @ y
        t_ns = t_us * NS_PER_US
        for op, f in drives:
            coeff = float(f(t_ns))
            if coeff:
                out = out + coeff * (op @ y)
        return -1j * out

    obs = _Observer(dims)
    times = np.asarray(t_grid, dtype=float)
    y_end = _integrate(rhs, psi0, times, tol, atol, method,
                       lambda i, y: obs.record(times[i], np.abs(y) ** 2))
    return obs.finish(final_ket=y_end)


def evolve(h, c_ops, rho0: fs.DensityState, t_grid, **kwargs):
    """Dispatch to :func:`evolve_closed` for pure, lossless problems."""
    if not c_ops:
        w, v = np.linalg.eigh(rho0.data)
        if w[-1] > 1 - 1e-12:
            kw = {k: kwargs[k] for k in ("method",) if k in kwargs}
            return evolve_closed(h, v[:, -1], t_grid, **kw)
    return evolve_master(h, c_ops, rho0, t_grid, **kwargs)


def liouvillian_parts(h: TimeDependentHamiltonian, c_ops):
    """Dense superoperators (L0, [(L_k, f_k)]) on row-major vec(rho)."""
    n = math.prod(h.dims)
    eye = np.eye(n)
    heff = h.static.data.astype(complex)
    l0 = np.zeros((n * n, n * n), dtype=complex)
    for c in c_ops:
        cd = c.data
        l0 += np.kron(cd, cd.conj())
        heff = heff - 0.5j * (cd.conj().T @ cd)
    l0 += -1j * (np.kron(heff, eye) - np.kron(eye, heff.conj()))
    drives = [(-1j * (np.kron(op.data, eye) - np.kron(eye, op.data.conj())), f) for op, f in h.drive_terms]
    return l0, drives


def superoperator(h: TimeDependentHamiltonian, c_ops, duration=None, tol=1e-9, atol=1e-11, method="RK45"):
    """Propagator S with vec(rho(T)) = S vec(rho(0)) over [0, T] (T in ns).

    Suited to small spaces only: S is (prod dims)^2 square.
    """
    duration = h.total_duration if duration is None else duration
    n = math.prod(h.dims)
    l0, drives = liouvillian_parts(h, c_ops)
    m = n * n

    def rhs(t_us, y):
        s = y.reshape(m, m)
        gen = l0
        t_ns = t_us * NS_PER_US
        for lk, f in drives:
            coeff = float(f(t_ns))
            if coeff:
                gen = gen + coeff * lk
        return (gen @ s).ravel()

    y_end = _integrate(rhs, np.eye(m, dtype=complex).ravel(), [0.0, duration], tol, atol, method,
                       lambda i, y: None)
    return y_end.reshape(m, m)


def apply_superoperator(s, rho: fs.DensityState, times=1):
    v = rho.data.astype(complex).ravel()
    for _ in range(times):
        v = s @ v
    x = v.reshape(rho.data.shape)
    return fs.DensityState(rho.dims, 0.5 * (x + x.conj().T))


def coefficient_matrix(g, delta1, delta2):
    """Single-excitation generator of (a1, a2, b) in rad/us (inputs in MHz)."""
    return TWO_PI * np.array([[delta1, 0.0, g], [0.0, delta2, g], [g, g, 0.0]], dtype=float)


def heisenberg_m(g, delta1, delta2, t):
    """Lossless M = exp(-i C t) for constant coupling ``g`` and cavity detunings (t in ns)."""
    c = coefficient_matrix(g, delta1, delta2)
    return TransferMatrix(expm(-1j * c * (t / NS_PER_US)))


def population_common_detuning(g, delta_c, t):
    """Receiver population <n1(t)> for one photon in module 2, Delta_1 = Delta_2 = Delta_c."""
    gw, dw, tu = TWO_PI * g, TWO_PI * delta_c, np.asarray(t, dtype=float) / NS_PER_US
    om = np.sqrt(8 * gw**2 + dw**2)
    ratio = dw / om if om else 0.0
    half_d, half_o = dw * tu / 2, om * tu / 2
    return 0.25 * (
        1
        - 2 * np.cos(half_d) * np.cos(half_o)
        + np.cos(half_o) ** 2
        - 2 * ratio * np.sin(half_d) * np.sin(half_o)
        + ratio**2 * np.sin(half_o) ** 2
    )


def population_differential_detuning(g, delta_d, t):
    """<n1(t)> = (4 g^4 / Omega^4) sin^4(Omega t / 2), Omega = sqrt(2 g^2 + Delta_d^2)."""
    gw, dw, tu = TWO_PI * g, TWO_PI * delta_d, np.asarray(t, dtype=float) / NS_PER_US
    om = np.sqrt(2 * gw**2 + dw**2)
    if om == 0:
        return np.zeros_like(tu)
    return 4 * gw**4 / om**4 * np.sin(om * tu / 2) ** 4


def transfer_time(g):
    """Complete-transfer time pi / (sqrt(2) * 2 pi g) in ns for g in MHz."""
    return NS_PER_US / (2 * math.sqrt(2) * g)


def check_truncation(traj: Trajectory, threshold=1e-6, levels=1):
    """Flag any mode whose top ``levels`` Fock levels exceed ``threshold``.

    Two-level modes are reported but never fail: there the truncation is the
    encoding ({|0>, |1>}) rather than an approximation.
    """
    tops, worst_t, judged = [], [], []
    for fock in traj.fock_populations:
        d = fock.shape[1]
        top = fock[:, -min(levels, d) :].sum(axis=1)
        i = int(np.argmax(top))
        tops.append(float(top[i]))
        worst_t.append(float(traj.times[i]))
        judged.append(tops[-1] if d >= 3 else 0.0)
    k = int(np.argmax(judged))
    return TruncationReport(
        passed=max(judged) <= threshold,
        threshold=threshold,
        top_population=tuple(tops),
        worst_mode=k,
        worst_time=worst_t[k],
    )
