"""State and process characterization.

Wigner maps from the displaced-parity formula, a readout model for the
measured parity, grid normalization, least-squares MLE reconstruction, Uhlmann
fidelity and single-qubit process tomography on the {|0>, |1>} subspace.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fockspace as fs
from .device import ReadoutParams
from .errors import ConvergenceError, LeakageError, NumericalError

PAULIS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_PAULI_LIST = [PAULIS[k] for k in "IXYZ"]

# Measured parity-mapping fidelities for photon numbers 1..3 per module.
PARITY_FIDELITY_TABLES = {
    1: {1: 0.990, 2: 0.976, 3: 0.961},
    2: {1: 0.992, 2: 0.972, 3: 0.960},
}


def _matrix(x):
    return x.data if isinstance(x, fs.Operator) else np.asarray(x, dtype=complex)


# ---- fidelity ---------------------------------------------------------------

def _psd_sqrt(m):
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def state_fidelity(a, b):
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2.

    Evaluated as the squared nuclear norm of sqrt(a) sqrt(b), which stays
    accurate (and symmetric) for rank-deficient states. If either state is
    pure the exact overlap <psi|rho|psi> is used instead.
    """
    ma, mb = _matrix(a), _matrix(b)
    if ma.shape != mb.shape:
        raise ValueError(f"state shapes {ma.shape} and {mb.shape} differ")
    for pure, other in ((ma, mb), (mb, ma)):
        w, v = np.linalg.eigh(0.5 * (pure + pure.conj().T))
        if w[-1] > 1 - 1e-12 and np.sum(np.abs(w[:-1])) < 1e-12:
            psi = v[:, -1]
            return float(np.real(np.conj(psi) @ other @ psi))
    s = np.linalg.svd(_psd_sqrt(ma) @ _psd_sqrt(mb), compute_uv=False)
    return float(np.sum(s) ** 2)


# ---- Wigner functions ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WignerMap:
    alphas: np.ndarray
    values: np.ndarray
    normalized: bool = False

    @property
    def cell_area(self):
        """Area of one grid cell, assuming a uniform rectangular grid."""
        if self.alphas.ndim != 2 or min(self.alphas.shape) < 2:
            raise ValueError("integration needs a 2-D grid")
        dx = abs(self.alphas[0, 1].real - self.alphas[0, 0].real)
        dy = abs(self.alphas[1, 0].imag - self.alphas[0, 0].imag)
        return dx * dy

    def integral(self):
        return float(np.sum(self.values) * self.cell_area)

    def boundary_max(self):
        v = np.abs(self.values)
        return float(max(v[0].max(), v[-1].max(), v[:, 0].max(), v[:, -1].max()))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["re_alpha", "im_alpha", "value"])
            for a, v in zip(self.alphas.ravel(), self.values.ravel()):
                w.writerow([f"{a.real:.12g}", f"{a.imag:.12g}", f"{v:.12g}"])


def wigner_grid(extent=2.5, points=41):
    """Square grid of complex amplitudes over [-extent, extent]^2 (rows = Im)."""
    x = np.linspace(-extent, extent, points)
    re, im = np.meshgrid(x, x)
    return re + 1j * im


def parity_observables(alphas, dim):
    """Stack of (2/pi) D(2 alpha) P blocks: W(alpha) = Tr(rho Pi(alpha))."""
    alphas = np.asarray(alphas, dtype=complex)
    d2 = fs.displacement_elements(2 * alphas, dim)
    return (2 / np.pi) * d2 * ((-1.0) ** np.arange(dim))


def wigner(rho, grid=None):
    """Wigner function W(alpha) = (2/pi) Tr[D(-alpha) rho D(alpha) P] on ``grid``.

    Uses exact displacement matrix elements, so the result has no truncation
    artifacts for any grid extent.
    """
    grid = wigner_grid() if grid is None else np.asarray(grid, dtype=complex)
    m = _matrix(rho)
    dim = m.shape[0]
    obs = parity_observables(grid, dim)
    # Tr(rho Pi) = sum_{ij} rho_ij Pi_ji
    values = np.real(np.einsum("ij,...ji->...", m, obs))
    return WignerMap(grid, values)


def normalize_wigner(wmap: WignerMap, boundary_tol=1e-3):
    """Divide by the midpoint-rule integral over the grid."""
    total = wmap.integral()
    if not total > 0:
        raise NumericalError(f"Wigner integral {total:.3g} is not positive")
    peak = np.max(np.abs(wmap.values))
    if peak > 0 and wmap.boundary_max() > boundary_tol * peak:
        warnings.warn("Wigner map does not decay at the grid edge; normalization is biased", stacklevel=2)
    return WignerMap(wmap.alphas, wmap.values / total, normalized=True)


# ---- readout model --------------------------------------------------------------

def parity_fidelity_table(module=1):
    """Parity-mapping fidelity f(n), extrapolated linearly beyond the table and clipped."""
    table = PARITY_FIDELITY_TABLES[module]
    lo, hi = min(table), max(table)

    def f(n):
        n = np.asarray(n)
        out = np.interp(n, sorted(table), [table[k] for k in sorted(table)])
        below = table[lo] + (n - lo) * (table[lo + 1] - table[lo])
        above = table[hi] + (n - hi) * (table[hi] - table[hi - 1])
        out = np.where(n < lo, below, np.where(n > hi, above, out))
        return np.clip(out, 0.5, 1.0)

    return f


def _fidelity_array(parity_fidelity, n):
    if parity_fidelity is None:
        return np.ones(n.size)
    if callable(parity_fidelity):
        return np.asarray(parity_fidelity(n), dtype=float)
    if isinstance(parity_fidelity, dict):
        return np.array([parity_fidelity.get(int(k), 1.0) for k in n], dtype=float)
    if np.isscalar(parity_fidelity):
        return np.full(n.size, float(parity_fidelity))
    vals = np.asarray(parity_fidelity, dtype=float)
    return np.concatenate([vals, np.full(max(n.size - vals.size, 0), vals[-1])])[: n.size]


def displaced_populations(rho, alpha):
    """Photon-number distribution of D(-alpha) rho D(alpha), exactly.

    The displaced state spreads above the input truncation, so the output is
    carried on a larger support (input dim + 4|alpha|^2 + 12 levels).
    """
    m = _matrix(rho)
    dim = m.shape[0]
    big = dim + int(math.ceil(4 * abs(alpha) ** 2)) + 12
    d = fs.displacement_elements(-alpha, big, dim)  # <k|D(-alpha)|j>, j < dim
    return np.real(np.einsum("kj,jl,kl->k", d, m, d.conj()))


def _readout_pair(readout):
    if readout is None:
        return 1.0, 1.0
    if isinstance(readout, ReadoutParams):
        return readout.f_g, readout.f_e
    f_g, f_e = readout
    return float(f_g), float(f_e)


def simulate_parity_readout(rho, alpha, readout: ReadoutParams | None = None, parity_fidelity=None):
    """Expected difference of the two mapping sequences' excited-state fractions.

    Each parity map flips the photon-number parity record with probability
    1 - f(n); the transmon readout then applies the confusion matrix
    [[F_g, 1 - F_e], [1 - F_g, F_e]]. Running the map once with even -> g and
    once with even -> e and differencing cancels readout offsets, giving
    (F_g + F_e - 1) sum_n (-1)^n (2 f(n) - 1) p_n(alpha). With perfect
    hardware this is the ideal displaced parity, (pi/2) W(alpha).
    ``readout`` is a :class:`ReadoutParams` or a plain ``(f_g, f_e)`` pair.
    """
    f_g, f_e = _readout_pair(readout)
    p = displaced_populations(rho, alpha)
    n = np.arange(p.size)
    f = _fidelity_array(parity_fidelity, n)
    contrast = f_g + f_e - 1
    return float(contrast * np.sum((-1.0) ** n * (2 * f - 1) * p))


def sample_parity_readout(rho, alpha, readout: ReadoutParams | None = None, parity_fidelity=None,
                          shots=10000, rng=None):
    """Monte-Carlo version of :func:`simulate_parity_readout` (``shots`` per sequence)."""
    f_g, f_e = _readout_pair(readout)
    rng = np.random.default_rng(rng)
    p = np.clip(displaced_populations(rho, alpha), 0, None)
    p = p / p.sum()
    n = np.arange(p.size)
    f = _fidelity_array(parity_fidelity, n)
    fractions = []
    for even_to_e in (False, True):
        photons = rng.choice(n, size=shots, p=p)
        correct = rng.random(shots) < f[photons]
        even = (photons % 2 == 0) == correct
        excited = even if even_to_e else ~even
        # confusion: e read as e with F_e, g read as e with 1 - F_g
        u = rng.random(shots)
        read_e = np.where(excited, u < f_e, u < 1 - f_g)
        fractions.append(read_e.mean())
    return float(fractions[1] - fractions[0])


# ---- MLE reconstruction -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MLEResult:
    state: fs.DensityState
    iterations: int
    converged: bool
    residual_rms: float


def project_density(h):
    """Nearest (Frobenius) unit-trace PSD matrix: eigenvalues projected onto the simplex."""
    w, v = np.linalg.eigh(0.5 * (h + h.conj().T))
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1
    k = np.nonzero(u - css / np.arange(1, u.size + 1) > 0)[0][-1]
    lam = np.clip(w - css[k] / (k + 1), 0, None)
    return (v * lam) @ v.conj().T


def _parse_measurements(measurements):
    if isinstance(measurements, tuple) and len(measurements) == 2 and np.ndim(measurements[0]) >= 1:
        alphas, values = measurements
    else:
        alphas, values = zip(*measurements)
    return np.asarray(alphas, dtype=complex).ravel(), np.asarray(values, dtype=float).ravel()


def mle_reconstruct(measurements, dim, max_iter=2000, tol=1e-12, method="apg", dilution=0.5,
                    full_output=False):
    """Maximum-likelihood state from displaced-parity data.

    ``measurements`` is a pair ``(alphas, values)`` or a sequence of
    ``(alpha, value)`` where each value estimates W(alpha). With Gaussian
    noise the likelihood peaks at the least-squares unit-trace PSD state.

    ``method="apg"`` (default) runs accelerated projected gradient with
    adaptive restart; ``method="rrho"`` runs the diluted fixed-point update
    rho <- M rho M / Tr, M = I + eps (G - Tr(G rho)), with
    G = sum_i (w_i - W_i(rho)) Pi_i, starting from eps = dilution / L and
    adapting eps by backtracking. Both stop once the fidelity between
    successive iterates differs from 1 by less than ``tol``.
    """
    alphas, values = _parse_measurements(measurements)
    if alphas.size < dim * dim:
        raise ValueError(f"need at least dim^2 = {dim * dim} points, got {alphas.size}")
    if method not in ("apg", "rrho"):
        raise ValueError(f"unknown MLE method {method!r}")
    pis = parity_observables(alphas, dim)
    lip = np.linalg.norm(pis.reshape(alphas.size, -1), 2) ** 2

    def predict(r):
        return np.real(np.einsum("ij,mji->m", r, pis))

    def gradient(r):
        return np.einsum("m,mij->ij", values - predict(r), pis)

    def cost(r):
        return float(np.sum((values - predict(r)) ** 2))

    eye = np.eye(dim, dtype=complex)
    rho = eye / dim
    f_old = cost(rho)
    converged = False
    y, t_k, eps = rho, 1.0, dilution / lip
    it = 0
    for it in range(1, max_iter + 1):
        if method == "apg":
            new = project_density(y + gradient(y) / lip)
            f_new = cost(new)
            if f_new > f_old and t_k > 1:
                # momentum overshot: restart from the last accepted iterate
                y, t_k = rho, 1.0
                continue
            t_next = (1 + math.sqrt(1 + 4 * t_k * t_k)) / 2
            y = new + ((t_k - 1) / t_next) * (new - rho)
            t_k = t_next
        else:
            g = gradient(rho)
            k = g - np.real(np.trace(g @ rho)) * eye
            e = 2 * eps
            while True:
                m = eye + e * k
                new = m @ rho @ m.conj().T
                new = 0.5 * (new + new.conj().T) / np.real(np.trace(new))
                f_new = cost(new)
                if f_new <= f_old or e < 1e-6 / lip:
                    break
                e /= 2
            eps = e
        change = 1.0 - state_fidelity(new, rho)
        rho, f_old = new, f_new
        if abs(change) < tol:
            converged = True
            break
    state = fs.DensityState((dim,), project_density(rho))
    result = MLEResult(state, it, converged, math.sqrt(f_old / values.size))
    if not converged:
        raise ConvergenceError(f"MLE did not converge in {max_iter} iterations", result)
    return result if full_output else state


# ---- two-qubit and process characterization -------------------------------------

def joint_pauli_expectations(rho, max_leakage=0.05):
    """All 15 non-trivial <sigma_i x sigma_j> on the {|0>,|1>}^2 block.

    Expectations are normalized by the in-subspace population; the labels are
    two-letter strings such as "XX" or "IZ" (module 1 first).
    """
    m = _matrix(rho)
    dims = rho.dims if isinstance(rho, fs.Operator) else None
    if dims is None or len(dims) != 2:
        raise ValueError("need a two-mode state")
    d1, d2 = dims
    idx = [i * d2 + j for i in (0, 1) for j in (0, 1)]
    block = m[np.ix_(idx, idx)]
    inside = float(np.real(np.trace(block)))
    leakage = max(0.0, 1.0 - inside)
    if leakage > max_leakage:
        raise LeakageError(leakage)
    block = block / inside
    out = {}
    for a in "IXYZ":
        for b in "IXYZ":
            if a == b == "I":
                continue
            out[a + b] = float(np.real(np.trace(np.kron(PAULIS[a], PAULIS[b]) @ block)))
    return out


def bell_fidelity_from_paulis(paulis):
    """Fidelity to (|01> + |10>)/sqrt(2): (1 + XX + YY - ZZ) / 4."""
    return (1 + paulis["XX"] + paulis["YY"] - paulis["ZZ"]) / 4


CARDINAL_STATES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / math.sqrt(2),
    "+i": np.array([1, 1j], dtype=complex) / math.sqrt(2),
    "-i": np.array([1, -1j], dtype=complex) / math.sqrt(2),
}


def _pauli_vector(m):
    return np.array([np.real(np.trace(p @ m)) for p in _PAULI_LIST])


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """Single-qubit Pauli transfer matrix, R_ij = Tr(sigma_i L(sigma_j)) / 2."""

    ptm: np.ndarray

    def choi(self):
        """Normalized Choi state J = (1/4) sum_ij R_ij sigma_j^T (x) sigma_i (input first)."""
        j = np.zeros((4, 4), dtype=complex)
        for a in range(4):
            for b in range(4):
                j += self.ptm[a, b] * np.kron(_PAULI_LIST[b].T, _PAULI_LIST[a])
        return j / 4

    @classmethod
    def from_choi(cls, j):
        r = np.zeros((4, 4))
        for a in range(4):
            for b in range(4):
                r[a, b] = np.real(np.trace(j @ np.kron(_PAULI_LIST[b].T, _PAULI_LIST[a])))
        return cls(r)

    def process_fidelity(self):
        """<Phi|J|Phi> with Phi maximally entangled; equals Tr(R) / 4."""
        return float(np.trace(self.ptm) / 4)

    def apply(self, rho):
        r = self.ptm @ _pauli_vector(_matrix(rho))
        return 0.5 * sum(c * p for c, p in zip(r, _PAULI_LIST))

    def min_choi_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.choi())[0])


def project_cptp(j, max_iter=5000, tol=1e-12):
    """Nearest CPTP Choi state (Frobenius) by Dykstra's alternating projections.

    TP here means the input marginal Tr_out J = I/2.
    """

    def proj_cp(x):
        w, v = np.linalg.eigh(0.5 * (x + x.conj().T))
        return (v * np.clip(w, 0, None)) @ v.conj().T

    def proj_tp(x):
        t = np.einsum("iaja->ij", x.reshape(2, 2, 2, 2))
        return x - np.kron(t - np.eye(2) / 2, np.eye(2) / 2)

    x = np.array(j, dtype=complex)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(max_iter):
        y = proj_cp(x + p)
        p = x + p - y
        x_new = proj_tp(y + q)
        q = y + q - x_new
        done = np.max(np.abs(x_new - x)) < tol
        x = x_new
        if done:
            break
    return x


@dataclass(frozen=True, eq=False)
class ProcessResult:
    raw: ProcessMatrix
    process: ProcessMatrix
    fidelity: float
    outputs: dict


def process_tomography(channel: Callable, dim=2, project=True):
    """Characterize a qubit channel from its action on the six cardinal states.

    ``channel`` maps a 2x2 density matrix (ndarray) to a 2x2 density matrix.
    The PTM is the least-squares solution of the over-complete linear system;
    with ``project`` it is then replaced by the nearest CPTP map.
    """
    if dim != 2:
        raise ValueError("process tomography is implemented on a qubit subspace only")
    ins, outs, record = [], [], {}
    for label, ket in CARDINAL_STATES.items():
        rho_in = np.outer(ket, ket.conj())
        rho_out = _matrix(channel(rho_in))
        record[label] = rho_out
        ins.append(_pauli_vector(rho_in))
        outs.append(_pauli_vector(rho_out))
    ins, outs = np.array(ins), np.array(outs)
    if np.linalg.matrix_rank(ins) < 4:
        raise NumericalError("input states are not informationally complete")
    rt, *_ = np.linalg.lstsq(ins, outs, rcond=None)
    raw = ProcessMatrix(rt.T)
    proc = ProcessMatrix.from_choi(project_cptp(raw.choi())) if project else raw
    return ProcessResult(raw, proc, proc.process_fidelity(), record)
