"""Truncated Fock-space operators and states.

Multi-mode spaces are always ordered (module1, module2, bus); basis index
``(n1, n2, nb)`` maps to row-major position ``(n1 * d2 + n2) * db + nb``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import eval_genlaguerre, gammaln

from .errors import InvalidDimensionError


class TruncationWarning(UserWarning):
    pass


def _frozen(matrix):
    arr = np.array(matrix, dtype=complex)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Operator:
    """Dense operator on a tensor product of truncated Fock spaces."""

    dims: tuple[int, ...]
    data: np.ndarray
    warning: str | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise InvalidDimensionError(f"bad mode dimensions {self.dims}")
        data = _frozen(self.data)
        side = math.prod(dims)
        if data.shape != (side, side):
            raise InvalidDimensionError(
                f"matrix shape {data.shape} does not match dims {dims} (side {side})"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    def dag(self):
        return Operator(self.dims, self.data.conj().T)

    def hermiticity_error(self):
        return float(np.max(np.abs(self.data - self.data.conj().T), initial=0.0))

    def _check_dims(self, other):
        if other.dims != self.dims:
            raise InvalidDimensionError(f"dims {self.dims} and {other.dims} differ")

    def __matmul__(self, other):
        if isinstance(other, Operator):
            self._check_dims(other)
            return Operator(self.dims, self.data @ other.data)
        return self.data @ np.asarray(other)

    def __add__(self, other):
        self._check_dims(other)
        return Operator(self.dims, self.data + other.data)

    def __sub__(self, other):
        self._check_dims(other)
        return Operator(self.dims, self.data - other.data)

    def __mul__(self, scalar):
        return Operator(self.dims, self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return Operator(self.dims, -self.data)


@dataclass(frozen=True, eq=False)
class DensityState(Operator):
    """Density matrix. Pure states are stored as rank-1 projectors."""

    @classmethod
    def from_ket(cls, psi, dims=None):
        psi = np.asarray(psi, dtype=complex).ravel()
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise ValueError("zero state vector")
        psi = psi / norm
        return cls(tuple(dims) if dims is not None else (psi.size,), np.outer(psi, psi.conj()))

    def trace(self):
        return complex(np.trace(self.data))

    def expect(self, op):
        op = op.data if isinstance(op, Operator) else np.asarray(op)
        return float(np.real(np.trace(op @ self.data)))

    def min_eigenvalue(self):
        herm = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(herm)[0])

    def violations(self, trace_tol=1e-10, herm_tol=1e-10, eig_tol=1e-8):
        """Return a list of human-readable invariant violations (empty if valid)."""
        problems = []
        tr = self.trace()
        if abs(tr - 1) > trace_tol:
            problems.append(f"trace {tr.real:.3e}{tr.imag:+.3e}j differs from 1")
        if self.hermiticity_error() > herm_tol:
            problems.append(f"non-Hermitian by {self.hermiticity_error():.3e}")
        lam = self.min_eigenvalue()
        if lam < -eig_tol:
            problems.append(f"negative eigenvalue {lam:.3e}")
        return problems

    def is_valid(self, **tols):
        return not self.violations(**tols)

    def ptrace(self, keep):
        """Partial trace keeping the listed mode indices (in the given order)."""
        if isinstance(keep, int):
            keep = [keep]
        keep = list(keep)
        n = len(self.dims)
        if any(k < 0 or k >= n for k in keep) or len(set(keep)) != len(keep):
            raise InvalidDimensionError(f"cannot keep modes {keep} of {self.dims}")
        tensor = self.data.reshape(self.dims + self.dims)
        letters = "abcdefghij"
        row = list(letters[:n])
        col = list(letters[n : 2 * n])
        for m in range(n):
            if m not in keep:
                col[m] = row[m]
        out = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
        reduced = np.einsum("".join(row) + "".join(col) + "->" + out, tensor)
        kd = tuple(self.dims[k] for k in keep)
        side = math.prod(kd)
        return DensityState(kd, reduced.reshape(side, side))

    def mode_populations(self, mode):
        """Fock-level occupation probabilities of one mode."""
        reduced = self.ptrace([mode]) if len(self.dims) > 1 else self
        return np.real(np.diag(reduced.data)).copy()

    def mean_photon_number(self, mode=0):
        pops = self.mode_populations(mode)
        return float(np.dot(np.arange(pops.size), pops))


def _require_dim(dim, minimum=2):
    if int(dim) != dim or dim < minimum:
        raise InvalidDimensionError(f"dimension must be an integer >= {minimum}, got {dim}")
    return int(dim)


def annihilation(dim):
    dim = _require_dim(dim)
    return Operator((dim,), np.diag(np.sqrt(np.arange(1, dim)), 1))


def creation(dim):
    return annihilation(dim).dag()


def number(dim):
    dim = _require_dim(dim, 1)
    return Operator((dim,), np.diag(np.arange(dim, dtype=float)))


def identity(dim):
    dim = _require_dim(dim, 1)
    return Operator((dim,), np.eye(dim))


def parity(dim):
    dim = _require_dim(dim, 1)
    return Operator((dim,), np.diag((-1.0) ** np.arange(dim)))


def displacement(alpha, dim):
    """D(alpha) = exp(alpha a^dag - alpha^* a) in a ``dim``-level space.

    The generator is truncated before exponentiating, so the result is exactly
    unitary; matrix elements near the top of the space are not those of the
    infinite-dimensional operator. Amplitudes with ``|alpha|^2 > dim/4`` are
    flagged with a :class:`TruncationWarning` and a ``warning`` on the result.
    """
    dim = _require_dim(dim)
    a = annihilation(dim).data
    gen = alpha * a.conj().T - np.conj(alpha) * a
    note = None
    if abs(alpha) ** 2 > dim / 4:
        note = f"|alpha|^2={abs(alpha) ** 2:.3g} exceeds dim/4={dim / 4:.3g}; truncation artifacts likely"
        warnings.warn(note, TruncationWarning, stacklevel=2)
    return Operator((dim,), expm(gen), warning=note)


def displacement_elements(beta, dim, cols=None):
    """Exact matrix elements <m|D(beta)|n> for m < dim, n < cols.

    Uses the generalized-Laguerre closed form, so nothing is truncated before
    exponentiating: the block is accurate but not unitary. ``beta`` may be an
    array; the result then has shape ``beta.shape + (dim, cols)``.
    """
    dim = _require_dim(dim, 1)
    cols = dim if cols is None else _require_dim(cols, 1)
    beta = np.asarray(beta, dtype=complex)
    x = np.abs(beta) ** 2
    pref = np.exp(-x / 2)
    out = np.zeros(beta.shape + (dim, cols), dtype=complex)
    for m in range(dim):
        for n in range(cols):
            lo, hi = min(m, n), max(m, n)
            k = hi - lo
            # sqrt(lo!/hi!) in log space to stay finite for larger dims
            mag = np.exp(0.5 * (gammaln(lo + 1) - gammaln(hi + 1)))
            lag = eval_genlaguerre(lo, k, x)
            base = beta if m >= n else -np.conj(beta)
            out[..., m, n] = pref * mag * base**k * lag
    return out


def tensor(operators: Sequence[Operator]):
    """Kronecker product in list order, with ``dims`` concatenated."""
    operators = list(operators)
    if not operators:
        raise ValueError("tensor() needs at least one operator")
    data = reduce(np.kron, (op.data for op in operators))
    dims = tuple(d for op in operators for d in op.dims)
    cls = DensityState if all(isinstance(op, DensityState) for op in operators) else Operator
    return cls(dims, data)


def embed(op, mode, dims):
    """Lift a single-mode operator onto ``mode`` of the product space ``dims``."""
    dims = tuple(dims)
    if op.dims != (dims[mode],):
        raise InvalidDimensionError(f"operator dims {op.dims} do not fit mode {mode} of {dims}")
    return tensor([op if k == mode else identity(d) for k, d in enumerate(dims)])


def fock_ket(n, dim):
    dim = _require_dim(dim, 1)
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"Fock level {n} needs dim > {n}, got {dim}")
    v = np.zeros(dim, dtype=complex)
    v[n] = 1.0
    return v


def coherent_ket(alpha, dim):
    dim = _require_dim(dim)
    n = np.arange(dim)
    logfact = gammaln(n + 1)
    v = np.exp(-abs(alpha) ** 2 / 2 - 0.5 * logfact) * np.power(complex(alpha), n)
    if abs(alpha) ** 2 > dim / 4:
        warnings.warn(f"coherent state |alpha|^2={abs(alpha) ** 2:.3g} is poorly contained in dim {dim}",
                      TruncationWarning, stacklevel=2)
    return v / np.linalg.norm(v)


_BINOMIAL_MIN_DIM = 5


def state_ket(kind, dim, n=None, alpha=None):
    """Normalized ket for :func:`make_state` kinds."""
    kind = kind.replace("-", "_").lower()
    if kind == "fock":
        if n is None:
            raise ValueError("fock state needs n")
        return fock_ket(n, dim)
    if kind == "coherent":
        if alpha is None:
            raise ValueError("coherent state needs alpha")
        return coherent_ket(alpha, dim)
    if kind.startswith("binomial"):
        if dim < _BINOMIAL_MIN_DIM:
            raise InvalidDimensionError(f"binomial codewords need dim >= 5, got {dim}")
        zero_l = (fock_ket(0, dim) + fock_ket(4, dim)) / np.sqrt(2)
        one_l = fock_ket(2, dim)
        if kind in ("binomial_0l", "binomial_zero"):
            return zero_l
        if kind in ("binomial_1l", "binomial_one"):
            return one_l
        if kind in ("binomial_plusl", "binomial_plus"):
            return (zero_l + one_l) / np.sqrt(2)
    if kind == "zero_plus_n":
        if n is None or n < 1:
            raise ValueError("zero_plus_n needs n >= 1")
        if dim < n + 1:
            raise InvalidDimensionError(f"|0>+|{n}> needs dim >= {n + 1}, got {dim}")
        return (fock_ket(0, dim) + fock_ket(n, dim)) / np.sqrt(2)
    raise ValueError(f"unknown state kind {kind!r}")


def make_state(kind, dim, n=None, alpha=None):
    """Pure single-mode state as a density matrix.

    ``kind`` is one of ``fock`` (needs ``n``), ``coherent`` (needs ``alpha``),
    ``binomial_0L``, ``binomial_1L``, ``binomial_plusL`` or ``zero_plus_n``
    (needs ``n``).
    """
    return DensityState.from_ket(state_ket(kind, dim, n=n, alpha=alpha), (int(dim),))


def thermal_state(n_th, dim):
    """Truncated thermal state with mean occupation ``n_th`` (renormalized)."""
    dim = _require_dim(dim, 1)
    if n_th <= 0:
        return DensityState.from_ket(fock_ket(0, dim), (dim,))
    ratio = n_th / (1 + n_th)
    p = ratio ** np.arange(dim)
    return DensityState((dim,), np.diag(p / p.sum()))


def embed_state(state, dim):
    """Copy a single-mode state into a larger (or equal) truncation."""
    if state.dims[0] > dim:
        extra = np.real(np.diag(state.data))[dim:].sum()
        if extra > 1e-12:
            raise InvalidDimensionError(f"state has population {extra:.2e} above level {dim - 1}")
    out = np.zeros((dim, dim), dtype=complex)
    k = min(dim, state.dims[0])
    out[:k, :k] = state.data[:k, :k]
    return DensityState((dim,), out)
