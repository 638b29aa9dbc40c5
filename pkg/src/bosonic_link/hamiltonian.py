"""Time-dependent three-mode transfer Hamiltonian and Lindblad channels.

Config values are ordinary frequencies (MHz); they are converted to angular
units (rad/us) here and nowhere else. Times are in ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import fockspace as fs
from .device import DeviceConfig, bus_dephasing_rate, pure_dephasing_rate
from .errors import InvalidDimensionError

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class PumpSchedule:
    """Drive settings for one module's conversion pump.

    Rates are in MHz (ordinary frequency), durations in ns, phase in radians.
    """

    g_bs: float
    delta: float = 0.0
    ramp: float = 50.0
    hold: float = 0.0
    stark_coeff: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.g_bs < 0:
            raise ValueError(f"g_bs must be >= 0, got {self.g_bs}")
        if self.ramp < 0 or self.hold < 0:
            raise ValueError(f"ramp and hold must be >= 0 (ramp={self.ramp}, hold={self.hold})")

    @property
    def duration(self):
        return 2 * self.ramp + self.hold

    @property
    def envelope(self):
        return RaisedCosineEnvelope(self.ramp, self.hold)


@dataclass(frozen=True)
class RaisedCosineEnvelope:
    """Flat-top pulse with (1 - cos(pi t / ramp)) / 2 edges, starting at t = 0."""

    ramp: float
    hold: float

    @property
    def duration(self):
        return 2 * self.ramp + self.hold

    @property
    def area(self):
        return self.ramp + self.hold

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        total = self.duration
        out = np.where((t > 0) & (t < total), 1.0, 0.0)
        if self.ramp > 0:
            rise = (t > 0) & (t < self.ramp)
            fall = (t > self.ramp + self.hold) & (t < total)
            out = np.where(rise, 0.5 * (1 - np.cos(np.pi * t / self.ramp)), out)
            out = np.where(fall, 0.5 * (1 - np.cos(np.pi * (total - t) / self.ramp)), out)
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class StarkShape:
    """Detuning drift eps(t)^2 - 1: zero on the flat top, -1 with the pump off."""

    envelope: RaisedCosineEnvelope

    def __call__(self, t):
        return np.asarray(self.envelope(t)) ** 2 - 1.0


@dataclass(frozen=True, eq=False)
class TimeDependentHamiltonian:
    """H(t) = static + sum_k f_k(t) H_k, operators in rad/us, t in ns."""

    static: fs.Operator
    drive_terms: tuple[tuple[fs.Operator, Callable], ...] = ()
    total_duration: float = 0.0

    @property
    def dims(self):
        return self.static.dims

    def at(self, t):
        data = self.static.data.copy()
        for op, f in self.drive_terms:
            data = data + float(f(t)) * op.data
        return fs.Operator(self.dims, data)

    @property
    def is_static(self):
        return not self.drive_terms


@dataclass(frozen=True)
class ErrorModel:
    """Which error families a simulation retains."""

    cavity_decoherence: bool = True
    line_loss: bool = True
    bs_dephasing: bool = True
    ac_stark: bool = True

    @classmethod
    def none(cls):
        return cls(False, False, False, False)

    @classmethod
    def only(cls, name):
        if name not in {f for f in cls.__dataclass_fields__}:
            raise ValueError(f"unknown error family {name!r}")
        return cls(**{f: f == name for f in cls.__dataclass_fields__})

    @property
    def any_dissipation(self):
        return self.cavity_decoherence or self.line_loss or self.bs_dephasing


def mode_operators(dims):
    """Annihilation operators (a1, a2, b) lifted onto the product space."""
    dims = tuple(dims)
    if len(dims) != 3:
        raise InvalidDimensionError(f"the transfer model has three modes, got dims {dims}")
    return tuple(fs.embed(fs.annihilation(d), k, dims) for k, d in enumerate(dims))


def total_excitation(dims):
    return sum((a.dag() @ a for a in mode_operators(dims)), start=fs.Operator(tuple(dims), np.zeros((math.prod(dims),) * 2)))


def build_transfer_hamiltonian(config: DeviceConfig, pumps, dims=(2, 2, 3), include_kerr=False,
                               include_stark=True):
    """Assemble the beamsplitter Hamiltonian in the frame of the drives.

    Per module j: 2 pi g_j eps_j(t) (e^{i phi_j} a_j b^dag + h.c.) plus the
    detuning 2 pi Delta_j(t) a_j^dag a_j, where with ``include_stark`` the
    detuning drifts as Delta_j + stark_j (eps_j(t)^2 - 1). ``include_kerr`` adds
    2 pi (K_j / 2) a_j^dag a_j^dag a_j a_j using each cavity's ``self_kerr``.
    """
    pumps = tuple(pumps)
    if len(pumps) != 2:
        raise ValueError("need one PumpSchedule per module")
    dims = tuple(int(d) for d in dims)
    a1, a2, b = mode_operators(dims)
    side = math.prod(dims)
    static = fs.Operator(dims, np.zeros((side, side)))
    terms = []
    for a, pump, mode in ((a1, pumps[0], config.module1), (a2, pumps[1], config.module2)):
        n = a.dag() @ a
        if pump.delta:
            static = static + (TWO_PI * pump.delta) * n
        if include_kerr and mode.self_kerr:
            static = static + (TWO_PI * mode.self_kerr / 2) * (a.dag() @ a.dag() @ a @ a)
        if pump.g_bs > 0:
            phase = np.exp(1j * pump.phase)
            bs = (TWO_PI * pump.g_bs) * (phase * (a @ b.dag()) + np.conj(phase) * (a.dag() @ b))
            terms.append((bs, pump.envelope))
            if include_stark and pump.stark_coeff:
                terms.append(((TWO_PI * pump.stark_coeff) * n, StarkShape(pump.envelope)))
    duration = max(p.duration for p in pumps)
    return TimeDependentHamiltonian(static, tuple(terms), duration)


def main_frame_hamiltonian(g, bus_detuning, dims=(2, 2, 2)):
    """Static H = 2 pi g (a1^dag b + a2^dag b + h.c.) + 2 pi Delta_b b^dag b.

    This is the bus-detuned frame; it equals the cavity-detuned frame with
    Delta_1 = Delta_2 = Delta_c after the map Delta_b = -Delta_c and a shift by
    Delta_c times the total excitation number.
    """
    a1, a2, b = mode_operators(dims)
    h = (TWO_PI * g) * (a1.dag() @ b + a1 @ b.dag() + a2.dag() @ b + a2 @ b.dag())
    return h + (TWO_PI * bus_detuning) * (b.dag() @ b)


def bus_frame_detuning(delta_c):
    """Bus detuning equivalent to a common cavity detuning ``delta_c``."""
    return -delta_c


def build_collapse_operators(config: DeviceConfig, dims=(2, 2, 3), errors: ErrorModel | None = None):
    """Lindblad operators in sqrt(1/us) for the enabled error families.

    Each mode gets sqrt((1+n_th)/T1) a, sqrt(n_th/T1) a^dag and
    sqrt(2/T_phi) a^dag a; zero-rate channels are omitted. The bus dephasing
    uses the lumped rate from the couplings section when it is set.
    """
    errors = ErrorModel() if errors is None else errors
    ops = mode_operators(dims)
    out = []

    def add(rate, op):
        if rate > 0:
            out.append(math.sqrt(rate) * op)

    if errors.cavity_decoherence:
        for a, mode in zip(ops[:2], config.modes[:2]):
            gamma = 1.0 / mode.t1
            add((1 + mode.n_th) * gamma, a)
            add(mode.n_th * gamma, a.dag())
            add(2 * pure_dephasing_rate(mode), a.dag() @ a)
    b = ops[2]
    if errors.line_loss:
        gamma = 1.0 / config.bus.t1
        add((1 + config.bus.n_th) * gamma, b)
        add(config.bus.n_th * gamma, b.dag())
    if errors.bs_dephasing:
        add(2 * bus_dephasing_rate(config), b.dag() @ b)
    return out


def effective_coupling_three_wave(g3, ga, gb, delta_a, delta_b, xi):
    """Pumped three-wave-mixing beamsplitter rate 6 g3 (ga/Da)(gb/Db)|xi| (MHz)."""
    if delta_a == 0 or delta_b == 0:
        raise ZeroDivisionError("coupler detunings must be non-zero")
    return 6 * g3 * (ga / delta_a) * (gb / delta_b) * abs(xi)


def effective_coupling_four_wave(e_c, ga, gb, delta_a, delta_b, xi):
    """Four-wave-mixing beamsplitter rate E_c (ga/Da)(gb/Db)|xi|^2 (MHz)."""
    if delta_a == 0 or delta_b == 0:
        raise ZeroDivisionError("coupler detunings must be non-zero")
    return e_c * (ga / delta_a) * (gb / delta_b) * abs(xi) ** 2
