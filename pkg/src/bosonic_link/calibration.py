"""Calibration fits: SNAIL flux spectrum, avoided crossings, conversion
chevrons, and Bayes inversion of transmon readout errors.

Flux is given as the fraction phi_e / phi_0 and converted to the phase
2 pi phi_e / phi_0 internally. Frequencies are GHz unless marked MHz.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, least_squares

from .device import ReadoutParams, SnailParams
from .errors import FitError, NumericalError

# ---- data containers -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectrumData:
    """Flux points with one frequency branch (``freq``) or two (``freq`` and ``freq2``)."""

    flux: np.ndarray
    freq: np.ndarray
    freq2: np.ndarray | None = None

    def __post_init__(self):
        flux = np.asarray(self.flux, dtype=float)
        freq = np.asarray(self.freq, dtype=float)
        if flux.shape != freq.shape or flux.ndim != 1:
            raise ValueError("flux and freq must be 1-D arrays of equal length")
        if np.any(flux < 0) or np.any(flux > 1):
            raise ValueError("flux fractions must lie in [0, 1]")
        object.__setattr__(self, "flux", flux)
        object.__setattr__(self, "freq", freq)
        if self.freq2 is not None:
            f2 = np.asarray(self.freq2, dtype=float)
            if f2.shape != freq.shape:
                raise ValueError("both branches need one value per flux point")
            object.__setattr__(self, "freq2", f2)

    @classmethod
    def from_csv(cls, path):
        """Read columns ``flux,freq[,freq2]`` (header row required)."""
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or "flux" not in rows[0] or "freq" not in rows[0]:
            raise ValueError(f"{path}: expected a header with flux,freq[,freq2]")
        flux = [float(r["flux"]) for r in rows]
        freq = [float(r["freq"]) for r in rows]
        freq2 = [float(r["freq2"]) for r in rows] if "freq2" in rows[0] else None
        return cls(flux, freq, freq2)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["flux", "freq"] + (["freq2"] if self.freq2 is not None else []))
            for i in range(self.flux.size):
                row = [self.flux[i], self.freq[i]] + ([self.freq2[i]] if self.freq2 is not None else [])
                w.writerow([f"{v:.12g}" for v in row])


@dataclass(frozen=True, eq=False)
class FitReport:
    params: dict
    covariance: np.ndarray
    residual_rms: float
    names: tuple[str, ...]

    @property
    def stderr(self):
        return dict(zip(self.names, np.sqrt(np.clip(np.diag(self.covariance), 0, None))))


# ---- shared least-squares driver ------------------------------------------------


def _central_jacobian(fun, rel_step=1e-6):
    def jac(x):
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(x.size):
            h = rel_step * max(abs(x[i]), 1e-3)
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            cols.append((fun(xp) - fun(xm)) / (2 * h))
        return np.stack(cols, axis=1)

    return jac


def _lm_fit(fun, x0, lower, upper, names):
    """Levenberg-Marquardt with central-difference Jacobian; bounds are checked
    by projecting the start into the box and rejecting solutions that leave it."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    span = np.where(np.isfinite(upper - lower), upper - lower, 1.0)
    x0 = np.clip(np.asarray(x0, float), lower + 1e-9 * span, upper - 1e-9 * span)
    res = least_squares(fun, x0, jac=_central_jacobian(fun), method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14,
                        max_nfev=20000)
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError(f"fit did not converge: {res.message}")
    bad = [n for n, v, lo, hi in zip(names, res.x, lower, upper) if not lo < v < hi]
    if bad:
        raise FitError(f"fitted parameter(s) {bad} left their allowed range")
    m, n = res.fun.size, res.x.size
    dof = max(m - n, 1)
    s2 = float(res.fun @ res.fun) / dof
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((n, n), np.inf)
    return res, cov, float(np.sqrt(np.mean(res.fun**2)))


# ---- SNAIL model ---------------------------------------------------------------------


def _potential_slope(phi, beta, phi_e):
    return beta * np.sin(phi - phi_e) + np.sin(phi / 3)


def _newton_polish(phi, beta, phi_e, steps=5):
    for _ in range(steps):
        f = _potential_slope(phi, beta, phi_e)
        df = beta * math.cos(phi - phi_e) + math.cos(phi / 3) / 3
        if df == 0:
            break
        phi -= f / df
        if abs(f) < 1e-15:
            break
    return phi


def _single_well_root(beta, phi_e):
    # the root has |sin(phi/3)| <= beta, so it lies within +-3 asin(beta)
    half = 3 * math.asin(min(beta, 1.0))
    lo, hi = -half, half
    f_lo, f_hi = _potential_slope(lo, beta, phi_e), _potential_slope(hi, beta, phi_e)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if f_lo * f_hi > 0:
        raise NumericalError(f"no bracketed potential minimum for beta={beta}, phi_e={phi_e}")
    return brentq(_potential_slope, lo, hi, args=(beta, phi_e), xtol=1e-14)


def solve_phi_min(beta, phi_e):
    """Phase phi_m at the potential minimum: root of beta sin(phi - phi_e) + sin(phi/3).

    For beta < 1/3 the root is unique and bracketed directly; otherwise the
    branch starting at phi = 0 for phi_e = 0 is followed continuously.
    """
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if beta < 1 / 3:
        return float(_newton_polish(_single_well_root(beta, phi_e), beta, phi_e))
    phi = 0.0
    steps = max(1, int(math.ceil(abs(phi_e) / 0.01)))
    for k in range(1, steps + 1):
        pe = phi_e * k / steps
        prev, phi = phi, _newton_polish(phi, beta, pe, steps=50)
        # past the fold the followed minimum vanishes and Newton jumps to another root
        lost = abs(phi - prev) > 0.5 or _c2(beta, phi, pe) <= 0
        if lost or abs(_potential_slope(phi, beta, pe)) > 1e-10:
            raise NumericalError(f"potential minimum lost at phi_e={pe:.4f} for beta={beta}: multi-well regime")
    if abs(_potential_slope(phi, beta, phi_e)) > 1e-10:
        raise NumericalError(f"root continuation failed for beta={beta}, phi_e={phi_e}")
    return float(phi)


def _c2(beta, phi_m, phi_e):
    return beta * math.cos(phi_m - phi_e) + math.cos(phi_m / 3) / 3


def snail_frequency(params: SnailParams, phi_e):
    """Small-oscillation SNAIL frequency (GHz) at external phase ``phi_e`` (rad).

    omega_s = sqrt(8 E_C p E_L) with c_2 = beta cos(phi_m - phi_e) + cos(phi_m/3)/3
    and participation p = c_2 E_J / (E_L + c_2 E_J), i.e. the junction
    inductance c_2 E_J in series with the linear inductance E_L. E_C is in MHz.
    """
    phi_m = solve_phi_min(params.beta, phi_e)
    c2 = _c2(params.beta, phi_m, phi_e)
    if c2 <= 0:
        raise NumericalError(f"c2 = {c2:.3g} <= 0: the SNAIL is outside the single-well regime")
    p = c2 * params.e_j / (params.e_l + c2 * params.e_j)
    return math.sqrt(8 * p * params.e_l * params.e_c / 1000.0)


def snail_spectrum(params: SnailParams, flux):
    """snail_frequency over flux fractions phi_e / phi_0."""
    return np.array([snail_frequency(params, 2 * math.pi * f) for f in np.ravel(flux)])


_SNAIL_FIELDS = ("beta", "e_j", "e_l", "e_c")
_SNAIL_BOUNDS = {"beta": (0.0, 1.0), "e_j": (0.0, np.inf), "e_l": (0.0, np.inf), "e_c": (0.0, np.inf)}


def fit_snail_spectrum(data: SpectrumData, init: SnailParams, fixed=("e_c",)):
    """Least-squares fit of the SNAIL spectrum; returns (SnailParams, FitReport).

    The spectrum depends on E_C and E_L only through their product, so by
    default E_C is held at ``init.e_c`` and (beta, E_J, E_L) are fitted.
    """
    if data.flux.size < 8:
        raise ValueError("need at least 8 spectrum points")
    if np.ptp(data.flux) < 0.5 - 1e-12:
        raise ValueError("data must span at least half a flux quantum")
    free = [f for f in _SNAIL_FIELDS if f not in fixed]
    base = dataclasses.asdict(init)

    def build(x):
        vals = dict(base)
        vals.update(zip(free, x))
        return vals

    def resid(x):
        v = build(x)
        if not (0 < v["beta"] < 1) or min(v["e_j"], v["e_l"], v["e_c"]) <= 0:
            return np.full(data.flux.size, 1e3)
        try:
            return snail_spectrum(SnailParams(**v), data.flux) - data.freq
        except NumericalError:
            return np.full(data.flux.size, 1e3)

    lower = [_SNAIL_BOUNDS[f][0] for f in free]
    upper = [_SNAIL_BOUNDS[f][1] for f in free]
    res, cov, rms = _lm_fit(resid, [base[f] for f in free], lower, upper, free)
    fitted = SnailParams(**build(res.x))
    return fitted, FitReport(dict(zip(free, res.x)), cov, rms, tuple(free))


# ---- avoided crossing ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnticrossingFit:
    g: float  # MHz
    omega0: float  # GHz
    bare: np.ndarray  # GHz, one per flux point
    residual_rms: float

    @property
    def g_ghz(self):
        return self.g / 1000.0


def fit_anticrossing(branches: SpectrumData, init=(30.0, None)):
    """Coupling g (MHz) and bare mode frequency omega0 (GHz) from two branches.

    Both branches must map to one bare SNAIL frequency,
    omega1 - g^2/(omega1 - omega0) = omega2 - g^2/(omega2 - omega0); for
    omega1 != omega2 this is (omega1 - omega0)(omega2 - omega0) = -g^2. Each
    constraint residual is divided by its gradient norm with respect to the
    two measured branches (a first-order orthogonal-distance fit), so points
    far from the crossing, which barely constrain g, do not dominate.
    """
    if branches.freq2 is None:
        raise ValueError("anti-crossing fit needs two branches")
    w1, w2 = branches.freq, branches.freq2
    g0, om0 = init
    om0 = float(np.median(np.concatenate([w1, w2]))) if om0 is None else float(om0)
    lo, hi = np.minimum(w1, w2), np.maximum(w1, w2)
    if np.all(lo > om0) or np.all(hi < om0):
        raise FitError("branches lie on the same side of the coupled mode frequency")

    def resid(x):
        gg, o = x
        grad = np.sqrt((w1 - o) ** 2 + (w2 - o) ** 2)
        return ((w1 - o) * (w2 - o) + gg**2) / np.maximum(grad, 1e-12)

    res = least_squares(resid, [g0 / 1000.0, om0], jac=_central_jacobian(resid), method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if res.status <= 0:
        raise FitError(f"anti-crossing fit failed: {res.message}")
    g, om = abs(res.x[0]), float(res.x[1])
    if np.all(lo > om) or np.all(hi < om):
        raise FitError("branches do not straddle the fitted mode frequency")
    # bare frequency from the branch farther from omega0 (better conditioned)
    far = np.where(np.abs(w1 - om) >= np.abs(w2 - om), w1, w2)
    bare = far - g**2 / (far - om)
    return AnticrossingFit(g * 1000.0, om, bare, float(np.sqrt(np.mean(res.fun**2))))


def avoided_crossing_branches(bare, omega0, g_mhz):
    """Exact two-level branches (upper, lower) for bare frequencies ``bare`` (GHz)."""
    bare = np.asarray(bare, dtype=float)
    g = g_mhz / 1000.0
    mid = (bare + omega0) / 2
    split = np.sqrt(((bare - omega0) / 2) ** 2 + g**2)
    return mid + split, mid - split


# ---- chevron ------------------------------------------------------------------------------


def chevron_model(g, detuning, t_ns):
    """Two-mode conversion population (g^2 / W^2) sin^2(2 pi W t), W = sqrt(g^2 + (delta/2)^2)."""
    d = np.asarray(detuning, dtype=float)[:, None]
    t = np.asarray(t_ns, dtype=float)[None, :] / 1000.0
    w = np.sqrt(g**2 + (d / 2) ** 2)
    return np.where(w > 0, g**2 / np.where(w > 0, w, 1) ** 2, 0.0) * np.sin(2 * np.pi * w * t) ** 2


@dataclass(frozen=True, eq=False)
class ChevronFit:
    g: float  # MHz
    offset: float  # MHz
    residual_rms: float
    contrast: np.ndarray


def fit_chevron(populations, detunings, times, g_init=0.5, min_contrast=0.2):
    """Coupling and resonance offset from a detuning x time population map.

    Rows of ``populations`` follow ``detunings`` (MHz), columns ``times`` (ns).
    The max-contrast row seeds the resonance; (g, offset) are then fitted to
    the whole map.
    """
    pops = np.asarray(populations, dtype=float)
    det = np.asarray(detunings, dtype=float)
    t = np.asarray(times, dtype=float)
    if pops.shape != (det.size, t.size):
        raise ValueError(f"populations shape {pops.shape} does not match ({det.size}, {t.size})")
    contrast = pops.max(axis=1) - pops.min(axis=1)
    if contrast.max() < min_contrast:
        raise FitError(f"maximum contrast {contrast.max():.3f} is below {min_contrast}")
    i = int(np.argmax(contrast))

    def resid(x):
        return (chevron_model(x[0], det - x[1], t) - pops).ravel()

    # seed g from the resonant row by a 1-D scan, since sin^2 fits are multimodal in g
    gs = np.linspace(0.2 * g_init, 3 * g_init, 400)
    row_cost = [np.sum((chevron_model(g, [0.0], t)[0] - pops[i]) ** 2) for g in gs]
    g_seed = gs[int(np.argmin(row_cost))]
    res = least_squares(resid, [g_seed, det[i]], jac=_central_jacobian(resid), method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
    if res.status <= 0:
        raise FitError(f"chevron fit failed: {res.message}")
    return ChevronFit(abs(float(res.x[0])), float(res.x[1]), float(np.sqrt(np.mean(res.fun**2))), contrast)


# ---- readout correction ----------------------------------------------------------------------


def confusion_matrix(readout: ReadoutParams):
    """F = [[F_g, 1 - F_e], [1 - F_g, F_e]] acting on (P_g, P_e)."""
    return np.array([[readout.f_g, 1 - readout.f_e], [1 - readout.f_g, readout.f_e]])


@dataclass(frozen=True)
class BayesCorrection:
    probabilities: tuple[float, float]
    clipped: float


def bayes_correct(p_measured, readout: ReadoutParams):
    """Invert the readout confusion matrix; clip to [0, 1] and renormalize.

    ``clipped`` is the total probability mass removed by clipping.
    """
    f = confusion_matrix(readout)
    if abs(np.linalg.det(f)) < 1e-12:
        raise NumericalError("readout confusion matrix is singular")
    p = np.linalg.solve(f, np.asarray(p_measured, dtype=float))
    clipped_p = np.clip(p, 0.0, 1.0)
    clipped = float(np.sum(np.abs(p - clipped_p)))
    total = clipped_p.sum()
    if total <= 0:
        raise NumericalError("corrected probabilities vanish")
    if clipped > 0:
        clipped_p = clipped_p / total
    return BayesCorrection((float(clipped_p[0]), float(clipped_p[1])), clipped)
