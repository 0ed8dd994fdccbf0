"""von Mises kernel density of candidate DOAs and the search for its mode

Angle sets may be a single set (1-D) or a batch of sets (2-D, one set per
row). Every row is evaluated independently of the others, so a set gets the
same mode whether it is solved alone or inside a batch.
"""
import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import i0e, logsumexp

from .utils import DoaError, KernelCache, TWO_PI, wrap_angle

logger = logging.getLogger(__name__)

MAX_KAPPA = 1e4
ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 40
X_TOLERANCE = 1e-13
PEAK_CANDIDATES = 8


class KdeError(DoaError):
    """Invalid density parameters or angle sets"""
    default_error_type = "invalid_params"


class NoConvergence(KdeError):
    """The optimizer stopped before meeting its gradient tolerance

    ``best`` is the best iterate found; callers may accept it.
    """
    default_error_type = "no_convergence"

    def __init__(self, message: str, best: float, phi0: float, details=None):
        super().__init__(message, details=details)
        self.best = best
        self.phi0 = phi0


@dataclass(frozen=True)
class KdeParams:
    """Kernel concentration, histogram resolution and optimizer limits"""
    kappa: float = 10.0
    bins: int = 512
    ncg_tolerance: float = 1e-10
    max_iterations: int = 100
    refine: bool = True

    def __post_init__(self):
        if not 0 < self.kappa <= MAX_KAPPA:
            raise KdeError(f"kappa must be in (0, {MAX_KAPPA:g}], got {self.kappa}",
                           details={"kappa": self.kappa})
        bins = int(self.bins)
        if bins != self.bins or bins < 8 or bins & (bins - 1):
            raise KdeError(f"bins must be a power of two >= 8, got {self.bins}",
                           details={"bins": self.bins})
        if not self.ncg_tolerance > 0:
            raise KdeError("ncg_tolerance must be positive",
                           details={"ncg_tolerance": self.ncg_tolerance})
        if self.max_iterations < 1:
            raise KdeError("max_iterations must be at least 1",
                           details={"max_iterations": self.max_iterations})

    @property
    def bin_width(self) -> float:
        return TWO_PI / self.bins


@dataclass(frozen=True, eq=False)
class AngleSet:
    """Non-empty set of DOAs in [0, 2π), uniformly weighted"""
    angles: np.ndarray

    def __post_init__(self):
        angles = wrap_angle(np.asarray(self.angles, dtype=float).ravel())
        if angles.size == 0:
            raise KdeError("An angle set needs at least one angle", error_type="empty_angle_set")
        angles.flags.writeable = False
        object.__setattr__(self, "angles", angles)

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self), 1.0 / len(self))

    def rotated(self, theta: float) -> "AngleSet":
        return AngleSet(self.angles + theta)

    def __len__(self) -> int:
        return self.angles.size


@dataclass(frozen=True, eq=False)
class ModeBatch:
    """Per-row result of find_modes

    ``phi0`` is the start whose refinement won; ``iterations`` sums over all
    refined starts of the row.
    """
    phi_hat: np.ndarray
    phi0: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray

    @property
    def not_converged(self) -> int:
        return int(np.count_nonzero(~self.converged))


def _raw(angles) -> np.ndarray:
    if isinstance(angles, AngleSet):
        return angles.angles
    return np.asarray(angles, dtype=float)


def _scalar_or_array(value):
    return float(value) if np.ndim(value) == 0 else value


def _offsets(phi, angles) -> np.ndarray:
    return np.asarray(phi, dtype=float)[..., np.newaxis] - _raw(angles)


def _check_kappa(kappa: float):
    if not kappa > 0:
        raise KdeError(f"kappa must be positive, got {kappa}", details={"kappa": kappa})


def von_mises_kernel(phi, mu, kappa: float):
    """Normalized von Mises density exp(κ cos(φ - μ)) / (2π I0(κ))"""
    _check_kappa(kappa)
    # i0e(κ) = I0(κ)·exp(-κ), so the exp(κ) factors cancel without overflow
    density = np.exp(kappa * (np.cos(np.subtract(phi, mu)) - 1.0)) / (TWO_PI * i0e(kappa))
    return _scalar_or_array(density)


def kde_density(phi, angles, kappa: float):
    """Normalized mixture (1/N) Σ von_mises_kernel(φ | φ_n, κ)"""
    _check_kappa(kappa)
    offsets = _offsets(phi, angles)
    terms = np.exp(kappa * (np.cos(offsets) - 1.0)) / (TWO_PI * i0e(kappa))
    return _scalar_or_array(terms.mean(axis=-1))


def kde_value(phi, angles, kappa: float):
    """Unnormalized density g(φ) = Σ exp(κ cos(φ - φ_n))

    Finite only while exp(κ) is, roughly κ < 709 in float64; above that use
    kde_log_value or kde_density.
    """
    return _scalar_or_array(np.exp(kappa * np.cos(_offsets(phi, angles))).sum(axis=-1))


def kde_log_value(phi, angles, kappa: float):
    """log g(φ), finite for every κ"""
    _check_kappa(kappa)
    return _scalar_or_array(logsumexp(kappa * np.cos(_offsets(phi, angles)), axis=-1))


def kde_grad(phi, angles, kappa: float):
    """g′(φ) = -κ Σ sin(φ - φ_n) exp(κ cos(φ - φ_n)), same κ range as kde_value"""
    offsets = _offsets(phi, angles)
    return _scalar_or_array(
        -kappa * (np.sin(offsets) * np.exp(kappa * np.cos(offsets))).sum(axis=-1))


def kde_hess(phi, angles, kappa: float):
    """g″(φ) = κ Σ exp(κ cos(φ - φ_n)) (κ sin²(φ - φ_n) - cos(φ - φ_n))

    Same κ range as kde_value.
    """
    offsets = _offsets(phi, angles)
    s, c = np.sin(offsets), np.cos(offsets)
    return _scalar_or_array(kappa * (np.exp(kappa * c) * (kappa * s * s - c)).sum(axis=-1))


def _objective(phi: np.ndarray, angles: np.ndarray,
               kappa: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Negated g/exp(κ) with its first and second derivatives, one value per row"""
    offsets = phi[:, np.newaxis] - angles
    s, c = np.sin(offsets), np.cos(offsets)
    e = np.exp(kappa * (c - 1.0))
    f = -e.sum(axis=1)
    g = kappa * (s * e).sum(axis=1)
    h = -kappa * (e * (kappa * s * s - c)).sum(axis=1)
    return f, g, h


def _scaled_value(phi: np.ndarray, angles: np.ndarray, kappa: float) -> np.ndarray:
    return np.exp(kappa * (np.cos(phi[:, np.newaxis] - angles) - 1.0)).sum(axis=1)


_spectra = KernelCache()


def kernel_spectrum(kappa: float, bins: int) -> np.ndarray:
    """rfft of the kernel sampled at bin offsets, computed once per (κ, bins)"""
    def compute():
        offsets = TWO_PI * np.arange(bins) / bins
        spectrum = np.fft.rfft(np.exp(kappa * (np.cos(offsets) - 1.0)))
        spectrum.flags.writeable = False
        return spectrum

    return _spectra.get_or_compute((float(kappa), int(bins)), compute)


def bin_index(angles, bins: int) -> np.ndarray:
    """Half-open bin of each angle: an angle on an edge goes to the higher bin"""
    width = TWO_PI / bins
    index = np.floor(wrap_angle(np.atleast_1d(_raw(angles))) / width).astype(np.int64)
    return np.clip(index, 0, bins - 1)


def smoothed_histogram(batch: np.ndarray, params: KdeParams) -> np.ndarray:
    """Histogram of every row circularly convolved with the kernel through the FFT"""
    rows, bins = batch.shape[0], params.bins
    index = bin_index(batch, bins).reshape(batch.shape)
    flat = (np.arange(rows)[:, np.newaxis] * bins + index).ravel()
    counts = np.bincount(flat, minlength=rows * bins).reshape(rows, bins).astype(float)
    return np.fft.irfft(np.fft.rfft(counts, axis=1) * kernel_spectrum(params.kappa, bins),
                        n=bins, axis=1)


def _peak_bins(smoothed: np.ndarray, params: KdeParams) -> np.ndarray:
    """Up to PEAK_CANDIDATES start bins per row, highest bin first

    The rest are the tallest local maxima that sit within the binning error
    of the highest one; short rows are padded with the highest bin.
    """
    rows = smoothed.shape[0]
    top = np.argmax(smoothed, axis=1)
    peaks = (smoothed >= np.roll(smoothed, 1, axis=1)) & (smoothed > np.roll(smoothed, -1, axis=1))

    # binning moves each kernel by at most half a bin: κw/2 in the exponent, both ways
    w = params.bin_width
    slack = math.exp(-(params.kappa * w + params.kappa * w * w / 8.0))
    peaks &= smoothed >= slack * smoothed[np.arange(rows), top][:, np.newaxis]

    score = np.where(peaks, smoothed, -np.inf)
    score[np.arange(rows), top] = -np.inf
    order = np.argsort(-score, axis=1, kind="stable")[:, :PEAK_CANDIDATES - 1]
    found = np.isfinite(np.take_along_axis(score, order, axis=1))
    rest = np.where(found, order, top[:, np.newaxis])
    return np.concatenate([top[:, np.newaxis], rest], axis=1)


def _climb(index: np.ndarray, angles: np.ndarray, params: KdeParams):
    """Walk every start bin uphill on the exact density until no neighbour is higher

    Moves only on a strict increase, so a start that is already a local
    maximum of the bin-centre values stays put.
    """
    bins, width, kappa = params.bins, params.bin_width, params.kappa
    index = index.copy()
    value = _scaled_value((index + 0.5) * width, angles, kappa)

    active = np.arange(index.size)
    for _ in range(bins):
        if active.size == 0:
            break
        sub = angles[active]
        left = (index[active] - 1) % bins
        right = (index[active] + 1) % bins
        v_left = _scaled_value((left + 0.5) * width, sub, kappa)
        v_right = _scaled_value((right + 0.5) * width, sub, kappa)

        go_right = v_right > v_left
        target = np.where(go_right, right, left)
        v_target = np.where(go_right, v_right, v_left)
        up = v_target > value[active]

        active = active[up]
        index[active], value[active] = target[up], v_target[up]
    return index, value


def _start_bins(batch: np.ndarray, params: KdeParams):
    """Climbed candidate bins and their exact scaled density, (rows, PEAK_CANDIDATES) each"""
    rows = batch.shape[0]
    starts = _peak_bins(smoothed_histogram(batch, params), params)
    k = starts.shape[1]
    index, value = _climb(starts.ravel(), np.repeat(batch, k, axis=0), params)
    return index.reshape(rows, k), value.reshape(rows, k)


def histogram_init(angles, params: KdeParams):
    """Starting point for the mode search

    Histograms each set into ``params.bins`` bins over [0, 2π), circularly
    convolves the histogram with the kernel through the FFT, climbs from its
    tallest peaks on the exact density over bin centres and returns the
    highest centre reached (a float for one set, an array for a batch).
    """
    raw = _raw(angles)
    single = raw.ndim == 1
    batch = np.atleast_2d(wrap_angle(raw))
    index, value = _start_bins(batch, params)
    best = index[np.arange(batch.shape[0]), np.argmax(value, axis=1)]
    phi0 = (best + 0.5) * params.bin_width
    return float(phi0[0]) if single else phi0


def _backtrack(phi, f, g, p, alpha, angles, kappa):
    """Armijo backtracking along p for every row; returns the accepted points and a mask"""
    alpha = alpha.copy()
    slope = g * p
    flat = 4.0 * np.finfo(float).eps * np.maximum(np.abs(f), 1.0)
    new_phi, new_f, new_g = phi.copy(), f.copy(), g.copy()
    new_h = np.zeros_like(f)
    accepted = np.zeros(phi.shape, dtype=bool)

    pending = np.arange(phi.size)
    for _ in range(MAX_BACKTRACKS):
        if pending.size == 0:
            break
        trial = phi[pending] + alpha[pending] * p[pending]
        tf, tg, th = _objective(trial, angles[pending], kappa)
        sufficient = tf <= f[pending] + ARMIJO_C1 * alpha[pending] * slope[pending]
        # at the optimum f is flat to rounding; accept steps that still shrink |g|
        level = (tf <= f[pending] + flat[pending]) & (np.abs(tg) < np.abs(g[pending]))
        ok = sufficient | level

        done = pending[ok]
        new_phi[done], new_f[done], new_g[done], new_h[done] = trial[ok], tf[ok], tg[ok], th[ok]
        accepted[done] = True

        pending = pending[~ok]
        alpha[pending] *= 0.5

    return new_phi, new_f, new_g, new_h, accepted


def _refine(phi0: np.ndarray, batch: np.ndarray, params: KdeParams):
    """Polak-Ribière+ ascent of every row from phi0; returns (phi, f, converged, iterations)"""
    kappa = params.kappa
    tol = params.ncg_tolerance * batch.shape[1] * kappa
    step_cap = min(math.pi / 4.0, 4.0 * params.bin_width)
    iterations = np.zeros(phi0.size, dtype=np.int64)

    phi = phi0.copy()
    f, g, h = _objective(phi, batch, kappa)
    f0 = f.copy()
    p = -g
    converged = np.abs(g) <= tol
    active = ~converged

    for _ in range(params.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        phi_r, f_r, g_r, h_r = phi[idx], f[idx], g[idx], h[idx]

        # restart along steepest descent whenever p stops being a descent direction
        p_r = np.where(p[idx] * g_r < 0.0, p[idx], -g_r)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = np.where(h_r > 0.0, -(g_r * p_r) / (h_r * p_r * p_r), np.inf)
        alpha = np.minimum(newton, step_cap / np.abs(p_r))

        new_phi, new_f, new_g, new_h, ok = _backtrack(phi_r, f_r, g_r, p_r, alpha,
                                                      batch[idx], kappa)
        iterations[idx] += 1

        beta = np.maximum(0.0, new_g * (new_g - g_r) / (g_r * g_r))
        step = np.abs(new_phi - phi_r)

        moved = idx[ok]
        phi[moved], f[moved], g[moved], h[moved] = new_phi[ok], new_f[ok], new_g[ok], new_h[ok]
        p[moved] = (-new_g + beta * p_r)[ok]

        done = ok & ((np.abs(new_g) <= tol) | (step <= X_TOLERANCE))
        with np.errstate(divide="ignore", invalid="ignore"):
            at_optimum = (h_r > 0.0) & (np.abs(g_r / h_r) <= 1e-10)
        stalled = ~ok
        converged[idx] = done | (stalled & at_optimum)
        active[idx] = ~(done | stalled)

    # refinement never ends below its starting value
    worse = f > f0
    phi[worse], f[worse] = phi0[worse], f0[worse]
    return wrap_angle(phi), f, converged, iterations


def _duplicates(index: np.ndarray) -> np.ndarray:
    dup = np.zeros(index.shape, dtype=bool)
    for k in range(1, index.shape[1]):
        dup[:, k] = (index[:, :k] == index[:, k:k + 1]).any(axis=1)
    return dup


def find_modes(angles, params: KdeParams) -> ModeBatch:
    """Mode of the density of every row of a batch of angle sets

    Candidate starts come from histogram_init's climbed peaks. Since
    (log g)″ ≥ -κ, a local maximum within one bin of a centre c is at most
    g(c)·exp(κw²/2); starts that cannot reach the best centre's value are
    dropped. Unless ``params.refine`` is off, every remaining start is refined
    by Polak-Ribière+ nonlinear conjugate gradient on -g with restarts, a
    Newton-sized first trial step where the curvature allows it, and Armijo
    backtracking, and the highest result is kept. A refinement converges when
    |g′| < ncg_tolerance·N·κ·exp(κ) or its step falls below 1e-13 rad.
    """
    batch = np.atleast_2d(wrap_angle(_raw(angles)))
    rows = batch.shape[0]
    width = params.bin_width
    index, value = _start_bins(batch, params)
    k = index.shape[1]
    row_ids = np.arange(rows)

    if not params.refine:
        phi0 = (index[row_ids, np.argmax(value, axis=1)] + 0.5) * width
        return ModeBatch(phi0.copy(), phi0, np.ones(rows, dtype=bool),
                         np.zeros(rows, dtype=np.int64))

    with np.errstate(divide="ignore"):
        log_value = np.log(value)
    reach = log_value + 0.5 * params.kappa * width * width
    keep = (reach >= log_value.max(axis=1, keepdims=True)) & ~_duplicates(index)

    flat = np.flatnonzero(keep.ravel())
    owner = flat // k
    starts = (index.ravel()[flat] + 0.5) * width
    phi, f, converged, iterations = _refine(starts, batch[owner], params)

    score = np.full(rows * k, np.inf)
    score[flat] = f
    position = np.full(rows * k, -1, dtype=np.int64)
    position[flat] = np.arange(flat.size)
    pick = position[row_ids * k + np.argmin(score.reshape(rows, k), axis=1)]

    result = ModeBatch(phi[pick], starts[pick], converged[pick],
                       np.bincount(owner, weights=iterations, minlength=rows).astype(np.int64))
    if result.not_converged:
        logger.debug("Mode search left rows unconverged",
                     extra={"rows": rows, "not_converged": result.not_converged,
                            "refined": int(flat.size)})
    return result


def find_mode(angles, params: KdeParams) -> float:
    """Mode of one angle set's density, radians in [0, 2π)

    Raises NoConvergence (carrying the best iterate) when the optimizer hits
    ``max_iterations`` or its line search stalls away from the optimum.
    """
    raw = _raw(angles)
    if raw.ndim != 1 or raw.size == 0:
        raise KdeError("find_mode expects one non-empty angle set",
                       error_type="empty_angle_set", details={"shape": list(raw.shape)})

    result = find_modes(raw, params)
    best = float(result.phi_hat[0])
    if not result.converged[0]:
        raise NoConvergence(
            f"Mode search did not converge after {int(result.iterations[0])} iterations",
            best=best,
            phi0=float(result.phi0[0]),
            details={"iterations": int(result.iterations[0]), "kappa": params.kappa}
        )
    return best
