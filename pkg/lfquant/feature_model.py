"""Isotopic LC-MS feature model: evaluation, analytic volume and Levenberg-Marquardt fit.

A feature is a Gaussian elution profile in retention time multiplied by a
Poisson-weighted train of Gaussian isotope peaks in m/z.  Fits run on the
raster points inside a window around the identification that seeded them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg
from scipy.special import gammaln, xlogy

from .models import DataError, Identification, Raster

LOGGER = logging.getLogger(__name__)

NEUTRON_SPACING = 1.00335
DEFAULT_PEAKS = 4
WINDOW_SECONDS = 30.0
WINDOW_MZ_MARGIN = 0.1
MIN_WINDOW_POINTS = 8
SIGMA_FLOOR = 0.5
LAMBDA_RANGE = (0.01, 10.0)
RHO_GUESS = 0.01
RESIDUAL_GATE = 0.5

MAX_ITERATIONS = 200
TOLERANCE = 1e-8
DAMPING_START = 1e-3
DAMPING_LIMIT = 1e12


class NoData(DataError):
    pass


class SingularNormalEquations(DataError):
    pass


class NoConvergence(DataError):
    def __init__(self, message: str, result: "FitResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class FeatureParams:
    amplitude: float
    mu: float
    sigma: float
    zeta0: float
    delta: float
    lam: float
    rho: float
    n_peaks: int = DEFAULT_PEAKS

    def __post_init__(self) -> None:
        values = (self.amplitude, self.mu, self.sigma, self.zeta0, self.delta, self.lam, self.rho)
        if not all(np.isfinite(value) for value in values):
            raise DataError(f"Feature parameters must be finite: {self}")
        if self.sigma <= 0 or self.rho <= 0 or self.delta <= 0:
            raise DataError("sigma, rho and delta must be positive")
        if self.amplitude < 0 or self.lam < 0:
            raise DataError("amplitude and lambda must be nonnegative")
        if self.n_peaks < 1:
            raise DataError(f"n_peaks must be at least 1, got {self.n_peaks}")

    @property
    def centers(self) -> np.ndarray:
        return self.zeta0 + self.delta * np.arange(self.n_peaks)


@dataclass(frozen=True)
class FitResult:
    params: FeatureParams
    residual_norm: float
    iterations: int
    converged: bool
    abundance: float


@dataclass(frozen=True)
class TimeExtent:
    left: float
    right: float

    def __post_init__(self) -> None:
        if self.left > self.right:
            raise DataError(f"Extent left {self.left} exceeds right {self.right}")


def poisson_weights(lam: float, n_peaks: int) -> np.ndarray:
    k = np.arange(n_peaks, dtype=float)
    return np.exp(xlogy(k, lam) - lam - gammaln(k + 1.0))


def _as_output(values: np.ndarray) -> np.ndarray | float:
    return float(values) if np.ndim(values) == 0 else values


def _components(p: FeatureParams, t, m):
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    time_offset = t - p.mu
    time_term = np.exp(-0.5 * (time_offset / p.sigma) ** 2)
    mz_offset = m[..., np.newaxis] - p.centers
    peaks = np.exp(-0.5 * (mz_offset / p.rho) ** 2)
    return time_offset, time_term, mz_offset, peaks


def evaluate_model(p: FeatureParams, t, m) -> np.ndarray | float:
    _, time_term, _, peaks = _components(p, t, m)
    values = p.amplitude * time_term * (peaks @ poisson_weights(p.lam, p.n_peaks))
    return _as_output(values)


def analytic_volume(p: FeatureParams) -> float:
    weight = float(np.sum(poisson_weights(p.lam, p.n_peaks)))
    return 2.0 * np.pi * p.amplitude * p.sigma * p.rho * weight


def model_jacobian(p: FeatureParams, t, m) -> np.ndarray:
    """Partials over (A, mu, sigma, zeta0, lambda, rho); last axis indexes the parameter."""
    time_offset, time_term, mz_offset, peaks = _components(p, t, m)
    weights = poisson_weights(p.lam, p.n_peaks)
    # d/dlambda of the k-th Poisson weight is w[k-1] - w[k]
    weight_slope = np.concatenate(([0.0], weights[:-1])) - weights
    envelope = peaks @ weights
    scaled = p.amplitude * time_term
    value = scaled * envelope
    columns = (
        time_term * envelope,
        value * time_offset / p.sigma**2,
        value * time_offset**2 / p.sigma**3,
        scaled * ((peaks * mz_offset) @ weights) / p.rho**2,
        scaled * (peaks @ weight_slope),
        scaled * ((peaks * mz_offset**2) @ weights) / p.rho**3,
    )
    shape = np.broadcast(time_offset, envelope).shape
    return np.stack([np.broadcast_to(column, shape) for column in columns], axis=-1)


def extent_2sigma(p: FeatureParams) -> TimeExtent:
    return TimeExtent(p.mu - 2.0 * p.sigma, p.mu + 2.0 * p.sigma)


def isotope_spacing(charge: int) -> float:
    return NEUTRON_SPACING / charge


def extract_window(
    raster: Raster, hint: Identification, n_peaks: int = DEFAULT_PEAKS
) -> Raster:
    delta = isotope_spacing(hint.species.charge)
    return raster.window(
        hint.retention_time - WINDOW_SECONDS,
        hint.retention_time + WINDOW_SECONDS,
        hint.precursor_mz - WINDOW_MZ_MARGIN,
        hint.precursor_mz + (n_peaks - 1) * delta + WINDOW_MZ_MARGIN,
    )


def _half_width(times: np.ndarray, intensities: np.ndarray) -> float:
    grid, inverse = np.unique(times, return_inverse=True)
    marginal = np.bincount(inverse, weights=intensities)
    above = grid[marginal >= 0.5 * marginal.max()]
    return 0.5 * float(above.max() - above.min())


def initial_guess(
    raster_window: Raster, hint: Identification, n_peaks: int = DEFAULT_PEAKS
) -> FeatureParams:
    intensities = raster_window.intensities
    if intensities.size == 0 or not np.any(intensities > 0):
        raise NoData(f"No signal in window for {hint.species} in run {hint.run}")
    apex = int(np.argmax(intensities))
    delta = isotope_spacing(hint.species.charge)

    steps = max(0, int(round((hint.precursor_mz - raster_window.mzs[apex]) / delta)))
    zeta0 = hint.precursor_mz - steps * delta

    first = intensities[np.abs(raster_window.mzs - zeta0) <= 0.5 * delta].sum()
    second = intensities[np.abs(raster_window.mzs - zeta0 - delta) <= 0.5 * delta].sum()
    ratio = second / first if first > 0 else LAMBDA_RANGE[1]

    return FeatureParams(
        amplitude=float(intensities[apex]),
        mu=float(raster_window.times[apex]),
        sigma=max(SIGMA_FLOOR, _half_width(raster_window.times, intensities)),
        zeta0=float(zeta0),
        delta=delta,
        lam=float(np.clip(ratio, *LAMBDA_RANGE)),
        rho=RHO_GUESS,
        n_peaks=n_peaks,
    )


class _MarquardtFit:
    """Damped Gauss-Newton over (log A, mu, log sigma, zeta0, log lambda, log rho)."""

    def __init__(self, window: Raster, guess: FeatureParams):
        self.times = window.times
        self.mzs = window.mzs
        self.observed = window.intensities
        self.template = guess

    def to_theta(self, p: FeatureParams) -> np.ndarray:
        lam = max(p.lam, LAMBDA_RANGE[0])
        return np.array(
            [np.log(p.amplitude), p.mu, np.log(p.sigma), p.zeta0, np.log(lam), np.log(p.rho)]
        )

    def to_params(self, theta: np.ndarray) -> FeatureParams:
        with np.errstate(over="ignore"):
            return replace(
                self.template,
                amplitude=float(np.exp(theta[0])),
                mu=float(theta[1]),
                sigma=float(np.exp(theta[2])),
                zeta0=float(theta[3]),
                lam=float(np.exp(theta[4])),
                rho=float(np.exp(theta[5])),
            )

    def residuals(self, p: FeatureParams) -> np.ndarray:
        return evaluate_model(p, self.times, self.mzs) - self.observed

    def jacobian(self, p: FeatureParams) -> np.ndarray:
        natural = model_jacobian(p, self.times, self.mzs)
        chain = np.array([p.amplitude, 1.0, p.sigma, 1.0, p.lam, p.rho])
        return natural * chain

    def _trial(self, theta: np.ndarray) -> tuple[FeatureParams, np.ndarray, float] | None:
        try:
            params = self.to_params(theta)
        except DataError:
            return None
        residual = self.residuals(params)
        cost = float(residual @ residual)
        if not np.isfinite(cost):
            return None
        return params, residual, cost

    def run(
        self, max_iterations: int, tolerance: float
    ) -> tuple[FeatureParams, float, int, bool]:
        theta = self.to_theta(self.template)
        trial = self._trial(theta)
        if trial is None:
            raise SingularNormalEquations("Initial guess yields a non-finite objective")
        params, residual, cost = trial
        damping = DAMPING_START

        for iteration in range(1, max_iterations + 1):
            if cost == 0.0:
                return params, cost, iteration - 1, True
            jac = self.jacobian(params)
            normal = jac.T @ jac
            gradient = jac.T @ residual
            scale = np.diag(normal).copy()
            if not np.any(scale > 0):
                raise SingularNormalEquations("Jacobian vanishes on the fitting window")
            scale[scale <= 0] = scale[scale > 0].min()

            while True:
                try:
                    step = linalg.solve(
                        normal + damping * np.diag(scale), -gradient, assume_a="sym"
                    )
                except (linalg.LinAlgError, ValueError):
                    step = None
                small_step = step is not None and np.linalg.norm(step) <= tolerance * (
                    np.linalg.norm(theta) + tolerance
                )
                candidate = None if step is None else self._trial(theta + step)
                if candidate is not None and candidate[2] < cost:
                    decrease = cost - candidate[2]
                    theta = theta + step
                    params, residual, new_cost = candidate
                    converged = decrease <= tolerance * cost or small_step
                    cost = new_cost
                    damping = max(damping * 0.1, 1e-15)
                    if converged:
                        return params, cost, iteration, True
                    break
                if small_step:
                    return params, cost, iteration, True
                damping *= 10.0
                if damping > DAMPING_LIMIT:
                    raise SingularNormalEquations(
                        f"Damping exceeded {DAMPING_LIMIT:g} after {iteration} iterations"
                    )
        return params, cost, max_iterations, False


def fit_feature(
    raster_window: Raster,
    guess: FeatureParams,
    strict: bool = False,
    max_iterations: int = MAX_ITERATIONS,
    tolerance: float = TOLERANCE,
) -> FitResult:
    """Least-squares fit of the feature model; delta and n_peaks stay at the guess values.

    A fit that reaches the iteration cap is returned with ``converged=False``
    unless ``strict`` is set, in which case :class:`NoConvergence` carries it.
    """
    if raster_window.size < MIN_WINDOW_POINTS:
        raise NoData(
            f"Window has {raster_window.size} points; at least {MIN_WINDOW_POINTS} required"
        )
    if not np.any(raster_window.intensities > 0):
        raise NoData("Window intensities are all zero")
    if np.ptp(raster_window.intensities) == 0:
        raise SingularNormalEquations("Window intensity is constant; model is unidentifiable")

    params, cost, iterations, converged = _MarquardtFit(raster_window, guess).run(
        max_iterations, tolerance
    )
    result = FitResult(
        params=params,
        residual_norm=float(np.sqrt(cost / raster_window.size)),
        iterations=iterations,
        converged=converged,
        abundance=analytic_volume(params),
    )
    if not converged and strict:
        raise NoConvergence(f"No convergence after {iterations} iterations", result)
    return result


def is_successful(fit: FitResult) -> bool:
    return (
        fit.converged
        and np.isfinite(fit.residual_norm)
        and fit.residual_norm <= RESIDUAL_GATE * fit.params.amplitude
    )
