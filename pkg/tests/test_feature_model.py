from __future__ import annotations

import unittest
from dataclasses import replace

import numpy as np
from scipy.integrate import trapezoid

from lfquant.feature_model import (
    NoConvergence,
    NoData,
    SingularNormalEquations,
    FeatureParams,
    analytic_volume,
    evaluate_model,
    extent_2sigma,
    extract_window,
    fit_feature,
    initial_guess,
    is_successful,
    isotope_spacing,
    model_jacobian,
    poisson_weights,
)
from lfquant.models import DataError, Identification, Raster, SpeciesKey
from lfquant.simulate import feature_points

FIELDS = ("amplitude", "mu", "sigma", "zeta0", "lam", "rho")


def random_params(rng: np.random.Generator) -> FeatureParams:
    charge = int(rng.integers(1, 4))
    return FeatureParams(
        amplitude=float(rng.uniform(1e3, 1e6)),
        mu=float(rng.uniform(100.0, 3000.0)),
        sigma=float(rng.uniform(1.0, 6.0)),
        zeta0=float(rng.uniform(300.0, 1200.0)),
        delta=isotope_spacing(charge),
        lam=float(rng.uniform(0.2, 2.0)),
        rho=float(rng.uniform(0.005, 0.02)),
    )


def feature_raster(params: FeatureParams, noise: float = 0.0, seed: int = 0) -> Raster:
    times, mzs, values = feature_points(params)
    if noise:
        rng = np.random.default_rng(seed)
        values = np.clip(values + rng.normal(0.0, noise * params.amplitude, values.size), 0.0, None)
    return Raster.from_arrays("S1", "r1", times, mzs, values)


def hint_for(params: FeatureParams, charge: int) -> Identification:
    return Identification(
        "S1", "r1", SpeciesKey("PEPTIDEK", (), charge), params.mu, params.zeta0, 0.0
    )


def random_truth(rng: np.random.Generator) -> tuple[FeatureParams, int]:
    charge = int(rng.integers(2, 4))
    truth = FeatureParams(
        amplitude=float(rng.uniform(1e4, 1e6)),
        mu=float(rng.uniform(200.0, 3000.0)),
        sigma=float(rng.uniform(2.0, 4.0)),
        zeta0=float(rng.uniform(400.0, 1000.0)),
        delta=isotope_spacing(charge),
        lam=float(rng.uniform(0.3, 1.5)),
        rho=float(rng.uniform(0.006, 0.015)),
    )
    return truth, charge


def scaled(window: Raster, factor: float) -> Raster:
    return Raster.from_arrays(
        window.sample_id, window.replicate_id, window.times, window.mzs, window.intensities * factor
    )


class ModelTests(unittest.TestCase):
    def test_poisson_weights_are_a_truncated_distribution(self) -> None:
        weights = poisson_weights(1.2, 4)
        self.assertEqual(weights.shape, (4,))
        self.assertLess(weights.sum(), 1.0)
        self.assertAlmostEqual(weights[0], np.exp(-1.2))
        self.assertAlmostEqual(weights[1] / weights[0], 1.2)

    def test_zero_lambda_puts_all_weight_on_first_peak(self) -> None:
        np.testing.assert_allclose(poisson_weights(0.0, 4), [1.0, 0.0, 0.0, 0.0])

    def test_apex_value(self) -> None:
        params = FeatureParams(1000.0, 50.0, 2.0, 500.0, 0.5, 0.0, 0.01)
        self.assertAlmostEqual(evaluate_model(params, 50.0, 500.0), 1000.0)
        self.assertIsInstance(evaluate_model(params, 50.0, 500.0), float)

    def test_volume_matches_grid_quadrature(self) -> None:
        rng = np.random.default_rng(7)
        for _ in range(50):
            params = random_params(rng)
            times = np.linspace(params.mu - 10 * params.sigma, params.mu + 10 * params.sigma, 401)
            low = params.zeta0 - 10 * params.rho
            high = params.centers[-1] + 10 * params.rho
            mzs = np.arange(low, high, params.rho / 4.0)
            grid_t, grid_m = np.meshgrid(times, mzs, indexing="ij")
            surface = evaluate_model(params, grid_t, grid_m)
            numeric = trapezoid(trapezoid(surface, mzs, axis=1), times)
            self.assertLess(abs(numeric - analytic_volume(params)) / numeric, 1e-6)

    def test_jacobian_matches_central_differences(self) -> None:
        rng = np.random.default_rng(11)
        for _ in range(50):
            params = random_params(rng)
            peak = rng.integers(0, params.n_peaks, 20)
            t = params.mu + params.sigma * rng.uniform(-2.0, 2.0, 20)
            m = params.centers[peak] + params.rho * rng.uniform(-2.0, 2.0, 20)
            analytic = model_jacobian(params, t, m)
            steps = (
                1e-4 * params.amplitude,
                1e-4 * params.sigma,
                1e-4 * params.sigma,
                1e-4 * params.rho,
                1e-4 * params.lam,
                1e-4 * params.rho,
            )
            for column, (name, step) in enumerate(zip(FIELDS, steps)):
                value = getattr(params, name)
                upper = evaluate_model(replace(params, **{name: value + step}), t, m)
                lower = evaluate_model(replace(params, **{name: value - step}), t, m)
                numeric = (upper - lower) / (2.0 * step)
                scale = np.max(np.abs(numeric))
                np.testing.assert_allclose(
                    analytic[:, column], numeric, rtol=1e-5, atol=1e-5 * scale, err_msg=name
                )

    def test_extent_is_two_sigma(self) -> None:
        extent = extent_2sigma(FeatureParams(1.0, 100.0, 3.0, 500.0, 0.5, 1.0, 0.01))
        self.assertEqual((extent.left, extent.right), (94.0, 106.0))

    def test_invalid_parameters_are_rejected(self) -> None:
        with self.assertRaises(DataError):
            FeatureParams(1.0, 100.0, 0.0, 500.0, 0.5, 1.0, 0.01)
        with self.assertRaises(DataError):
            FeatureParams(1.0, 100.0, 1.0, 500.0, 0.5, 1.0, 0.01, n_peaks=0)


class FittingTests(unittest.TestCase):
    def test_noiseless_features_are_recovered(self) -> None:
        rng = np.random.default_rng(3)
        for trial in range(100):
            truth, charge = random_truth(rng)
            hint = hint_for(truth, charge)
            window = extract_window(feature_raster(truth), hint)
            fit = fit_feature(window, initial_guess(window, hint))
            with self.subTest(trial=trial):
                self.assertTrue(fit.converged)
                self.assertTrue(is_successful(fit))
                for name in FIELDS:
                    self.assertAlmostEqual(
                        getattr(fit.params, name) / getattr(truth, name), 1.0, delta=1e-3, msg=name
                    )
                self.assertAlmostEqual(fit.abundance / analytic_volume(truth), 1.0, delta=1e-3)

    def test_one_percent_noise_keeps_abundance_close(self) -> None:
        truth = FeatureParams(2e5, 900.0, 3.0, 650.0, isotope_spacing(2), 0.8, 0.01)
        hint = hint_for(truth, 2)
        expected = analytic_volume(truth)
        errors = []
        for seed in range(100):
            window = extract_window(feature_raster(truth, noise=0.01, seed=seed), hint)
            fit = fit_feature(window, initial_guess(window, hint))
            errors.append(abs(fit.abundance / expected - 1.0))
        self.assertLessEqual(float(np.median(errors)), 0.05)

    def test_scaling_intensities_scales_amplitude_only(self) -> None:
        rng = np.random.default_rng(19)
        for trial in range(10):
            truth, charge = random_truth(rng)
            hint = hint_for(truth, charge)
            window = extract_window(feature_raster(truth, noise=0.01, seed=trial), hint)
            base = fit_feature(window, initial_guess(window, hint))
            factor = float(rng.uniform(0.1, 50.0))
            bigger = scaled(window, factor)
            fit = fit_feature(bigger, initial_guess(bigger, hint))
            with self.subTest(trial=trial):
                self.assertAlmostEqual(
                    fit.params.amplitude / (factor * base.params.amplitude), 1.0, delta=1e-4
                )
                self.assertAlmostEqual(fit.abundance / (factor * base.abundance), 1.0, delta=1e-4)
                for name in FIELDS[1:]:
                    self.assertAlmostEqual(
                        getattr(fit.params, name) / getattr(base.params, name), 1.0, delta=1e-4, msg=name
                    )

    def test_refit_from_solution_keeps_objective(self) -> None:
        rng = np.random.default_rng(21)
        for trial in range(10):
            truth, charge = random_truth(rng)
            hint = hint_for(truth, charge)
            window = extract_window(feature_raster(truth, noise=0.01, seed=trial), hint)
            first = fit_feature(window, initial_guess(window, hint))
            second = fit_feature(window, first.params)
            with self.subTest(trial=trial):
                self.assertTrue(first.converged)
                self.assertLess(
                    abs(second.residual_norm**2 - first.residual_norm**2) / first.residual_norm**2,
                    1e-10,
                )

    def test_initial_guess_uses_hint_charge_spacing(self) -> None:
        truth = FeatureParams(5e4, 600.0, 3.0, 700.0, isotope_spacing(2), 0.8, 0.01)
        hint = hint_for(truth, 2)
        guess = initial_guess(extract_window(feature_raster(truth), hint), hint)
        self.assertAlmostEqual(guess.delta, isotope_spacing(2))
        self.assertAlmostEqual(guess.zeta0, 700.0)
        self.assertAlmostEqual(guess.mu, 600.0)

    def test_small_window_has_no_data(self) -> None:
        window = Raster.from_arrays("S1", "r1", [1, 2, 3], [500.0, 500.0, 500.0], [1, 2, 1])
        guess = FeatureParams(2.0, 2.0, 1.0, 500.0, 0.5, 0.5, 0.01)
        with self.assertRaises(NoData):
            fit_feature(window, guess)

    def test_all_zero_window_has_no_data(self) -> None:
        times = np.repeat(np.arange(10.0), 2)
        mzs = np.tile([500.0, 500.01], 10)
        window = Raster.from_arrays("S1", "r1", times, mzs, np.zeros(20))
        guess = FeatureParams(2.0, 5.0, 1.0, 500.0, 0.5, 0.5, 0.01)
        with self.assertRaises(NoData):
            fit_feature(window, guess)

    def test_constant_window_is_singular(self) -> None:
        times = np.repeat(np.arange(10.0), 2)
        mzs = np.tile([500.0, 500.01], 10)
        window = Raster.from_arrays("S1", "r1", times, mzs, np.full(20, 7.0))
        guess = FeatureParams(7.0, 5.0, 1.0, 500.0, 0.5, 0.5, 0.01)
        with self.assertRaises(SingularNormalEquations):
            fit_feature(window, guess)

    def test_strict_mode_raises_with_flagged_result(self) -> None:
        truth = FeatureParams(5e4, 600.0, 3.0, 700.0, isotope_spacing(2), 0.8, 0.01)
        hint = hint_for(truth, 2)
        window = extract_window(feature_raster(truth), hint)
        guess = initial_guess(window, hint)
        relaxed = fit_feature(window, guess, max_iterations=1)
        self.assertFalse(relaxed.converged)
        self.assertFalse(is_successful(relaxed))
        with self.assertRaises(NoConvergence) as raised:
            fit_feature(window, guess, strict=True, max_iterations=1)
        self.assertFalse(raised.exception.result.converged)


if __name__ == "__main__":
    unittest.main()
