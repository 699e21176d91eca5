import numpy as np
import pytest
from scipy.stats import chi2, kstest

from comreg.baselines import fit_poisson
from comreg.data import Dataset
from comreg.fit import fit_com
from comreg.infer import dispersion_test, parametric_bootstrap, wald_z

from conftest import simulate_dataset


@pytest.fixture(scope="module")
def airfreight_fit(airfreight):
    return fit_com(airfreight)


class TestDispersionTest:
    def test_airfreight_statistic(self, airfreight):
        res = dispersion_test(airfreight)
        # C derived from the published AICc entries 47.29 / 52.11
        assert res.statistic == pytest.approx(9.1, abs=0.5)
        assert res.p_value == pytest.approx(chi2.sf(res.statistic, 1), rel=1e-12)
        assert res.p_value < 0.01

    def test_nonnegative_and_nested(self, airfreight):
        res = dispersion_test(airfreight)
        assert res.statistic >= 0
        assert res.loglik_alt >= res.loglik_null - 1e-6

    def test_poisson_data_small_statistic(self):
        ds = simulate_dataset(500, [0.8, 0.4], 1.0, seed=31)
        res = dispersion_test(ds)
        assert res.p_value > 0.01

    def test_overdispersed_data_large_statistic(self):
        # crash-like over-dispersion
        ds = simulate_dataset(600, [0.6, 0.5], 0.35, seed=37)
        res = dispersion_test(ds)
        assert res.statistic > 50
        assert res.p_value < 1e-10

    def test_underdispersed_detected(self):
        ds = simulate_dataset(200, [1.2, 0.5], 5.0, seed=41)
        res = dispersion_test(ds)
        assert res.p_value < 0.01

    def test_bootstrap_calibration_requires_seed(self, airfreight):
        with pytest.raises(ValueError, match="seed"):
            dispersion_test(airfreight, bootstrap_calibrate=True)

    def test_bootstrap_calibrated_p_value(self, airfreight):
        res = dispersion_test(
            airfreight, bootstrap_calibrate=True, n_boot=100, seed=5
        )
        assert res.bootstrap_p_value is not None
        assert 0.0 <= res.bootstrap_p_value <= 0.1

    @pytest.mark.slow
    def test_null_distribution_ks(self):
        # C under simulated Poisson data vs chi^2_1, n=200
        stats = []
        for rep in range(500):
            ds = simulate_dataset(200, [0.8, 0.4], 1.0, seed=10_000 + rep)
            stats.append(dispersion_test(ds).statistic)
        stats = np.asarray(stats)
        # one-sided comparison at the 1% level
        _, pval = kstest(stats, chi2(df=1).cdf, alternative="greater")
        assert pval > 0.01


@pytest.fixture(scope="module")
def boot_small(airfreight, airfreight_fit):
    return parametric_bootstrap(
        airfreight, airfreight_fit, n_boot=120, ci_level=0.90, seed=99
    )


class TestParametricBootstrap:
    def test_reproducible(self, airfreight, airfreight_fit, boot_small):
        again = parametric_bootstrap(
            airfreight, airfreight_fit, n_boot=120, ci_level=0.90, seed=99
        )
        assert np.array_equal(boot_small.replicates, again.replicates)
        assert boot_small.intervals == again.intervals

    def test_interval_structure(self, boot_small):
        assert set(boot_small.param_names) == {"intercept", "transfers", "nu"}
        lo, hi = boot_small.intervals["nu"]
        assert lo < hi
        assert boot_small.n_failed + len(boot_small.replicates) == 120

    def test_percentile_equivariance_log_nu(self, boot_small):
        # monotone reparameterization commutes with percentile endpoints
        nu_col = boot_small.replicates[:, -1]
        lo, hi = np.percentile(np.log(nu_col), [5.0, 95.0], method="inverted_cdf")
        assert np.exp(lo) == pytest.approx(boot_small.intervals["nu"][0], rel=1e-10)
        assert np.exp(hi) == pytest.approx(boot_small.intervals["nu"][1], rel=1e-10)

    def test_validation(self, airfreight, airfreight_fit):
        with pytest.raises(ValueError, match="n_boot"):
            parametric_bootstrap(airfreight, airfreight_fit, n_boot=10, seed=1)
        with pytest.raises(ValueError, match="ci_level"):
            parametric_bootstrap(
                airfreight, airfreight_fit, n_boot=100, ci_level=1.5, seed=1
            )


class TestWaldZ:
    def test_airfreight_com_slope(self, airfreight_fit):
        assert wald_z(airfreight_fit, 1) == pytest.approx(2.15, abs=0.11)

    def test_airfreight_poisson_slope(self, airfreight):
        pois = fit_poisson(airfreight)
        z = pois.beta[1] / pois.se[1]
        assert z == pytest.approx(3.33, abs=0.02)

    def test_zero_coefficient(self, airfreight_fit):
        fr = airfreight_fit
        fr2 = type(fr)(
            beta=np.array([0.0, 0.0]),
            nu=fr.nu,
            cov=fr.cov,
            loglik=fr.loglik,
            n_obs=fr.n_obs,
            n_params=fr.n_params,
            converged=True,
            iterations=fr.iterations,
        )
        assert wald_z(fr2, 0) == 0.0

    def test_boundary_nu_refused(self, airfreight_fit):
        fr = airfreight_fit
        fr_b = type(fr)(
            beta=fr.beta,
            nu=fr.nu,
            cov=fr.cov,
            loglik=fr.loglik,
            n_obs=fr.n_obs,
            n_params=fr.n_params,
            converged=True,
            iterations=fr.iterations,
            boundary=True,
        )
        with pytest.raises(ValueError, match="boundary"):
            wald_z(fr_b, len(fr.beta))
