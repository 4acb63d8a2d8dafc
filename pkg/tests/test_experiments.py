"""Test surface, data generation, the three methods and the Monte Carlo harness."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import kstest

from argmax_bayes.credible import envelope_rect

from argmax_bayes.experiments import (
    M0,
    METHODS,
    MU0,
    STAGE1_NOISE,
    STAGE2_NOISE,
    ExperimentSpec,
    RunRecord,
    _box_stats,
    curvature_lambda0,
    f0_derivative,
    f0_points,
    generate_data,
    grid_levels,
    hessian_fd,
    kolmogorov_distance,
    lattice,
    median_err,
    monte_carlo,
    oracle_freq_delta,
    quadratic_lattice,
    run_single_bayes,
    run_two_stage_bayes,
    run_two_stage_freq,
    stream,
    summarize,
    two_stage_bayes,
)

# full sample sizes with J fixed and fewer draws to keep runs short
SMALL = ExperimentSpec(fix_j_stage1=(7, 9), fix_j_single=(9, 9), stage1_draws=200,
                       stage2_draws=200, loess_spans=(0.05, 0.1), replications=3)


class TestSurface:
    def test_mode_value(self):
        assert f0_points([[0.5, 0.5]])[0] == 4.0

    def test_edge_value(self):
        expected = (1 + np.exp(-5.0)) * (np.cos(-4.0) + 1.0)
        assert f0_points([[0.0, 0.5]])[0] == pytest.approx(expected, rel=1e-14)
        assert expected == pytest.approx(0.3487, abs=1e-4)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_mirror_symmetry(self, x, y):
        assert f0_points([[x, y]])[0] == pytest.approx(f0_points([[1 - x, y]])[0], abs=1e-12)

    def test_global_mode_on_fine_grid(self):
        P = lattice(401)
        i = np.argmax(f0_points(P))
        np.testing.assert_array_equal(P[i], MU0)

    @pytest.mark.parametrize("r", [(1, 0), (0, 1)])
    def test_gradient_fd(self, rng, r):
        P = rng.uniform(size=(20, 2))
        e = np.array(r) * 1e-6
        fd = (f0_points(P + e) - f0_points(P - e)) / 2e-6
        np.testing.assert_allclose(f0_derivative(P, r), fd, rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(f0_derivative(P), f0_points(P))

    def test_gradient_vanishes_at_mode(self):
        for r in [(1, 0), (0, 1)]:
            assert f0_derivative(MU0, r)[0] == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(ValueError):
            f0_derivative(MU0, (1, 1))

    def test_hessian_at_mode(self):
        # d^2/dx^2 = 4 * (g'' h + g h'') with g = 1 + e, h = cos 4u + cos 5v at u = v = 0
        np.testing.assert_allclose(hessian_fd(f0_points, MU0), np.diag([-208.0, -200.0]),
                                   rtol=1e-5, atol=1e-3)
        assert curvature_lambda0() == pytest.approx(200.0, rel=1e-5)


class TestSpec:
    def test_defaults_budget(self):
        s = ExperimentSpec()
        assert (s.n1, s.n2, s.n_single, s.n_freq2) == (900, 864, 1764, 864)

    def test_unfair_budget(self):
        with pytest.raises(ValueError, match="budget"):
            ExperimentSpec(n2=800)

    def test_iid_budget(self):
        s = ExperimentSpec(design="iid_uniform", n_iid=500, n2=100)
        assert s.n_single == 600

    @pytest.mark.parametrize("kw", [{"design": "sobol"}, {"grid_offset": "x"},
                                    {"delta_rule": "rate"}, {"delta_rule": "x"},
                                    {"stage2_xi": "x"}, {"sigma0": -1}, {"replications": 0},
                                    {"methods": ("nope",)}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ExperimentSpec(**kw)

    def test_mapping_round_trip(self):
        s = SMALL.replace(alpha=(4, 4), delta_rule="rate")
        assert ExperimentSpec.from_mapping(s.to_dict()) == s
        with pytest.raises(ValueError, match="unknown"):
            ExperimentSpec.from_mapping({"bogus": 1})


class TestData:
    def test_levels(self):
        np.testing.assert_allclose(grid_levels(3), [0, 0.5, 1])
        np.testing.assert_allclose(grid_levels(4, "midpoint"), [0.125, 0.375, 0.625, 0.875])
        np.testing.assert_allclose(grid_levels(1), [0.5])
        with pytest.raises(ValueError):
            grid_levels(0)
        with pytest.raises(ValueError):
            grid_levels(3, "left")

    def test_lattice_order(self):
        L = lattice(3)
        assert L.shape == (9, 2)
        np.testing.assert_allclose(L[1], [0.0, 0.5])

    def test_noise_free(self):
        X, Y = generate_data(SMALL.replace(sigma0=0.0), "stage1", 0)
        assert X.shape == (900, 2)
        np.testing.assert_array_equal(Y, f0_points(X))

    def test_noise_level(self):
        s = SMALL.replace(single_per_axis=100, stage1_per_axis=99, n2=199)
        X, Y = generate_data(s, "single", 1)
        assert np.std(Y - f0_points(X)) == pytest.approx(0.1, rel=0.03)
        with pytest.raises(ValueError):
            generate_data(s, "stage2", 1)

    def test_iid_design(self):
        s = ExperimentSpec(design="iid_uniform", n_iid=300, n2=100)
        X, _ = generate_data(s, "single", 0)
        assert X.shape == (400, 2) and np.all((X >= 0) & (X <= 1))

    @given(st.integers(5, 60), st.integers(0, 10**6))
    def test_kolmogorov_1d_matches_ks(self, n, seed):
        x = np.random.default_rng(seed).uniform(size=(n, 1))
        assert kolmogorov_distance(x) == pytest.approx(kstest(x[:, 0], "uniform").statistic,
                                                       abs=1e-12)

    def test_kolmogorov_2d_brute_force(self, rng):
        X = rng.uniform(size=(12, 2))
        fine = np.linspace(0, 1, 801)
        G = np.stack(np.meshgrid(fine, fine, indexing="ij"), -1).reshape(-1, 2)
        below = np.all(X[None, :, :] <= G[:, None, :], axis=2).mean(axis=1)
        approx = np.max(np.abs(below - G.prod(axis=1)))
        exact = kolmogorov_distance(X)
        assert approx <= exact + 1e-12
        assert exact - approx < 0.01

    def test_lattice_discrepancy(self):
        assert kolmogorov_distance(lattice(30)) < 2 / 30

    def test_lattice_discrepancy_shrinks(self):
        assert kolmogorov_distance(lattice(30, offset="midpoint")) < kolmogorov_distance(
            lattice(10, offset="midpoint"))

    def test_streams(self):
        a = stream(SMALL, 0, STAGE1_NOISE).standard_normal(5)
        assert np.array_equal(a, stream(SMALL, 0, STAGE1_NOISE).standard_normal(5))
        assert not np.array_equal(a, stream(SMALL, 1, STAGE1_NOISE).standard_normal(5))
        assert not np.array_equal(a, stream(SMALL, 0, STAGE2_NOISE).standard_normal(5))
        assert not np.array_equal(a, stream(SMALL.replace(master_seed=1), 0,
                                            STAGE1_NOISE).standard_normal(5))


class TestRecord:
    def test_errors(self):
        r = RunRecord(0, "single_bayes", 0, [0.53, 0.46], 3.9, diagnostics={"J": "7x9"})
        assert r.err_mu == pytest.approx(0.05)
        assert r.err_M == pytest.approx(0.1)
        row = r.as_row()
        assert list(row)[:5] == ["rep", "method", "seed", "mu_1", "mu_2"]
        assert row["J"] == "7x9"


class TestMethods:
    def test_single(self):
        rec = run_single_bayes(SMALL, 0)
        assert rec.method == "single_bayes" and rec.n_total == 1764
        assert rec.err_mu < 0.05 and rec.err_M < 0.5
        assert rec.diagnostics["J"] == "9x9"

    def test_single_exact_surface(self):
        """Noise free with a rich basis the mode is found to grid accuracy."""
        s = SMALL.replace(sigma0=0.0, fix_j_single=(16, 16), mode_grid=101)
        rec = run_single_bayes(s, 0)
        assert rec.err_mu <= 0.011

    def test_two_stage(self):
        res = two_stage_bayes(SMALL, 0)
        rec = res.record
        assert rec.n_total == 1764 == SMALL.n_single
        assert res.rect.contains(res.mu_tilde)
        assert np.all(res.rect.half_widths >= SMALL.floor)
        assert res.Z.shape == (864, 2)
        assert set(rec.diagnostics) >= {"J", "sigma2", "sigma2_stage1", "delta_1", "delta_2",
                                        "hessian_ok_frac", "clipped_frac"}
        assert rec.err_mu < 0.05
        assert len(res.stage1_samples) == 200 and len(res.stage2_samples) == 200

    def test_two_stage_deterministic(self):
        a, b = run_two_stage_bayes(SMALL, 2), run_two_stage_bayes(SMALL, 2)
        assert a.as_row() == b.as_row()

    def test_two_stage_typical_replication(self):
        res = two_stage_bayes(ExperimentSpec(), 0)
        assert res.record.err_mu < 0.02
        assert res.record.diagnostics["hessian_ok_frac"] > 0.95

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="stage-1 mode draws span about one grid cell, so "
                       "the raw envelope half width is near 0.011 rather than 0.0556")
    def test_raw_envelope_width(self):
        widths = []
        for rep in range(10):
            res = two_stage_bayes(ExperimentSpec(), rep)
            widths.append(envelope_rect(res.stage1_samples.mu, res.mu_tilde, 1.0,
                                        floor=1e-9).half_widths)
        assert np.all(np.abs(np.asarray(widths) / 0.0556 - 1) <= 0.5)

    def test_rate_rule(self):
        s = SMALL.replace(delta_rule="rate", alpha=(4, 4), rho_n=0.2, floor=0.0)
        res = two_stage_bayes(s, 0)
        np.testing.assert_allclose(res.rect.half_widths, 0.2 * 1764 ** (-1 / 8))
        assert res.rect.provenance == "rate"

    def test_stage1_max_prior(self):
        s = SMALL.replace(stage2_xi="stage1_max")
        res = two_stage_bayes(s, 0)
        assert res.record.diagnostics["sigma2"] < two_stage_bayes(SMALL, 0).record.diagnostics[
            "sigma2"]

    def test_freq(self):
        rec = run_two_stage_freq(SMALL, 0)
        assert rec.n_total == 900 + 864
        assert rec.err_mu < 0.05
        assert rec.diagnostics["span"] in SMALL.loess_spans

    def test_freq_noise_free_exact(self):
        rec = run_two_stage_freq(SMALL.replace(sigma0=0.0), 0, delta=(0.01, 0.01))
        assert not rec.diagnostics["fallback"]
        assert rec.err_mu < 1e-3 and rec.err_M < 1e-3

    def test_quadratic_lattice(self):
        pts = quadratic_lattice([0.5, 0.5], [0.1, 0.2], 4)
        assert pts.shape == (36, 2)
        assert sorted(set(pts[:, 1].round(12))) == [0.3, 0.5, 0.7]
        np.testing.assert_allclose(pts.mean(axis=0), [0.5, 0.5])

    def test_oracle_flag(self):
        out = oracle_freq_delta(SMALL, [0.03, 0.06], reps=2)
        assert out["oracle"] is True and out["best_delta"] in (0.03, 0.06)


class TestVarianceConsistency:
    @staticmethod
    def hits(spec):
        v = np.array([two_stage_bayes(spec, rep).record.diagnostics["sigma2"]
                      for rep in range(100)])
        return int(np.sum(np.abs(v - 0.01) < 0.005))

    @pytest.mark.slow
    def test_stage1_centered_prior(self):
        assert self.hits(ExperimentSpec(stage2_xi="stage1_max")) >= 90

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="with xi = 0 the prior penalty on the coefficients "
                       "puts the second-stage variance near 0.03")
    def test_zero_centered_prior(self):
        assert self.hits(ExperimentSpec()) >= 90


@pytest.fixture(scope="module")
def hundred_reps():
    return monte_carlo(ExperimentSpec(replications=100), threads=2)


@pytest.mark.slow
class TestHundredReplications:
    def test_single_median_range(self, hundred_reps):
        assert 0.005 <= median_err(hundred_reps.records, "single_bayes") <= 0.05

    def test_ordering(self, hundred_reps):
        recs = hundred_reps.records
        two = median_err(recs, "two_stage_bayes")
        assert two < median_err(recs, "single_bayes")
        assert median_err(recs, "two_stage_freq") >= two

    def test_budget(self, hundred_reps):
        assert {r.n_total for r in hundred_reps.records} == {1764}


class TestHarness:
    def test_box_stats(self):
        v = np.r_[np.arange(1.0, 11.0), 100.0]
        s = _box_stats(v)
        assert s["median"] == 6.0 and s["max"] == 100.0
        assert s["whisker_high"] == 10.0 and s["whisker_low"] == 1.0
        assert s["rmse"] == pytest.approx(np.sqrt(np.mean(v**2)))

    @given(st.permutations(list(range(6))))
    def test_summary_order_free(self, perm):
        recs = [RunRecord(i // 2, METHODS[i % 2], 0, [0.5 + 0.01 * i, 0.5], 4 - 0.1 * i)
                for i in range(6)]
        assert summarize([recs[i] for i in perm], METHODS) == summarize(recs, METHODS)

    def test_threads_agree(self):
        spec = SMALL.replace(replications=2)
        seen = []
        one = monte_carlo(spec, 1, progress=lambda i, n: seen.append((i, n)))
        two = monte_carlo(spec, 2)
        assert [r.as_row() for r in one.records] == [r.as_row() for r in two.records]
        assert one.summary == two.summary
        assert seen[-1] == (6, 6)
        assert set(one.summary) == set(METHODS)
        assert median_err(one.records, "single_bayes") == pytest.approx(
            np.median([r.err_mu for r in one.records if r.method == "single_bayes"]))

    def test_paired_first_stage(self):
        """Both two-stage methods see the same first-stage data in a replication."""
        Xa, Ya = generate_data(SMALL, "stage1", stream(SMALL, 1, STAGE1_NOISE))
        Xb, Yb = generate_data(SMALL, "stage1", stream(SMALL, 1, STAGE1_NOISE))
        assert np.array_equal(Ya, Yb)
        assert M0 == 4.0
