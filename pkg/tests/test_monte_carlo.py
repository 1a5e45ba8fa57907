import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualhop.channels import FtrParams, GammaGammaParams, ftr_ccdf, ftr_sample, gg_ccdf, gg_sample
from dualhop.link_metrics import (
    CBPSK,
    DBPSK,
    CapacityMode,
    EffectiveCapacityParams,
    RelayConfig,
    af_cdf,
    avg_ber,
    effective_capacity,
    ergodic_capacity,
)
from dualhop.monte_carlo import (
    Estimate,
    McConfig,
    estimate_all,
    estimate_ber,
    estimate_capacity,
    estimate_effective_capacity,
    estimate_outage,
    sample_end_to_end,
    sample_moments,
    stream_rng,
)

AF = RelayConfig("AF_fixed_gain", 1.7)
DF = RelayConfig("DF")


def scenario(snr_db, xi=5.0263, K=10.0, m=2.0, delta=0.5):
    g = 10.0 ** (snr_db / 10.0)
    return GammaGammaParams(5.42, 3.8, xi, 1, g), FtrParams.from_mean_snr(K, m, delta, g)


class TestTypes:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            McConfig(samples=999)
        with pytest.raises(ValueError):
            McConfig(workers=0)
        with pytest.raises(ValueError):
            McConfig(seed=-1)

    def test_stream_sizes_partition(self):
        assert McConfig(10_001, workers=4).stream_sizes() == [2501, 2500, 2500, 2500]

    def test_estimate_invariants(self):
        e = Estimate.from_mean(0.5, 0.01, 1000)
        assert e.ci95_low < 0.5 < e.ci95_high
        with pytest.raises(ValueError):
            Estimate(0.5, -1.0, 0.4, 0.6, 10)
        with pytest.raises(ValueError):
            Estimate(0.5, 0.1, 0.6, 0.7, 10)

    def test_substreams_independent_of_count(self):
        a = stream_rng(7, 3).random(5)
        b = stream_rng(7, 3).random(5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, stream_rng(7, 4).random(5))


class TestEndToEnd:
    @pytest.mark.parametrize("relay", [AF, DF])
    def test_bounded_by_hop_draws(self, relay):
        gg, f = scenario(20)
        n = 100_000
        e2e = sample_end_to_end(gg, f, relay, np.random.default_rng(5), n)
        rng = np.random.default_rng(5)
        g1, g2 = gg_sample(gg, rng, n), ftr_sample(f, rng, n)
        assert np.all(e2e <= g1)
        if not relay.is_af:
            assert np.all(e2e <= g2)

    def test_df_mean_against_ccdf_quadrature(self):
        gg, f = scenario(10)
        v = np.linspace(-25.0, math.log(gg.mu_r) + 6.0, 6001)
        x = np.exp(v)
        mean = float(np.trapezoid(gg_ccdf(gg, x) * ftr_ccdf(f, x) * x, v))
        est = sample_moments_mean(gg, f, DF, 1_000_000)
        assert est.contains(mean, 3.0)


def sample_moments_mean(gg, f, relay, n):
    mean, var, n = sample_moments(McConfig(n, seed=3), gg, f, relay, [lambda g: g])
    return Estimate.from_mean(float(mean[0]), math.sqrt(var[0] / n), n)


class TestOutage:
    def test_zero_threshold(self):
        gg, f = scenario(20)
        assert estimate_outage(McConfig(10_000), gg, f, AF, 0.0).mean == 0.0

    def test_infinite_threshold(self):
        gg, f = scenario(20)
        assert estimate_outage(McConfig(10_000), gg, f, AF, math.inf).mean == 1.0

    def test_zero_count_has_positive_error(self):
        gg, f = scenario(60)
        est = estimate_outage(McConfig(10_000), gg, f, AF, 1e-6)
        assert est.mean == 0.0 and est.std_error > 0

    def test_caption_scenario_ten_million(self):
        gg, f = scenario(20)
        est = estimate_outage(McConfig(10_000_000, workers=4), gg, f, AF, 1.0)
        exact = af_cdf(gg, f, AF, 1.0)
        assert abs(exact.value - est.mean) <= 3 * est.std_error + exact.err_estimate


class TestBer:
    def test_degenerate_channel_gives_half(self):
        # gamma == 0: Gamma(p, 0) = Gamma(p), so the conditional BER is n delta / 2
        assert float(CBPSK.conditional_ber(0.0)) == 0.5
        assert float(DBPSK.conditional_ber(0.0)) == 0.5

    def test_dbpsk_ten_million_at_fifteen_db(self):
        gg, f = scenario(15)
        est = estimate_ber(McConfig(10_000_000, workers=4), gg, f, AF, DBPSK)
        exact = avg_ber(gg, f, AF, DBPSK)
        assert abs(exact.value - est.mean) <= 3 * est.std_error + exact.err_estimate


class TestCapacities:
    def test_vanishing_snr(self):
        gg, f = scenario(-80)
        cfg = McConfig(10_000)
        assert estimate_capacity(cfg, gg, f, AF).mean == pytest.approx(0.0, abs=1e-6)
        assert estimate_effective_capacity(cfg, gg, f, AF, 1.0).mean == pytest.approx(0.0, abs=1e-6)

    @settings(max_examples=10, deadline=None)
    @given(st.floats(0, 40), st.sampled_from([0.893, 5.0263]), st.sampled_from(["AF", "DF"]))
    def test_effective_below_ergodic(self, snr_db, xi, mode):
        gg, f = scenario(snr_db, xi=xi)
        relay = AF if mode == "AF" else DF
        est = estimate_all(McConfig(20_000, seed=1), gg, f, relay, gamma_th=None, cap=CapacityMode(1.0),
                           effcap_A=(1.0,))
        assert est["effcap:1"].mean <= est["capacity"].mean

    def test_caption_scenario_at_25_db(self):
        gg, f = scenario(25)
        est = estimate_all(McConfig(1_000_000), gg, f, AF, gamma_th=None, cap=CapacityMode(1.0),
                           effcap_A=(1.0,))
        cap = ergodic_capacity(gg, f, AF)
        ec = effective_capacity(gg, f, AF, EffectiveCapacityParams(1.0))
        assert abs(cap.value - est["capacity"].mean) <= 3 * est["capacity"].std_error + cap.err_estimate
        assert abs(ec.value - est["effcap:1"].mean) <= 3 * est["effcap:1"].std_error + ec.err_estimate


class TestReproducibility:
    def test_bit_identical_for_fixed_seed_and_workers(self):
        gg, f = scenario(10)
        cfg = McConfig(200_000, seed=99, workers=3)
        a = estimate_all(cfg, gg, f, AF, modulations={"DBPSK": DBPSK}, cap=CapacityMode(1.0))
        b = estimate_all(cfg, gg, f, AF, modulations={"DBPSK": DBPSK}, cap=CapacityMode(1.0))
        assert a == b

    def test_worker_count_changes_within_five_sigma(self):
        gg, f = scenario(10)
        a = estimate_capacity(McConfig(200_000, seed=99, workers=1), gg, f, AF)
        b = estimate_capacity(McConfig(200_000, seed=99, workers=4), gg, f, AF)
        assert a.mean != b.mean
        assert abs(a.mean - b.mean) <= 5 * math.hypot(a.std_error, b.std_error)

    def test_quadrupled_samples_halve_error(self):
        gg, f = scenario(10)
        ratios = []
        for seed in range(3):
            small = estimate_capacity(McConfig(50_000, seed=seed), gg, f, AF).std_error
            big = estimate_capacity(McConfig(200_000, seed=seed), gg, f, AF).std_error
            ratios.append(big / small)
        assert all(r == pytest.approx(0.5, rel=0.2) for r in ratios)

    def test_shared_draws_match_single_metric(self):
        gg, f = scenario(10)
        cfg = McConfig(50_000, seed=4)
        joint = estimate_all(cfg, gg, f, AF, gamma_th=1.0)
        assert joint["outage"].mean == estimate_outage(cfg, gg, f, AF, 1.0).mean
