"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a single PASS/FAIL line through the ``acceptance``
fixture; the lines are repeated in the terminal summary.
"""
import cmath
import math
import time

import numpy as np
import pytest
from scipy import stats

from dualhop.channels import FtrParams, GammaGammaParams, ftr_pdf, ftr_required_terms, ftr_sample, gg_pdf
from dualhop.cli import (
    TABLE_REFERENCE,
    compute_table,
    figure_checks,
    figure_rows,
    load_preset,
    write_csv,
)
from dualhop.link_metrics import (
    CBPSK,
    DBPSK,
    CapacityMode,
    EffectiveCapacityParams,
    RelayConfig,
    af_cdf,
    af_cdf_oracle,
    avg_ber,
    df_cdf,
    df_cdf_oracle,
    diversity_order,
    effective_capacity,
    ergodic_capacity,
    outage,
)
from dualhop.mellin_barnes import BivariateFoxHSpec, FoxHSpec, fox_h, fox_h2
from dualhop.monte_carlo import McConfig, estimate_all, estimate_outage
from dualhop.specfun import gauss_2f1, legendre_p, log_gamma

AF = RelayConfig("AF_fixed_gain", 1.7)
DF = RelayConfig("DF")
TABLE_CHANNELS = [(10.0, 2.0, 0.5), (10.0, 0.3, 0.5), (5.0, 8.5, 0.35)]


def hops(snr_db, alpha, beta, xi, r, K, m, delta):
    g = 10.0 ** (snr_db / 10.0)
    return GammaGammaParams(alpha, beta, xi, r, g), FtrParams.from_mean_snr(K, m, delta, g)


def _truncation_table(acceptance, criterion, epsilon, ref, eps_tol):
    start = time.perf_counter()
    got = [ftr_required_terms(FtrParams(K, m, d, 1.0), epsilon) for K, m, d in TABLE_CHANNELS]
    elapsed = time.perf_counter() - start
    n_ok = [N == rN for (N, _), (rN, _) in zip(got, ref)]
    e_ok = [abs(e - re) <= eps_tol * re for (_, e), (_, re) in zip(got, ref)]
    passed = all(n_ok) and all(e_ok) and elapsed < 1.0
    detail = ", ".join(f"N={N} (ref {rN}) eps={e:.2e} (ref {re:.1e})" for (N, e), (rN, re) in zip(got, ref))
    acceptance(criterion, passed, f"{detail}; {elapsed:.2f} s")
    assert passed


def test_criterion_1_table_one(acceptance):
    _truncation_table(acceptance, 1, 1e-3, TABLE_REFERENCE[1], 0.05)


def test_criterion_2_table_two(acceptance):
    _truncation_table(acceptance, 2, 1e-5, TABLE_REFERENCE[2], 0.10)


def _rank(values):
    return list(np.argsort(np.asarray(values), kind="stable"))


def test_criterion_3_table_three_trend(acceptance):
    rows = compute_table(3)
    ours = [r["N"] for r in rows]
    ref = [r["reference_N"] for r in rows]
    passed = _rank(ours) == _rank(ref)
    exact = sum(a == b for a, b in zip(ours, ref))
    acceptance(3, passed, f"N2 ours={ours} reference={ref}; ordering {'matches' if passed else 'differs'}; "
                          f"{exact}/6 exact")
    assert passed


def _oracle_corpus(n=20, seed=2019):
    rng = np.random.default_rng(seed)
    turbulence = [(5.42, 3.8), (3.446, 1.032)]
    corpus = []
    for _ in range(n):
        a, b = turbulence[rng.integers(2)]
        corpus.append((a, b, float(rng.choice([0.893, 2.0, 5.0263])), int(rng.choice([1, 2])),
                       float(rng.choice([2.0, 5.0, 10.0])), float(rng.choice([0.3, 2.0, 8.5])),
                       float(rng.choice([0.35, 0.5, 0.9]))))
    return corpus


def test_criterion_4_oracle_equivalence(acceptance):
    start = time.perf_counter()
    snrs = [0, 10, 20, 30, 40, 50, 60]
    worst_af = worst_df = 0.0
    bad = []
    for params in _oracle_corpus():
        for snr in snrs:
            gg, f = hops(snr, *params)
            ex, orc = af_cdf(gg, f, AF, 1.0).value, af_cdf_oracle(gg, f, AF, 1.0).value
            rel_af = abs(ex - orc) / orc
            exd, ord_ = df_cdf(gg, f, 1.0).value, df_cdf_oracle(gg, f, 1.0).value
            rel_df = abs(exd - ord_) / ord_
            worst_af, worst_df = max(worst_af, rel_af), max(worst_df, rel_df)
            if rel_af > 1e-4 or rel_df > 1e-6:
                bad.append((params, snr, rel_af, rel_df))
    elapsed = time.perf_counter() - start
    passed = not bad and elapsed < 600
    acceptance(4, passed, f"140 points: worst AF rel {worst_af:.1e} (tol 1e-4), worst DF rel {worst_df:.1e} "
                          f"(tol 1e-6), {len(bad)} violations; {elapsed:.0f} s")
    assert passed, bad[:5]


MC_PRESETS = [f"{t}_{p}_pe_{rel}_r1" for t in ("moderate", "strong") for p in ("negligible", "strong")
              for rel in ("af", "df")]
MC_GRID = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]


def _mc_point(cfg, snr):
    """(name, exact, exact err, mc mean, mc std error) for every metric at one point."""
    gg, f = cfg.channels(snr)
    mc = estimate_all(cfg.mc, gg, f, cfg.relay, gamma_th=cfg.gamma_th, modulations={"DBPSK": DBPSK, "CBPSK": CBPSK},
                      cap=cfg.capacity, effcap_A=(1.0, 5.0))
    out = []
    o = outage(gg, f, cfg.relay, cfg.gamma_th)
    est = mc["outage"]
    if o.value < 1e-4:
        est = estimate_outage(McConfig(10_000_000, cfg.mc.seed, 4), gg, f, cfg.relay, cfg.gamma_th)
    out.append(("outage", o, est))
    for name, mod in (("DBPSK", DBPSK), ("CBPSK", CBPSK)):
        out.append((f"ber_{name}", avg_ber(gg, f, cfg.relay, mod), mc[f"ber:{name}"]))
    out.append(("capacity", ergodic_capacity(gg, f, cfg.relay, cfg.capacity), mc["capacity"]))
    for A in (1.0, 5.0):
        out.append((f"effcap_A{A:g}", effective_capacity(gg, f, cfg.relay, EffectiveCapacityParams(A)),
                    mc[f"effcap:{A:g}"]))
    return out


def test_criterion_5_monte_carlo(acceptance):
    start = time.perf_counter()
    total, misses = 0, []
    for name in MC_PRESETS:
        cfg = load_preset(name)
        for snr in MC_GRID:
            for metric, exact, est in _mc_point(cfg, snr):
                total += 1
                z = abs(exact.value - est.mean) / est.std_error if est.std_error > 0 else math.inf
                if abs(exact.value - est.mean) > 3 * est.std_error + exact.err_estimate:
                    misses.append(f"{name} {metric} @ {snr:g} dB z={z:.2f}")
    elapsed = time.perf_counter() - start
    passed = not misses and elapsed < 1200
    acceptance(5, passed, f"{total - len(misses)}/{total} points inside 3 sigma; {elapsed:.0f} s"
               + (f"; misses: {misses}" if misses else ""))
    assert passed, misses


SLOPE_SCENARIOS = [
    ("AF, min = 2", (5.42, 3.8, 5.0263, 1), AF),
    ("AF, min = xi^2", (5.42, 3.8, 0.893, 1), AF),
    ("DF, min = 1", (5.42, 3.8, 5.0263, 1), DF),
    ("AF, min = beta/r", (3.446, 1.032, 5.0263, 2), AF),
]


def test_criterion_6_diversity_slopes(acceptance):
    dbs = np.arange(45.0, 60.1, 2.5)
    parts, passed = [], True
    for label, (a, b, xi, r), relay in SLOPE_SCENARIOS:
        vals = [outage(*hops(d, a, b, xi, r, 10.0, 2.0, 0.5), relay, 1.0).value for d in dbs]
        slope = -np.polyfit(dbs / 10.0, np.log10(vals), 1)[0]
        gd = diversity_order(GammaGammaParams(a, b, xi, r, 1.0), relay)
        ok = abs(slope - gd) <= 0.05 * gd
        passed &= ok
        parts.append(f"{label}: slope {slope:.4f} vs {gd:.4f}")
    acceptance(6, passed, "; ".join(parts))
    assert passed


def test_criterion_7a_rayleigh_reduction(acceptance):
    p = FtrParams.from_mean_snr(0.0, 2.0, 0.5, 10.0)
    x = ftr_sample(p, np.random.default_rng(70), 1_000_000)
    ks = stats.kstest(x, stats.expon(scale=10.0).cdf).statistic
    g = np.linspace(0.0, 100.0, 2001)
    dev = float(np.max(np.abs(ftr_pdf(p, g) - np.exp(-g / 10.0) / 10.0)))
    passed = ks < 0.002 and dev < 1e-10
    acceptance("7a", passed, f"K=0: KS {ks:.2e} (tol 2e-3), max pdf deviation {dev:.1e} (tol 1e-10)")
    assert passed


def _nakagami_af_mean(gg, m, c_r, h):
    from scipy import special as sp

    v = np.linspace(math.log(gg.mu_r) - 30.0, math.log(gg.mu_r) + 8.0, 4000)
    u = np.exp(v)
    x, w = sp.roots_genlaguerre(80, m - 1.0)
    g2 = x * gg.mu_r / m
    inner = (h(u[:, None] * g2[None, :] / (g2[None, :] + c_r)) * (w / math.gamma(m))[None, :]).sum(axis=1)
    return float(np.trapezoid(gg_pdf(gg, u) * u * inner, v))


def _nakagami_af_outage(gg, m, c_r, gamma_th):
    v = np.linspace(math.log(gg.mu_r) - 30.0, math.log(gg.mu_r) + 8.0, 4000)
    u = np.exp(v)
    inner = np.where(u <= gamma_th, 1.0,
                     stats.gamma.cdf(gamma_th * c_r / np.maximum(u - gamma_th, 1e-300), m, scale=gg.mu_r / m))
    return float(np.trapezoid(gg_pdf(gg, u) * u * inner, v))


def test_criterion_7b_nakagami_reduction(acceptance):
    m = 2.0
    worst, parts = 0.0, []
    for snr in (0.0, 10.0, 20.0):
        gg, f = hops(snr, 5.42, 3.8, 5.0263, 1, 200.0, m, 0.0)
        pairs = {
            "outage": (outage(gg, f, AF, 1.0).value, _nakagami_af_outage(gg, m, 1.7, 1.0)),
            "ber_DBPSK": (avg_ber(gg, f, AF, DBPSK).value,
                          _nakagami_af_mean(gg, m, 1.7, lambda y: 0.5 * np.exp(-y))),
            "capacity": (ergodic_capacity(gg, f, AF).value, _nakagami_af_mean(gg, m, 1.7, lambda y: np.log2(1 + y))),
            "effcap_A1": (effective_capacity(gg, f, AF, EffectiveCapacityParams(1.0)).value,
                          -math.log2(_nakagami_af_mean(gg, m, 1.7, lambda y: 1.0 / (1.0 + y)))),
        }
        for name, (ours, ref) in pairs.items():
            rel = abs(ours - ref) / abs(ref)
            worst = max(worst, rel)
            if rel > 0.02:
                parts.append(f"{name} @ {snr:g} dB off by {rel:.1%}")
    passed = worst <= 0.02
    acceptance("7b", passed, f"Delta=0, K=200 vs Nakagami-m: worst {worst:.2%} (tol 2%)"
               + (f"; {', '.join(parts)}" if parts else ""))
    assert passed


def test_criterion_7c_pointing_sentinel(acceptance):
    worst, where = 0.0, ""
    for relay in (AF, DF):
        g_inf, f = hops(20.0, 5.42, 3.8, math.inf, 1, 10.0, 2.0, 0.5)
        g_big, _ = hops(20.0, 5.42, 3.8, 1e3, 1, 10.0, 2.0, 0.5)

        def metrics(gg):
            return {
                "outage": outage(gg, f, relay, 1.0).value,
                "ber_DBPSK": avg_ber(gg, f, relay, DBPSK).value,
                "ber_CBPSK": avg_ber(gg, f, relay, CBPSK).value,
                "capacity": ergodic_capacity(gg, f, relay, CapacityMode(1.0)).value,
                "effcap_A1": effective_capacity(gg, f, relay, EffectiveCapacityParams(1.0)).value,
            }

        a, b = metrics(g_inf), metrics(g_big)
        for k in a:
            rel = abs(a[k] - b[k]) / abs(b[k])
            if rel > worst:
                worst, where = rel, f"{relay.mode} {k}"
    passed = worst <= 5e-3
    acceptance("7c", passed, f"xi=inf vs xi=1e3 at 20 dB: worst {worst:.1e} ({where}), tol 5e-3")
    assert passed


def test_criterion_8_special_functions(acceptance):
    rng = np.random.default_rng(8)
    fails = 0
    for _ in range(1000):
        z = complex(rng.uniform(-20, 20), rng.choice([-1, 1]) * rng.uniform(0.05, 20))
        lhs = log_gamma(z) + log_gamma(1 - z)
        rhs = cmath.log(math.pi / cmath.sin(math.pi * z))
        d = lhs - rhs
        d = complex(d.real, d.imag - 2 * math.pi * round(d.imag / (2 * math.pi)))
        fails += abs(d) > 1e-11 * max(1.0, abs(rhs))
    for _ in range(1000):
        z = complex(rng.uniform(0.1, 30), rng.uniform(-10, 10))
        fails += abs(cmath.exp(log_gamma(z + 1) - log_gamma(z)) - z) > 1e-12 * abs(z)
    gamma_s = FoxHSpec(1, 0, [], [(0.0, 1.0)])
    identities = [
        log_gamma(1.0) == 0,
        gauss_2f1(0.3, 1.7, 2.2, 0.0) == 1.0,
        abs(gauss_2f1(1, 1, 2, 0.3) + math.log1p(-0.3) / 0.3) < 1e-14,
        abs(legendre_p(1.0, 0, 2.0) - 2.0) < 1e-14,
        abs(fox_h(gamma_s, 1.0).value - math.exp(-1.0)) < 1e-12,
        abs(fox_h(FoxHSpec(1, 1, [(0.0, 1.0)], [(0.0, 1.0)]), 3.0).value - 0.25) < 1e-12,
        abs(fox_h2(BivariateFoxHSpec(gamma_s, gamma_s, ((1.5, -1.0, -1.0),)), 0.7, 2.0).value
            - math.gamma(1.5) * 3.7 ** -1.5) < 1e-10 * 3.7 ** -1.5,
    ]
    passed = fails == 0 and all(identities)
    acceptance(8, passed, f"2000 randomized reflection/recurrence cases, {fails} failures; "
                          f"{sum(identities)}/{len(identities)} closed-form identities")
    assert passed


def test_criterion_9_figures(acceptance, tmp_path):
    failed, n_checks = [], 0
    for fig in range(2, 10):
        rows = figure_rows(fig, threads=4)
        out = tmp_path / f"figure_{fig}.csv"
        write_csv(rows, out)
        assert out.stat().st_size > 0 and not any(r.failed for r in rows)
        for claim, ok in figure_checks(fig, rows):
            n_checks += 1
            if not ok:
                failed.append(f"fig {fig}: {claim}")
    passed = not failed
    acceptance(9, passed, f"CSVs for figures 2-9; {n_checks - len(failed)}/{n_checks} qualitative checks hold"
               + (f"; failing: {failed}" if failed else ""))
    assert passed
