"""Monte Carlo estimates of the end-to-end metrics.

Samples of the end-to-end SNR are drawn from the two hop samplers and the
metrics are sample means of smooth functionals: the outage indicator, the
conditional BER, log2(1 + c gamma) and (1 + gamma)^(-A). Every worker owns a
substream seeded by ``SeedSequence(seed, spawn_key=(stream_id,))`` and the
per-stream sums are merged in stream order, so a fixed (seed, workers) pair
gives bit-identical results.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from dualhop.channels import FtrParams, GammaGammaParams, ftr_sample, gg_sample
from dualhop.link_metrics import (
    DBPSK,
    CapacityMode,
    EffectiveCapacityParams,
    ModulationScheme,
    RelayConfig,
)

_Z95 = 1.959963984540054
_BLOCK = 1 << 18  # draws per vectorised block


@dataclass(frozen=True)
class McConfig:
    samples: int = 1_000_000
    seed: int = 20190101
    workers: int = 1

    def __post_init__(self) -> None:
        if int(self.samples) < 1000:
            raise ValueError("samples must be at least 1000 for a usable confidence interval")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.workers) < 1:
            raise ValueError("workers must be >= 1")

    def stream_sizes(self) -> list[int]:
        base, extra = divmod(int(self.samples), int(self.workers))
        return [base + (1 if i < extra else 0) for i in range(int(self.workers))]


@dataclass(frozen=True)
class Estimate:
    mean: float
    std_error: float
    ci95_low: float
    ci95_high: float
    samples_used: int

    def __post_init__(self) -> None:
        if not self.std_error >= 0:
            raise ValueError("std_error must be >= 0")
        if not self.ci95_low <= self.mean <= self.ci95_high:
            raise ValueError("confidence interval must bracket the mean")

    def contains(self, value: float, n_sigma: float = 3.0) -> bool:
        """True when ``value`` lies within n_sigma standard errors of the mean."""
        return abs(value - self.mean) <= n_sigma * self.std_error

    @classmethod
    def from_mean(cls, mean: float, se: float, n: int, lo: float = -math.inf, hi: float = math.inf) -> "Estimate":
        return cls(mean, se, max(lo, mean - _Z95 * se), min(hi, mean + _Z95 * se), n)


def stream_rng(seed: int, stream_id: int) -> np.random.Generator:
    """Generator for one substream, independent of how many others exist."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))))


def sample_end_to_end(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, rng: np.random.Generator,
                      size: int) -> np.ndarray:
    """End-to-end SNR draws: g1 g2 / (g2 + C_R) for AF, min(g1, g2) for DF."""
    g1 = gg_sample(gg, rng, size)
    g2 = ftr_sample(ftr, rng, size)
    if relay.is_af:
        return g1 * g2 / (g2 + relay.c_r)
    return np.minimum(g1, g2)


def _stream_sums(gg, ftr, relay, functionals, seed: int, stream_id: int, n: int) -> np.ndarray:
    """(sum f, sum f^2) for every functional over one substream."""
    rng = stream_rng(seed, stream_id)
    sums = np.zeros((len(functionals), 2))
    done = 0
    while done < n:
        size = min(_BLOCK, n - done)
        g = sample_end_to_end(gg, ftr, relay, rng, size)
        for i, f in enumerate(functionals):
            v = f(g)
            # numpy's pairwise summation keeps the rounding at O(log n) ulps
            sums[i, 0] += np.sum(v)
            sums[i, 1] += np.dot(v, v)
        done += size
    return sums


def sample_moments(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, functionals):
    """Sample mean and variance of each functional of the end-to-end SNR.

    Returns (means, variances, n). Streams run on a thread pool and are
    reduced in stream order.
    """
    sizes = cfg.stream_sizes()
    args = [(gg, ftr, relay, functionals, cfg.seed, i, n) for i, n in enumerate(sizes)]
    if cfg.workers == 1:
        parts = [_stream_sums(*a) for a in args]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(lambda a: _stream_sums(*a), args))
    total = np.zeros((len(functionals), 2))
    for p in parts:
        total += p
    n = int(cfg.samples)
    mean = total[:, 0] / n
    var = np.maximum(total[:, 1] / n - mean * mean, 0.0) * n / (n - 1)
    return mean, var, n


def _outage_estimate(k_over_n: float, n: int) -> Estimate:
    # Agresti-Coull style: the binomial error is taken at (k + 2) / (n + 4), so
    # that zero or all-one counts still carry a non-degenerate interval.
    k = k_over_n * n
    pt = (k + 2.0) / (n + 4.0)
    se = math.sqrt(pt * (1.0 - pt) / (n + 4.0))
    return Estimate.from_mean(k_over_n, se, n, 0.0, 1.0)


def _mean_estimate(mean: float, var: float, n: int, lo: float = -math.inf, hi: float = math.inf) -> Estimate:
    return Estimate.from_mean(float(mean), math.sqrt(var / n), n, lo, hi)


def _effcap_estimate(mean: float, var: float, n: int, A: float) -> Estimate:
    # R = -log2(E) / A; delta method: se_R = se_E / (A ln2 E)
    se_e = math.sqrt(var / n)
    value = -math.log2(mean) / A
    return Estimate.from_mean(value, se_e / (A * math.log(2.0) * mean), n, 0.0)


def outage_functional(gamma_th: float):
    return lambda g: (g < gamma_th).astype(float)


def capacity_functional(c: float):
    return lambda g: np.log1p(c * g) / math.log(2.0)


def effcap_functional(A: float):
    return lambda g: np.exp(-A * np.log1p(g))


def estimate_outage(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                    gamma_th: float = 1.0) -> Estimate:
    """Pr[gamma < gamma_th] with a binomial standard error."""
    if gamma_th < 0:
        raise ValueError("gamma_th must be >= 0")
    mean, _, n = sample_moments(cfg, gg, ftr, relay, [outage_functional(gamma_th)])
    return _outage_estimate(float(mean[0]), n)


def estimate_ber(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                 mod: ModulationScheme = DBPSK) -> Estimate:
    """Mean conditional BER over end-to-end SNR draws."""
    mean, var, n = sample_moments(cfg, gg, ftr, relay, [mod.conditional_ber])
    return _mean_estimate(mean[0], var[0], n, 0.0)


def estimate_capacity(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                      cap: CapacityMode | None = None) -> Estimate:
    """E[log2(1 + c gamma)] in bit/s/Hz."""
    cap = cap or CapacityMode.for_detection(gg.r)
    mean, var, n = sample_moments(cfg, gg, ftr, relay, [capacity_functional(cap.c)])
    return _mean_estimate(mean[0], var[0], n, 0.0)


def estimate_effective_capacity(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                                ec: EffectiveCapacityParams | float) -> Estimate:
    """-(1/A) log2 E[(1 + gamma)^(-A)], transformed after averaging."""
    A = ec.A if isinstance(ec, EffectiveCapacityParams) else EffectiveCapacityParams(float(ec)).A
    mean, var, n = sample_moments(cfg, gg, ftr, relay, [effcap_functional(A)])
    return _effcap_estimate(float(mean[0]), float(var[0]), n, A)


def estimate_all(cfg: McConfig, gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, *,
                 gamma_th: float | None = 1.0, modulations: dict | None = None,
                 cap: CapacityMode | None = None, effcap_A=()) -> dict:
    """Every requested metric from one shared set of draws.

    Keys: "outage", "ber:<name>", "capacity", "effcap:<A>". Pass None or an
    empty collection to skip a metric.
    """
    names, funcs, kinds = [], [], []
    if gamma_th is not None:
        names.append("outage")
        funcs.append(outage_functional(gamma_th))
        kinds.append(("outage", None))
    for name, mod in (modulations or {}).items():
        names.append(f"ber:{name}")
        funcs.append(mod.conditional_ber)
        kinds.append(("mean", None))
    if cap is not None:
        names.append("capacity")
        funcs.append(capacity_functional(cap.c))
        kinds.append(("mean", None))
    for A in effcap_A:
        names.append(f"effcap:{A:g}")
        funcs.append(effcap_functional(float(A)))
        kinds.append(("effcap", float(A)))
    if not funcs:
        return {}
    mean, var, n = sample_moments(cfg, gg, ftr, relay, funcs)
    out = {}
    for i, (name, (kind, A)) in enumerate(zip(names, kinds)):
        if kind == "outage":
            out[name] = _outage_estimate(float(mean[i]), n)
        elif kind == "effcap":
            out[name] = _effcap_estimate(float(mean[i]), float(var[i]), n, A)
        else:
            out[name] = _mean_estimate(mean[i], var[i], n, 0.0)
    return out
