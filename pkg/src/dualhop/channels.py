"""Hop channel models: Gamma-Gamma FSO with pointing errors and FTR mmWave.

SNRs are linear throughout. The FSO hop is parametrised by (alpha, beta, xi,
r, gamma_bar1); ``xi = math.inf`` means no pointing error. The RF hop is
parametrised by (K, m, Delta, sigma2) with mean SNR 2*sigma2*(1 + K).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy import special as sp
from scipy.interpolate import PchipInterpolator

from dualhop.mellin_barnes import FoxHSpec, fox_h_array, meijer_g_spec
from dualhop.result import NumericalError
from dualhop.specfun import legendre_p_neg_orders

# ---------------------------------------------------------------------------
# FSO hop


@dataclass(frozen=True)
class GammaGammaParams:
    alpha: float
    beta: float
    xi: float = math.inf
    r: int = 1
    gamma_bar1: float = 1.0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if not self.xi > 0:
            raise ValueError("xi must be positive (math.inf for no pointing error)")
        if self.r not in (1, 2):
            raise ValueError("r must be 1 (heterodyne) or 2 (IM/DD)")
        if not self.gamma_bar1 > 0:
            raise ValueError("gamma_bar1 must be positive")

    @property
    def pointing(self) -> bool:
        return math.isfinite(self.xi)

    @property
    def xi2(self) -> float:
        return self.xi ** 2

    @property
    def mu_r(self) -> float:
        if self.r == 1:
            return self.gamma_bar1
        a, b = self.alpha, self.beta
        if self.pointing:
            x2 = self.xi2
            ptg = x2 * (x2 + 2.0) / (x2 + 1.0) ** 2
        else:
            ptg = 1.0
        return self.gamma_bar1 * a * b * ptg / ((a + 1.0) * (b + 1.0))

    def with_mu(self, mu: float) -> "GammaGammaParams":
        """Copy whose electrical SNR mu_r equals ``mu``."""
        return GammaGammaParams(self.alpha, self.beta, self.xi, self.r, self.gamma_bar1 * mu / self.mu_r)

    def mellin_lower(self) -> list[tuple[float, float]]:
        """(b, B) pairs of the gamma factors carried by the turbulence/pointing law."""
        r = float(self.r)
        out = [(self.xi2, r)] if self.pointing else []
        return out + [(self.alpha, r), (self.beta, r)]

    def mellin_den(self) -> list[tuple[float, float]]:
        return [(self.xi2 + 1.0, float(self.r))] if self.pointing else []

    @property
    def prefactor(self) -> float:
        """xi^2 / (Gamma(alpha) Gamma(beta)); the xi^2 is dropped without pointing error."""
        lg = sp.gammaln(self.alpha) + sp.gammaln(self.beta)
        return (self.xi2 if self.pointing else 1.0) * math.exp(-lg)

    def scale(self) -> float:
        """Factor multiplying gamma inside the CDF H-function: (alpha beta)^r / mu_r."""
        return (self.alpha * self.beta) ** self.r / self.mu_r


@dataclass(frozen=True)
class RytovInputs:
    sigma_R2: float | None = None
    Cn2: float | None = None
    wavelength: float | None = None
    distance: float | None = None

    def rytov_variance(self) -> float:
        if self.sigma_R2 is not None:
            if not self.sigma_R2 > 0:
                raise ValueError("sigma_R2 must be positive")
            return float(self.sigma_R2)
        vals = (self.Cn2, self.wavelength, self.distance)
        if any(v is None or not v > 0 for v in vals):
            raise ValueError("need sigma_R2 or positive Cn2, wavelength and distance")
        k = 2 * math.pi / self.wavelength
        return 1.23 * k ** (7 / 6) * self.Cn2 * self.distance ** (11 / 6)


def rytov_to_alpha_beta(inputs: RytovInputs | float) -> tuple[float, float]:
    """Plane-wave, zero-inner-scale Gamma-Gamma parameters from the Rytov variance."""
    s2 = inputs.rytov_variance() if isinstance(inputs, RytovInputs) else float(inputs)
    if not s2 > 0:
        raise ValueError("Rytov variance must be positive")
    s125 = s2 ** (6 / 5)  # sigma_R^(12/5)
    a = 1.0 / math.expm1(0.49 * s2 / (1.0 + 1.11 * s125) ** (7 / 6))
    b = 1.0 / math.expm1(0.51 * s2 / (1.0 + 0.69 * s125) ** (5 / 6))
    return a, b


def gg_cdf_spec(p: GammaGammaParams) -> FoxHSpec:
    """CDF kernel Gamma(-s) / Gamma(1-s) times the turbulence factors.

    F(gamma) = prefactor * H[scale * gamma]. The contour lies left of 0, so
    small CDF values come out without cancellation.
    """
    lower = p.mellin_lower()
    return FoxHSpec(len(lower), 1, [(1.0, 1.0)] + p.mellin_den(), lower + [(0.0, 1.0)])


def gg_ccdf_spec(p: GammaGammaParams) -> FoxHSpec:
    """CCDF kernel Gamma(s) / Gamma(1+s) times the turbulence factors."""
    lower = [(0.0, 1.0)] + p.mellin_lower()
    return FoxHSpec(len(lower), 0, p.mellin_den() + [(1.0, 1.0)], lower)


def gg_pdf_spec(p: GammaGammaParams) -> FoxHSpec:
    a, b = p.alpha, p.beta
    if p.pointing:
        return meijer_g_spec(3, 0, [p.xi2 + 1.0], [p.xi2, a, b])
    return meijer_g_spec(2, 0, [], [a, b])


def _positive(gamma) -> np.ndarray:
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    if np.any(g < 0) or np.any(~np.isfinite(g)):
        raise ValueError("SNR values must be finite and >= 0")
    return g


def _scalar_or_array(template, out):
    return float(out[0]) if np.ndim(template) == 0 else out


def gg_pdf(p: GammaGammaParams, gamma):
    g = _positive(gamma)
    out = np.zeros_like(g)
    pos = g > 0
    if np.any(pos):
        w = p.alpha * p.beta * (g[pos] / p.mu_r) ** (1.0 / p.r)
        v, e = fox_h_array(gg_pdf_spec(p), w)
        # a density is never negative; values below zero within the error are tail noise
        v = np.where((v < 0) & (-v <= e), 0.0, v)
        out[pos] = p.prefactor / (p.r * g[pos]) * v
    return _scalar_or_array(gamma, out)


def gg_cdf(p: GammaGammaParams, gamma, with_error: bool = False):
    g = _positive(gamma)
    out = np.zeros_like(g)
    err = np.zeros_like(g)
    pos = g > 0
    if np.any(pos):
        v, e = fox_h_array(gg_cdf_spec(p), p.scale() * g[pos])
        out[pos] = p.prefactor * v
        err[pos] = p.prefactor * e
    res = _scalar_or_array(gamma, out)
    return (res, _scalar_or_array(gamma, err)) if with_error else res


def gg_ccdf(p: GammaGammaParams, gamma):
    g = _positive(gamma)
    out = np.ones_like(g)
    pos = g > 0
    if np.any(pos):
        v, _ = fox_h_array(gg_ccdf_spec(p), p.scale() * g[pos])
        out[pos] = p.prefactor * v
    return _scalar_or_array(gamma, out)


def _log_gg_irradiance_pdf(alpha: float, beta: float, i):
    """log density of a unit-mean Gamma-Gamma irradiance (Bessel-K form)."""
    i = np.asarray(i, dtype=float)
    nu = alpha - beta
    arg = 2.0 * np.sqrt(alpha * beta * i)
    with np.errstate(divide="ignore", over="ignore"):
        logk = np.log(sp.kve(nu, arg)) - arg
    big = ~np.isfinite(logk) & (arg >= 1.0)
    logk[big] = 0.5 * np.log(0.5 * math.pi / arg[big]) - arg[big]
    small = ~np.isfinite(logk) & (arg < 1.0)
    if np.any(small):
        # K_nu(x) ~ Gamma(|nu|) (2/x)^|nu| / 2 as x -> 0
        anu = abs(nu)
        if anu > 0:
            logk[small] = sp.gammaln(anu) + anu * np.log(2.0 / arg[small]) - math.log(2.0)
        else:
            logk[small] = np.log(-np.log(arg[small] / 2.0) - np.euler_gamma)
    return (math.log(2.0) + 0.5 * (alpha + beta) * math.log(alpha * beta)
            - sp.gammaln(alpha) - sp.gammaln(beta) + (0.5 * (alpha + beta) - 1.0) * np.log(i) + logk)


def _relative_quad_vec(f, a: float, b: float, epsrel: float) -> np.ndarray:
    """quad_vec with per-component relative accuracy.

    quad_vec controls the norm of the whole output vector, so components
    many decades below the largest one would only get absolute accuracy.
    Dividing each component by a coarse trapezoid estimate first puts them
    all on the same scale.
    """
    w = np.linspace(a, b, 801)
    coarse = np.trapezoid(np.stack([f(x) for x in w], axis=-1), w, axis=-1)
    scale = np.where(coarse > 0, coarse, 1.0)
    val, _ = integrate.quad_vec(lambda x: f(x) / scale, a, b, epsrel=epsrel, epsabs=0.0, limit=400)
    return val * scale


def gg_cdf_quadrature(p: GammaGammaParams, gamma, epsrel: float = 1e-12):
    """Independent CDF by quadrature of the irradiance-times-pointing product.

    With I unit-mean Gamma-Gamma and pointing factor U^(1/xi^2),
    (gamma/mu_r)^(1/r) = I * U^(1/xi^2), so
    F(gamma) = E_I[min(1, (z/I)^(xi^2))], z = (gamma/mu_r)^(1/r).
    """
    g = _positive(gamma)
    out = np.zeros_like(g)
    pos = g > 0
    if not np.any(pos):
        return _scalar_or_array(gamma, out)
    z = (g[pos] / p.mu_r) ** (1.0 / p.r)
    a, b = p.alpha, p.beta

    # substitute I = z * e^w
    def below(w):
        return np.exp(_log_gg_irradiance_pdf(a, b, z * np.exp(w)) + w) * z

    def above(w):
        damp = np.exp(-p.xi2 * w) if p.pointing else 0.0
        return np.exp(_log_gg_irradiance_pdf(a, b, z * np.exp(w)) + w) * z * damp

    out[pos] = _relative_quad_vec(below, -200.0, 0.0, epsrel)
    if p.pointing:
        out[pos] += _relative_quad_vec(above, 0.0, 60.0, epsrel)
    return _scalar_or_array(gamma, out)


def gg_ccdf_quadrature(p: GammaGammaParams, gamma, epsrel: float = 1e-12):
    """Independent CCDF: E_I[1 - min(1, (z/I)^(xi^2))], integrated over I > z only."""
    g = _positive(gamma)
    out = np.ones_like(g)
    pos = g > 0
    if not np.any(pos):
        return _scalar_or_array(gamma, out)
    z = (g[pos] / p.mu_r) ** (1.0 / p.r)
    a, b = p.alpha, p.beta

    def above(w):
        keep = -np.expm1(-p.xi2 * w) if p.pointing else 1.0
        return np.exp(_log_gg_irradiance_pdf(a, b, z * np.exp(w)) + w) * z * keep

    out[pos] = _relative_quad_vec(above, 0.0, 60.0, epsrel)
    return _scalar_or_array(gamma, out)


@lru_cache(maxsize=16)
def _inverse_cdf_table(alpha: float, beta: float, xi: float, r: int, nodes: int = 2048):
    """Monotone table of (logit F, log u) with u = gamma / mu_r."""
    p = GammaGammaParams(alpha, beta, xi, r, 1.0)
    unit = p.with_mu(1.0)
    # walk outwards a decade at a time until both tails drop below 1e-13
    lo = 1.0
    while gg_cdf(unit, lo) > 1e-13:
        lo /= 10.0
        if lo < 1e-300:
            raise NumericalError("could not bracket the lower tail of the FSO CDF")
    hi = 1.0
    while gg_ccdf(unit, hi) > 1e-13:
        hi *= 10.0
        if hi > 1e30:
            raise NumericalError("could not bracket the upper tail of the FSO CDF")
    u = np.logspace(math.log10(lo), math.log10(hi), nodes)
    F = gg_cdf(unit, u)
    C = gg_ccdf(unit, u)
    if np.any(F <= 0) or np.any(C <= 0):
        raise NumericalError("nonpositive CDF value while building the sampling table")
    y = np.log(F) - np.log(C)
    if np.any(np.diff(y) <= 0):
        raise NumericalError("FSO CDF table is not strictly increasing")
    theta = min(alpha, beta, p.xi2 if p.pointing else math.inf) / r
    return y, np.log(u), float(np.log(F[0])), theta, PchipInterpolator(y, np.log(u))


def gg_sample(p: GammaGammaParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF sampler built on the H-function CDF."""
    y_tab, logu_tab, logF0, theta, interp = _inverse_cdf_table(p.alpha, p.beta, p.xi, p.r)
    v = rng.random(size)
    v = np.where(v > 0, v, np.finfo(float).tiny)
    y = np.log(v) - np.log1p(-v)
    logu = np.empty(size)
    mid = (y >= y_tab[0]) & (y <= y_tab[-1])
    logu[mid] = interp(y[mid])
    low = y < y_tab[0]
    # lower tail: F ~ c u^theta
    logu[low] = logu_tab[0] + (np.log(v[low]) - logF0) / theta
    high = y > y_tab[-1]
    slope = (logu_tab[-1] - logu_tab[-2]) / (y_tab[-1] - y_tab[-2])
    logu[high] = logu_tab[-1] + slope * (y[high] - y_tab[-1])
    return p.mu_r * np.exp(logu)


def gg_sample_product(p: GammaGammaParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Generative sampler: Gamma(alpha) x Gamma(beta) irradiance times pointing loss."""
    x = rng.gamma(p.alpha, 1.0 / p.alpha, size)
    y = rng.gamma(p.beta, 1.0 / p.beta, size)
    w = x * y
    if p.pointing:
        w = w * rng.random(size) ** (1.0 / p.xi2)
    return p.mu_r * w ** p.r


# ---------------------------------------------------------------------------
# RF hop


@dataclass(frozen=True)
class FtrParams:
    K: float
    m: float
    delta: float
    sigma2: float

    def __post_init__(self) -> None:
        if not self.K >= 0:
            raise ValueError("K must be >= 0")
        if not self.m > 0:
            raise ValueError("m must be positive")
        if not 0 <= self.delta <= 1:
            raise ValueError("delta must lie in [0, 1]")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @classmethod
    def from_mean_snr(cls, K: float, m: float, delta: float, gamma_bar: float) -> "FtrParams":
        return cls(K, m, delta, gamma_bar / (2.0 * (1.0 + K)))

    @property
    def two_sigma2(self) -> float:
        return 2.0 * self.sigma2

    @property
    def gamma_bar_rf(self) -> float:
        return self.two_sigma2 * (1.0 + self.K)

    def with_mean_snr(self, gamma_bar: float) -> "FtrParams":
        return FtrParams.from_mean_snr(self.K, self.m, self.delta, gamma_bar)

    def shape_key(self) -> tuple[float, float, float]:
        return (float(self.K), float(self.m), float(self.delta))


_MAX_CONDITION = 1e-11 / np.finfo(float).eps  # about five digits lost


# beyond this index the double sum costs O(j^2) per coefficient; the phase
# average is as accurate and far cheaper there
_LEGENDRE_SCAN_MAX = 256
_NEGLIGIBLE_ASYMMETRY = 1e-9


def _log_d_j_legendre_sum(K: float, m: float, delta: float, j: int) -> tuple[float, float]:
    """log d_j from the finite Legendre double sum, and its condition number."""
    mK = m + K
    D = mK * mK - (K * delta) ** 2
    x = mK / math.sqrt(D)
    nu = j + m - 1.0
    logP, sgnP = legendre_p_neg_orders(nu, j, x)
    k = np.arange(j + 1)
    kk, ll = np.meshgrid(k, k, indexing="ij")
    valid = ll <= kk
    kk, ll = kk[valid], ll[valid]
    mu = kk - 2 * ll
    amu = np.abs(mu)
    logmag = (sp.gammaln(j + 1.0) - sp.gammaln(j - kk + 1.0)
              - sp.gammaln(ll + 1.0) - sp.gammaln(kk - ll + 1.0)
              + kk * math.log(delta / 2.0)
              + sp.gammaln(j + m + amu) + logP[amu])
    # For mu > 0, Gamma(j+m-mu) * P^mu = Gamma(j+m+mu) * P^-mu by the
    # integer-order connection formula, so one magnitude covers both signs.
    # Phases: exp(i pi (2l-k)/2) from the sum and exp(-i pi mu/2) from the
    # cut-normalised Legendre function, kept as exact quarter turns.
    quarter = np.array([1.0 + 0.0j, 1.0j, -1.0 + 0.0j, -1.0j])
    phase = quarter[(2 * ll - kk) % 4] * quarter[(-mu) % 4]
    top = float(np.max(logmag))
    terms = np.exp(logmag - top) * sgnP[amu] * phase
    re = float(np.sum(terms.real))
    condition = float(np.sum(np.abs(terms.real))) / abs(re) if re != 0 else math.inf
    if not (re > 0 and condition < _MAX_CONDITION):
        return math.nan, condition
    re = math.fsum(terms.real)
    im = math.fsum(terms.imag)
    if abs(im) > 1e-8 * abs(re) + 1e-12:
        raise NumericalError(f"d_{j}: imaginary residual {im:.3e} against real part {re:.3e}")
    return top + math.log(re) - 0.5 * (j + m) * math.log(D), condition


@lru_cache(maxsize=256)
def _legendre_sum_limit(K: float, m: float, delta: float) -> int:
    """First j at which the alternating double sum becomes ill-conditioned.

    Found by a fixed forward scan so the switch point never depends on the
    order in which coefficients are requested.
    """
    j = 0
    while j < _LEGENDRE_SCAN_MAX:
        val, _ = _log_d_j_legendre_sum(K, m, delta, j)
        if math.isnan(val):
            return j
        j += 1
    return j


@lru_cache(maxsize=8192)
def _log_d_j(K: float, m: float, delta: float, j: int) -> float:
    if K * delta <= _NEGLIGIBLE_ASYMMETRY * (m + K):
        # only k = 0 survives and the Legendre argument is 1; below the
        # threshold the dropped terms are O(delta^2), under double precision
        return float(sp.gammaln(j + m) - (j + m) * math.log(m + K))
    if j < _legendre_sum_limit(K, m, delta):
        return _log_d_j_legendre_sum(K, m, delta, j)[0]
    # The binomial expansion alternates in sign; past the switch point use
    # the phase average the sum was derived from.
    return _log_d_j_phase_average(K, m, delta, j)


def _log_d_j_phase_average(K: float, m: float, delta: float, j: int) -> float:
    """d_j = Gamma(m+j)/pi int_0^pi (1+D cos)^j (m+K+K D cos)^-(m+j) dphi.

    The integrand is smooth and 2*pi periodic, so the trapezoid rule
    converges geometrically; nodes are doubled until two levels agree.
    """
    n = 64 + 8 * j
    prev = None
    for _ in range(12):
        phi = (np.arange(n) + 0.5) * (2 * math.pi / n)
        c = np.cos(phi)
        with np.errstate(divide="ignore"):
            lf = j * np.log1p(delta * c) - (m + j) * np.log(m + K + K * delta * c)
        top = float(np.max(lf))
        val = top + math.log(math.fsum(np.exp(lf - top)) / n)
        if prev is not None and abs(val - prev) <= 1e-14 * max(1.0, abs(val)):
            return float(sp.gammaln(m + j)) + val
        prev = val
        n *= 2
    raise NumericalError(f"d_{j}: phase average did not converge")


def ftr_d_j(p: FtrParams, j: int) -> float:
    """Coefficient d_j of the FTR gamma mixture."""
    if j < 0:
        raise ValueError("j must be >= 0")
    return math.exp(_log_d_j(*p.shape_key(), int(j)))


def ftr_log_weights(p: FtrParams, n_terms: int) -> np.ndarray:
    """log w_j for j = 0..n_terms-1, w_j = m^m K^j d_j / (Gamma(m) j!)."""
    K, m, delta = p.shape_key()
    j = np.arange(n_terms)
    base = m * math.log(m) - sp.gammaln(m) - sp.gammaln(j + 1.0)
    if K == 0.0:
        kj = np.where(j == 0, 0.0, -np.inf)
    else:
        kj = j * math.log(K)
    logd = np.array([_log_d_j(K, m, delta, int(i)) for i in j])
    return base + kj + logd


def ftr_weights(p: FtrParams, n_terms: int) -> np.ndarray:
    return np.exp(ftr_log_weights(p, n_terms))


@dataclass(frozen=True)
class TruncationPolicy:
    """How many FTR mixture terms to keep.

    ``mode`` is "target" (smallest N whose normalisation deficit is below
    ``epsilon``) or "fixed" (exactly ``n`` as the last index).
    """

    mode: str = "target"
    epsilon: float = 1e-6
    n: int | None = None
    hard_cap: int = 5000

    def __post_init__(self) -> None:
        if self.mode not in ("target", "fixed"):
            raise ValueError("mode must be 'target' or 'fixed'")
        if self.mode == "target" and not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mode == "fixed":
            if self.n is None or self.n < 0:
                raise ValueError("fixed truncation needs n >= 0")
            if self.n > self.hard_cap:
                raise ValueError("n exceeds hard_cap")

    def resolve(self, p: FtrParams) -> tuple[int, float]:
        """(N, deficit) with terms j = 0..N kept."""
        if self.mode == "fixed":
            w = ftr_weights(p, self.n + 1)
            return self.n, max(0.0, 1.0 - math.fsum(w))
        return ftr_required_terms(p, self.epsilon, self.hard_cap)


DEFAULT_TRUNCATION = TruncationPolicy()


def ftr_required_terms(p: FtrParams, epsilon: float, hard_cap: int = 5000) -> tuple[int, float]:
    """Smallest N with 1 - sum_{j<=N} w_j < epsilon, and that deficit."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    chunk = 32
    n = 0
    while n <= hard_cap:
        upto = min(n + chunk, hard_cap + 1)
        w = ftr_weights(p, upto)
        # partial sums are increasing, so the first crossing is the answer
        deficits = 1.0 - np.cumsum(w)
        hit = np.nonzero(deficits < epsilon)[0]
        if hit.size:
            N = int(hit[0])
            return N, max(1.0 - math.fsum(w[: N + 1]), 0.0)
        n = upto
        chunk *= 2
    raise NumericalError(f"FTR truncation target {epsilon:g} not reached within hard_cap={hard_cap}")


def ftr_pdf(p: FtrParams, gamma, trunc: TruncationPolicy = DEFAULT_TRUNCATION):
    g = _positive(gamma)
    N, _ = trunc.resolve(p)
    lw = ftr_log_weights(p, N + 1)
    j = np.arange(N + 1)[:, None]
    s2 = p.two_sigma2
    # at gamma = 0 the j = 0 term is 0 * log 0; it is replaced by its limit below
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.log(g)[None, :]
        logt = lw[:, None] + j * lg - sp.gammaln(j + 1.0) - (j + 1.0) * math.log(s2) - g[None, :] / s2
    logt = np.where((j == 0) & (g[None, :] == 0), lw[0] - math.log(s2), logt)
    out = np.exp(logt).sum(axis=0)
    return _scalar_or_array(gamma, out)


def ftr_cdf(p: FtrParams, gamma, trunc: TruncationPolicy = DEFAULT_TRUNCATION):
    """Truncated mixture sum_j w_j P(j+1, gamma / 2 sigma^2); zero at the origin."""
    g = _positive(gamma)
    N, _ = trunc.resolve(p)
    w = ftr_weights(p, N + 1)
    j = np.arange(N + 1)[:, None]
    out = (w[:, None] * sp.gammainc(j + 1.0, g[None, :] / p.two_sigma2)).sum(axis=0)
    return _scalar_or_array(gamma, out)


def ftr_ccdf(p: FtrParams, gamma, trunc: TruncationPolicy = DEFAULT_TRUNCATION):
    """1 - ftr_cdf, summed from the upper tails to avoid cancellation."""
    g = _positive(gamma)
    N, deficit = trunc.resolve(p)
    w = ftr_weights(p, N + 1)
    j = np.arange(N + 1)[:, None]
    out = (w[:, None] * sp.gammaincc(j + 1.0, g[None, :] / p.two_sigma2)).sum(axis=0)
    out = out + max(0.0, 1.0 - math.fsum(w))
    return _scalar_or_array(gamma, out)


def ftr_sample(p: FtrParams, rng: np.random.Generator, size: int) -> np.ndarray:
    """Two fluctuating specular waves plus diffuse complex Gaussian scatter."""
    P = p.two_sigma2 * p.K
    a = math.sqrt(P * (1.0 + p.delta))
    b = math.sqrt(P * (1.0 - p.delta))
    v1, v2 = 0.5 * (a + b), 0.5 * (a - b)
    zeta = rng.gamma(p.m, 1.0 / p.m, size)
    phi = rng.uniform(0.0, 2 * math.pi, (2, size))
    sd = math.sqrt(p.sigma2)
    diffuse = rng.normal(0.0, sd, (2, size))
    amp = np.sqrt(zeta)
    re = amp * (v1 * np.cos(phi[0]) + v2 * np.cos(phi[1])) + diffuse[0]
    im = amp * (v1 * np.sin(phi[0]) + v2 * np.sin(phi[1])) + diffuse[1]
    return re * re + im * im
