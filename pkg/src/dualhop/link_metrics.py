"""End-to-end statistics and performance metrics of the dual-hop link.

Every metric has an exact path built on bivariate H-functions and an
independent integral oracle. SNRs are linear.

Notation: the FSO hop is ``gg`` (Gamma-Gamma with pointing error), the RF
hop is ``ftr`` (FTR mixture with weights w_j and scale 2 sigma^2), and the
FSO CDF is P * H[...] with P = ``gg.prefactor``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from dualhop.channels import (
    DEFAULT_TRUNCATION,
    FtrParams,
    GammaGammaParams,
    TruncationPolicy,
    ftr_ccdf,
    ftr_cdf,
    ftr_log_weights,
    ftr_pdf,
    ftr_required_terms,
    ftr_weights,
    gg_ccdf,
    gg_ccdf_quadrature,
    gg_ccdf_spec,
    gg_cdf,
    gg_cdf_quadrature,
    gg_cdf_spec,
    gg_pdf,
)
from dualhop.mellin_barnes import BivariateFoxHSpec, FoxHSpec, fox_h2_series, fox_h_array, fox_h_series
from dualhop.result import MetricResult, NumericalError

# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class RelayConfig:
    mode: str
    c_r: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("AF_fixed_gain", "DF"):
            raise ValueError("relay mode must be 'AF_fixed_gain' or 'DF'")
        if self.mode == "AF_fixed_gain":
            if self.c_r is None or not (math.isfinite(self.c_r) and self.c_r > 0):
                raise ValueError("AF relaying needs a finite relay gain c_r > 0")
        elif self.c_r is not None:
            raise ValueError("c_r is only meaningful for AF relaying")

    @property
    def is_af(self) -> bool:
        return self.mode == "AF_fixed_gain"


@dataclass(frozen=True)
class ModulationScheme:
    """Conditional BER (delta / (2 Gamma(p))) sum_k Gamma(p, q_k gamma)."""

    delta: float
    p: float
    q: tuple
    n: int

    def __post_init__(self) -> None:
        q = tuple(float(v) for v in self.q)
        object.__setattr__(self, "q", q)
        if not (self.delta > 0 and self.p > 0):
            raise ValueError("delta and p must be positive")
        if self.n < 1 or len(q) != self.n:
            raise ValueError("q must hold exactly n positive entries")
        if any(not v > 0 for v in q):
            raise ValueError("q entries must be positive")

    def conditional_ber(self, gamma):
        g = np.asarray(gamma, dtype=float)
        out = sum(sp.gammaincc(self.p, qk * g) for qk in self.q)
        return 0.5 * self.delta * out


CBPSK = ModulationScheme(1.0, 0.5, (1.0,), 1)
DBPSK = ModulationScheme(1.0, 1.0, (1.0,), 1)
MODULATIONS = {"CBPSK": CBPSK, "DBPSK": DBPSK}


@dataclass(frozen=True)
class CapacityMode:
    """Ergodic capacity E[log2(1 + c gamma)]; c depends on the detector."""

    c: float

    @classmethod
    def for_detection(cls, r: int) -> "CapacityMode":
        if r == 1:
            return cls(1.0)
        if r == 2:
            return cls(math.e / (2 * math.pi))
        raise ValueError("r must be 1 or 2")

    def __post_init__(self) -> None:
        if not (math.isfinite(self.c) and self.c > 0):
            raise ValueError("capacity constant must be positive")


@dataclass(frozen=True)
class EffectiveCapacityParams:
    """Normalised delay-QoS exponent A = theta T B / ln 2."""

    A: float | None = None
    theta: float | None = None
    T: float | None = None
    B: float | None = None

    def __post_init__(self) -> None:
        parts = (self.theta, self.T, self.B)
        if all(v is not None for v in parts):
            a = self.theta * self.T * self.B / math.log(2.0)
            if self.A is not None and not math.isclose(a, self.A, rel_tol=1e-12):
                raise ValueError("A disagrees with theta*T*B/ln 2")
            object.__setattr__(self, "A", a)
        elif any(v is not None for v in parts):
            raise ValueError("give all of theta, T and B, or none")
        if self.A is None or not (math.isfinite(self.A) and self.A > 0):
            raise ValueError("effective-capacity exponent A must be positive")


@dataclass
class AsymptoticExpansion:
    """High-SNR expansion sum_i coef_i * gamma^theta_i.

    Each term records its family ("rf" for theta = j+1, "pointing" for
    xi^2/r, "alpha" for alpha/r, "beta" for beta/r, and "*"-joined names for
    mixed terms), its order (the power of 1/SNR when both hops share the
    same average SNR) and the RF index j it came from (-1 for none).
    """

    domain: str
    exponents: list = field(default_factory=list)
    coefficients: list = field(default_factory=list)
    families: list = field(default_factory=list)
    orders: list = field(default_factory=list)
    indices: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    log_abs: list = field(default_factory=list)

    def add(self, theta: float, coef: float, family: str, order: float, index: int = -1,
            log_abs: float | None = None) -> None:
        """Append a term. ``log_abs`` keeps log|coef| when coef itself underflows."""
        self.exponents.append(float(theta))
        self.coefficients.append(float(coef))
        self.log_abs.append(float(log_abs) if log_abs is not None else
                            (math.log(abs(coef)) if coef != 0.0 else -math.inf))
        self.families.append(family)
        self.orders.append(float(order))
        self.indices.append(int(index))

    def evaluate(self, gamma):
        g = np.asarray(gamma, dtype=float)
        th = np.asarray(self.exponents)
        co = np.asarray(self.coefficients)
        out = np.sum(co[:, None] * g.reshape(-1)[None, :] ** th[:, None], axis=0)
        return out.reshape(g.shape)

    def subset(self, keep) -> "AsymptoticExpansion":
        keep = np.asarray(keep, dtype=bool)
        out = AsymptoticExpansion(self.domain)
        for name in ("exponents", "coefficients", "families", "orders", "indices", "thetas", "log_abs"):
            vals = getattr(self, name)
            if vals:
                setattr(out, name, [v for v, k in zip(vals, keep) if k])
        return out

    @property
    def leading_order(self) -> float:
        """Smallest SNR order among the nonzero terms."""
        return min(o for o, c in zip(self.orders, self.coefficients) if c != 0.0)


# ---------------------------------------------------------------------------
# helpers


def _require_af(relay: RelayConfig) -> None:
    if not relay.is_af:
        raise ValueError("this operation needs AF relaying")


def _require_df(relay: RelayConfig | None) -> None:
    if relay is not None and relay.is_af:
        raise ValueError("this operation needs DF relaying")


def _check_gamma(gamma: float) -> float:
    g = float(gamma)
    if not (math.isfinite(g) and g >= 0):
        raise ValueError("gamma must be finite and >= 0")
    return g


def _y_kernel(gg: GammaGammaParams, upper_n=(), lower_m=(), upper_den=()) -> FoxHSpec:
    """Turbulence/pointing factors in the t-plane with unit coefficients.

    Gamma(xi^2 + t) Gamma(alpha + t) Gamma(beta + t) / Gamma(xi^2 + 1 + t)
    times the extra factors; the last upper entry carries the 1/r scaling.
    """
    lower = [(v, 1.0) for v, _ in gg.mellin_lower()]
    den = [(v, 1.0) for v, _ in gg.mellin_den()]
    return FoxHSpec(len(lower) + len(lower_m), len(upper_n), list(upper_n) + den + list(upper_den),
                    lower + list(lower_m))


def _af_terms(ftr: FtrParams, trunc: TruncationPolicy):
    N, deficit = trunc.resolve(ftr)
    w = ftr_weights(ftr, N + 1)
    return N, deficit, w


class _RfSeries:
    """x-kernels Gamma(j + 1 + s) * rest(s) for j = 0..N.

    The stacked log-kernels come from log Gamma(1 + s) plus a running sum of
    log(k + s), which is much cheaper than N + 1 separate log-gamma calls.
    """

    def __init__(self, N: int, rest: FoxHSpec):
        self.N = N
        self.rest = rest
        self.kernels = [rest.with_extra(lower_m=[(j + 1.0, 1.0)]) for j in range(N + 1)]

    def log_stack(self, s):
        s = np.asarray(s, dtype=complex)
        base = self.rest.log_kernel(s) + sp.loggamma(1.0 + s)
        if self.N == 0:
            return base[None, :]
        k = np.arange(1, self.N + 1, dtype=float)
        steps = np.cumsum(np.log(k[:, None] + s[None, :]), axis=0)
        return np.vstack([base[None, :], base[None, :] + steps])


def _series_over_j(spec: BivariateFoxHSpec, series: _RfSeries, log_cond, w, x: float, y: float,
                   sign: float = 1.0):
    """sum_j w_j c_j with c_j = sign exp(log_cond_j) H2_j(x, y).

    The conditional factors are folded into the stacked kernels, so c_j stays
    of moderate size even when 1/j! and Gamma(j + 1 + s) are out of range on
    their own. The contour is picked for the heaviest term.
    Returns (value, err, c, diag).
    """
    log_cond = np.asarray(log_cond, dtype=float)
    rep = int(np.argmax(log_cond + np.log(np.maximum(w, 1e-300))))

    def stack(s):
        return series.log_stack(s) + log_cond[:, None]

    cond, errs, diag = fox_h2_series(spec, series.kernels, x, y, rep=rep, x_log_stack=stack)
    cond = sign * cond
    value = math.fsum(w * cond)
    err = float(np.sum(w * errs))
    return value, err, cond, diag


def _log_abs_scale(scale: float) -> tuple[float, float]:
    if scale == 0.0:
        raise ValueError("zero series scale")
    return math.log(abs(scale)), math.copysign(1.0, scale)


def _fso_mean(gg: GammaGammaParams) -> float:
    """E[gamma_FSO] from the moments of the irradiance and pointing factors."""
    r = gg.r
    a, b = gg.alpha, gg.beta
    log_m = sp.gammaln(a + r) + sp.gammaln(b + r) - sp.gammaln(a) - sp.gammaln(b) - r * math.log(a * b)
    ptg = gg.xi2 / (gg.xi2 + r) if gg.pointing else 1.0
    return gg.mu_r * math.exp(log_m) * ptg


def _fso_upper_point(gg: GammaGammaParams, tail: float) -> float:
    """A point beyond which the FSO CCDF is below ``tail``."""
    x = gg.mu_r
    while gg_ccdf(gg, x) > tail:
        x *= 4.0
        if x > 1e300:
            raise NumericalError("FSO CCDF does not decay")
    return x


def _fso_lower_point(gg: GammaGammaParams, tail: float) -> float:
    """A point below which the FSO CDF is below ``tail``."""
    x = gg.mu_r
    while gg_cdf(gg, x) > tail:
        x /= 100.0
        if x < 1e-300:
            raise NumericalError("FSO CDF does not vanish at the origin")
    return x


def _rf_support(ftr: FtrParams, N: int, tail: float) -> tuple[float, float]:
    """(lo, hi) outside which every kept gamma component has mass below ``tail``."""
    s2 = ftr.two_sigma2
    hi = s2 * float(sp.gammainccinv(N + 1.0, tail))
    lo = s2 * float(sp.gammaincinv(1.0, tail))
    return lo, hi


def _trapezoid_halving(f, lo: float, hi: float, h: float, rel_tol: float, max_levels: int = 8,
                       abs_tol: float = 0.0):
    """Trapezoid rule on [lo, hi] with step halving; returns (value, err, nodes).

    ``f`` may return a trailing axis of several integrands at once. Meant for
    integrands analytic in a strip around the real axis and negligible at
    both ends, where the rule converges geometrically. ``abs_tol`` accepts
    changes that are negligible against a larger quantity the integral is
    added to.
    """
    n = max(2, int(math.ceil((hi - lo) / h)))
    x = np.linspace(lo, hi, n + 1)
    y = np.asarray(f(x), dtype=float)
    prev = np.trapezoid(y, x, axis=-1)
    for _ in range(max_levels):
        mids = 0.5 * (x[1:] + x[:-1])
        ym = np.asarray(f(mids), dtype=float)
        xx = np.empty(x.size + mids.size)
        yy = np.empty(y.shape[:-1] + xx.shape)
        xx[0::2], xx[1::2] = x, mids
        yy[..., 0::2], yy[..., 1::2] = y, ym
        x, y = xx, yy
        cur = np.trapezoid(y, x, axis=-1)
        delta = np.abs(cur - prev)
        if np.all(delta <= rel_tol * np.abs(cur) + abs_tol):
            return cur, delta, x.size
        prev = cur
    raise NumericalError("trapezoid quadrature did not converge")


def _scalar(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


# ---------------------------------------------------------------------------
# AF closed forms


# x-kernel tails (without the Gamma(j + 1 + s) factor)
_RF_CDF_REST = FoxHSpec(1, 1, [(1.0, 1.0)], [(1.0, 1.0), (0.0, 1.0)])  # G(1+s) G(-s) / G(1-s), AF CDF
_RF_CCDF_REST = FoxHSpec(1, 0, [], [(0.0, 1.0)])  # G(s), AF CCDF
_P_CDF_REST = FoxHSpec(0, 1, [(1.0, 1.0)], [(0.0, 1.0)])  # G(-s) / G(1-s): lower regularised gamma
_Q_CCDF_REST = FoxHSpec(1, 0, [(1.0, 1.0)], [(0.0, 1.0)])  # G(s) / G(1+s): upper regularised gamma


def _af_series(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, trunc: TruncationPolicy,
               rest: FoxHSpec, y_arg: float, y_lower_m=(), y_upper_n=(), scale: float = 1.0):
    """sum_j scale w_j P / (r j!) H2_j for the AF family of kernels.

    The y-kernel is Theta_FSO(t) / Gamma(1 + t/r) times the extra factors,
    the joint factor is Gamma(t/r - s) and X = C_R / 2 sigma^2.
    """
    N, deficit, w = _af_terms(ftr, trunc)
    r = float(gg.r)
    ykern = _y_kernel(gg, upper_n=y_upper_n, lower_m=y_lower_m, upper_den=[(1.0, 1.0 / r)])
    series = _RfSeries(N, rest)
    spec = BivariateFoxHSpec(series.kernels[0], ykern, [(0.0, -1.0, 1.0 / r)])
    ls, sign = _log_abs_scale(scale)
    log_cond = ls + math.log(gg.prefactor / r) - sp.gammaln(np.arange(N + 1) + 1.0)
    x = relay.c_r / ftr.two_sigma2
    total, err, cond, diag = _series_over_j(spec, series, log_cond, w, x, y_arg, sign)
    # The j-th term is w_j times a conditional quantity that is monotone in j,
    # so the dropped weight times the last conditional term bounds the tail.
    trunc_err = deficit * abs(cond[-1])
    diag.update(truncation_deficit=deficit, n_terms=N + 1)
    return total, err, trunc_err, N, diag


def af_cdf(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma: float,
           trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """CDF of the AF end-to-end SNR as FSO CDF plus a series of two-variable H-functions.

    F(g) = F_FSO(g) + sum_j w_j P / (r j!) H2_j, with the j-th term

        1/(2 pi i)^2 \\int\\int Gamma(j+1+s) Gamma(1+s) Gamma(-s) / Gamma(1-s)
            * Gamma(t/r - s) * Theta_FSO(t) / Gamma(1 + t/r) X^{-s} Y^{-t} ds dt

    where X = C_R / 2 sigma^2 and Y = alpha beta (g / mu_r)^(1/r).
    """
    _require_af(relay)
    g = _check_gamma(gamma)
    if g == 0.0:
        N, deficit = trunc.resolve(ftr)
        return MetricResult(0.0, 0.0, "exact_foxh", N + 1, {"truncation_deficit": deficit})
    f_fso, e_fso = gg_cdf(gg, g, with_error=True)
    y = gg.alpha * gg.beta * (g / gg.mu_r) ** (1.0 / gg.r)
    total, err, trunc_err, N, diag = _af_series(gg, ftr, relay, trunc, _RF_CDF_REST, y)
    diag["fso_cdf"] = f_fso
    return MetricResult(f_fso + total, e_fso + err + trunc_err, "exact_foxh", N + 1, diag)


def af_ccdf(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma: float,
            trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """Complementary CDF of the AF end-to-end SNR, summed without a 1 - F step.

    Same family as ``af_cdf`` with the x-kernel Gamma(j+1+s) Gamma(s) (Re s > 0).
    """
    _require_af(relay)
    g = _check_gamma(gamma)
    N, deficit = trunc.resolve(ftr)
    if g == 0.0:
        return MetricResult(1.0, 0.0, "exact_foxh", N + 1, {"truncation_deficit": deficit})
    y = gg.alpha * gg.beta * (g / gg.mu_r) ** (1.0 / gg.r)
    total, err, _, N, diag = _af_series(gg, ftr, relay, trunc, _RF_CCDF_REST, y)
    # conditional CCDFs grow with j and never exceed the FSO CCDF
    trunc_err = deficit * gg_ccdf(gg, g)
    return MetricResult(total, err + trunc_err, "exact_foxh", N + 1, diag)


def af_cdf_oracle(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma,
                  trunc: TruncationPolicy = DEFAULT_TRUNCATION, rel_tol: float = 1e-10,
                  rf_cdf=None) -> MetricResult:
    """AF CDF by quadrature of the single conditional integral.

    F(g) = F_FSO(g) + int_g^inf f_FSO(x) F_RF(C_R g / (x - g)) dx, with
    x = g (1 + e^v). This is the complement form written without the
    1 - (...) subtraction, so small outage values keep their digits.
    ``rf_cdf`` replaces the FTR CDF (used for reduction checks).
    """
    _require_af(relay)
    g = _check_gamma(gamma)
    if g == 0.0:
        return MetricResult(0.0, 0.0, "oracle_integral")
    if rf_cdf is None:
        def rf_cdf(u):
            return ftr_cdf(ftr, u, trunc)
    f_fso = gg_cdf(gg, g)
    x_max = _fso_upper_point(gg, 1e-30)
    v_hi = math.log(x_max / g - 1.0) if x_max > 2 * g else 0.0
    v_hi = max(5.0, v_hi)

    def integrand(v):
        x = g * (1.0 + np.exp(v))
        return gg_pdf(gg, x) * rf_cdf(relay.c_r * np.exp(-v)) * g * np.exp(v)

    val, err, nodes = _trapezoid_halving(integrand, -50.0, v_hi, 0.25, rel_tol, abs_tol=rel_tol * f_fso)
    value = f_fso + float(val)
    return MetricResult(value, float(err) + 1e-15 * value, "oracle_integral", diagnostics={"nodes": nodes})


def _af_expectation(gg: GammaGammaParams, c_r: float, funcs, rf_pdf, rf_lo: float, rf_hi: float,
                    rel_tol: float = 1e-9, h: float = 0.125):
    """E[g(gamma_FSO gamma_RF / (gamma_RF + C_R))] for each g in ``funcs``.

    Tensor-product trapezoid rule over (log gamma_FSO, log gamma_RF) with
    both hop densities evaluated once per grid. The map to the end-to-end
    SNR is smooth, so the rule converges geometrically for smooth g.
    """
    x_lo = _fso_lower_point(gg, 1e-22)
    x_hi = _fso_upper_point(gg, 1e-22)
    a_lo, a_hi = math.log(x_lo), math.log(x_hi)
    b_lo, b_hi = math.log(rf_lo), math.log(rf_hi)
    prev = None
    for _ in range(5):
        a = np.arange(a_lo, a_hi + h, h)
        b = np.arange(b_lo, b_hi + h, h)
        x, y = np.exp(a), np.exp(b)
        fa = gg_pdf(gg, x) * x
        fb = rf_pdf(y) * y
        ge = x[:, None] * (y / (y + c_r))[None, :]
        cur = np.array([fa @ fn(ge) @ fb * h * h for fn in funcs])
        if prev is not None:
            delta = np.abs(cur - prev)
            if np.all(delta <= rel_tol * np.abs(cur)):
                return cur, delta, a.size * b.size
        prev = cur
        h /= 2.0
    raise NumericalError("double-density quadrature did not converge")


def _af_oracle_expectations(gg, ftr, relay, trunc, funcs, rf_pdf=None, rf_range=None):
    N, _ = trunc.resolve(ftr)
    if rf_pdf is None:
        def rf_pdf(y):
            return ftr_pdf(ftr, y, trunc)
        rf_range = _rf_support(ftr, N, 1e-22)
    return _af_expectation(gg, relay.c_r, funcs, rf_pdf, *rf_range)


# ---------------------------------------------------------------------------
# DF closed forms


def df_cdf(gg: GammaGammaParams, ftr: FtrParams, gamma: float,
           trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """DF end-to-end CDF: the minimum of the hop SNRs.

    F = 1 - F^C_FSO F^C_RF, evaluated as F_FSO + F_RF F^C_FSO so that small
    outage values carry no cancellation. Both hop terms are H-functions
    (the RF one being the gamma-mixture of regularised incomplete gammas).
    """
    g = _check_gamma(gamma)
    N, deficit = trunc.resolve(ftr)
    if g == 0.0:
        return MetricResult(0.0, 0.0, "exact_foxh", N + 1, {"truncation_deficit": deficit})
    f1, e1 = gg_cdf(gg, g, with_error=True)
    c1 = gg_ccdf(gg, g)
    f2 = ftr_cdf(ftr, g, trunc)
    # dropped components have smaller CDF than the last kept one
    trunc_err = deficit * float(sp.gammainc(N + 1.0, g / ftr.two_sigma2)) * c1
    value = f1 + f2 * c1
    diag = {"fso_cdf": f1, "rf_cdf": f2, "truncation_deficit": deficit}
    return MetricResult(value, e1 * (1.0 + f2) + trunc_err + 4e-16 * value, "exact_foxh", N + 1, diag)


def df_cdf_oracle(gg: GammaGammaParams, ftr: FtrParams, gamma, trunc: TruncationPolicy = DEFAULT_TRUNCATION
                  ) -> MetricResult:
    """1 - F^C_FSO F^C_RF with the FSO factors from direct Bessel-density quadrature."""
    g = _check_gamma(gamma)
    if g == 0.0:
        return MetricResult(0.0, 0.0, "oracle_integral")
    f1 = gg_cdf_quadrature(gg, g)
    c1 = gg_ccdf_quadrature(gg, g)
    f2 = ftr_cdf(ftr, g, trunc)
    value = f1 + f2 * c1
    return MetricResult(value, 1e-12 * value, "oracle_integral")


def _df_rf_products(gg, ftr, trunc, rest: FoxHSpec, y_kernel: FoxHSpec, joint, x: float, y: float,
                    scale: float = 1.0):
    """sum_j scale w_j P / j! H2_j for the FSO x RF product terms of DF metrics.

    Returns (total, err, per-unit-weight terms, N, deficit, w, diag).
    """
    N, deficit, w = _af_terms(ftr, trunc)
    series = _RfSeries(N, rest)
    spec = BivariateFoxHSpec(series.kernels[0], y_kernel, joint)
    ls, sign = _log_abs_scale(scale)
    log_cond = ls + math.log(gg.prefactor) - sp.gammaln(np.arange(N + 1) + 1.0)
    total, err, cond, diag = _series_over_j(spec, series, log_cond, w, x, y, sign)
    return total, err, cond, N, deficit, w, diag


# ---------------------------------------------------------------------------
# metric front ends


def outage(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma_th: float = 1.0,
           trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """Pr[gamma_end-to-end < gamma_th]."""
    if relay.is_af:
        return af_cdf(gg, ftr, relay, gamma_th, trunc)
    return df_cdf(gg, ftr, gamma_th, trunc)


def outage_oracle(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma_th: float = 1.0,
                  trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    if relay.is_af:
        return af_cdf_oracle(gg, ftr, relay, gamma_th, trunc)
    return df_cdf_oracle(gg, ftr, gamma_th, trunc)


def avg_ber(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, mod: ModulationScheme = DBPSK,
            trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """Average BER (delta / 2 Gamma(p)) sum_k q_k^p int gamma^(p-1) e^(-q_k gamma) F(gamma) d gamma."""
    p = mod.p
    z = gg.scale()
    pref = mod.delta / (2.0 * sp.gamma(p))
    fso_spec = gg_cdf_spec(gg).with_extra(upper_n=[(1.0 - p, 1.0)])
    value = err = 0.0
    n_terms = 0
    diag: dict = {}
    for q in mod.q:
        v1, e1 = fox_h_array(fso_spec, [z / q])
        t1 = gg.prefactor * float(v1[0])
        et = gg.prefactor * float(e1[0])
        if relay.is_af:
            y = gg.alpha * gg.beta / (gg.mu_r * q) ** (1.0 / gg.r)
            tot, e, trunc_err, N, diag = _af_series(gg, ftr, relay, trunc, _RF_CDF_REST, y,
                                                    y_upper_n=[(1.0 - p, 1.0 / gg.r)])
            part = t1 + tot
            et += e + trunc_err
        else:
            N, deficit, w = _af_terms(ftr, trunc)
            j = np.arange(N + 1, dtype=float)
            rf_cond = sp.gamma(p) * sp.betainc(j + 1.0, p, 1.0 / (1.0 + ftr.two_sigma2 * q))
            tot12, e12, cond12, N, deficit, w, diag = _df_rf_products(
                gg, ftr, trunc, _P_CDF_REST, gg_cdf_spec(gg), [(p, -1.0, -1.0)], 1.0 / (ftr.two_sigma2 * q), z / q)
            part = t1 + math.fsum(w * rf_cond) - tot12
            # each component's contribution F_RF,j (1 - F_FSO) shrinks with j
            trunc_err = deficit * abs(rf_cond[-1] - cond12[-1])
            et += e12 + trunc_err
            diag["truncation_deficit"] = deficit
        value += part
        err += et
        n_terms = N + 1
    diag["modulation"] = (mod.delta, mod.p, mod.q)
    return MetricResult(pref * value, pref * err, "exact_foxh", n_terms, diag)


def ergodic_capacity(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, cap: CapacityMode | None = None,
                     trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """(1 / ln 2) int c / (1 + c gamma) F^C(gamma) d gamma; exact for r = 1, a lower bound for r = 2."""
    cap = cap or CapacityMode.for_detection(gg.r)
    c = cap.c
    r = float(gg.r)
    if relay.is_af:
        y = gg.alpha * gg.beta / (gg.mu_r * c) ** (1.0 / r)
        tot, err, _, N, diag = _af_series(gg, ftr, relay, trunc, _RF_CCDF_REST, y,
                                          y_lower_m=[(0.0, 1.0 / r)], y_upper_n=[(0.0, 1.0 / r)])
        deficit = diag["truncation_deficit"]
    else:
        joint = [(1.0, -1.0, -1.0), (0.0, 1.0, 1.0)]
        tot, err, _, N, deficit, _, diag = _df_rf_products(
            gg, ftr, trunc, _Q_CCDF_REST, gg_ccdf_spec(gg), joint, 1.0 / (ftr.two_sigma2 * c), gg.scale() / c)
    # dropped mixture weight can carry at most the FSO hop's own capacity
    trunc_err = deficit * math.log1p(c * _fso_mean(gg))
    diag["bound"] = "exact" if gg.r == 1 else "lower"
    diag["c"] = c
    return MetricResult(tot / math.log(2.0), (err + trunc_err) / math.log(2.0), "exact_foxh", N + 1, diag)


def _effcap_result(E: float, err: float, A: float, method: str, n_terms: int, diag: dict) -> MetricResult:
    if not E > 0:
        raise NumericalError(f"E[(1+gamma)^-A] evaluated to {E:.3e}")
    value = -math.log2(E) / A
    return MetricResult(value, err / (E * A * math.log(2.0)), method, n_terms, dict(diag, mgf=E))


def effective_capacity(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, ec: EffectiveCapacityParams,
                       trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """-(1/A) log2 E[(1+gamma)^-A] with E[(1+gamma)^-A] = A int (1+gamma)^(-A-1) F(gamma) d gamma."""
    A = ec.A
    z = gg.scale()
    inv_ga = 1.0 / sp.gamma(A)
    fso_spec = gg_cdf_spec(gg).with_extra(lower_m=[(A, 1.0)], upper_n=[(0.0, 1.0)])
    v1, e1 = fox_h_array(fso_spec, [z])
    t1 = gg.prefactor * inv_ga * float(v1[0])
    err = gg.prefactor * inv_ga * float(e1[0])
    if relay.is_af:
        r = float(gg.r)
        y = gg.alpha * gg.beta / gg.mu_r ** (1.0 / r)
        tot, e, trunc_err, N, diag = _af_series(gg, ftr, relay, trunc, _RF_CDF_REST, y,
                                                y_lower_m=[(A, 1.0 / r)], y_upper_n=[(0.0, 1.0 / r)], scale=inv_ga)
        E = t1 + tot
        err += e + trunc_err
    else:
        N, deficit, w = _af_terms(ftr, trunc)
        # A int (1+g)^(-A-1) P(j+1, g / 2 sigma^2) dg: kernel Gamma(j+1+s) Gamma(-s) Gamma(A+s) / Gamma(A) j!
        rf = _RfSeries(N, FoxHSpec(1, 1, [(1.0, 1.0)], [(A, 1.0)]))
        log_c2 = -sp.gammaln(A) - sp.gammaln(np.arange(N + 1) + 1.0)

        def stack(s):
            return rf.log_stack(s) + log_c2[:, None]

        rf_cond, e2 = fox_h_series(rf.kernels, 1.0 / ftr.two_sigma2, rep=int(np.argmax(w)), log_stack=stack)
        joint = [(1.0, -1.0, -1.0), (A, 1.0, 1.0)]
        tot12, e12, cond12, N, deficit, w, diag = _df_rf_products(
            gg, ftr, trunc, _P_CDF_REST, gg_cdf_spec(gg), joint, 1.0 / ftr.two_sigma2, z, scale=inv_ga)
        E = t1 + math.fsum(w * rf_cond) - tot12
        trunc_err = deficit * abs(rf_cond[-1] - cond12[-1])
        err += float(np.sum(w * e2)) + e12 + trunc_err
        diag["truncation_deficit"] = deficit
    diag["A"] = A
    return _effcap_result(E, err, A, "exact_foxh", N + 1, diag)


# ---------------------------------------------------------------------------
# metric oracles


def _df_log_integral(gg, ftr, trunc, weight, need_cdf: bool, u_lo: float, u_hi: float, rel_tol: float = 1e-9,
                     cdf_one_above: float = math.inf):
    """int weight(gamma) G(gamma) d gamma over log gamma, where G is the DF CDF
    (``need_cdf``) or CCDF built from the Bessel-quadrature FSO factors.

    Above ``cdf_one_above`` the CDF equals 1 to double precision and is not
    evaluated.
    """

    def f(u):
        g = np.exp(u)
        G = np.ones_like(g) if need_cdf else np.zeros_like(g)
        inner = g <= cdf_one_above
        gi = g[inner]
        if need_cdf:
            G[inner] = gg_cdf_quadrature(gg, gi) + ftr_cdf(ftr, gi, trunc) * gg_ccdf_quadrature(gg, gi)
        else:
            G[inner] = gg_ccdf_quadrature(gg, gi) * ftr_ccdf(ftr, gi, trunc)
        return weight(g) * G * g

    val, err, nodes = _trapezoid_halving(f, u_lo, u_hi, 0.25, rel_tol)
    return _scalar(val), _scalar(err), nodes


def _df_lower_u(gg, ftr, trunc) -> float:
    N, _ = trunc.resolve(ftr)
    rf_lo, _ = _rf_support(ftr, N, 1e-22)
    return math.log(min(_fso_lower_point(gg, 1e-22), rf_lo))


def _df_upper_point(gg, ftr, trunc, tail: float) -> float:
    N, _ = trunc.resolve(ftr)
    _, rf_hi = _rf_support(ftr, N, tail)
    return min(_fso_upper_point(gg, tail), rf_hi)


def avg_ber_oracle(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, mod: ModulationScheme = DBPSK,
                   trunc: TruncationPolicy = DEFAULT_TRUNCATION) -> MetricResult:
    """Average of the conditional BER by direct quadrature (no H-functions)."""
    if relay.is_af:
        (val,), (err,), nodes = _af_oracle_expectations(gg, ftr, relay, trunc, [mod.conditional_ber])
        return MetricResult(float(val), float(err), "oracle_integral", diagnostics={"nodes": nodes})
    pref = mod.delta / (2.0 * sp.gamma(mod.p))

    def weight(g):
        return pref * sum(q ** mod.p * g ** (mod.p - 1.0) * np.exp(-q * g) for q in mod.q)

    u_hi = math.log(80.0 / min(mod.q))
    val, err, nodes = _df_log_integral(gg, ftr, trunc, weight, True, _df_lower_u(gg, ftr, trunc), u_hi)
    return MetricResult(val, err, "oracle_integral", diagnostics={"nodes": nodes})


def ergodic_capacity_oracle(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                            cap: CapacityMode | None = None, trunc: TruncationPolicy = DEFAULT_TRUNCATION
                            ) -> MetricResult:
    cap = cap or CapacityMode.for_detection(gg.r)
    c = cap.c
    if relay.is_af:
        def g(x):
            return np.log1p(c * x) / math.log(2.0)

        (val,), (err,), nodes = _af_oracle_expectations(gg, ftr, relay, trunc, [g])
        return MetricResult(float(val), float(err), "oracle_integral", diagnostics={"nodes": nodes})

    def weight(x):
        return c / (1.0 + c * x) / math.log(2.0)

    u_lo = math.log(1e-25 / c)
    u_hi = math.log(_df_upper_point(gg, ftr, trunc, 1e-22))
    val, err, nodes = _df_log_integral(gg, ftr, trunc, weight, False, u_lo, u_hi)
    return MetricResult(val, err, "oracle_integral", diagnostics={"nodes": nodes})


def effective_capacity_oracle(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig,
                              ec: EffectiveCapacityParams, trunc: TruncationPolicy = DEFAULT_TRUNCATION
                              ) -> MetricResult:
    A = ec.A
    if relay.is_af:
        def g(x):
            return (1.0 + x) ** (-A)

        (E,), (err,), nodes = _af_oracle_expectations(gg, ftr, relay, trunc, [g])
        return _effcap_result(float(E), float(err), A, "oracle_integral", 0, {"nodes": nodes})

    def weight(x):
        return A * (1.0 + x) ** (-A - 1.0)

    # beyond gamma_s the CDF is 1 to double precision; the range runs until
    # (1 + gamma)^-A itself is negligible
    g_s = _df_upper_point(gg, ftr, trunc, 1e-18)
    u_hi = max(math.log(g_s), 0.0) + 46.0 / A
    E, err, nodes = _df_log_integral(gg, ftr, trunc, weight, True, _df_lower_u(gg, ftr, trunc), u_hi,
                                     cdf_one_above=g_s)
    return _effcap_result(E, err + 1e-18, A, "oracle_integral", 0, {"nodes": nodes})


# ---------------------------------------------------------------------------
# high-SNR asymptotics

_COLLISION_TOL = 1e-6
_COLLISION_SHIFT = 1e-4


def _near_integer(v: float) -> bool:
    return abs(v - round(v)) < _COLLISION_TOL


def _separate_poles(gg: GammaGammaParams) -> tuple[GammaGammaParams, list[str]]:
    """Nudge parameters whose leading poles coincide.

    The expansions keep only simple poles, so they break down when two of
    {r(j+1), xi^2, alpha, beta} line up (any pairwise difference an integer,
    or xi^2, alpha, beta an integer multiple of r). The later parameter of a
    colliding pair is moved by 1e-4.
    """
    r = gg.r
    vals = {"alpha": gg.alpha, "beta": gg.beta}
    if gg.pointing:
        vals["xi2"] = gg.xi2
    notes = []
    for _ in range(20):
        moved = False
        names = list(vals)
        for i, a in enumerate(names):
            if _near_integer(vals[a] / r):
                vals[a] += _COLLISION_SHIFT
                notes.append(f"{a}/r is an integer: shifted {a} by {_COLLISION_SHIFT:g}")
                moved = True
            for b in names[i + 1:]:
                if _near_integer(vals[a] - vals[b]):
                    vals[b] += _COLLISION_SHIFT
                    notes.append(f"{a} - {b} is an integer: shifted {b} by {_COLLISION_SHIFT:g}")
                    moved = True
        if not moved:
            break
    if not notes:
        return gg, notes
    xi = math.sqrt(vals["xi2"]) if gg.pointing else gg.xi
    out = GammaGammaParams(vals["alpha"], vals["beta"], xi, r, 1.0).with_mu(gg.mu_r)
    return out, notes


def _signed_gamma(x):
    """(log|Gamma(x)|, sign Gamma(x)) for real x off the poles."""
    return sp.gammaln(x), sp.gammasgn(x)


def _fso_leading_terms(gg: GammaGammaParams):
    """Leading residues of the FSO CDF: list of (theta, log|c|, sign, family).

    F_FSO(g) ~ sum c * g^theta, theta in {xi^2/r, alpha/r, beta/r}.
    """
    r, a, b = gg.r, gg.alpha, gg.beta
    base = -sp.gammaln(a) - sp.gammaln(b)
    log_z = r * math.log(a * b) - math.log(gg.mu_r)  # log of (alpha beta)^r / mu_r
    out = []
    if gg.pointing:
        x2 = gg.xi2
        lg1, s1 = _signed_gamma(a - x2)
        lg2, s2 = _signed_gamma(b - x2)
        out.append((x2 / r, base + lg1 + lg2 + x2 / r * log_z, s1 * s2, "pointing"))
    for p1, p2, fam in ((a, b, "alpha"), (b, a, "beta")):
        lg, sg = _signed_gamma(p2 - p1)
        pf, spf = (math.log(abs(gg.xi2 / (gg.xi2 - p1))), math.copysign(1.0, gg.xi2 - p1)) if gg.pointing else (0.0, 1.0)
        out.append((p1 / r, base + lg + pf - math.log(p1) + p1 / r * log_z, sg * spf, fam))
    return out


def _af_asymptotic_expansion(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, N: int):
    """Expansion of the AF CDF in powers of gamma, with SNR orders attached.

    Per RF index j there are up to seven terms: the RF family gamma^(j+1)
    (order 2(j+1) in 1/SNR under equal hop SNRs) and, for each FSO family
    theta in {xi^2/r, alpha/r, beta/r}, a mixed term (order 2 theta) and a
    pure FSO term (order theta).
    """
    r, a, b = gg.r, gg.alpha, gg.beta
    w = ftr_log_weights(ftr, N + 1)
    j = np.arange(N + 1, dtype=float)
    lw = w - sp.gammaln(j + 1.0)
    base = -sp.gammaln(a) - sp.gammaln(b)  # P / xi^2 (or P without pointing)
    logx = math.log(relay.c_r / ftr.two_sigma2)
    log_ab = math.log(a * b)
    log_mu = math.log(gg.mu_r)
    exp = AsymptoticExpansion("AF-CDF")
    # RF family
    k = r * (j + 1.0)
    lga, sga = _signed_gamma(a - k)
    lgb, sgb = _signed_gamma(b - k)
    if gg.pointing:
        pf = np.log(np.abs(gg.xi2 / (gg.xi2 - k)))
        spf = np.sign(gg.xi2 - k)
    else:
        pf, spf = 0.0, 1.0
    log1 = base + lw + lga + lgb - np.log(j + 1.0) + pf + (j + 1.0) * (logx + r * log_ab - log_mu)
    sign1 = sga * sgb * spf
    for jj in range(N + 1):
        exp.add(jj + 1.0, sign1[jj] * math.exp(log1[jj]), "rf", 2.0 * (jj + 1.0), jj, log1[jj])
    # FSO families: the mixed part carries Gamma(j+1-theta) (C_R / 2 sigma^2)^theta
    for theta, logc, sign, fam in _fso_leading_terms(gg):
        lgt, sgt = _signed_gamma(j + 1.0 - theta)
        mixed = logc + w + lgt - sp.gammaln(j + 1.0) + theta * logx
        for jj in range(N + 1):
            exp.add(theta, sign * sgt[jj] * math.exp(mixed[jj]), fam + "*rf", 2.0 * theta, jj, mixed[jj])
            exp.add(theta, sign * math.exp(logc + w[jj]), fam, theta, jj, logc + w[jj])
    return exp


def _df_asymptotic_expansion(gg: GammaGammaParams, ftr: FtrParams, N: int):
    """F_FSO + F_RF - F_FSO F_RF with each factor replaced by its leading terms."""
    fso = _fso_leading_terms(gg)
    w = ftr_log_weights(ftr, N + 1)
    rf = []
    for jj in range(N + 1):
        rf.append((jj + 1.0, w[jj] - sp.gammaln(jj + 2.0) - (jj + 1.0) * math.log(ftr.two_sigma2), jj))
    exp = AsymptoticExpansion("DF-CDF")
    for theta, logc, sign, fam in fso:
        exp.add(theta, sign * math.exp(logc), fam, theta, -1, logc)
    for theta, logc, jj in rf:
        exp.add(theta, math.exp(logc), "rf", theta, jj, logc)
    for t1, l1, s1, f1 in fso:
        for t2, l2, jj in rf:
            exp.add(t1 + t2, -s1 * math.exp(l1 + l2), f1 + "*rf", t1 + t2, jj, l1 + l2)
    return exp


def af_cdf_asymptotic(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, gamma: float,
                      trunc: TruncationPolicy = DEFAULT_TRUNCATION):
    """High-SNR AF CDF as sum_i psi_i mu_r^(-theta_i). Returns (MetricResult, AsymptoticExpansion)."""
    _require_af(relay)
    g = _check_gamma(gamma)
    N, deficit = trunc.resolve(ftr)
    gg2, notes = _separate_poles(gg)
    exp = _af_asymptotic_expansion(gg2, ftr, relay, N)
    value = float(exp.evaluate(g))
    diag = {"collisions": notes, "truncation_deficit": deficit, "leading_order": exp.leading_order}
    return MetricResult(value, 0.0, "asymptotic", N + 1, diag), exp


def df_cdf_asymptotic(gg: GammaGammaParams, ftr: FtrParams, gamma: float,
                      trunc: TruncationPolicy = DEFAULT_TRUNCATION):
    """High-SNR DF CDF from the leading terms of both hops. Returns (MetricResult, AsymptoticExpansion)."""
    g = _check_gamma(gamma)
    N, deficit = trunc.resolve(ftr)
    gg2, notes = _separate_poles(gg)
    exp = _df_asymptotic_expansion(gg2, ftr, N)
    value = float(exp.evaluate(g))
    diag = {"collisions": notes, "truncation_deficit": deficit, "leading_order": exp.leading_order}
    return MetricResult(value, 0.0, "asymptotic", N + 1, diag), exp


def _ber_from_cdf_expansion(exp: AsymptoticExpansion, mod: ModulationScheme) -> AsymptoticExpansion:
    """Integrate each c gamma^theta against the BER kernel:
    (delta / 2 Gamma(p)) sum_k c Gamma(p + theta) q_k^-theta. The result is
    stored with exponent 0 (a constant) and the original theta in ``thetas``."""
    out = AsymptoticExpansion(exp.domain.replace("CDF", "BER"))
    log_pref = math.log(mod.delta / 2.0) - sp.gammaln(mod.p)
    logq = np.log(np.asarray(mod.q, dtype=float))
    for theta, c, fam, order, jj, la in zip(exp.exponents, exp.coefficients, exp.families, exp.orders,
                                            exp.indices, exp.log_abs):
        lk = log_pref + la + sp.gammaln(mod.p + theta) - theta * logq
        val = math.copysign(float(np.sum(np.exp(lk))), c) if c != 0.0 or la > -math.inf else 0.0
        out.add(0.0, val, fam, order, jj, float(np.logaddexp.reduce(lk)))
        out.thetas.append(theta)
    return out


def _reference_terms(ftr: FtrParams, hard_cap: int) -> int:
    for eps in (1e-12, 1e-10, 1e-8):
        try:
            return ftr_required_terms(ftr, eps, hard_cap)[0]
        except NumericalError:
            continue
    raise NumericalError("FTR weights do not sum to one within 1e-8")


def avg_ber_asymptotic(gg: GammaGammaParams, ftr: FtrParams, relay: RelayConfig, mod: ModulationScheme = DBPSK,
                       trunc: TruncationPolicy = DEFAULT_TRUNCATION, n2_target: float | None = None):
    """High-SNR average BER. Returns (MetricResult, AsymptoticExpansion).

    With ``n2_target`` the RF series is cut at the smallest N2 whose tail
    |sum_{j > N2} term_j| falls below the target; the tail is measured
    against a reference sum carried until the mixture deficit is 1e-12
    (or the tightest of 1e-10, 1e-8 that floating point allows).
    """
    gg2, notes = _separate_poles(gg)
    if n2_target is not None:
        n_ref = _reference_terms(ftr, trunc.hard_cap)
    else:
        n_ref, _ = trunc.resolve(ftr)
    if relay.is_af:
        cdf = _af_asymptotic_expansion(gg2, ftr, relay, n_ref)
    else:
        cdf = _df_asymptotic_expansion(gg2, ftr, n_ref)
    ber = _ber_from_cdf_expansion(cdf, mod)
    idx = np.asarray(ber.indices)
    co = np.asarray(ber.coefficients)
    per_j = np.array([math.fsum(co[idx == jj]) for jj in range(n_ref + 1)])
    fixed = math.fsum(co[idx < 0])
    total = fixed + math.fsum(per_j)
    diag = {"collisions": notes, "leading_order": ber.leading_order}
    if n2_target is not None:
        tails = np.array([math.fsum(per_j[n + 1:]) for n in range(n_ref + 1)])
        hits = np.nonzero(np.abs(tails) < n2_target)[0]
        N2 = int(hits[0])
        value = total - tails[N2]
        diag.update(N2=N2, epsilon2=float(tails[N2]), reference=total)
        keep = idx <= N2
        ber = ber.subset(keep)
        return MetricResult(value, abs(float(tails[N2])), "asymptotic", N2 + 1, diag), ber
    return MetricResult(total, 0.0, "asymptotic", n_ref + 1, diag), ber


def diversity_order(gg: GammaGammaParams, relay: RelayConfig) -> float:
    """High-SNR slope magnitude of outage/BER under equal hop SNRs."""
    cap = 2.0 if relay.is_af else 1.0
    terms = [cap, gg.alpha / gg.r, gg.beta / gg.r]
    if gg.pointing:
        terms.append(gg.xi2 / gg.r)
    return min(terms)
