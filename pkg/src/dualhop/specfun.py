"""Scalar special functions used throughout the package.

The log-gamma and incomplete-gamma routines wrap scipy's compiled
implementations; the hypergeometric series and the Legendre functions are
evaluated here because the FTR mixture weights depend on a specific
continuation of P_nu^mu beyond x = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from dualhop.result import NumericalError

_POLE_TOL = 1e-14


@dataclass(frozen=True)
class SeriesControl:
    max_terms: int = 20000
    rel_tol: float = 1e-15
    abs_tol: float = 1e-300

    def __post_init__(self) -> None:
        if int(self.max_terms) < 1:
            raise ValueError("max_terms must be >= 1")
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive")


DEFAULT_SERIES = SeriesControl()


def _near_nonpositive_integer(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    re = z.real
    return (np.abs(z.imag) <= _POLE_TOL) & (re <= _POLE_TOL) & (np.abs(re - np.round(re)) <= _POLE_TOL)


def log_gamma(z):
    """Principal branch of log Gamma(z) for complex (or array) z.

    Raises ValueError at the poles z = 0, -1, -2, ...
    """
    arr = np.asarray(z, dtype=complex)
    if np.any(_near_nonpositive_integer(arr)):
        raise ValueError("log_gamma: pole at a nonpositive integer")
    out = sp.loggamma(arr)
    return complex(out) if out.ndim == 0 else out


def gauss_2f1(a: float, b: float, c: float, x: float, control: SeriesControl = DEFAULT_SERIES) -> float:
    """2F1(a, b; c; x) for real arguments and x < 1.

    The power series is summed directly for x >= -0.5. For x < -0.5 the
    Pfaff transformation maps the argument into (1/3, 1).
    """
    if not x < 1:
        raise ValueError("gauss_2f1 requires x < 1")
    if c <= 0 and abs(c - round(c)) < 1e-14:
        raise ValueError("gauss_2f1: c is a nonpositive integer")
    if x < -0.5:
        # Pick the Pfaff branch whose series terminates when possible.
        if _is_nonpos_int(a) or not _is_nonpos_int(b):
            return (1.0 - x) ** (-a) * _series_2f1(a, c - b, c, x / (x - 1.0), control)
        return (1.0 - x) ** (-b) * _series_2f1(c - a, b, c, x / (x - 1.0), control)
    return _series_2f1(a, b, c, x, control)


def _is_nonpos_int(v: float) -> bool:
    return v <= 0 and abs(v - round(v)) < 1e-14


def _series_2f1(a: float, b: float, c: float, x: float, control: SeriesControl) -> float:
    if x == 0.0:
        return 1.0
    term = 1.0
    total = 1.0
    comp = 0.0
    for k in range(control.max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (k + 1.0)) * x
        # Kahan summation keeps alternating series honest.
        y = term - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if term == 0.0:
            return total
        if abs(term) <= control.rel_tol * abs(total) + control.abs_tol and k > 2:
            # make sure the terms are actually shrinking
            ratio = abs((a + k + 1) * (b + k + 1) / ((c + k + 1) * (k + 2.0)) * x)
            if ratio < 1.0:
                return total
    raise NumericalError(f"gauss_2f1 did not converge within {control.max_terms} terms")


def legendre_p(deg: float, ord: int, x: float, control: SeriesControl = DEFAULT_SERIES) -> float:
    """Legendre function of the first kind P_deg^ord(x) for x >= 1.

    This is the real-valued function on (1, inf) (Hobson's definition):
    P^mu = ((x+1)/(x-1))^(mu/2) 2F1(-nu, nu+1; 1-mu; (1-x)/2) / Gamma(1-mu).
    Positive integer orders go through the connection formula
    P^n = Gamma(nu+n+1)/Gamma(nu-n+1) P^(-n).
    """
    if x < 1:
        raise ValueError("legendre_p requires x >= 1")
    ord = int(ord)
    if ord > 0:
        base = legendre_p(deg, -ord, x, control)
        if base == 0.0:
            return 0.0
        return _connection(deg, ord, base)
    n = -ord
    if x == 1.0:
        return 1.0 if n == 0 else 0.0
    f = gauss_2f1(-deg, deg + 1.0, 1.0 + n, (1.0 - x) / 2.0, control)
    if n == 0:
        return f
    log_pref = 0.5 * n * math.log((x - 1.0) / (x + 1.0)) - math.lgamma(1.0 + n)
    return math.exp(log_pref) * f


def _connection(deg: float, n: int, base: float) -> float:
    # Gamma(nu+n+1)/Gamma(nu-n+1) = (nu-n+1)(nu-n+2)...(nu+n), summed in logs
    factors = deg + np.arange(-n + 1, n + 1, dtype=float)
    if np.any(factors == 0.0):
        return 0.0
    sign = -1.0 if np.count_nonzero(factors < 0) % 2 else 1.0
    return sign * math.copysign(1.0, base) * math.exp(np.sum(np.log(np.abs(factors))) + math.log(abs(base)))


def legendre_p_neg_orders(deg: float, nmax: int, x: float, control: SeriesControl = DEFAULT_SERIES):
    """log|P_deg^(-n)(x)| and sign for n = 0..nmax at once, x > 1.

    Returned in the log domain because the values span hundreds of decades
    for the large degrees met in long FTR series.
    """
    if x <= 1:
        raise ValueError("legendre_p_neg_orders requires x > 1")
    n = np.arange(nmax + 1, dtype=float)
    z = (1.0 - x) / 2.0
    a, b, c = -deg, deg + 1.0, 1.0 + n
    if z < -0.5:
        zz = z / (z - 1.0)
        if _is_nonpos_int(a) or not _is_nonpos_int(b):
            log_scale = -a * math.log1p(-z)
            f = _series_2f1_vec(a, c - b, c, zz, control)
        else:
            log_scale = -b * math.log1p(-z)
            f = _series_2f1_vec(c - a, b, c, zz, control)
    else:
        log_scale = 0.0
        f = _series_2f1_vec(a, b, c, z, control)
    with np.errstate(divide="ignore"):
        log_f = np.log(np.abs(f)) + log_scale
    log_pref = 0.5 * n * math.log((x - 1.0) / (x + 1.0)) - sp.gammaln(1.0 + n)
    return log_pref + log_f, np.sign(f)


def _series_2f1_vec(a, b, c, x: float, control: SeriesControl) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    shape = np.broadcast(a, b, c).shape
    total = np.ones(shape)
    term = np.ones(shape)
    if x == 0.0:
        return total
    for k in range(control.max_terms):
        term = term * (a + k) * (b + k) / ((c + k) * (k + 1.0)) * x
        total = total + term
        if k > 2:
            small = np.abs(term) <= control.rel_tol * np.abs(total) + control.abs_tol
            ratio = np.abs((a + k + 1) * (b + k + 1) / ((c + k + 1) * (k + 2.0)) * x)
            if np.all(small & ((ratio < 1.0) | (term == 0.0))):
                return total
    raise NumericalError(f"gauss_2f1 did not converge within {control.max_terms} terms")


def legendre_p_cut(deg: float, ord: int, x: float, control: SeriesControl = DEFAULT_SERIES) -> complex:
    """Ferrers-normalised Legendre function continued to x > 1.

    Equal to exp(-i*pi*ord/2) * legendre_p(deg, ord, x). With this
    normalisation the FTR coefficient double sum is real.
    """
    phase = _QUARTER_TURNS[ord % 4]
    return phase * legendre_p(deg, ord, x, control)


# exp(-i*pi*k/2) for k = 0..3, exact
_QUARTER_TURNS = (1.0 + 0.0j, -1.0j, -1.0 + 0.0j, 1.0j)


def upper_incomplete_gamma(p: float, x):
    """Non-regularised upper incomplete gamma Gamma(p, x) for p > 0, x >= 0."""
    if p <= 0:
        raise ValueError("upper_incomplete_gamma requires p > 0")
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("upper_incomplete_gamma requires x >= 0")
    out = sp.gammaincc(p, xa) * sp.gamma(p)
    return float(out) if out.ndim == 0 else out
