"""Fox H-functions of one and two variables by Mellin-Barnes quadrature.

Convention for one variable::

    H^{m,n}_{p,q}[z] = 1/(2 pi i) \\int Theta(s) z^{-s} ds
    Theta(s) = prod_{j<m} G(b_j + B_j s) prod_{j<n} G(1 - a_j - A_j s)
             / prod_{j>=m} G(1 - b_j - B_j s) prod_{j>=n} G(a_j + A_j s)

For two variables the integrand is

    Psi(s, t) Theta_x(s) Theta_y(t) x^{-s} y^{-t}

where Psi is a ratio of gamma functions of linear forms a + A s + B t
(the joint group; A and B may take either sign).

Contours are vertical lines Re s = c. The rule along each line is the
trapezoid rule, which converges geometrically for integrands analytic in a
strip; the step is halved until two successive levels agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import loggamma

from dualhop.result import MetricResult, NumericalError

_EPS = np.finfo(float).eps
_LOG_TAIL = -40.0  # relative size at which the integrand is treated as zero
_MAX_HALF_HEIGHT = 4096.0
_CHUNK = 256  # z values per vectorised batch
_GRID_BUDGET = 1 << 21  # complex grid cells per bivariate chunk
_PLANE_SLACK = math.log(100.0)  # cancellation we accept in exchange for wider pole clearance


def _pairs(seq) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in seq)


@dataclass(frozen=True)
class FoxHSpec:
    """Parameter block of a univariate Fox H-function.

    ``upper`` holds (a_j, A_j), ``lower`` holds (b_j, B_j).
    """

    m: int
    n: int
    upper: tuple = ()
    lower: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "upper", _pairs(self.upper))
        object.__setattr__(self, "lower", _pairs(self.lower))
        if not (0 <= self.n <= self.p and 0 <= self.m <= self.q):
            raise ValueError(f"orders out of range: m={self.m}, n={self.n}, p={self.p}, q={self.q}")
        for a, A in self.upper + self.lower:
            if not (A > 0 and math.isfinite(A) and math.isfinite(a)):
                raise ValueError("exponent coefficients must be finite and strictly positive")

    @property
    def p(self) -> int:
        return len(self.upper)

    @property
    def q(self) -> int:
        return len(self.lower)

    def numerator_forms(self) -> list[tuple[float, float]]:
        forms = [(b, B) for b, B in self.lower[: self.m]]
        forms += [(1.0 - a, -A) for a, A in self.upper[: self.n]]
        return forms

    def denominator_forms(self) -> list[tuple[float, float]]:
        forms = [(1.0 - b, -B) for b, B in self.lower[self.m:]]
        forms += [(a, A) for a, A in self.upper[self.n:]]
        return forms

    def pole_interval(self) -> tuple[float, float]:
        """Open interval of abscissae separating left from right poles."""
        lo = max((-b / B for b, B in self.lower[: self.m]), default=-math.inf)
        hi = min(((1.0 - a) / A for a, A in self.upper[: self.n]), default=math.inf)
        return lo, hi

    def is_feasible(self) -> bool:
        lo, hi = self.pole_interval()
        return lo < hi

    def decay_rate(self) -> float:
        return sum(abs(c) for _, c in self.numerator_forms()) - sum(abs(c) for _, c in self.denominator_forms())

    def log_kernel(self, s):
        return _log_linear_gammas(self.numerator_forms(), self.denominator_forms(), s)

    def with_extra(self, lower_m=(), upper_n=(), lower_den=(), upper_den=()) -> "FoxHSpec":
        """New spec with extra gamma factors appended to each group."""
        lower = self.lower[: self.m] + _pairs(lower_m) + self.lower[self.m:] + _pairs(lower_den)
        upper = self.upper[: self.n] + _pairs(upper_n) + self.upper[self.n:] + _pairs(upper_den)
        return FoxHSpec(self.m + len(lower_m), self.n + len(upper_n), upper, lower)


_MAX_PAIR_SHIFT = 8


def _pair_shifted(num, den):
    """Split off Gamma(x + k)/Gamma(x) pairs with a small integer k.

    Their log gamma difference cancels badly when x is large, while the
    ratio is the finite rising factorial (x)_k. Returns the leftover
    numerator and denominator forms plus (x0, x1, k) triples, with k < 0
    meaning the factorial sits in the denominator.
    """
    num, den = list(num), list(den)
    pairs = []
    for c0, c1 in list(num):
        for d in den:
            k = d[0] - c0
            if d[1] == c1 and k == round(k) and 1 <= abs(k) <= _MAX_PAIR_SHIFT:
                num.remove((c0, c1))
                den.remove(d)
                pairs.append((min(c0, d[0]), c1, -int(k)))
                break
    return num, den, pairs


def _log_linear_gammas(num, den, s):
    s = np.asarray(s, dtype=complex)
    out = np.zeros(s.shape, dtype=complex)
    num, den, pairs = _pair_shifted(num, den)
    with np.errstate(all="ignore"):
        for x0, x1, k in pairs:
            x = x0 + x1 * s
            lf = sum(np.log(x + j) for j in range(abs(k)))
            out += lf if k > 0 else -lf
        for c0, c1 in num:
            out += loggamma(c0 + c1 * s)
        for c0, c1 in den:
            out -= loggamma(c0 + c1 * s)
    # zeros of 1/Gamma show up as -inf real parts; keep them as exact zeros
    bad = ~np.isfinite(out)
    if np.any(bad):
        out[bad] = -np.inf
    return out


@dataclass(frozen=True)
class BivariateFoxHSpec:
    """Joint gamma group coupling two univariate kernels.

    ``joint_num`` and ``joint_den`` hold triples (a, A, B) standing for
    Gamma(a + A s + B t) in the numerator or denominator.
    """

    x_kernel: FoxHSpec
    y_kernel: FoxHSpec
    joint_num: tuple = ()
    joint_den: tuple = ()

    def __post_init__(self) -> None:
        for name in ("joint_num", "joint_den"):
            triples = tuple((float(a), float(A), float(B)) for a, A, B in getattr(self, name))
            for tr in triples:
                if not all(math.isfinite(v) for v in tr):
                    raise ValueError("joint coefficients must be finite")
            object.__setattr__(self, name, triples)

    def log_joint(self, s, t):
        s = np.asarray(s, dtype=complex)
        t = np.asarray(t, dtype=complex)
        out = np.zeros(np.broadcast(s, t).shape, dtype=complex)
        with np.errstate(all="ignore"):
            for a, A, B in self.joint_num:
                out = out + loggamma(a + A * s + B * t)
            for a, A, B in self.joint_den:
                out = out - loggamma(a + A * s + B * t)
        bad = ~np.isfinite(out)
        if np.any(bad):
            out[bad] = -np.inf
        return out

    def joint_direction(self) -> float | None:
        """Common ratio A / B of all joint factors, or None.

        When every factor shares the ratio, the joint group depends on (s, t)
        only through B t + A s, which lets the quadrature reuse one line of
        log-gamma values.
        """
        ratios = set()
        for a, A, B in self.joint_num + self.joint_den:
            if A == 0 or B == 0:
                return None
            ratios.add(A / B)
        if len(ratios) != 1:
            return None
        return ratios.pop()

    def joint_margins(self, cs, ct):
        """Real parts of the joint numerator arguments (must stay > 0)."""
        return [a + A * cs + B * ct for a, A, B in self.joint_num]

    def is_separable(self) -> bool:
        return not self.joint_num and not self.joint_den


@dataclass(frozen=True)
class ContourSpec:
    """Vertical-line contour controls.

    Leaving ``abscissa`` or ``half_height`` as None lets the evaluator pick
    them. ``nodes_per_unit`` fixes the starting node density.
    """

    abscissa: float | None = None
    half_height: float | None = None
    nodes_per_unit: int | None = None
    adaptive: bool = True
    max_refinements: int = 8
    rel_tol: float = 1e-11

    def __post_init__(self) -> None:
        if self.half_height is not None and not self.half_height > 0:
            raise ValueError("half_height must be positive")
        if self.max_refinements < 1:
            raise ValueError("max_refinements must be >= 1")
        if self.nodes_per_unit is not None and self.nodes_per_unit < 1:
            raise ValueError("nodes_per_unit must be positive")


DEFAULT_CONTOUR = ContourSpec()


# ---------------------------------------------------------------------------
# univariate


def _finite_window(lo: float, hi: float, span: float = 40.0) -> tuple[float, float]:
    if math.isinf(lo) and math.isinf(hi):
        return -span / 2, span / 2
    if math.isinf(lo):
        return hi - span, hi
    if math.isinf(hi):
        return lo, lo + span
    return lo, hi


def _half_height(logk, c: float) -> tuple[float, float]:
    """Smallest T (doubling from 8) where the kernel has decayed by e^-40."""
    probe = np.linspace(0.0, 8.0, 65)
    ref = np.max(logk(c + 1j * probe).real)
    T = 8.0
    while True:
        edge = logk(np.array([c + 1j * T, c - 1j * T])).real
        if np.all(edge - ref < _LOG_TAIL):
            return T, float(np.max(edge))
        ref = max(ref, float(np.max(edge)))
        T *= 2.0
        if T > _MAX_HALF_HEIGHT:
            raise NumericalError("integrand does not decay along the contour")


@lru_cache(maxsize=512)
def _abscissa_profile(spec: FoxHSpec, ngrid: int = 48):
    """log of int |Theta(c + i t)| dt on a grid of admissible abscissae."""
    lo, hi = spec.pole_interval()
    if not lo < hi:
        raise NumericalError(f"no contour separates the poles (interval {lo}, {hi})")
    wlo, whi = _finite_window(lo, hi)
    width = whi - wlo
    # stay clear of the poles: the node spacing scales with the distance to them
    margin = min(0.25, 0.1 * width)
    cs = np.linspace(wlo + margin, whi - margin, ngrid)
    prof = np.empty(ngrid)
    for i, c in enumerate(cs):
        T, _ = _half_height(spec.log_kernel, c)
        t = np.linspace(-T, T, 801)
        lk = spec.log_kernel(c + 1j * t).real
        top = lk.max()
        prof[i] = top + math.log(np.trapezoid(np.exp(lk - top), t))
    return cs, prof


def _pick_abscissae(spec: FoxHSpec, logz: np.ndarray) -> np.ndarray:
    cs, prof = _abscissa_profile(spec)
    score = prof[None, :] - cs[None, :] * logz[:, None]
    return cs[np.argmin(score, axis=1)]


def _pole_distance(spec: FoxHSpec, c: float) -> float:
    lo, hi = spec.pole_interval()
    return min(c - lo, hi - c)


def _line_sum(logk, c: float, logz: np.ndarray, d: float, contour: ContourSpec, T: float | None = None):
    """Trapezoid rule on Re s = c for every log z in ``logz``.

    Returns (values, err, imag_residual, l1, nodes).
    """
    if T is None:
        T, edge = _half_height(logk, c)
    else:
        edge = float(np.max(logk(np.array([c + 1j * T])).real))
    if contour.nodes_per_unit:
        h = 1.0 / contour.nodes_per_unit
    else:
        h = min(d, 1.0) / 2.0
    nz = logz.size
    value = np.zeros(nz)
    err = np.zeros(nz)
    imag = np.zeros(nz)
    l1 = np.zeros(nz)
    pending = np.arange(nz)
    nodes = 0
    for level in range(contour.max_refinements + 1):
        K = 2 * int(math.ceil(T / (2 * h)))
        t = h * np.arange(-K, K + 1)
        s = c + 1j * t
        lk = logk(s)
        lz = logz[pending]
        E = lk[None, :] - s[None, :] * lz[:, None]
        shift = np.max(E.real, axis=1)
        F = np.exp(E - shift[:, None])
        scale = np.exp(shift) / (2 * math.pi)
        fine = F.sum(axis=1) * h * scale
        coarse = F[:, ::2].sum(axis=1) * 2 * h * scale
        absum = np.abs(F).sum(axis=1) * h * scale
        delta = np.abs(fine - coarse)
        floor = 64 * _EPS * absum
        ok = delta <= np.maximum(contour.rel_tol * np.abs(fine.real), floor)
        last = level == contour.max_refinements or not contour.adaptive
        done = ok | last
        idx = pending[done]
        tail = 2 * np.exp(edge - c * lz[done]) / (2 * math.pi)
        value[idx] = fine.real[done]
        imag[idx] = fine.imag[done]
        l1[idx] = absum[done]
        err[idx] = delta[done] + floor[done] + tail
        nodes = max(nodes, t.size)
        if last and not np.all(ok):
            if contour.adaptive:
                bad = pending[~ok]
                raise NumericalError(
                    f"contour quadrature did not converge after {contour.max_refinements} refinements "
                    f"(worst delta {np.max(delta[~ok]):.3e} at z=exp({logz[bad[0]]:.4g}))"
                )
        pending = pending[~done]
        if pending.size == 0:
            break
        h /= 2.0
    return value, err, imag, l1, nodes


def _check_imag(value, imag):
    tol = 1e-8 * np.maximum(1.0, np.abs(value))
    if np.any(np.abs(imag) > tol):
        i = int(np.argmax(np.abs(imag) - tol))
        raise NumericalError(f"imaginary residual {imag[i]:.3e} exceeds tolerance for value {value[i]:.3e}")


def fox_h_array(spec: FoxHSpec, z, contour: ContourSpec = DEFAULT_CONTOUR):
    """Vectorised H-function. Returns (values, error estimates) arrays."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(~(z > 0)):
        raise ValueError("fox_h requires z > 0")
    lo, hi = spec.pole_interval()
    if not lo < hi:
        raise NumericalError(f"no contour separates the poles (interval {lo}, {hi})")
    logz = np.log(z)
    if contour.abscissa is not None:
        if not lo < contour.abscissa < hi:
            raise NumericalError(f"abscissa {contour.abscissa} outside admissible interval ({lo}, {hi})")
        cs = np.full(z.shape, float(contour.abscissa))
    else:
        cs = _pick_abscissae(spec, logz)
    values = np.empty(z.shape)
    errs = np.empty(z.shape)
    for c in np.unique(cs):
        group = np.nonzero(cs == c)[0]
        for start in range(0, group.size, _CHUNK):
            sel = group[start:start + _CHUNK]
            v, e, im, _, _ = _line_sum(spec.log_kernel, float(c), logz[sel], _pole_distance(spec, c), contour,
                                        contour.half_height)
            _check_imag(v, im)
            values[sel] = v
            errs[sel] = np.maximum(e, np.abs(im))
    return values, errs


def fox_h(spec: FoxHSpec, z: float, contour: ContourSpec = DEFAULT_CONTOUR) -> MetricResult:
    """H-function value at a single z > 0 with an error estimate."""
    v, e = fox_h_array(spec, [z], contour)
    return MetricResult(float(v[0]), float(e[0]), "exact_foxh", diagnostics={"z": float(z)})


def meijer_g_spec(m: int, n: int, a: Sequence[float], b: Sequence[float]) -> FoxHSpec:
    return FoxHSpec(m, n, [(x, 1.0) for x in a], [(x, 1.0) for x in b])


def meijer_g(spec: FoxHSpec, z: float, contour: ContourSpec = DEFAULT_CONTOUR) -> MetricResult:
    """Meijer G-function: an H-function whose exponent coefficients are all 1."""
    if any(A != 1.0 for _, A in spec.upper + spec.lower):
        raise ValueError("meijer_g requires every exponent coefficient to equal 1")
    return fox_h(spec, z, contour)


def fox_h_series(specs: Sequence[FoxHSpec], z: float, rep: int = 0, contour: ContourSpec = DEFAULT_CONTOUR,
                 log_stack=None):
    """Several H-functions at the same z on one shared contour.

    The abscissa is chosen for ``specs[rep]`` inside the intersection of all
    admissible intervals. ``log_stack``, if given, maps an array s to the
    stacked log-kernels of ``specs``. Returns (values, errors) arrays.
    """
    lo = max(sp.pole_interval()[0] for sp in specs)
    hi = min(sp.pole_interval()[1] for sp in specs)
    if not lo < hi:
        raise NumericalError("no common contour for the series")
    logz = math.log(z)
    cs, prof = _abscissa_profile(specs[rep])
    score = prof - cs * logz
    inside = (cs > lo) & (cs < hi)
    if np.any(inside):
        c = float(cs[inside][np.argmin(score[inside])])
    else:
        wlo, whi = _finite_window(lo, hi)
        c = 0.5 * (wlo + whi)
    d = min(c - lo, hi - c)
    T = max(_half_height(sp.log_kernel, c)[0] for sp in (specs[0], specs[rep], specs[-1]))
    if contour.half_height is not None:
        T = contour.half_height
    if log_stack is None:
        def log_stack(s):
            return np.stack([sp.log_kernel(s) for sp in specs])
    return _stacked_line_sum(log_stack, c, logz, d, T, contour)


def _stacked_line_sum(log_stack, c: float, logz: float, d: float, T: float, contour: ContourSpec):
    """Trapezoid sums on Re s = c for a stack of kernels at one z.

    Uses the conjugate symmetry of real-parameter kernels: only Im s >= 0
    is visited and the result is twice the real part, minus the real-axis
    node counted once.
    """
    h = 1.0 / contour.nodes_per_unit if contour.nodes_per_unit else min(d, 1.0) / 2.0
    for level in range(contour.max_refinements + 1):
        K = 2 * int(math.ceil(T / (2 * h)))
        k = np.arange(0, K + 1)
        s = c + 1j * h * k
        L = log_stack(s) - s[None, :] * logz
        shift = np.max(L.real, axis=1)
        F = np.exp(L - shift[:, None]) * np.where(k == 0, 1.0, 2.0)[None, :]
        scale = np.exp(shift) / (2 * math.pi)
        fine = F.sum(axis=1).real * h * scale
        coarse = F[:, ::2].sum(axis=1).real * 2 * h * scale
        absum = np.abs(F).sum(axis=1) * h * scale
        delta = np.abs(fine - coarse)
        floor = 64 * _EPS * absum
        ok = delta <= np.maximum(contour.rel_tol * np.abs(fine), floor)
        if np.all(ok) or not contour.adaptive:
            return fine, delta + floor
        h /= 2.0
    raise NumericalError(f"contour quadrature did not converge after {contour.max_refinements} refinements")


# ---------------------------------------------------------------------------
# bivariate


@dataclass
class _Plane:
    cs: float
    ct: float
    ds: float
    dt: float


def _joint_distance(spec: BivariateFoxHSpec, cs, ct):
    """Distances from (cs, ct) to the nearest s- and t-poles (array friendly)."""
    lo, hi = spec.x_kernel.pole_interval()
    ds = np.minimum(cs - lo, hi - cs)
    lo, hi = spec.y_kernel.pole_interval()
    dt = np.minimum(ct - lo, hi - ct)
    for a, A, B in spec.joint_num:
        arg = a + A * cs + B * ct
        if A != 0:
            ds = np.minimum(ds, arg / abs(A))
        if B != 0:
            dt = np.minimum(dt, arg / abs(B))
    return ds, dt


def _select_plane(spec: BivariateFoxHSpec, logx: float, logy: float, s_bounds: tuple[float, float] | None = None,
                  cs_fixed: float | None = None, ct_fixed: float | None = None) -> _Plane:
    """Pick (c_s, c_t) on a grid.

    Among planes whose L1 score is within ``_PLANE_SLACK`` of the best, take
    the one farthest from the poles: the node count scales like
    1 / (d_s d_t), while the score only controls cancellation.
    """
    cxs, px = _abscissa_profile(spec.x_kernel)
    cys, py = _abscissa_profile(spec.y_kernel)
    lo_s, hi_s = s_bounds or spec.x_kernel.pole_interval()
    if cs_fixed is not None:
        cxs, px = np.array([cs_fixed], dtype=float), np.array([0.0])
    if ct_fixed is not None:
        cys, py = np.array([ct_fixed], dtype=float), np.array([0.0])
    S, Tt = np.meshgrid(cxs, cys, indexing="ij")
    score = px[:, None] + py[None, :] - S * logx - Tt * logy
    score = score + spec.log_joint(S.astype(complex), Tt.astype(complex)).real
    feasible = (S > lo_s) & (S < hi_s)
    for a, A, B in spec.joint_num:
        feasible &= (a + A * S + B * Tt) > 0.02
    if not np.any(feasible):
        raise NumericalError("no pair of contours separates the poles of the bivariate kernel")
    score = np.where(feasible, score, np.inf)
    ds, dt = _joint_distance(spec, S, Tt)
    ds = np.minimum(ds, np.minimum(S - lo_s, hi_s - S))
    cost = -np.log(np.clip(ds, 1e-300, 1.0)) - np.log(np.clip(dt, 1e-300, 1.0))
    good = score <= np.min(score) + _PLANE_SLACK
    i, j = np.unravel_index(np.argmin(np.where(good, cost, np.inf)), score.shape)
    return _Plane(float(S[i, j]), float(Tt[i, j]), float(ds[i, j]), float(dt[i, j]))


def _plane_half_heights(spec: BivariateFoxHSpec, xkern, plane: _Plane) -> tuple[float, float]:
    """Grow the box [-Ts, Ts] x [-Tt, Tt] until its boundary is negligible."""
    Ts, Tt = 8.0, 8.0
    while True:
        us = np.linspace(-Ts, Ts, 81)
        vt = np.linspace(-Tt, Tt, 81)
        s = plane.cs + 1j * us
        t = plane.ct + 1j * vt
        L = (xkern(s)[:, None] + spec.y_kernel.log_kernel(t)[None, :]
             + spec.log_joint(s[:, None], t[None, :])).real
        ref = L.max()
        edge_s = max(L[0, :].max(), L[-1, :].max()) - ref
        edge_t = max(L[:, 0].max(), L[:, -1].max()) - ref
        grow = False
        if edge_s > _LOG_TAIL:
            Ts *= 2
            grow = True
        if edge_t > _LOG_TAIL:
            Tt *= 2
            grow = True
        if not grow:
            return Ts, Tt
        if max(Ts, Tt) > _MAX_HALF_HEIGHT:
            raise NumericalError("bivariate integrand does not decay")


def _plane_sums(spec: BivariateFoxHSpec, xstack, plane: _Plane, logx: float, logy: float,
                Ts: float, Tt: float, contour: ContourSpec):
    """Iterated trapezoid sums for every x-kernel returned by ``xstack``.

    ``xstack(s)`` gives the log x-kernels as an (n_kernels, len(s)) array.
    The integrand is conjugate-symmetric under (s, t) -> (conj s, conj t), so
    only Im s >= 0 is visited and the total is twice the real part of that
    half (the Im s = 0 row counted once). The inner t-sum is shared by every
    x-kernel.
    """
    hs = min(plane.ds, 1.0) / 2.0
    ht = min(plane.dt, 1.0) / 2.0
    if contour.nodes_per_unit:
        hs = ht = 1.0 / contour.nodes_per_unit
    ratio = spec.joint_direction()
    if ratio is not None and not contour.nodes_per_unit:
        # Tie the steps so that A hs = +-B ht: the joint arguments then sit on
        # a one-dimensional lattice and log-gamma is evaluated once per node.
        hs = min(hs, ht / abs(ratio))
        ht = abs(ratio) * hs
    lattice = ratio is not None and math.isclose(abs(ratio) * hs, ht, rel_tol=1e-12)
    sigma = 1 if ratio is not None and ratio > 0 else -1
    for level in range(contour.max_refinements + 1):
        Ks = 2 * int(math.ceil(Ts / (2 * hs)))
        Kt = 2 * int(math.ceil(Tt / (2 * ht)))
        ks = np.arange(0, Ks + 1)
        s = plane.cs + 1j * hs * ks
        t = plane.ct + 1j * ht * np.arange(-Kt, Kt + 1)
        ly = spec.y_kernel.log_kernel(t) - t * logy
        inner_f = np.empty(s.size, dtype=complex)
        inner_c = np.empty(s.size, dtype=complex)
        inner_abs = np.empty(s.size)
        shift_row = np.empty(s.size)
        rows = max(1, _GRID_BUDGET // t.size)
        if lattice:
            # joint argument depends on kt + sigma ks only
            n = np.arange(-Kt - Ks, Kt + Ks + 1)
            line = spec.log_joint(np.full(n.size, plane.cs, dtype=complex), plane.ct + 1j * ht * n)
            kt = np.arange(-Kt, Kt + 1)
            c_line = np.max(line.real)
            c_y = np.max(ly.real)
            e_line = np.exp(line - c_line)
            e_y = np.exp(ly - c_y)
        for i0 in range(0, s.size, rows):
            sl = slice(i0, i0 + rows)
            if lattice:
                idx = kt[None, :] + sigma * ks[sl, None] + (Kt + Ks)
                # exp factorises on the lattice; fall back to a per-row
                # shift only where the product of the factors would underflow
                sh = np.max(line.real[idx] + ly.real[None, :], axis=1)
                if np.min(sh) - c_line - c_y > -600.0:
                    M = e_line[idx] * e_y[None, :]
                    sh = np.full(idx.shape[0], c_line + c_y)
                else:
                    M = np.exp(line[idx] + ly[None, :] - sh[:, None])
            else:
                lj = spec.log_joint(s[sl, None], t[None, :]) + ly[None, :]
                # one shift per row keeps the chunks independent
                sh = np.max(lj.real, axis=1)
                M = np.exp(lj - sh[:, None])
            inner_f[sl] = M.sum(axis=1) * ht
            inner_c[sl] = M[:, ::2].sum(axis=1) * 2 * ht
            inner_abs[sl] = np.abs(M).sum(axis=1) * ht
            shift_row[sl] = sh
        lx = xstack(s) - s[None, :] * logx + shift_row[None, :]
        shift_out = np.max(lx.real, axis=1)
        X = np.exp(lx - shift_out[:, None])
        # row weights: 1 for the real-axis row, 2 for the others
        wrow = np.where(ks == 0, 1.0, 2.0)
        Xw = X * wrow[None, :]
        norm = np.exp(shift_out) / (4 * math.pi ** 2)
        fine = (Xw @ inner_f).real * hs * norm
        coarse = (Xw[:, ::2] @ inner_c[::2]).real * 2 * hs * norm
        absum = (np.abs(Xw) @ inner_abs) * hs * norm
        delta = np.abs(fine - coarse)
        floor = 256 * _EPS * absum
        ok = delta <= np.maximum(contour.rel_tol * np.abs(fine), floor)
        if np.all(ok) or not contour.adaptive:
            return fine, delta + floor, absum, level
        if level == contour.max_refinements:
            raise NumericalError(
                f"bivariate quadrature did not converge (worst relative delta "
                f"{np.max(delta / np.maximum(np.abs(fine), 1e-300)):.3e})"
            )
        hs /= 2.0
        ht /= 2.0
    raise AssertionError("unreachable")


def fox_h2(spec: BivariateFoxHSpec, x: float, y: float, contour_x: ContourSpec = DEFAULT_CONTOUR,
           contour_y: ContourSpec = DEFAULT_CONTOUR) -> MetricResult:
    """Two-variable H-function at (x, y) > 0."""
    if not (x > 0 and y > 0):
        raise ValueError("fox_h2 requires x > 0 and y > 0")
    if spec.is_separable():
        hx = fox_h(spec.x_kernel, x, contour_x)
        hy = fox_h(spec.y_kernel, y, contour_y)
        err = abs(hx.value) * hy.err_estimate + abs(hy.value) * hx.err_estimate
        return MetricResult(hx.value * hy.value, err, "exact_foxh", diagnostics={"separable": True})
    vals, errs, diag = fox_h2_series(spec, [spec.x_kernel], x, y, contour_x=contour_x, contour_y=contour_y)
    return MetricResult(float(vals[0]), float(errs[0]), "exact_foxh", diagnostics=diag)


def fox_h2_series(spec: BivariateFoxHSpec, x_kernels: Sequence[FoxHSpec], x: float, y: float, rep: int = 0,
                  contour_x: ContourSpec = DEFAULT_CONTOUR, contour_y: ContourSpec = DEFAULT_CONTOUR,
                  x_log_stack=None):
    """Bivariate H-functions sharing the joint group and the y-kernel.

    ``x_kernels`` replaces ``spec.x_kernel`` term by term; all terms share one
    pair of contours, picked for ``x_kernels[rep]``. ``x_log_stack``, if
    given, must map an array s to the stacked log-kernels of ``x_kernels``
    (a faster route for families related by recurrences). Returns
    (values, errors, diagnostics).
    """
    logx, logy = math.log(x), math.log(y)
    lo = max(k.pole_interval()[0] for k in x_kernels)
    hi = min(k.pole_interval()[1] for k in x_kernels)
    if not lo < hi:
        raise NumericalError("no common s-contour for the series")
    base = BivariateFoxHSpec(x_kernels[rep], spec.y_kernel, spec.joint_num, spec.joint_den)
    plane = _select_plane(base, logx, logy, (lo, hi), cs_fixed=contour_x.abscissa, ct_fixed=contour_y.abscissa)
    if min(plane.ds, plane.dt) <= 0:
        raise NumericalError("contour passes through a pole")
    Ts, Tt = _plane_half_heights(base, base.x_kernel.log_kernel, plane)
    for k in {0, len(x_kernels) - 1}:
        Ts2, Tt2 = _plane_half_heights(base, x_kernels[k].log_kernel, plane)
        Ts, Tt = max(Ts, Ts2), max(Tt, Tt2)
    if contour_x.half_height is not None:
        Ts = contour_x.half_height
    if contour_y.half_height is not None:
        Tt = contour_y.half_height
    contour = ContourSpec(
        max_refinements=max(contour_x.max_refinements, contour_y.max_refinements),
        rel_tol=max(contour_x.rel_tol, contour_y.rel_tol),
        adaptive=contour_x.adaptive and contour_y.adaptive,
        nodes_per_unit=contour_x.nodes_per_unit,
    )
    if x_log_stack is None:
        def x_log_stack(s):
            return np.stack([k.log_kernel(s) for k in x_kernels])
    vals, errs, l1, level = _plane_sums(spec, x_log_stack, plane, logx, logy, Ts, Tt, contour)
    diag = {"cs": plane.cs, "ct": plane.ct, "Ts": Ts, "Tt": Tt, "refinements": level}
    return vals, errs, diag
