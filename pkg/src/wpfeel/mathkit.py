"""Special functions and adaptive quadrature.

Everything here works on Python floats. The functions are pure, so they can
be called from any thread.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

EULER_GAMMA = 0.57721566490153286061

_EPS = 2.220446049250313e-16
_TINY = 1e-300
_MAX_ITER = 100_000


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature stopped before reaching the requested tolerance."""

    def __init__(self, message: str, estimate: float, error: float):
        super().__init__(f"{message} (estimate={estimate!r}, error bound={error!r})")
        self.estimate = estimate
        self.error = error


@dataclass(frozen=True)
class QuadratureSpec:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_subdivisions: int = 2000

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if int(self.max_subdivisions) != self.max_subdivisions or self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be a positive integer")


DEFAULT_QUADRATURE = QuadratureSpec()


# ---------------------------------------------------------------------------
# Gamma family
# ---------------------------------------------------------------------------

# Bernoulli-number coefficients B_{2k} / (2k (2k-1)) of the Stirling series.
_STIRLING = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_STIRLING_MIN = 15.0


def _ln_gamma_stirling(x: float) -> float:
    inv = 1.0 / x
    inv2 = inv * inv
    corr = 0.0
    for c in reversed(_STIRLING):
        corr = corr * inv2 + c
    return (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI + corr * inv


def ln_gamma(x: float) -> float:
    """Natural log of the Gamma function for ``x > 0``.

    Uses the Stirling series for ``x >= 15`` and the upward recurrence
    ``Gamma(x) = Gamma(x + n) / (x (x+1) ... (x+n-1))`` below that.
    """
    x = float(x)
    if not x > 0 or math.isinf(x):
        raise DomainError(f"ln_gamma requires a finite x > 0, got {x!r}")
    if x.is_integer() and x <= 30:
        return math.log(math.factorial(int(x) - 1))
    if x >= _STIRLING_MIN:
        return _ln_gamma_stirling(x)
    shift = math.ceil(_STIRLING_MIN - x)
    prod = 1.0
    for k in range(shift):
        prod *= x + k
    return _ln_gamma_stirling(x + shift) - math.log(prod)


def gamma(x: float) -> float:
    """Gamma function for ``x > 0`` (overflows to ``inf`` past ~171.6)."""
    return math.exp(ln_gamma(x))


def _check_incgamma_args(s: float, x: float) -> None:
    if not s > 0 or math.isinf(s):
        raise DomainError(f"incomplete gamma requires s > 0, got {s!r}")
    if not x >= 0:
        raise DomainError(f"incomplete gamma requires x >= 0, got {x!r}")


def _log_prefactor(s: float, x: float) -> float:
    # log of x^s e^-x / Gamma(s)
    return s * math.log(x) - x - ln_gamma(s)


def _lower_series(s: float, x: float) -> float:
    """Regularized P(s, x) by the power series; accurate for x < s + 1."""
    term = 1.0 / s
    total = term
    a = s
    for _ in range(_MAX_ITER):
        a += 1.0
        term *= x / a
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(_log_prefactor(s, x))


def _upper_continued_fraction(s: float, x: float) -> float:
    """Regularized Q(s, x) by modified Lentz; accurate for x >= s + 1."""
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(_log_prefactor(s, x)) * h


def regularized_lower_gamma(s: float, x: float) -> float:
    """P(s, x) = gamma(s, x) / Gamma(s), in [0, 1]."""
    s, x = float(s), float(x)
    _check_incgamma_args(s, x)
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return min(1.0, _lower_series(s, x))
    return max(0.0, 1.0 - _upper_continued_fraction(s, x))


def regularized_upper_gamma(s: float, x: float) -> float:
    """Q(s, x) = Gamma(s, x) / Gamma(s), in [0, 1]."""
    s, x = float(s), float(x)
    _check_incgamma_args(s, x)
    if x == 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    if x < s + 1.0:
        return max(0.0, 1.0 - _lower_series(s, x))
    return min(1.0, _upper_continued_fraction(s, x))


def lower_incomplete_gamma(s: float, x: float) -> float:
    """gamma(s, x), the integral of t^(s-1) e^-t over [0, x]."""
    p = regularized_lower_gamma(s, x)
    return 0.0 if p == 0.0 else math.exp(math.log(p) + ln_gamma(s))


def upper_incomplete_gamma(s: float, x: float) -> float:
    """Gamma(s, x) = Gamma(s) - gamma(s, x)."""
    q = regularized_upper_gamma(s, x)
    return 0.0 if q == 0.0 else math.exp(math.log(q) + ln_gamma(s))


def beta(a: float, b: float) -> float:
    """Euler Beta function B(a, b) for positive arguments."""
    a, b = float(a), float(b)
    if not (a > 0 and b > 0):
        raise DomainError(f"beta requires positive arguments, got ({a!r}, {b!r})")
    # a + b and lnG(a) + lnG(b) are commutative in IEEE arithmetic, so
    # beta(a, b) == beta(b, a) bit for bit.
    return math.exp(ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b))


# ---------------------------------------------------------------------------
# Modified Bessel function K0
# ---------------------------------------------------------------------------

_K0_SERIES_MAX = 2.0
_K0_STEP = 0.05
_K0_CUTOFF = 50.0


def _k0_series(x: float) -> float:
    q = 0.25 * x * x
    term = 1.0
    harmonic = 0.0
    i0 = 1.0
    tail = 0.0
    k = 0
    while True:
        k += 1
        term *= q / (k * k)
        harmonic += 1.0 / k
        i0 += term
        tail += term * harmonic
        # K0 >= K0(2) ~ 0.11 on this branch, so an absolute cut is enough.
        if term * (harmonic + 1.0) < 1e-18:
            break
    return -(math.log(0.5 * x) + EULER_GAMMA) * i0 + tail


def _k0_scaled(x: float) -> float:
    # e^x K0(x) = int_0^inf exp(-x (cosh t - 1)) dt; the integrand is even
    # and analytic, so the trapezoidal rule converges geometrically. The peak
    # width shrinks like 1/sqrt(x), so the step does too.
    h = _K0_STEP * min(1.0, math.sqrt(_K0_SERIES_MAX / x))
    t_max = math.acosh(1.0 + _K0_CUTOFF / x)
    n = int(math.ceil(t_max / h))
    total = 0.5
    for k in range(1, n + 1):
        total += math.exp(-x * (math.cosh(k * h) - 1.0))
    return total * h


def bessel_k0(x: float) -> float:
    """Modified Bessel function of the second kind, order zero, for x > 0."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"bessel_k0 requires x > 0, got {x!r}")
    if math.isinf(x):
        return 0.0
    if x <= _K0_SERIES_MAX:
        return _k0_series(x)
    return math.exp(-x) * _k0_scaled(x)


def log_bessel_k0(x: float) -> float:
    """``ln K0(x)``, finite for arguments where ``K0`` itself underflows."""
    x = float(x)
    if not x > 0:
        raise DomainError(f"log_bessel_k0 requires x > 0, got {x!r}")
    if math.isinf(x):
        return -math.inf
    if x <= _K0_SERIES_MAX:
        return math.log(_k0_series(x))
    return -x + math.log(_k0_scaled(x))


# ---------------------------------------------------------------------------
# Adaptive Gauss-Kronrod quadrature
# ---------------------------------------------------------------------------

# 15-point Kronrod nodes on [-1, 1] (non-negative half) with the embedded
# 7-point Gauss weights at the even-indexed nodes.
_XGK = (
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
)
_WGK = (
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
)
_WG = (
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
)


def gauss_kronrod_15(f: Callable[[float], float], a: float, b: float) -> tuple[float, float]:
    """One G7/K15 panel on [a, b]; returns (Kronrod estimate, |K15 - G7|)."""
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    fc = f(center)
    res_k = fc * _WGK[7]
    res_g = fc * _WG[3]
    for j in range(7):
        dx = half * _XGK[j]
        fsum = f(center - dx) + f(center + dx)
        res_k += _WGK[j] * fsum
        if j % 2 == 1:
            res_g += _WG[j // 2] * fsum
    res_k *= half
    res_g *= half
    return res_k, abs(res_k - res_g)


def _transformed(f, lo, hi, endpoint_singularity):
    """Map the problem onto a finite interval with a smooth-ish integrand."""
    if math.isinf(hi):
        if endpoint_singularity:
            # x = lo + u^2 / (1 - u^2), u in [0, 1)
            def g(u):
                if u >= 1.0:
                    return 0.0
                w = 1.0 - u * u
                return f(lo + u * u / w) * 2.0 * u / (w * w)
        else:
            # x = lo + t / (1 - t), t in [0, 1)
            def g(t):
                if t >= 1.0:
                    return 0.0
                w = 1.0 - t
                return f(lo + t / w) / (w * w)
        return g, 0.0, 1.0
    if endpoint_singularity:
        width = hi - lo

        # x = lo + width * u^2 turns log and x^(-p) (p < 1/2) singularities
        # at lo into bounded integrands.
        def g(u):
            if u <= 0.0:
                return 0.0
            return f(lo + width * u * u) * 2.0 * width * u
        return g, 0.0, 1.0
    return f, lo, hi


def integrate(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    spec: QuadratureSpec = DEFAULT_QUADRATURE,
    endpoint_singularity: bool = False,
) -> float:
    """Globally adaptive G7/K15 quadrature of ``f`` over ``[lo, hi]``.

    ``hi`` may be ``math.inf``. With ``endpoint_singularity`` the integrand may
    diverge integrably at ``lo``; the routine then never evaluates ``f`` there.

    Raises :class:`QuadratureError` (carrying the best estimate and its error
    bound) when ``spec`` cannot be met within ``spec.max_subdivisions``.
    """
    lo, hi = float(lo), float(hi)
    if not lo < hi:
        raise ValueError(f"integrate requires lo < hi, got [{lo}, {hi}]")
    if math.isinf(lo):
        raise ValueError("lower limit must be finite")
    g, a, b = _transformed(f, lo, hi, endpoint_singularity)

    est, err = gauss_kronrod_15(g, a, b)
    heap = [(-err, a, b, est)]
    total, total_err = est, err
    n_intervals = 1
    min_width = 1e-14 * (b - a)
    while True:
        tol = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= tol:
            break
        if not math.isfinite(total):
            raise QuadratureError("non-finite integrand value", total, total_err)
        if n_intervals >= spec.max_subdivisions:
            raise QuadratureError("maximum subdivisions reached", total, total_err)
        neg_err, left, right, piece = heapq.heappop(heap)
        mid = 0.5 * (left + right)
        if right - left < min_width:
            raise QuadratureError("interval too small to bisect", total, total_err)
        r1, e1 = gauss_kronrod_15(g, left, mid)
        r2, e2 = gauss_kronrod_15(g, mid, right)
        heapq.heappush(heap, (-e1, left, mid, r1))
        heapq.heappush(heap, (-e2, mid, right, r2))
        n_intervals += 1
        # Re-sum rather than update incrementally so round-off cannot drift.
        total = math.fsum(item[3] for item in heap)
        total_err = math.fsum(-item[0] for item in heap)
    return total
