"""Closed-form outage probabilities, deviation bounds and convergence bounds."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mathkit import (
    DEFAULT_QUADRATURE,
    DomainError,
    QuadratureSpec,
    beta as beta_fn,
    bessel_k0,
    integrate,
    ln_gamma,
    log_bessel_k0,
    regularized_lower_gamma,
    regularized_upper_gamma,
)
from .sysmodel import (
    Beacon,
    DeviceProfile,
    Server,
    SystemConfig,
    beacon_harvested_energy,
    phi,
    spatial_energy_density,
)

CSV_COLUMNS = (
    "lambda_energy_or_P0", "xi_or_tau", "P_out", "descent", "deviation", "residue", "total",
)

# Points with more outage than this are dropped from the scaling fit.
SCALING_MAX_OUTAGE = 1e-6


class Regime(enum.Enum):
    BEACON = "beacon"
    SERVER = "server"


class Asymptote(enum.Enum):
    SMALL_XI = "small"
    LARGE_XI = "large"


class PreconditionError(ValueError):
    """Inputs violate a precondition under which a bound is valid."""


class InsufficientSpanError(ValueError):
    """Too few usable sweep points to fit a scaling exponent."""


@dataclass(frozen=True)
class LossMeta:
    initial_gap: float      # F(w0) - F_*
    smoothness: float       # mu
    grad_bound: float       # Phi

    def __post_init__(self):
        if not self.initial_gap >= 0:
            raise ValueError("initial_gap must be non-negative")
        if not (self.smoothness > 0 and self.grad_bound > 0):
            raise ValueError("smoothness and grad_bound must be positive")

    @classmethod
    def from_config(cls, cfg: SystemConfig, initial_gap: float) -> "LossMeta":
        return cls(initial_gap, cfg.smoothness, cfg.grad_norm_bound)


@dataclass(frozen=True)
class BoundReport:
    """Decomposed right-hand side of a convergence bound.

    ``energy_knob`` is the spatial-energy density (beacon) or per-device
    server power ``P0`` (server). ``mode`` records whether the local-deviation
    expectation came from the closed form or from Monte Carlo.
    """

    descent: float
    deviation: float
    residue: float
    outage_prob: float
    xi_or_tau: float
    regime: Regime
    energy_knob: float
    mode: str = "closed_form"
    outage_quadrature: Optional[float] = None

    def __post_init__(self):
        for name in ("descent", "deviation", "residue"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)!r}")
        if not 0.0 <= self.outage_prob <= 1.0:
            raise ValueError("outage_prob must be a probability")

    @property
    def total(self) -> float:
        return self.descent + self.deviation + self.residue

    def csv_row(self) -> tuple:
        return (self.energy_knob, self.xi_or_tau, self.outage_prob,
                self.descent, self.deviation, self.residue, self.total)


# ---------------------------------------------------------------------------
# Beacon WPT
# ---------------------------------------------------------------------------

def xi_parameter(src: Beacon, cfg: SystemConfig) -> float:
    """Ratio of cell-edge uplink energy to harvested beacon energy."""
    energy = beacon_harvested_energy(src, cfg)
    return cfg.cell_radius ** cfg.alpha * phi(cfg.comm_time, cfg) / energy


def _outage_weight(xi: float, L: int, alpha: float) -> float:
    # xi^(-2/alpha) * Gamma(L + 2/alpha) / Gamma(L)
    a = 2.0 / alpha
    return math.exp(-a * math.log(xi) + ln_gamma(L + a) - ln_gamma(L))


def beacon_outage_probability(xi: float, L: int, alpha: float) -> float:
    """Probability that a uniformly placed device cannot afford its upload.

    Closed form ``[gamma(L, xi) - xi^(-2/alpha) gamma(L + 2/alpha, xi)] / Gamma(L)``.
    """
    if xi < 0:
        raise DomainError("xi must be non-negative")
    if xi == 0.0:
        return 0.0
    if math.isinf(xi):
        return 1.0
    p = regularized_lower_gamma(L, xi) - _outage_weight(xi, L, alpha) * regularized_lower_gamma(
        L + 2.0 / alpha, xi)
    return min(1.0, max(0.0, p))


def beacon_active_probability(xi: float, L: int, alpha: float) -> float:
    """``1 - P_out`` evaluated without cancellation at large ``xi``."""
    if xi < 0:
        raise DomainError("xi must be non-negative")
    if xi == 0.0:
        return 1.0
    if math.isinf(xi):
        return 0.0
    p = regularized_upper_gamma(L, xi) + _outage_weight(xi, L, alpha) * regularized_lower_gamma(
        L + 2.0 / alpha, xi)
    return min(1.0, max(0.0, p))


def small_xi_constant(L: int, alpha: float) -> float:
    return 2.0 / ((alpha * L + 2.0) * math.exp(ln_gamma(L + 1.0)))


def large_xi_constant(L: int, alpha: float) -> float:
    return math.exp(ln_gamma(L + 2.0 / alpha) - ln_gamma(L))


def beacon_outage_asymptote(xi: float, L: int, alpha: float, regime: Asymptote) -> float:
    """Leading-order approximation of the beacon outage probability."""
    if not xi > 0:
        raise DomainError("xi must be positive")
    if regime is Asymptote.SMALL_XI:
        return small_xi_constant(L, alpha) * xi ** L
    if regime is Asymptote.LARGE_XI:
        return 1.0 - large_xi_constant(L, alpha) * xi ** (-2.0 / alpha)
    raise ValueError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------
# Participation and deviation
# ---------------------------------------------------------------------------

def expected_reciprocal_active(p_out: float, K: int) -> float:
    """E[1/M | M > 0] for M ~ Binomial(K, 1 - p_out)."""
    if not 0.0 <= p_out < 1.0:
        raise DomainError("expected_reciprocal_active needs 0 <= p_out < 1")
    if K < 1:
        raise DomainError("K must be a positive integer")
    pk = p_out ** K
    s = math.fsum((p_out ** (m - 1) - pk) / (K - m + 1) for m in range(1, K + 1))
    return s / (1.0 - pk)


def local_deviation_bound(dev: DeviceProfile, energy: float, cfg: SystemConfig) -> float:
    """Upper bound on E[sigma^2 / b* | active] for a device harvesting ``energy`` per round."""
    if not energy > 0:
        raise DomainError("harvested energy must be positive")
    return (2.0 * dev.workload * dev.grad_variance * dev.compute_coeff ** (1.0 / 3.0)
            * beta_fn(2.0 / 3.0, 2.0 / cfg.alpha)
            / (cfg.alpha * cfg.compute_time ** (2.0 / 3.0) * energy ** (1.0 / 3.0)))


def global_deviation_bound(per_device_terms: Sequence[float], p_out: float, K: int,
                           grad_bound: float) -> float:
    """Bound on the global gradient deviation of one round.

    ``per_device_terms[k]`` is ``Pr(k active) * E[sigma_k^2 / b_k | active]``.
    """
    terms = list(per_device_terms)
    if len(terms) != K:
        raise ValueError(f"expected {K} per-device terms, got {len(terms)}")
    local = 2.0 / K ** 2 * math.fsum(terms)
    if p_out >= 1.0:
        participation = 0.0
    else:
        participation = (1.0 - p_out ** K) * (expected_reciprocal_active(p_out, K) - 1.0 / K)
    return local + 2.0 * (participation + p_out ** 2) * grad_bound


def residue(p_out: float, K: int, grad_bound: float) -> float:
    """Outage-induced residue term of the convergence bound."""
    pk = p_out ** K
    s = math.fsum((p_out ** (m - 1) - pk) / (K - m + 1) for m in range(2, K + 1))
    return 2.0 * (s + p_out ** 2) * grad_bound


def weighted_compute_variance(devices: Sequence[DeviceProfile]) -> float:
    """Mean of ``W_k sigma_k^2 C_k^(1/3)`` over devices."""
    return math.fsum(d.workload * d.grad_variance * d.compute_coeff ** (1.0 / 3.0)
                     for d in devices) / len(devices)


def _descent(cfg: SystemConfig, loss: LossMeta) -> float:
    if not cfg.learning_rate > 0:
        raise PreconditionError("learning rate must be positive for the bound")
    if cfg.learning_rate > 1.0 / loss.smoothness * (1 + 1e-12):
        raise PreconditionError(
            f"learning rate {cfg.learning_rate} exceeds 1/mu = {1.0 / loss.smoothness}")
    return 2.0 * loss.initial_gap / (cfg.learning_rate * cfg.num_rounds)


def _check_devices(cfg: SystemConfig, devices: Sequence[DeviceProfile]) -> None:
    if cfg.num_devices < 2:
        raise PreconditionError("the bound needs at least two devices")
    if len(devices) != cfg.num_devices:
        raise PreconditionError(f"{len(devices)} device profiles for K = {cfg.num_devices}")


def beacon_delta(cfg: SystemConfig) -> float:
    return (4.0 / cfg.alpha * beta_fn(2.0 / 3.0, 2.0 / cfg.alpha)
            * ((cfg.beta - 2.0) * cfg.nu ** (cfg.beta - 2.0) / (math.pi * cfg.beta)) ** (1.0 / 3.0))


def convergence_bound_beacon(cfg: SystemConfig, devices: Sequence[DeviceProfile], src: Beacon,
                             loss: LossMeta) -> BoundReport:
    _check_devices(cfg, devices)
    descent = _descent(cfg, loss)
    K = cfg.num_devices
    lam = spatial_energy_density(src, cfg)
    xi = xi_parameter(src, cfg)
    p_out = beacon_outage_probability(xi, cfg.num_antennas, cfg.alpha)
    active = beacon_active_probability(xi, cfg.num_antennas, cfg.alpha)
    deviation = (beacon_delta(cfg) * weighted_compute_variance(devices) * active
                 / (cfg.rho ** (1.0 / 3.0) * K * cfg.compute_time ** (2.0 / 3.0)
                    * lam ** (1.0 / 3.0)))
    return BoundReport(descent, deviation, residue(p_out, K, loss.grad_bound), p_out, xi,
                       Regime.BEACON, lam)


def scaling_exponent(sweep: Sequence[BoundReport]) -> float:
    """Least-squares slope of log(deviation + residue) against log(energy knob).

    Points with outage probability of :data:`SCALING_MAX_OUTAGE` or more are
    discarded; at least five must remain, spanning two decades.
    """
    kept = [r for r in sweep if r.outage_prob < SCALING_MAX_OUTAGE]
    if len(kept) < 5:
        raise InsufficientSpanError(
            f"{len(kept)} usable points (need 5 with P_out < {SCALING_MAX_OUTAGE})")
    x = np.log([r.energy_knob for r in kept])
    if (x.max() - x.min()) / math.log(10.0) < 2.0 - 1e-12:
        raise InsufficientSpanError("usable points span less than two decades")
    y = np.log([r.deviation + r.residue for r in kept])
    return loglog_slope(x, y)


def loglog_slope(log_x, log_y) -> float:
    """Ordinary least-squares slope of ``log_y`` on ``log_x``."""
    x = np.asarray(log_x, dtype=float)
    y = np.asarray(log_y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


# ---------------------------------------------------------------------------
# Server WPT
# ---------------------------------------------------------------------------

def tau_parameter(src: Server, cfg: SystemConfig) -> float:
    """Server-WPT outage parameter ``R^(2 alpha) phi(T^cmm) / (rho P0 T^cmp)``."""
    return (cfg.cell_radius ** (2.0 * cfg.alpha) * phi(cfg.comm_time, cfg)
            / (cfg.rho * src.power * cfg.compute_time))


def server_outage_probability(tau: float, L: int, alpha: float,
                              quad: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Server-WPT outage probability by quadrature.

    The product gain ``X = |h~|^2 |h|^2`` has density
    ``2 x^(L-1) K0(2 sqrt x) / Gamma(L)^2`` and a device at normalised
    distance ``u = r / R`` is in outage iff ``X <= u^(2 alpha) tau``, so
    ``P_out = int_0^tau f_X(x) (1 - (x / tau)^(1/alpha)) dx``.
    """
    if not tau >= 0:
        raise DomainError("tau must be non-negative")
    if tau == 0.0:
        return 0.0
    if tau <= 1.0:
        return _outage_small_tau(tau, L, alpha, quad)
    return _outage_large_tau(tau, L, alpha, quad)


def _outage_small_tau(tau, L, alpha, quad):
    # After x = tau s the integral runs over [0, 1]; the tau^L / Gamma(L)^2
    # scale is applied in log space so large L does not underflow.
    inv_alpha = 1.0 / alpha

    def integrand(s: float) -> float:
        return 2.0 * s ** (L - 1) * bessel_k0(2.0 * math.sqrt(tau * s)) * (1.0 - s ** inv_alpha)

    value = integrate(integrand, 0.0, 1.0, quad, endpoint_singularity=(L == 1))
    if value <= 0.0:
        return 0.0
    return min(1.0, math.exp(L * math.log(tau) - 2.0 * ln_gamma(L) + math.log(value)))


def _outage_large_tau(tau, L, alpha, quad):
    # For large tau the mass of X sits in a narrow band around L^2, far inside
    # [0, tau]; break the range geometrically around that band so no piece can
    # step over it, and evaluate the density in log space.
    inv_alpha = 1.0 / alpha
    log_norm = math.log(2.0) - 2.0 * ln_gamma(L)

    def integrand(x: float) -> float:
        if x <= 0.0:
            return 0.0
        log_f = log_norm + (L - 1) * math.log(x) + log_bessel_k0(2.0 * math.sqrt(x))
        return math.exp(log_f) * (1.0 - (x / tau) ** inv_alpha)

    centre = float(L * L)
    step = 0.5 * math.sqrt(2.0 / L)
    cuts = sorted({centre * math.exp(j * step) for j in range(-24, 25)} | {tau})
    cuts = [c for c in cuts if c < tau] + [tau]
    total = integrate(integrand, 0.0, cuts[0], quad, endpoint_singularity=True)
    for a, b in zip(cuts, cuts[1:]):
        total += integrate(integrand, a, b, quad)
    return min(1.0, max(0.0, total))


def server_outage_upper_bound(tau: float, L: int, alpha: float, leading_only: bool = False) -> float:
    """Small-``tau`` upper bound on the server-WPT outage probability.

    By default returns ``tau^L (1 + 2 alpha L + L (1 + alpha L) ln(1/tau))
    / (Gamma(L)^2 L^2 (1 + alpha L)^2)``. With ``leading_only`` only the
    ``tau^L ln(1/tau)`` term is kept; that term alone undershoots the exact
    probability for ``L = 1``.
    """
    if not 0.0 < tau < 1.0:
        raise DomainError(f"server outage bound needs 0 < tau < 1, got {tau!r}")
    log_scale = L * math.log(tau) - 2.0 * ln_gamma(L)
    lead = math.exp(log_scale) * math.log(1.0 / tau) / (L * (1.0 + alpha * L))
    if leading_only:
        return lead
    return lead + math.exp(log_scale) * (1.0 + 2.0 * alpha * L) / (L * (1.0 + alpha * L)) ** 2


def server_delta(cfg: SystemConfig) -> float:
    L = cfg.num_antennas
    return (2.0 * beta_fn(2.0 / 3.0, 1.0 / 6.0 + 1.0 / cfg.alpha)
            * math.exp(ln_gamma(L + 1.0 / 3.0) - ln_gamma(L))
            * cfg.cell_radius ** (cfg.alpha / 3.0) / cfg.alpha)


def convergence_bound_server(cfg: SystemConfig, devices: Sequence[DeviceProfile], src: Server,
                             loss: LossMeta,
                             quad: QuadratureSpec = DEFAULT_QUADRATURE) -> BoundReport:
    """Convergence bound under server WPT with equal per-device power ``P0``.

    The residue uses the closed-form outage upper bound; when ``tau >= 1``
    (outside the large-power regime) it falls back to the quadrature value
    and tags the report ``mode="quadrature_residue"``.
    """
    _check_devices(cfg, devices)
    descent = _descent(cfg, loss)
    K = cfg.num_devices
    tau = tau_parameter(src, cfg)
    exact = server_outage_probability(tau, cfg.num_antennas, cfg.alpha, quad)
    mode = "closed_form"
    if tau < 1.0:
        p_out = min(1.0, server_outage_upper_bound(tau, cfg.num_antennas, cfg.alpha))
    else:
        p_out = exact
        mode = "quadrature_residue"
    deviation = (server_delta(cfg) * weighted_compute_variance(devices)
                 / (cfg.rho ** (1.0 / 3.0) * K * cfg.compute_time * src.power ** (1.0 / 3.0)))
    return BoundReport(descent, deviation, residue(p_out, K, loss.grad_bound), p_out, tau,
                       Regime.SERVER, src.power, mode=mode, outage_quadrature=exact)
