"""Sampling oracles for the closed-form outage and deviation results.

None of these call the special-function closed forms; they sample the
physical model directly.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..sysmodel import (
    Beacon,
    DeviceProfile,
    Server,
    SystemConfig,
    WptSource,
    beacon_harvested_energy,
    phi,
    sample_channels,
)

MIN_SAMPLES = 10_000


class Estimate(NamedTuple):
    value: float
    stderr: float


def _binomial(hits: np.ndarray) -> Estimate:
    p = float(np.mean(hits))
    return Estimate(p, math.sqrt(p * (1.0 - p) / hits.size))


def _check_n(n: int) -> None:
    if n < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n}")


def mc_beacon_outage_xi(xi: float, L: int, alpha: float, n: int, rng: np.random.Generator) -> Estimate:
    """Fraction of (r, h) draws with ``R^alpha h <= r^alpha xi``."""
    _check_n(n)
    u = rng.random(n)                 # (r / R)^2
    h = rng.standard_gamma(L, n)
    return _binomial(h <= u ** (alpha / 2.0) * xi)


def mc_server_outage_tau(tau: float, L: int, alpha: float, n: int, rng: np.random.Generator) -> Estimate:
    """Fraction of draws with ``|h~|^2 |h|^2 <= (r / R)^(2 alpha) tau``."""
    _check_n(n)
    u = rng.random(n)
    x = rng.standard_gamma(L, n) * rng.standard_gamma(L, n)
    return _binomial(x <= u ** alpha * tau)


def _harvest_and_cost(src: WptSource, cfg: SystemConfig, n: int, rng: np.random.Generator):
    server = isinstance(src, Server)
    r, h, ht = sample_channels(rng, cfg, n, needs_wpt_gain=server)
    with np.errstate(divide="ignore"):
        cost = r ** cfg.alpha / h * phi(cfg.comm_time, cfg)
        if server:
            harvested = cfg.rho * r ** (-cfg.alpha) * ht * src.power * cfg.compute_time
        else:
            harvested = np.full(n, beacon_harvested_energy(src, cfg))
    return harvested, cost


def mc_outage(src: WptSource, cfg: SystemConfig, n: int, rng: np.random.Generator) -> Estimate:
    """Computation-outage probability by simulating harvest and upload cost."""
    _check_n(n)
    harvested, cost = _harvest_and_cost(src, cfg, n, rng)
    return _binomial(harvested <= cost)


class DeviationEstimate(NamedTuple):
    conditional: float      # E[sigma^2 / b* | active]
    stderr: float
    active_fraction: float


def mc_local_deviation(energy: float, dev: DeviceProfile, cfg: SystemConfig, n: int,
                       rng: np.random.Generator) -> DeviationEstimate:
    """E[sigma^2 / b* | active] for a beacon-powered device harvesting ``energy``.

    ``b*`` is the continuous optimal batch ``(E^cmp T^2 / C)^(1/3) / W``.
    """
    _check_n(n)
    r, h, _ = sample_channels(rng, cfg, n)
    cost = r ** cfg.alpha / h * phi(cfg.comm_time, cfg)
    active = energy > cost
    spare = energy - cost[active]
    T = cfg.compute_time
    batch = (spare * T * T / dev.compute_coeff) ** (1.0 / 3.0) / dev.workload
    samples = dev.grad_variance / batch
    m = samples.size
    if m == 0:
        return DeviationEstimate(math.nan, math.nan, 0.0)
    se = float(samples.std(ddof=1) / math.sqrt(m)) if m > 1 else math.inf
    return DeviationEstimate(float(samples.mean()), se, m / n)


def mc_active_counts(src: WptSource, cfg: SystemConfig, n_rounds: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Number of active devices in each of ``n_rounds`` independent rounds."""
    K = cfg.num_devices
    harvested, cost = _harvest_and_cost(src, cfg, n_rounds * K, rng)
    return (harvested > cost).reshape(n_rounds, K).sum(axis=1)


def mc_expected_reciprocal(counts: np.ndarray) -> Estimate:
    """Sample mean of 1/M over rounds with M > 0."""
    m = np.asarray(counts)
    m = m[m > 0]
    if m.size < 2:
        return Estimate(1.0 / m[0] if m.size else math.nan, math.nan)
    inv = 1.0 / m
    return Estimate(float(inv.mean()), float(inv.std(ddof=1) / math.sqrt(inv.size)))
