"""Physical model of a wirelessly powered FEEL cell.

SI units throughout: W, J, s, Hz, m. Conversions from the dB/MFLOPs units
used in configuration files happen in :mod:`wpfeel.config`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

# Past this many bits per Hz-second 2**x overflows long before it matters.
MAX_SPECTRAL_LOAD = 1000.0

INFINITE_COST = math.inf


@dataclass(frozen=True)
class SystemConfig:
    cell_radius: float = 100.0        # R [m]
    num_devices: int = 30             # K
    num_antennas: int = 64            # L
    bandwidth: float = 1e6            # B [Hz], per-device sub-band
    noise_psd: float = 1e-11          # N0 [W/Hz]
    alpha: float = 3.8                # uplink path-loss exponent
    beta: float = 4.0                 # WPT path-loss exponent
    nu: float = 1.0                   # WPT near-field cut-off distance [m]
    rho: float = 0.5                  # conversion efficiency x beamforming gain
    round_time: float = 1.0           # T [s]
    compute_time: float = 0.8         # T^cmp [s]
    comm_time: float = 0.2            # T^cmm [s]
    model_dim: int = 21840            # q
    quant_bits: int = 16              # Q
    num_rounds: int = 500             # N
    learning_rate: float = 0.01       # eta
    grad_norm_bound: float = 1.0      # Phi
    smoothness: float = 1.0           # mu

    def __post_init__(self):
        positive = (
            "cell_radius", "bandwidth", "noise_psd", "nu", "rho", "round_time",
            "compute_time", "comm_time", "grad_norm_bound", "smoothness",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("num_devices", "num_antennas", "model_dim", "quant_bits", "num_rounds"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not (self.alpha > 2 and self.beta > 2):
            raise ValueError("path-loss exponents alpha and beta must exceed 2")
        if self.nu < 1:
            raise ValueError("nu must be at least 1 m")
        if self.rho > 1:
            raise ValueError("rho must lie in (0, 1]")
        if self.compute_time + self.comm_time > self.round_time * (1 + 1e-12):
            raise ValueError("compute_time + comm_time exceeds round_time")

    @property
    def payload_bits(self) -> int:
        return self.model_dim * self.quant_bits


@dataclass(frozen=True)
class DeviceProfile:
    compute_coeff: float              # C [W (FLOPs/s)^-3]
    grad_variance: float              # sigma^2 = tr(Omega)
    workload: float = 1.09e6          # W [FLOPs per sample]
    dataset_size: int = 2000          # D
    chip_psi: Optional[float] = None  # Psi [W (cycle/s)^-3]
    flops_per_cycle: Optional[int] = None

    def __post_init__(self):
        if not self.compute_coeff > 0:
            raise ValueError("compute_coeff must be positive")
        if not self.grad_variance >= 0:
            raise ValueError("grad_variance must be non-negative")
        if not self.workload > 0:
            raise ValueError("workload must be positive")
        if int(self.dataset_size) != self.dataset_size or self.dataset_size < 1:
            raise ValueError("dataset_size must be a positive integer")
        if (self.chip_psi is None) != (self.flops_per_cycle is None):
            raise ValueError("chip_psi and flops_per_cycle must be given together")
        if self.chip_psi is not None:
            implied = self.chip_psi / self.flops_per_cycle ** 3
            if abs(implied - self.compute_coeff) > 1e-12 * self.compute_coeff:
                raise ValueError("compute_coeff disagrees with chip_psi / flops_per_cycle**3")

    @classmethod
    def from_chip(cls, chip_psi: float, flops_per_cycle: int, **kwargs) -> "DeviceProfile":
        return cls(compute_coeff=chip_psi / flops_per_cycle ** 3, chip_psi=chip_psi,
                   flops_per_cycle=flops_per_cycle, **kwargs)


class PowerControl(enum.Enum):
    EQUAL = "equal"
    OPTIMIZED = "optimized"


@dataclass(frozen=True)
class Beacon:
    power: float      # P_bar [W]
    density: float    # lambda_pb [1/m^2]

    def __post_init__(self):
        if not (self.power > 0 and self.density > 0):
            raise ValueError("beacon power and density must be positive")


@dataclass(frozen=True)
class Server:
    power: float      # P0 [W] per device
    control: PowerControl = PowerControl.EQUAL

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError("server power must be positive")


WptSource = Union[Beacon, Server]


@dataclass(frozen=True)
class ChannelDraw:
    distance: float                     # r [m]
    uplink_gain: float                  # |h|^2
    wpt_gain: Optional[float] = None    # |h~|^2, server-WPT only

    def __post_init__(self):
        if not self.distance >= 0:
            raise ValueError("distance must be non-negative")
        if not self.uplink_gain >= 0:
            raise ValueError("uplink_gain must be non-negative")
        if self.wpt_gain is not None and not self.wpt_gain >= 0:
            raise ValueError("wpt_gain must be non-negative")


class MissingWptGain(ValueError):
    """A server-WPT computation was given a draw without a WPT channel."""


def phi(t: float, cfg: SystemConfig) -> float:
    """Energy [J] to push the model payload through the uplink in ``t`` seconds
    at unit channel gain and unit distance.

    Returns ``math.inf`` when the spectral load ``qQ/(Bt)`` exceeds
    :data:`MAX_SPECTRAL_LOAD`.
    """
    if not t > 0:
        raise ValueError(f"transmission time must be positive, got {t!r}")
    bits = cfg.payload_bits
    if bits == 0:
        return 0.0
    load = bits / (cfg.bandwidth * t)
    if load > MAX_SPECTRAL_LOAD:
        return INFINITE_COST
    return cfg.bandwidth * cfg.noise_psd * t * math.expm1(load * math.log(2.0))


def spatial_energy_density(src: Beacon, cfg: SystemConfig) -> float:
    """Beacon energy per unit area per round, P_bar * lambda_pb * T [J/m^2]."""
    return src.power * src.density * cfg.round_time


def beacon_gain(cfg: SystemConfig) -> float:
    """Ratio of harvested energy to spatial-energy density for beacon WPT."""
    if not cfg.beta > 2:
        raise ValueError("beacon harvesting diverges for beta <= 2")
    return cfg.rho * math.pi * cfg.beta / ((cfg.beta - 2.0) * cfg.nu ** (cfg.beta - 2.0))


def beacon_harvested_energy(src: Beacon, cfg: SystemConfig) -> float:
    """Per-round energy harvested from a dense beacon field, same for every device."""
    return beacon_gain(cfg) * spatial_energy_density(src, cfg)


def server_harvested_energy(src: Server, draw: ChannelDraw, allocated_power: float,
                            cfg: SystemConfig) -> float:
    if draw.wpt_gain is None:
        raise MissingWptGain("server-WPT harvesting needs a WPT channel gain")
    if not allocated_power >= 0:
        raise ValueError("allocated power must be non-negative")
    if draw.wpt_gain == 0.0 or allocated_power == 0.0:
        return 0.0
    return (cfg.rho * draw.distance ** (-cfg.alpha) * draw.wpt_gain
            * allocated_power * cfg.compute_time)


def required_comm_energy(draw: ChannelDraw, cfg: SystemConfig) -> float:
    """Smallest uplink energy that delivers the payload within T^cmm."""
    if draw.distance == 0.0:
        return 0.0
    if draw.uplink_gain == 0.0:
        return INFINITE_COST
    return draw.distance ** cfg.alpha / draw.uplink_gain * phi(cfg.comm_time, cfg)


def sample_channels(rng: np.random.Generator, cfg: SystemConfig, n: int,
                    needs_wpt_gain: bool = False):
    """Vectorised draws: ``(distance, uplink_gain, wpt_gain or None)`` arrays.

    Distances are uniform over the disc (``r = R sqrt(u)``); gains are
    Gamma(L, 1), the squared norm of an L-dimensional CN(0, I) vector.
    """
    distance = cfg.cell_radius * np.sqrt(rng.random(n))
    uplink = rng.standard_gamma(cfg.num_antennas, n)
    wpt = rng.standard_gamma(cfg.num_antennas, n) if needs_wpt_gain else None
    return distance, uplink, wpt


def sample_channel(rng: np.random.Generator, cfg: SystemConfig,
                   needs_wpt_gain: bool = False) -> ChannelDraw:
    r, h, ht = sample_channels(rng, cfg, 1, needs_wpt_gain)
    return ChannelDraw(float(r[0]), float(h[0]), None if ht is None else float(ht[0]))
