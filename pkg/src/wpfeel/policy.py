"""Per-device local-computation control and server-side power allocation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Sequence

from .sysmodel import (
    ChannelDraw,
    DeviceProfile,
    MissingWptGain,
    Server,
    SystemConfig,
    phi,
    required_comm_energy,
    server_harvested_energy,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ComputePlan:
    batch_size: float   # b, relaxed to a real number
    speed: float        # f [FLOPs/s]
    energy: float       # E^cmp [J]
    time: float         # t^cmp [s]

    @property
    def active(self) -> bool:
        return self.batch_size > 0


ZERO_PLAN = ComputePlan(0.0, 0.0, 0.0, 0.0)


def optimal_local_computation(energy: float, dev: DeviceProfile, cfg: SystemConfig) -> ComputePlan:
    """Largest batch a device can process with ``energy`` joules within T^cmp.

    Both the energy and the deadline constraint bind at the optimum:
    ``b* = (E T^2 / C)^(1/3) / W`` and ``f* = (E / (C T))^(1/3)``.
    """
    if not energy >= 0:
        raise ValueError("computation energy must be non-negative")
    if energy == 0.0:
        return ZERO_PLAN
    T = cfg.compute_time
    batch = (energy * T * T / dev.compute_coeff) ** (1.0 / 3.0) / dev.workload
    speed = (energy / (dev.compute_coeff * T)) ** (1.0 / 3.0)
    return ComputePlan(batch, speed, energy, batch * dev.workload / speed)


class EnergySplit(NamedTuple):
    comm_energy: float
    compute_energy: float
    active: bool


def compute_energy_split(harvested: float, draw: ChannelDraw, cfg: SystemConfig) -> EnergySplit:
    """Reserve the upload energy first; whatever is left goes to computation.

    A device whose harvest does not strictly exceed the upload cost is in
    computation outage and spends nothing.
    """
    if not harvested >= 0:
        raise ValueError("harvested energy must be non-negative")
    comm = required_comm_energy(draw, cfg)
    if harvested > comm:
        return EnergySplit(comm, harvested - comm, True)
    return EnergySplit(0.0, 0.0, False)


def schedule_server_wpt(draws: Sequence[ChannelDraw], src: Server, cfg: SystemConfig) -> List[int]:
    """Indices of devices that escape outage when every beam carries ``P0``."""
    active = []
    for k, draw in enumerate(draws):
        if draw.wpt_gain is None:
            raise MissingWptGain(f"draw {k} has no WPT gain")
        harvested = server_harvested_energy(src, draw, src.power, cfg)
        if harvested > required_comm_energy(draw, cfg):
            active.append(k)
    return active


class InfeasibleBudget(ValueError):
    """The average power budget does not cover the devices' upload floors."""

    def __init__(self, budget: float, floor: float):
        super().__init__(f"average budget {budget!r} does not exceed mean floor {floor!r}")
        self.budget = budget
        self.floor = floor


@dataclass(frozen=True)
class AllocationPlan:
    active_set: List[int]
    powers: Dict[int, float]
    theta: float
    varsigma: float
    dropped: List[int] = field(default_factory=list)


def power_floor(draw: ChannelDraw, cfg: SystemConfig) -> float:
    """WPT power at which harvested energy exactly pays for the upload."""
    return (draw.distance ** (2.0 * cfg.alpha) * phi(cfg.comm_time, cfg)
            / (cfg.rho * draw.wpt_gain * draw.uplink_gain * cfg.compute_time))


def power_weight(draw: ChannelDraw, dev: DeviceProfile, cfg: SystemConfig) -> float:
    """Share of surplus power a device receives, ``r^(a/4) sigma^(3/2) C^(1/4) W^(3/4) / |h~|^(1/2)``.

    ``W^(3/4)`` is common to all devices when workloads are equal and then
    cancels in the normalised split.
    """
    return (draw.distance ** (cfg.alpha / 4.0) * dev.grad_variance ** 0.75
            * dev.compute_coeff ** 0.25 * dev.workload ** 0.75 / draw.wpt_gain ** 0.25)


def allocate_server_power(ids: Sequence[int], draws: Sequence[ChannelDraw],
                          devices: Sequence[DeviceProfile], power: float,
                          cfg: SystemConfig) -> AllocationPlan:
    """Split ``len(ids) * power`` among the scheduled devices.

    Each device first gets its upload floor; the remaining budget is shared in
    proportion to :func:`power_weight`, which minimises the summed local
    gradient deviation.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("allocation needs at least one active device")
    for k in ids:
        if draws[k].wpt_gain is None:
            raise MissingWptGain(f"draw {k} has no WPT gain")
    floors = {k: power_floor(draws[k], cfg) for k in ids}
    weights = {k: power_weight(draws[k], devices[k], cfg) for k in ids}
    m = len(ids)
    varsigma = math.fsum(floors.values()) / m
    theta = math.fsum(weights.values()) / m
    if not power > varsigma:
        raise InfeasibleBudget(power, varsigma)
    surplus = power - varsigma
    if m == 1:
        powers = {ids[0]: power}
    elif theta > 0:
        powers = {k: floors[k] + weights[k] / theta * surplus for k in ids}
    else:
        # every device has zero gradient variance; any split of the surplus is optimal
        powers = {k: floors[k] + surplus for k in ids}
    return AllocationPlan(ids, powers, theta, varsigma)


def allocate_with_fallback(ids: Sequence[int], draws: Sequence[ChannelDraw],
                           devices: Sequence[DeviceProfile], power: float,
                           cfg: SystemConfig) -> AllocationPlan:
    """:func:`allocate_server_power`, dropping the worst-floor device until feasible."""
    remaining = list(ids)
    dropped: List[int] = []
    while remaining:
        try:
            plan = allocate_server_power(remaining, draws, devices, power, cfg)
        except InfeasibleBudget as exc:
            worst = max(remaining, key=lambda k: power_floor(draws[k], cfg))
            log.warning("power budget infeasible (%s); dropping device %d", exc, worst)
            remaining.remove(worst)
            dropped.append(worst)
            continue
        return AllocationPlan(plan.active_set, plan.powers, plan.theta, plan.varsigma, dropped)
    return AllocationPlan([], {}, 0.0, 0.0, dropped)


def allocation_objective(powers: Dict[int, float], draws: Sequence[ChannelDraw],
                         devices: Sequence[DeviceProfile], cfg: SystemConfig) -> float:
    """Summed local gradient deviation of the active set under ``powers``.

    Returns ``inf`` if some device would be left without computation energy.
    """
    total = []
    for k, p in powers.items():
        dev = devices[k]
        energy = (cfg.rho * draws[k].wpt_gain * p * cfg.compute_time / draws[k].distance ** cfg.alpha
                  - draws[k].distance ** cfg.alpha * phi(cfg.comm_time, cfg) / draws[k].uplink_gain)
        if energy <= 0:
            return math.inf
        total.append(dev.grad_variance * dev.compute_coeff ** (1.0 / 3.0) * dev.workload
                     / energy ** (1.0 / 3.0))
    return math.fsum(total) / cfg.compute_time ** (2.0 / 3.0)
