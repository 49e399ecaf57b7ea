"""Round-by-round simulation of wirelessly powered federated SGD."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .. import rng as streams
from ..analysis import PreconditionError
from ..policy import (
    ZERO_PLAN,
    ComputePlan,
    EnergySplit,
    allocate_with_fallback,
    compute_energy_split,
    optimal_local_computation,
    schedule_server_wpt,
)
from ..sysmodel import (
    Beacon,
    ChannelDraw,
    DeviceProfile,
    PowerControl,
    Server,
    SystemConfig,
    WptSource,
    beacon_harvested_energy,
    sample_channel,
    server_harvested_energy,
)
from .task import SyntheticTask, local_gradient

MIN_PROBES = 10
PHI_SAFETY = 1.5
_SLACK = 1e-9


@dataclass(frozen=True)
class DeviceRound:
    draw: ChannelDraw
    harvested: float
    split: EnergySplit
    plan: ComputePlan
    batch_used: int
    wpt_power: Optional[float] = None

    @property
    def active(self) -> bool:
        return self.batch_used > 0


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    devices: List[DeviceRound]
    active_count: int
    loss: float
    grad_norm_sq: float        # ||grad F(w)||^2 at the start of the round
    global_grad_norm: float    # ||g||
    deviation_sample: float    # ||g - grad F(w)||^2
    update_applied: bool
    dropped: List[int] = field(default_factory=list)

    def check_constraints(self, cfg: SystemConfig, profiles: Sequence[DeviceProfile]) -> None:
        """Raise ``AssertionError`` if any device breaks its energy or time budget."""
        assert self.active_count == sum(d.active for d in self.devices)
        assert self.update_applied == (self.active_count > 0)
        for k, (d, prof) in enumerate(zip(self.devices, profiles)):
            if not d.active:
                continue
            f = d.plan.speed
            spent = d.split.comm_energy + d.batch_used * prof.compute_coeff * prof.workload * f * f
            assert spent <= d.harvested * (1 + _SLACK), f"device {k} overspends energy"
            assert d.batch_used * prof.workload / f <= cfg.compute_time * (1 + _SLACK), \
                f"device {k} misses the computation deadline"


class Constants(NamedTuple):
    mu_hat: float
    phi_hat: float
    sigma2_hat: np.ndarray     # per device


def estimate_constants(task, probe_points: Sequence[np.ndarray]) -> Constants:
    """Empirical smoothness, gradient-norm bound and per-device variance.

    ``task`` needs ``full_gradient(w)``, ``num_devices`` and
    ``shard_sample_gradients(w, k)``. ``mu_hat`` is the largest gradient
    Lipschitz ratio over probe pairs; ``phi_hat`` is 1.5 times the largest
    per-sample squared gradient norm (which bounds every mini-batch
    gradient); ``sigma2_hat[k]`` is the largest ``tr(Omega_k)`` seen.
    """
    probes = [np.asarray(p, dtype=float) for p in probe_points]
    if len(probes) < MIN_PROBES:
        raise ValueError(f"need at least {MIN_PROBES} probe points, got {len(probes)}")
    grads = [task.full_gradient(p) for p in probes]
    mu = 0.0
    for i, j in itertools.combinations(range(len(probes)), 2):
        dist = np.linalg.norm(probes[i] - probes[j])
        if dist > 0:
            mu = max(mu, float(np.linalg.norm(grads[i] - grads[j]) / dist))
    sigma2 = np.zeros(task.num_devices)
    peak = 0.0
    for p in probes:
        for k in range(task.num_devices):
            s = task.shard_sample_gradients(p, k)
            norms = np.einsum("ij,ij->i", s, s)
            mean = s.mean(axis=0)
            sigma2[k] = max(sigma2[k], max(0.0, float(norms.mean() - mean @ mean)))
            peak = max(peak, float(norms.max()))
    return Constants(mu, PHI_SAFETY * peak, sigma2)


def probe_points(task: SyntheticTask, seed: int, n: int = MIN_PROBES, scale: float = 1.0,
                 center: Optional[np.ndarray] = None) -> List[np.ndarray]:
    gen = streams.substream(seed, streams.PROBES)
    base = task.zeros() if center is None else np.asarray(center, dtype=float)
    return [base.copy()] + [base + scale * gen.standard_normal(task.dim) for _ in range(n - 1)]


def _floor_batch(batch: float, cap: int) -> int:
    if batch >= cap:
        return cap
    return int(math.floor(batch))


def simulate_round(model: np.ndarray, cfg: SystemConfig, devices: Sequence[DeviceProfile],
                   src: WptSource, task: SyntheticTask, seed: int, round_index: int,
                   learning_rate: Optional[float] = None):
    """Run one FEEL round; returns ``(RoundRecord, next_model)``.

    Channel and batch draws for device ``k`` come from the substreams
    ``(seed, CHANNEL|BATCH, round_index, k)``.
    """
    K = cfg.num_devices
    eta = cfg.learning_rate if learning_rate is None else learning_rate
    server = isinstance(src, Server)
    draws = [sample_channel(streams.substream(seed, streams.CHANNEL, round_index, k), cfg,
                            needs_wpt_gain=server) for k in range(K)]

    dropped: List[int] = []
    if server:
        scheduled = schedule_server_wpt(draws, src, cfg)
        if src.control is PowerControl.OPTIMIZED:
            powers = [0.0] * K
            if scheduled:
                plan = allocate_with_fallback(scheduled, draws, devices, src.power, cfg)
                dropped = plan.dropped
                for k, p in plan.powers.items():
                    powers[k] = p
        else:
            powers = [src.power] * K
        harvest = [server_harvested_energy(src, d, p, cfg) for d, p in zip(draws, powers)]
    else:
        powers = [None] * K
        harvest = [beacon_harvested_energy(src, cfg)] * K

    cap = task.shard_size
    rounds = []
    grads = []
    for k in range(K):
        split = compute_energy_split(harvest[k], draws[k], cfg)
        plan = optimal_local_computation(split.compute_energy, devices[k], cfg) if split.active \
            else ZERO_PLAN
        used = _floor_batch(plan.batch_size, cap) if split.active else 0
        if used > 0:
            gen = streams.substream(seed, streams.BATCH, round_index, k)
            batch = np.sort(gen.choice(cap, size=used, replace=False))
            grads.append(local_gradient(task, model, k, batch))
        rounds.append(DeviceRound(draws[k], harvest[k], split, plan, used, powers[k]))

    full = task.full_gradient(model)
    m = len(grads)
    if m:
        g = np.mean(np.stack(grads), axis=0)
        new_model = model - eta * g
    else:
        g = np.zeros_like(model)
        new_model = model.copy()
    diff = g - full
    record = RoundRecord(
        round_index=round_index,
        devices=rounds,
        active_count=m,
        loss=task.loss(model),
        grad_norm_sq=float(full @ full),
        global_grad_norm=float(np.linalg.norm(g)),
        deviation_sample=float(diff @ diff),
        update_applied=m > 0,
        dropped=dropped,
    )
    return record, new_model


@dataclass
class TrainingReport:
    avg_grad_norm: float
    test_accuracy: float
    losses: np.ndarray
    grad_norms: np.ndarray          # ||grad F(w_i)||^2 on the full training set
    active_counts: np.ndarray
    deviation_samples: np.ndarray
    update_flags: np.ndarray
    global_grad_norms: np.ndarray
    constants: Constants
    learning_rate: float
    initial_loss: float
    final_model: np.ndarray
    records: List[RoundRecord] = field(default_factory=list, repr=False)

    @property
    def num_rounds(self) -> int:
        return len(self.losses)

    def descent_rhs(self, loss_floor: float = 0.0) -> float:
        """``2 (F(w0) - F_*) / (eta N) + mean ||g_i - grad F(w_i)||^2``.

        Cross-entropy is non-negative, so ``loss_floor = 0`` is a valid ``F_*``.
        """
        return (2.0 * (self.initial_loss - loss_floor) / (self.learning_rate * self.num_rounds)
                + float(self.deviation_samples.mean()))


def check_shapes(cfg: SystemConfig, devices: Sequence[DeviceProfile], task: SyntheticTask) -> None:
    if len(devices) != cfg.num_devices or task.num_devices != cfg.num_devices:
        raise ValueError("device profiles, task shards and num_devices disagree")
    if cfg.model_dim != task.dim:
        raise ValueError(f"config model_dim {cfg.model_dim} != task dimension {task.dim}")
    for k, d in enumerate(devices):
        if d.dataset_size != task.shard_size:
            raise ValueError(f"device {k} dataset_size {d.dataset_size} != shard {task.shard_size}")


def run_training(cfg: SystemConfig, devices: Sequence[DeviceProfile], src: WptSource,
                 task: SyntheticTask, seed: int, model0: Optional[np.ndarray] = None,
                 check_step: bool = True, keep_records: bool = False) -> TrainingReport:
    """Train for ``cfg.num_rounds`` rounds; deterministic in ``seed``.

    With ``check_step`` the learning rate must not exceed ``1 / mu_hat``
    estimated at probe points around the initial model.
    """
    check_shapes(cfg, devices, task)
    model = task.zeros() if model0 is None else np.array(model0, dtype=float)
    eta = cfg.learning_rate
    if check_step and eta > 0:
        mu0 = estimate_constants(task, probe_points(task, seed, center=model)).mu_hat
        if eta > 1.0 / mu0:
            raise PreconditionError(f"learning rate {eta} exceeds 1/mu_hat = {1.0 / mu0}")

    N = cfg.num_rounds
    snapshot_every = max(1, N // (MIN_PROBES - 1))
    snapshots = [model.copy()]
    losses, norms, counts, devs, flags, gnorms = [], [], [], [], [], []
    records = []
    for i in range(N):
        rec, model = simulate_round(model, cfg, devices, src, task, seed, i)
        losses.append(rec.loss)
        norms.append(rec.grad_norm_sq)
        counts.append(rec.active_count)
        devs.append(rec.deviation_sample)
        flags.append(rec.update_applied)
        gnorms.append(rec.global_grad_norm)
        if keep_records:
            records.append(rec)
        if (i + 1) % snapshot_every == 0 and len(snapshots) < MIN_PROBES:
            snapshots.append(model.copy())
    while len(snapshots) < MIN_PROBES:
        snapshots.append(snapshots[-1] + 1e-3 * (len(snapshots)) * np.ones_like(model))
    constants = estimate_constants(task, snapshots)
    norms = np.array(norms)
    return TrainingReport(
        avg_grad_norm=float(norms.mean()),
        test_accuracy=task.accuracy(model),
        losses=np.array(losses),
        grad_norms=norms,
        active_counts=np.array(counts),
        deviation_samples=np.array(devs),
        update_flags=np.array(flags),
        global_grad_norms=np.array(gnorms),
        constants=constants,
        learning_rate=eta,
        initial_loss=losses[0],
        final_model=model,
        records=records,
    )
