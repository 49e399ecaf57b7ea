"""INI experiment configs.

Grammar (``configparser``; ``#`` and ``;`` start comments)::

    [experiment]
    seed = 7                      # top-level seed: device sampling and task data

    [system]
    cell_radius = 100             # any SystemConfig field, SI units, except:
    noise_dbm_hz = -80            # N0 in dBm/Hz (replaces noise_psd)
    learning_rate = auto          # 'auto' -> 1 / (smoothness upper bound of the task)

    [wpt]
    source = beacon               # beacon | server
    power = 1.0                   # P_bar (beacon) or P0 (server) [W]
    density = 1.0                 # beacons per m^2, beacon only
    control = equal               # equal | optimized, server only

    [devices]
    compute_coeff_grid = 0.010:0.100:0.001   # W (MFLOPs/s)^-3, sampled per device
    compute_coeff = 0.05                      # or a fixed value / comma list
    grad_variance = 1.0           # number, comma list, or 'measured' (from the task)
    workload = 1.09e6             # FLOPs per sample
    dataset_size = 2000

    [task]                        # simulate mode only
    feature_dim = 10
    num_classes = 10
    noise_scale = 1.0
    separation = 1.0
    test_size = 1000

    [loss]                        # analyze mode
    initial_gap = 2.302585
    smoothness = 1.0
    grad_bound = 1.0

Unknown sections or keys raise :class:`ConfigError`.
"""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from . import rng as streams
from .analysis import LossMeta
from .sysmodel import Beacon, DeviceProfile, PowerControl, Server, SystemConfig, WptSource

# 1 W (MFLOPs/s)^-3 expressed in W (FLOPs/s)^-3
MFLOPS_COEFF_TO_SI = 1e-18

_INT_FIELDS = {"num_devices", "num_antennas", "model_dim", "quant_bits", "num_rounds"}
_SYSTEM_KEYS = {f.name for f in dataclasses.fields(SystemConfig)} - {"noise_psd"} | {"noise_dbm_hz"}
_SECTIONS = {
    "experiment": {"seed"},
    "system": _SYSTEM_KEYS,
    "wpt": {"source", "power", "density", "control"},
    "devices": {"compute_coeff_grid", "compute_coeff", "grad_variance", "workload", "dataset_size"},
    "task": {"feature_dim", "num_classes", "noise_scale", "separation", "test_size"},
    "loss": {"initial_gap", "smoothness", "grad_bound"},
}
_REQUIRED = ("system", "wpt", "devices")


class ConfigError(ValueError):
    """A config file is malformed or violates a type invariant."""


def dbm_per_hz_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def watts_to_dbm_per_hz(watts: float) -> float:
    return 10.0 * math.log10(watts / 1e-3)


@dataclass(frozen=True)
class TaskSpec:
    feature_dim: int = 10
    num_classes: int = 10
    noise_scale: float = 1.0
    separation: float = 1.0
    test_size: int = 1000


@dataclass(frozen=True)
class DeviceSpec:
    """Device parameters before sampling. ``compute_coeff`` is in SI units."""

    compute_coeff_grid: Optional[tuple] = None     # (lo, hi, step) in SI units
    compute_coeff: Optional[tuple] = None
    grad_variance: Union[str, tuple] = (1.0,)
    workload: float = 1.09e6
    dataset_size: int = 2000


@dataclass(frozen=True)
class Experiment:
    seed: int
    system: SystemConfig
    auto_learning_rate: bool
    source: WptSource
    devices: DeviceSpec
    task: Optional[TaskSpec] = None
    loss: Optional[LossMeta] = None
    raw: Dict[str, Dict[str, str]] = field(default_factory=dict, compare=False)

    def compute_coeffs(self) -> np.ndarray:
        K = self.system.num_devices
        spec = self.devices
        if spec.compute_coeff is not None:
            return _broadcast(spec.compute_coeff, K, "compute_coeff")
        lo, hi, step = spec.compute_coeff_grid
        n = int(round((hi - lo) / step)) + 1
        grid = lo + step * np.arange(n)
        return streams.substream(self.seed, streams.DEVICES).choice(grid, size=K)

    def device_profiles(self, grad_variance=None) -> List[DeviceProfile]:
        """Device profiles; ``grad_variance`` overrides a 'measured' setting."""
        K = self.system.num_devices
        if grad_variance is None:
            if self.devices.grad_variance == "measured":
                raise ConfigError("grad_variance = measured needs a task to measure on")
            grad_variance = self.devices.grad_variance
        sig = _broadcast(grad_variance, K, "grad_variance")
        return [DeviceProfile(float(c), float(s), self.devices.workload, self.devices.dataset_size)
                for c, s in zip(self.compute_coeffs(), sig)]


def _broadcast(values, K: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1:
        return np.full(K, arr[0])
    if arr.size != K:
        raise ConfigError(f"{name}: {arr.size} values for {K} devices")
    return arr


def _number(text: str, key: str, integer: bool = False):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    if integer:
        if value != int(value):
            raise ConfigError(f"{key}: expected an integer, got {text!r}")
        return int(value)
    return value


def _numbers(text: str, key: str) -> tuple:
    return tuple(_number(t.strip(), key) for t in text.split(",") if t.strip())


def parse_config(text: str) -> Experiment:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    raw = {s: dict(parser[s]) for s in parser.sections()}
    for section, items in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        unknown = sorted(set(items) - _SECTIONS[section])
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    for section in _REQUIRED:
        if section not in raw:
            raise ConfigError(f"missing section [{section}]")

    seed = _number(raw.get("experiment", {}).get("seed", "0"), "seed", integer=True)

    sys_kwargs = {}
    auto_lr = False
    for key, text in raw["system"].items():
        if key == "noise_dbm_hz":
            sys_kwargs["noise_psd"] = dbm_per_hz_to_watts(_number(text, key))
        elif key == "learning_rate" and text.strip().lower() == "auto":
            auto_lr = True
        else:
            sys_kwargs[key] = _number(text, key, integer=key in _INT_FIELDS)
    try:
        system = SystemConfig(**sys_kwargs)
    except ValueError as exc:
        raise ConfigError(f"[system]: {exc}") from None

    source = _parse_source(raw["wpt"])
    devices = _parse_devices(raw["devices"])
    task = None
    if "task" in raw:
        t = raw["task"]
        try:
            task = TaskSpec(
                feature_dim=_number(t.get("feature_dim", "10"), "feature_dim", integer=True),
                num_classes=_number(t.get("num_classes", "10"), "num_classes", integer=True),
                noise_scale=_number(t.get("noise_scale", "1.0"), "noise_scale"),
                separation=_number(t.get("separation", "1.0"), "separation"),
                test_size=_number(t.get("test_size", "1000"), "test_size", integer=True),
            )
        except ValueError as exc:
            raise ConfigError(f"[task]: {exc}") from None
        q = task.feature_dim * task.num_classes + task.num_classes
        if system.model_dim != q:
            raise ConfigError(f"[system] model_dim = {system.model_dim} but the task has {q} parameters")
    loss = None
    if "loss" in raw:
        items = raw["loss"]
        try:
            loss = LossMeta(_number(items.get("initial_gap", "0"), "initial_gap"),
                            _number(items.get("smoothness", str(system.smoothness)), "smoothness"),
                            _number(items.get("grad_bound", str(system.grad_norm_bound)), "grad_bound"))
        except ValueError as exc:
            raise ConfigError(f"[loss]: {exc}") from None
    return Experiment(seed, system, auto_lr, source, devices, task, loss, raw)


def _parse_source(items: Dict[str, str]) -> WptSource:
    kind = items.get("source", "").strip().lower()
    if "power" not in items:
        raise ConfigError("[wpt] needs power")
    power = _number(items["power"], "power")
    try:
        if kind == "beacon":
            if "control" in items:
                raise ConfigError("[wpt] control applies to server WPT only")
            if "density" not in items:
                raise ConfigError("[wpt] beacon source needs density")
            return Beacon(power, _number(items["density"], "density"))
        if kind == "server":
            if "density" in items:
                raise ConfigError("[wpt] density applies to beacon WPT only")
            control = items.get("control", "equal").strip().lower()
            try:
                mode = PowerControl(control)
            except ValueError:
                raise ConfigError(f"[wpt] control must be equal or optimized, got {control!r}") from None
            return Server(power, mode)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[wpt]: {exc}") from None
    raise ConfigError(f"[wpt] source must be beacon or server, got {kind!r}")


def _parse_devices(items: Dict[str, str]) -> DeviceSpec:
    has_grid = "compute_coeff_grid" in items
    if has_grid == ("compute_coeff" in items):
        raise ConfigError("[devices] needs exactly one of compute_coeff_grid and compute_coeff")
    grid = coeff = None
    if has_grid:
        parts = items["compute_coeff_grid"].split(":")
        if len(parts) != 3:
            raise ConfigError("compute_coeff_grid must be lo:hi:step")
        lo, hi, step = (_number(p, "compute_coeff_grid") for p in parts)
        if not (0 < lo <= hi and step > 0):
            raise ConfigError("compute_coeff_grid needs 0 < lo <= hi and step > 0")
        grid = (lo * MFLOPS_COEFF_TO_SI, hi * MFLOPS_COEFF_TO_SI, step * MFLOPS_COEFF_TO_SI)
    else:
        coeff = tuple(c * MFLOPS_COEFF_TO_SI for c in _numbers(items["compute_coeff"], "compute_coeff"))
        if not coeff or min(coeff) <= 0:
            raise ConfigError("compute_coeff must be positive")
    gv_text = items.get("grad_variance", "1.0").strip()
    if gv_text.lower() == "measured":
        gv = "measured"
    else:
        gv = _numbers(gv_text, "grad_variance")
        if min(gv) < 0:
            raise ConfigError("grad_variance must be non-negative")
    workload = _number(items.get("workload", "1.09e6"), "workload")
    size = _number(items.get("dataset_size", "2000"), "dataset_size", integer=True)
    if workload <= 0 or size < 1:
        raise ConfigError("workload and dataset_size must be positive")
    return DeviceSpec(grid, coeff, gv, workload, size)


def load_config(path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
