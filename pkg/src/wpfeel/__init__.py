"""Convergence bounds, control policies and simulation for wirelessly powered federated edge learning."""
from .sysmodel import (
    Beacon,
    ChannelDraw,
    DeviceProfile,
    PowerControl,
    Server,
    SystemConfig,
)

__version__ = "0.1.0"

__all__ = ["Beacon", "ChannelDraw", "DeviceProfile", "PowerControl", "Server", "SystemConfig"]
