import numpy as np
import pytest

from wpfeel import validation
from wpfeel.sysmodel import SystemConfig


class TestChecks:
    @pytest.mark.parametrize("name", sorted(validation.CHECKS))
    def test_passes(self, name):
        result = validation.run_check(name, 0)
        assert result.passed, f"{name}: {result.statistic} vs {result.threshold} {result.detail}"

    def test_crash_is_failure(self):
        result = validation.run_check("nope", 0)
        assert not result.passed
        assert "KeyError" in result.detail

    def test_result_row(self):
        r = validation.CheckResult("x", 0.5, 1.0)
        assert r.passed
        assert r.csv_row()[:2] == ("x", 1)
        assert not validation.CheckResult("x", 2.0, 1.0).passed


class TestHelpers:
    def test_enumeration_limits(self):
        assert validation.enumerate_expected_reciprocal(0.0, 5) == pytest.approx(0.2, rel=1e-14)
        # One device: E[1/M | M >= 1] is 1 regardless of outage.
        assert validation.enumerate_expected_reciprocal(0.7, 1) == pytest.approx(1.0, rel=1e-14)

    def test_default_devices_grid(self):
        devices = validation.default_devices(SystemConfig(num_devices=50), 4)
        c = np.array([d.compute_coeff for d in devices]) * 1e18
        assert np.allclose(c * 1000, np.round(c * 1000), atol=1e-9)
        assert c.min() >= 0.010 - 1e-12 and c.max() <= 0.100 + 1e-12
