import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpfeel import analysis as an
from wpfeel import mathkit as mk
from wpfeel import rng as streams
from wpfeel.sysmodel import (
    Beacon,
    DeviceProfile,
    Server,
    SystemConfig,
    beacon_gain,
    beacon_harvested_energy,
    phi,
    sample_channels,
)

mpmath.mp.dps = 30


def make_devices(K, sigma2=1.0, coeffs=None):
    coeffs = coeffs if coeffs is not None else np.linspace(1e-20, 1e-19, K)
    return [DeviceProfile(float(c), sigma2) for c in coeffs]


CFG = SystemConfig(learning_rate=0.01)
LOSS = an.LossMeta(2.302585, 1.0, 1.0)


def mp_outage(xi, L, alpha):
    xi = mpmath.mpf(xi)
    s = L + mpmath.mpf(2) / alpha
    val = (mpmath.gammainc(L, 0, xi) - xi ** (-mpmath.mpf(2) / alpha) * mpmath.gammainc(s, 0, xi)) / mpmath.gamma(L)
    return float(val)


class TestXi:
    def test_identity(self):
        src = Beacon(1.0, 0.37)
        xi = an.xi_parameter(src, CFG)
        energy = beacon_harvested_energy(src, CFG)
        assert xi * energy == pytest.approx(CFG.cell_radius ** CFG.alpha * phi(CFG.comm_time, CFG), rel=1e-12)

    def test_inverse_in_density(self):
        a = an.xi_parameter(Beacon(1.0, 1.0), CFG)
        assert an.xi_parameter(Beacon(1.0, 10.0), CFG) == pytest.approx(a / 10, rel=1e-14)

    def test_proportional_to_phi(self):
        # doubling the sub-band noise doubles phi
        cfg2 = SystemConfig(noise_psd=2 * CFG.noise_psd)
        src = Beacon(1.0, 1.0)
        assert an.xi_parameter(src, cfg2) == pytest.approx(2 * an.xi_parameter(src, CFG), rel=1e-14)


class TestBeaconOutage:
    def test_zero(self):
        assert an.beacon_outage_probability(0.0, 64, 3.8) == 0.0

    def test_hand_value(self):
        assert an.beacon_outage_probability(1.0, 1, 2.0) == pytest.approx(math.exp(-1), rel=1e-13)

    @pytest.mark.parametrize("xi,L,alpha", [(0.5, 2, 3.8), (3.0, 1, 2.5), (70.0, 64, 3.8), (50.0, 64, 3.8),
                                            (1e-3, 1, 2.0), (1e3, 2, 3.8)])
    def test_against_mpmath(self, xi, L, alpha):
        assert an.beacon_outage_probability(xi, L, alpha) == pytest.approx(mp_outage(xi, L, alpha), rel=1e-10)

    def test_monte_carlo(self):
        L, alpha, xi, R = 2, 3.8, 0.5, 100.0
        cfg = SystemConfig(num_antennas=L, alpha=alpha, cell_radius=R)
        n = 1_000_000
        r, h, _ = sample_channels(streams.substream(0, streams.ORACLE, 101), cfg, n)
        p_mc = float(np.mean(R ** alpha * h <= r ** alpha * xi))
        p = an.beacon_outage_probability(xi, L, alpha)
        assert abs(p_mc - p) <= 3 * math.sqrt(p * (1 - p) / n)

    @given(st.integers(1, 64), st.floats(2.1, 6.0), st.floats(1e-4, 1e4), st.floats(1.0, 10.0))
    @settings(max_examples=150, deadline=None)
    def test_monotone_and_bounded(self, L, alpha, xi, factor):
        a = an.beacon_outage_probability(xi, L, alpha)
        b = an.beacon_outage_probability(xi * factor, L, alpha)
        assert 0.0 <= a <= 1.0
        assert b >= a - 1e-13

    def test_monotone_on_grid(self):
        xs = np.logspace(-3, 3, 300)
        vals = [an.beacon_outage_probability(x, 4, 3.8) for x in xs]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestAsymptotes:
    def test_constants(self):
        assert an.small_xi_constant(1, 2.0) == pytest.approx(0.5)
        assert an.large_xi_constant(1, 2.0) == pytest.approx(1.0)

    @pytest.mark.parametrize("L", [1, 2])
    def test_small_xi_limit(self, L):
        xi = 1e-3
        exact = an.beacon_outage_probability(xi, L, 3.8)
        assert exact / an.beacon_outage_asymptote(xi, L, 3.8, an.Asymptote.SMALL_XI) == pytest.approx(1.0, abs=0.05)

    @pytest.mark.parametrize("L", [1, 2])
    def test_large_xi_limit(self, L):
        xi, alpha = 1e3, 3.8
        exact = 1 - an.beacon_outage_probability(xi, L, alpha)
        approx = 1 - an.beacon_outage_asymptote(xi, L, alpha, an.Asymptote.LARGE_XI)
        assert exact / approx == pytest.approx(1.0, abs=0.05)

    def test_domain(self):
        with pytest.raises(mk.DomainError):
            an.beacon_outage_asymptote(0.0, 1, 2.0, an.Asymptote.SMALL_XI)


def enumerate_reciprocal(p, K):
    """E[1/M | M > 0] by summing the binomial pmf directly."""
    q = 1 - p
    num = sum(math.comb(K, m) * q ** m * p ** (K - m) / m for m in range(1, K + 1))
    return num / (1 - p ** K)


class TestExpectedReciprocal:
    def test_full_participation(self):
        assert an.expected_reciprocal_active(0.0, 7) == pytest.approx(1 / 7, rel=1e-15)

    @pytest.mark.parametrize("p", [0.0, 0.3, 0.99])
    def test_single_device(self, p):
        assert an.expected_reciprocal_active(p, 1) == pytest.approx(1.0, rel=1e-14)

    def test_hand_value(self):
        assert an.expected_reciprocal_active(0.5, 2) == pytest.approx(5 / 6, rel=1e-14)

    @pytest.mark.parametrize("K,p", list(itertools.product(range(1, 13), np.round(np.arange(0.1, 1.0, 0.1), 1))))
    def test_enumeration(self, K, p):
        assert an.expected_reciprocal_active(p, K) == pytest.approx(enumerate_reciprocal(p, K), abs=1e-12)

    @given(st.floats(0.0, 0.999), st.integers(1, 60))
    def test_range(self, p, K):
        v = an.expected_reciprocal_active(p, K)
        assert 1 / K - 1e-12 <= v <= 1 + 1e-12

    def test_domain(self):
        with pytest.raises(mk.DomainError):
            an.expected_reciprocal_active(1.0, 3)


class TestLocalDeviation:
    def test_zero_variance(self):
        assert an.local_deviation_bound(DeviceProfile(1e-19, 0.0), 1.0, CFG) == 0.0

    def test_cube_root(self):
        dev = DeviceProfile(1e-19, 2.0)
        a = an.local_deviation_bound(dev, 1.0, CFG)
        assert an.local_deviation_bound(dev, 8.0, CFG) == pytest.approx(a / 2, rel=1e-14)

    def test_dominates_monte_carlo(self):
        # the bound keeps b* continuous, so compare against the same quantity
        from wpfeel.validation import local_deviation_dominance
        assert local_deviation_dominance(0).passed

    def test_domain(self):
        with pytest.raises(mk.DomainError):
            an.local_deviation_bound(DeviceProfile(1e-19, 1.0), 0.0, CFG)


class TestGlobalDeviation:
    def test_full_participation(self):
        K, s = 5, 0.4
        assert an.global_deviation_bound([s] * K, 0.0, K, 3.0) == pytest.approx(2 * s / K, rel=1e-14)

    def test_outage_floor(self):
        p, phi_bound = 0.2, 1.5
        val = an.global_deviation_bound([0.0] * 400, p, 400, phi_bound)
        assert val >= 2 * p ** 2 * phi_bound

    def test_hand_assembly(self):
        K, p, terms, Phi = 3, 0.3, [1.0, 2.0, 3.0], 10.0
        recip = enumerate_reciprocal(p, K)
        expected = 2 / 9 * 6 + 2 * ((1 - p ** 3) * (recip - 1 / 3) + p ** 2) * Phi
        assert an.global_deviation_bound(terms, p, K, Phi) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            an.global_deviation_bound([1.0, 2.0], 0.1, 3, 1.0)


class TestBeaconBound:
    def test_components(self):
        cfg = SystemConfig(cell_radius=10.0, learning_rate=0.01)
        devs = make_devices(cfg.num_devices)
        rep = an.convergence_bound_beacon(cfg, devs, Beacon(1.0, 1e4), LOSS)
        assert rep.regime is an.Regime.BEACON
        assert rep.total == rep.descent + rep.deviation + rep.residue
        assert rep.descent == pytest.approx(2 * LOSS.initial_gap / (cfg.learning_rate * cfg.num_rounds))
        assert rep.residue == 0.0 and rep.outage_prob == 0.0
        assert an.residue(0.0, 30, 5.0) == 0.0

    def test_eightfold_energy_halves_deviation(self):
        cfg = SystemConfig(cell_radius=10.0, learning_rate=0.01)
        devs = make_devices(cfg.num_devices)
        a = an.convergence_bound_beacon(cfg, devs, Beacon(1.0, 1e4), LOSS)
        b = an.convergence_bound_beacon(cfg, devs, Beacon(1.0, 8e4), LOSS)
        assert a.outage_prob == b.outage_prob == 0.0
        assert b.deviation == pytest.approx(a.deviation / 2, rel=1e-13)

    @pytest.mark.parametrize("density", [0.002, 0.005, 0.02, 1.0])
    def test_cross_assembly(self, density):
        # descent plus the global-deviation bound built from per-device pieces
        cfg = SystemConfig(learning_rate=0.01, num_devices=6)
        devs = make_devices(6, sigma2=0.7)
        src = Beacon(1.0, density)
        rep = an.convergence_bound_beacon(cfg, devs, src, LOSS)
        energy = beacon_harvested_energy(src, cfg)
        p = an.beacon_outage_probability(an.xi_parameter(src, cfg), cfg.num_antennas, cfg.alpha)
        terms = [(1 - p) * an.local_deviation_bound(d, energy, cfg) for d in devs]
        expected = rep.descent + an.global_deviation_bound(terms, p, 6, LOSS.grad_bound)
        assert 0 < p < 1 or density == 1.0
        assert rep.total == pytest.approx(expected, rel=1e-10)

    def test_learning_rate_precondition(self):
        cfg = SystemConfig(learning_rate=2.0)
        with pytest.raises(an.PreconditionError):
            an.convergence_bound_beacon(cfg, make_devices(cfg.num_devices), Beacon(1.0, 1.0), LOSS)

    def test_needs_two_devices(self):
        cfg = SystemConfig(learning_rate=0.01, num_devices=1)
        with pytest.raises(an.PreconditionError):
            an.convergence_bound_beacon(cfg, make_devices(1), Beacon(1.0, 1.0), LOSS)

    def test_nonincreasing_in_energy(self):
        # Above P_out ~ 0.96 the residue shrinks as P_out -> 1, so the check
        # covers the regime where devices are mostly active.
        devs = make_devices(CFG.num_devices)
        reps = [an.convergence_bound_beacon(CFG, devs, Beacon(1.0, d), LOSS) for d in np.logspace(-3, 3, 80)]
        totals = [r.total for r in reps if r.outage_prob <= 0.95]
        assert len(totals) > 60
        assert all(b <= a * (1 + 1e-12) for a, b in zip(totals, totals[1:]))

    def test_outage_slope_tends_to_minus_L(self):
        for L, lo in ((1, 6), (2, 4), (4, 3)):
            cfg = SystemConfig(num_antennas=L, learning_rate=0.01)
            dens = np.logspace(lo, lo + 2, 9)
            p = [an.beacon_outage_probability(an.xi_parameter(Beacon(1.0, d), cfg), L, cfg.alpha)
                 for d in dens]
            lam = dens * cfg.round_time
            assert max(p) < 1e-4
            slope = an.loglog_slope(np.log(lam), np.log(p))
            assert slope == pytest.approx(-L, rel=0.10)


class TestScalingExponent:
    def _reports(self, lam, dev):
        return [an.BoundReport(0.0, d, 0.0, 0.0, 0.0, an.Regime.BEACON, x) for x, d in zip(lam, dev)]

    def test_recovers_power_law(self):
        lam = np.logspace(0, 4, 9)
        assert an.scaling_exponent(self._reports(lam, 3.0 * lam ** (-1 / 3))) == pytest.approx(-1 / 3, abs=1e-9)

    def test_intercept_invariant(self):
        lam = np.logspace(0, 4, 9)
        a = an.scaling_exponent(self._reports(lam, lam ** -0.3))
        b = an.scaling_exponent(self._reports(lam, 2 * lam ** -0.3))
        assert a == pytest.approx(b, abs=1e-12)

    def test_default_sweep(self):
        devs = make_devices(CFG.num_devices)
        reps = [an.convergence_bound_beacon(CFG, devs, Beacon(1.0, d), LOSS) for d in np.logspace(1, 4, 13)]
        assert -0.36 <= an.scaling_exponent(reps) <= -0.31

    def test_insufficient_span(self):
        lam = np.logspace(0, 1, 9)
        with pytest.raises(an.InsufficientSpanError):
            an.scaling_exponent(self._reports(lam, lam ** -0.3))
        with pytest.raises(an.InsufficientSpanError):
            an.scaling_exponent(self._reports(np.logspace(0, 4, 4), np.ones(4)))

    def test_outage_points_rejected(self):
        lam = np.logspace(0, 4, 9)
        reps = [an.BoundReport(0.0, 1.0, 0.0, 0.5, 0.0, an.Regime.BEACON, x) for x in lam]
        with pytest.raises(an.InsufficientSpanError):
            an.scaling_exponent(reps)


class TestServerOutage:
    def test_zero(self):
        assert an.server_outage_probability(0.0, 2, 3.8) == 0.0

    @pytest.mark.parametrize("tau,L", [(1e-4, 1), (1e-2, 1), (0.3, 2), (2.0, 1), (50.0, 4), (1e3, 8)])
    def test_against_mpmath(self, tau, L):
        alpha = 3.8

        def f(x):
            return 2 * x ** (L - 1) * mpmath.besselk(0, 2 * mpmath.sqrt(x)) * (1 - (x / tau) ** (1 / mpmath.mpf(alpha)))

        pts = [0] + [tau * 10.0 ** -k for k in range(12, 0, -1)] + [tau]
        if L > 4:
            pts = sorted(set(pts + [x for x in np.geomspace(1.0, tau, 30)]))
        ref = mpmath.quad(f, pts) / mpmath.gamma(L) ** 2
        assert an.server_outage_probability(tau, L, alpha) == pytest.approx(float(ref), rel=1e-7, abs=1e-14)

    def test_monte_carlo(self):
        L, alpha, tau, R = 1, 3.8, 1e-2, 10.0
        cfg = SystemConfig(num_antennas=L, alpha=alpha, cell_radius=R)
        n = 1_000_000
        r, h, ht = sample_channels(streams.substream(0, streams.ORACLE, 102), cfg, n, True)
        # harvested rho r^-alpha ht P0 T^cmp falls short of r^alpha phi / h
        p_mc = float(np.mean(h * ht < tau * (r / R) ** (2 * alpha)))
        p = an.server_outage_probability(tau, L, alpha)
        assert abs(p_mc - p) <= 3 * math.sqrt(p * (1 - p) / n)

    @pytest.mark.parametrize("tau,L", list(itertools.product([1e-4, 1e-3, 1e-2], [1, 2])))
    def test_dominated_by_bound(self, tau, L):
        assert an.server_outage_probability(tau, L, 3.8) <= an.server_outage_upper_bound(tau, L, 3.8)

    def test_monotone(self):
        taus = np.logspace(-4, 6, 60)
        vals = [an.server_outage_probability(t, 4, 3.8) for t in taus]
        assert all(0 <= a <= b <= 1 for a, b in zip(vals, vals[1:]))


class TestServerBound:
    def test_leading_term_value(self):
        val = an.server_outage_upper_bound(math.exp(-1), 1, 2.0, leading_only=True)
        assert val == pytest.approx(1 / (3 * math.e), rel=1e-14)

    def test_full_bound_exceeds_leading_term(self):
        tau = 1e-3
        assert an.server_outage_upper_bound(tau, 1, 3.8) > an.server_outage_upper_bound(tau, 1, 3.8, True)

    def test_vanishes(self):
        assert an.server_outage_upper_bound(1e-150, 2, 3.8) < 1e-290

    @pytest.mark.parametrize("tau", [1e-3, 1e-2, 0.09])
    def test_decreasing_in_L(self, tau):
        vals = [an.server_outage_upper_bound(tau, L, 3.8) for L in range(1, 20)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("tau", [0.0, 1.0, 2.0])
    def test_domain(self, tau):
        with pytest.raises(mk.DomainError):
            an.server_outage_upper_bound(tau, 1, 3.8)

    def test_delta_plug_in(self):
        cfg = SystemConfig(num_antennas=1, alpha=3.0, cell_radius=1.0)
        expected = 2 * float(mpmath.beta(mpmath.mpf(2) / 3, 0.5) * mpmath.gamma(mpmath.mpf(4) / 3)) / 3
        assert an.server_delta(cfg) == pytest.approx(expected, rel=1e-12)

    def test_eightfold_power_halves_deviation(self):
        devs = make_devices(CFG.num_devices)
        a = an.convergence_bound_server(CFG, devs, Server(1.0), LOSS)
        b = an.convergence_bound_server(CFG, devs, Server(8.0), LOSS)
        assert b.deviation == pytest.approx(a.deviation / 2, rel=1e-13)
        assert a.regime is an.Regime.SERVER

    def test_report_carries_quadrature(self):
        cfg = SystemConfig(cell_radius=10.0, learning_rate=0.01)
        rep = an.convergence_bound_server(cfg, make_devices(cfg.num_devices), Server(1e4), LOSS)
        assert rep.xi_or_tau < 1 and rep.mode == "closed_form"
        assert rep.outage_quadrature <= rep.outage_prob

    def test_large_tau_uses_quadrature(self):
        rep = an.convergence_bound_server(CFG, make_devices(CFG.num_devices), Server(1e-3), LOSS)
        assert rep.xi_or_tau > 1 and rep.mode == "quadrature_residue"
        assert rep.outage_prob == rep.outage_quadrature

    def test_nonincreasing_in_power(self):
        cfg = SystemConfig(cell_radius=20.0, learning_rate=0.01)
        devs = make_devices(cfg.num_devices)
        totals = [an.convergence_bound_server(cfg, devs, Server(p), LOSS).total for p in np.logspace(-4, 2, 25)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(totals, totals[1:]))

    @pytest.mark.parametrize("R", [1.0, 2.0, 5.0])
    @pytest.mark.parametrize("energy", [1e-3, 1e-2, 1.0])
    def test_comparable_to_beacon(self, R, energy):
        # equal budgets: beacon mean harvest equals the server's cell-edge mean harvest
        cfg = SystemConfig(cell_radius=R, learning_rate=0.01)
        devs = make_devices(cfg.num_devices)
        lam = energy / beacon_gain(cfg) / cfg.round_time
        p0 = energy / (cfg.rho * R ** -cfg.alpha * cfg.num_antennas * cfg.compute_time)
        b = an.convergence_bound_beacon(cfg, devs, Beacon(1.0, lam), LOSS)
        s = an.convergence_bound_server(cfg, devs, Server(p0), LOSS)
        ratio = (s.deviation + s.residue) / (b.deviation + b.residue)
        assert 0.1 <= ratio <= 10


class TestBoundReport:
    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            an.BoundReport(-1.0, 0.0, 0.0, 0.0, 0.0, an.Regime.BEACON, 1.0)
        with pytest.raises(ValueError):
            an.BoundReport(0.0, 0.0, 0.0, 1.5, 0.0, an.Regime.BEACON, 1.0)

    def test_csv_row(self):
        rep = an.BoundReport(1.0, 2.0, 3.0, 0.1, 0.5, an.Regime.SERVER, 7.0)
        assert dict(zip(an.CSV_COLUMNS, rep.csv_row())) == {
            "lambda_energy_or_P0": 7.0, "xi_or_tau": 0.5, "P_out": 0.1,
            "descent": 1.0, "deviation": 2.0, "residue": 3.0, "total": 6.0}
