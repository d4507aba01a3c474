import math

import numpy as np
import pytest

from cmdp_lab.schedules import (
    PolicyBoundEstimates,
    ScheduleSet,
    StepSchedule,
    optimal_exponents,
    validate,
)


class TestValueAt:
    def test_power_half(self):
        s = StepSchedule("power", 1.0, 0.5)
        assert s.value_at(3) == pytest.approx(0.5)

    def test_power_log_starts_at_zero(self):
        s = StepSchedule("power_log", 1.0, 0.5)
        assert s.value_at(0) == 0.0

    def test_power_log_closed_form(self):
        # t = e^2 - 1: sqrt(ln e^2) / sqrt(e^2) = sqrt(2)/e ~ 0.5204
        s = StepSchedule("power_log", 1.0, 0.5)
        assert s.value_at(math.e**2 - 1) == pytest.approx(math.sqrt(2.0) / math.e, abs=1e-12)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            StepSchedule("power", -1.0, 0.5)
        with pytest.raises(ValueError):
            StepSchedule("power", 1.0, 0.0)
        with pytest.raises(ValueError):
            StepSchedule("power", 1.0, 1.5)
        with pytest.raises(ValueError):
            StepSchedule("geometric", 1.0, 0.5)


class TestValidate:
    def test_standard_pass(self):
        report = validate(ScheduleSet.standard(0.5, 0.55, 1.0))
        assert report.ok

    def test_standard_two_sigma_rejection(self):
        report = validate(ScheduleSet.standard(0.5, 0.9, 1.0))
        assert not report.ok
        assert "2σ < 3ν" in [c.name for c in report.failures()]

    def test_modified_pass(self):
        assert validate(ScheduleSet.modified(0.5, 1.0)).ok

    def test_modified_exponent_window(self):
        assert not validate(ScheduleSet.modified(0.4, 1.0)).ok
        assert not validate(ScheduleSet.modified(0.6, 0.6)).ok

    def test_a_d_same_timescale_enforced(self):
        s = ScheduleSet.standard(0.5, 0.55, 1.0)
        broken = ScheduleSet(a=s.a, b=s.b, c=s.c, d=StepSchedule("power", 1.0, 0.6))
        assert not validate(broken).ok

    def test_ratio_cap_advisory(self):
        bounds = PolicyBoundEstimates(B=1.0, U_v=1.0, U_bar_v=1.0, U_r=1.0, lambda_G=1.0, U_G=1.0)
        # U_w = 4, G = 4 -> cap = 1/(2*8 + 4) = 1/20
        assert bounds.ratio_cap() == pytest.approx(1.0 / 20.0)
        ok_set = ScheduleSet.standard(0.5, 0.55, 1.0, c_a=0.04, c_d=1.0)
        report = validate(ok_set, bounds)
        ratio_checks = [c for c in report.checks if "ratio" in c.name]
        assert ratio_checks[0].passed and ratio_checks[0].advisory

        bad_set = ScheduleSet.standard(0.5, 0.55, 1.0, c_a=0.1, c_d=1.0)
        report = validate(bad_set, bounds)
        ratio_checks = [c for c in report.checks if "ratio" in c.name]
        assert not ratio_checks[0].passed
        assert report.ok  # advisory failures never fail the validation


class TestOptimalExponents:
    def test_standard(self):
        assert optimal_exponents("standard", delta=0.01) == (0.5, 0.51, 1.0)
        assert validate(ScheduleSet.standard(*optimal_exponents("standard", 0.01))).ok

    def test_modified(self):
        assert optimal_exponents("modified") == (0.5, 1.0)

    def test_zero_delta_rejected(self):
        with pytest.raises(ValueError, match="delta"):
            optimal_exponents("standard", delta=0.0)


class TestTimescaleRatios:
    def test_standard_critic_slower_than_actor(self):
        # b(t)/a(t) -> 0: the critic decays faster, the actor is the fast
        # timescale; a(t)/b(t) -> 0 is false
        s = ScheduleSet.standard(0.5, 0.55, 1.0, c_a=1.0, c_b=1.0, c_c=1.0, c_d=1.0)
        grid = np.logspace(3, 6, 16).astype(int)
        ratios = np.array([s.b.value_at(t) / s.a.value_at(t) for t in grid])
        assert (np.diff(ratios) < 0).all()
        assert s.b.value_at(1e300) / s.a.value_at(1e300) < 0.05  # limit is 0
        inverse = np.array([s.a.value_at(t) / s.b.value_at(t) for t in grid])
        assert (np.diff(inverse) > 0).all()  # a/b grows: actor faster

    def test_modified_ratio_limits(self):
        # b/a = 1/sqrt(log) and c/b = t^{nu-beta} both decrease to 0; the
        # sqrt-log ratio needs astronomically large t to cross small
        # thresholds, so the limit is checked far beyond the usual grid
        s = ScheduleSet.modified(0.5, 1.0, c_a=1.0, c_b=1.0, c_c=1.0, c_d=1.0)
        grid = np.logspace(3, 6, 16).astype(int)
        ba = np.array([s.b.value_at(t) / s.a.value_at(t) for t in grid])
        cb = np.array([s.c.value_at(t) / s.b.value_at(t) for t in grid])
        assert (np.diff(ba) < 0).all()
        assert (np.diff(cb) < 0).all()
        assert cb[-1] < 0.05
        t_huge = 10**300
        assert s.b.value_at(t_huge) / s.a.value_at(t_huge) < 0.05

    def test_robbins_monro_by_exponent(self):
        for kind in ("power", "power_log"):
            diverges, squares = StepSchedule(kind, 1.0, 0.75).robbins_monro()
            assert diverges and squares
            diverges, squares = StepSchedule(kind, 1.0, 0.5).robbins_monro()
            assert diverges and not squares
            diverges, squares = StepSchedule(kind, 1.0, 1.0).robbins_monro()
            assert diverges and squares


class TestZeroCoefficient:
    def test_zero_coefficient_disables_updates(self):
        # diagnostic freeze: a schedule with zero coefficient is valid and
        # evaluates to zero everywhere
        s = StepSchedule("power", 0.0, 0.5)
        assert s.value_at(0) == 0.0
        assert s.value_at(1000) == 0.0
        frozen = ScheduleSet.standard(0.4, 0.5, 1.0, c_a=0.0, c_c=0.0)
        assert validate(frozen).ok
