"""Security bounds: worked-example values, small-case oracles, invariants."""

import math

import numpy as np
import pytest

from mdiqds.entropy import binary_entropy, binomial_tail_log2
from mdiqds.errors import DomainError, InfeasibleBoundsError
from mdiqds.estimation import ErrorBudget, YieldEstimate, true_error_upper_bound
from mdiqds.security import (
    build_security_report,
    choose_thresholds,
    forging_tail,
    honest_abort_bound,
    mdi_qkd_key_length,
    min_entropy_bound,
    repudiation_bound,
    signature_length_search,
    solve_p_e,
)
from mdiqds.session import ChannelTables
from mdiqds.sources import DecoySourceConfig, SystemProfile

BUDGET = ErrorBudget()

PUBLISHED_CONFIG = DecoySourceConfig(
    intensities={"s": 0.18, "d1": 0.09, "d2": 5e-4},
    intensity_probs={"s": 0.5, "d1": 0.25, "d2": 0.25},
    basis_probs={"Z": 0.625, "X": 0.375},
)
PUBLISHED_PROFILE = SystemProfile(
    distance_km=50.0,
    loss_coeff_db_per_km=0.2,
    detector_efficiency=0.145,
    dark_count_prob=6.02e-6,
    misalignment=0.01,
)


def replay_estimate(n_k=8_900_000, r_k=518_000, e_obs=0.0207, h_target=8.69e5):
    """Estimate carrying the count rates recovered from the published
    min-entropy, for analytic replays."""
    n_half = n_k // 2
    return YieldEstimate(
        bell=0,
        n_k=n_k,
        r_k=r_k,
        e_obs=e_obs,
        e_upper=true_error_upper_bound(e_obs, n_half, r_k, BUDGET.eps_pe),
        m_k0=0.0,
        m_k1=0.0,
        n_k0=round(h_target),
        n_k1=0,
        e_k1=0.0,
        n_bar_k1=0.0,
        e_bar_k1=0.0,
        validity_ok=True,
        usable=True,
        budget=BUDGET,
    )


def replay_report(**kwargs):
    est = replay_estimate(**kwargs)
    per_kgp = {
        "alice_bob": (est, est.n_k + est.r_k),
        "alice_charlie": (est, est.n_k + est.r_k),
    }
    return build_security_report(per_kgp, BUDGET, n_sig=5.58e12, pulse_rate=1e9)


class TestMinEntropy:
    def test_worked_example(self):
        full, approx = min_entropy_bound(869_000, 0, 0.0, 1e-10, 1e-10)
        assert full == pytest.approx(8.69e5, rel=0.02)
        assert approx == 869_000

    def test_no_counts(self):
        full, approx = min_entropy_bound(0, 0, 0.3, 1e-10, 1e-10)
        assert approx == 0.0
        assert full == pytest.approx(-2 * math.log2(2.0 / 1e-20), rel=1e-12)
        assert full < 0

    def test_zero_phase_error(self):
        _, approx = min_entropy_bound(100, 200, 0.0, 1e-10, 1e-10)
        assert approx == 300

    def test_penalty_is_exact(self):
        # the full bound differs from the approximation by exactly the
        # smoothing penalty, for any inputs
        for eps_p, eps_h in ((1e-10, 1e-10), (1e-5, 1e-7)):
            full, approx = min_entropy_bound(123, 456, 0.07, eps_p, eps_h)
            assert approx - full == pytest.approx(
                2 * math.log2(2.0 / (eps_p * eps_h)), rel=1e-12
            )


class TestForgingTail:
    def test_epsilon_dominated(self):
        _, p_f, _, _ = forging_tail(8_900_000, 0.028 * 4_450_000, 8.69e5, 1e-10, 1e-5)
        assert p_f == pytest.approx(1e-5, abs=1e-12)

    def test_small_case_bigint_oracle(self):
        n_k, r, h_min, eps_k, g = 20, 3, 10.0, 1e-10, 1e-5
        _, p_f, _, used_exact = forging_tail(n_k, r, h_min, eps_k, g)
        assert used_exact
        # strict threshold: fewer than 3 mistakes means at most 2
        tail = sum(math.comb(10, m) for m in range(3))
        expected = (tail * 2.0**-h_min + eps_k) / g
        assert p_f == pytest.approx(expected, rel=1e-12)

    def test_monotone_in_r(self):
        values = [
            forging_tail(2000, r, 400.0, 1e-10, 1e-5)[1] for r in (0, 50, 100, 200)
        ]
        assert values == sorted(values)

    def test_r_domain(self):
        with pytest.raises(DomainError):
            forging_tail(100, 51, 10.0, 1e-10, 1e-5)

    def test_p_r_bound_is_g(self):
        p_r, _, _, _ = forging_tail(1000, 10, 100.0, 1e-10, 3e-4)
        assert p_r == 3e-4

    def test_exact_and_exponent_forms_agree_at_crossover(self):
        # the exact tail and the entropy exponent stay within a factor two
        # on the log2 scale across the switchover sizes
        for n_k in (2000, 6000, 20000):
            n_half = n_k // 2
            r = int(0.05 * n_half)
            exact = binomial_tail_log2(min(n_half, 10_000), r)
            bound = n_half * binary_entropy(r / n_half)
            if not exact.is_bound:
                ratio = bound / exact.log2_value
                assert 1.0 <= ratio < 2.0


class TestAdversaryFloor:
    def test_worked_example(self):
        p_e, clamped = solve_p_e(0.1954, 0.0, 0.0)
        assert not clamped
        assert p_e == pytest.approx(0.0302, abs=2e-4)

    def test_extremes(self):
        assert solve_p_e(1.0, 0.0, 0.0)[0] == 0.5
        assert solve_p_e(0.0, 0.0, 0.5)[0] == 0.0

    def test_clamping_flagged(self):
        p_e, clamped = solve_p_e(0.9, 0.5, 0.0)
        assert clamped
        assert p_e == 0.5


class TestThresholds:
    def test_worked_example(self):
        s_a, s_v = choose_thresholds(0.0239, 0.0302)
        assert s_a == pytest.approx(0.0260, abs=5e-4)
        assert s_v == pytest.approx(0.0281, abs=5e-4)

    def test_exact_tertiles(self):
        assert choose_thresholds(0.0, 0.3) == pytest.approx((0.1, 0.2))

    def test_degenerate_gap(self):
        with pytest.raises(InfeasibleBoundsError):
            choose_thresholds(0.3, 0.3)
        with pytest.raises(InfeasibleBoundsError):
            choose_thresholds(0.31, 0.3)


class TestProtocolBounds:
    def test_honest_abort(self):
        assert honest_abort_bound(1e-5) == pytest.approx(2.00e-5, rel=1e-12)

    def test_repudiation_clamp(self):
        prob, log2_raw = repudiation_bound(0.02, 0.02, 10_000)
        assert prob == 1.0
        assert log2_raw == 1.0  # raw value 2 survives in log2 form

    def test_repudiation_value(self):
        prob, _ = repudiation_bound(0.0260, 0.0281, 8_900_000)
        assert prob == pytest.approx(2 * math.exp(-0.25 * 0.0021**2 * 8.9e6), rel=1e-3)


class TestKeyLengthComparison:
    def test_perfect_channel(self):
        _, asym = mdi_qkd_key_length(1000, 1.0, 0.0, 0.0, 0.0, 1.16, BUDGET)
        assert asym == 500.0

    def test_monotone_in_zeta(self):
        args = (100_000, 0.05, 0.15, 0.05, 0.03)
        full_a, asym_a = mdi_qkd_key_length(*args, 1.1, BUDGET)
        full_b, asym_b = mdi_qkd_key_length(*args, 1.2, BUDGET)
        assert full_b < full_a
        assert asym_b < asym_a

    def test_signature_feasible_but_key_distillation_is_not(self):
        # at the worked-example rates the mismatch-rate condition has margin
        # while the distilled key length goes negative
        margin = 0.1954 - binary_entropy(0.0239)
        assert margin > 0
        report = replay_report()
        assert report.feasible
        assert report.l_k_asymptotic < 0
        assert report.l_k < 0

    def test_zeta_domain(self):
        with pytest.raises(DomainError):
            mdi_qkd_key_length(1000, 0.5, 0.2, 0.1, 0.1, 0.9, BUDGET)


class TestSecurityReport:
    def test_worked_example_fields(self):
        report = replay_report()
        assert report.E_bar == pytest.approx(0.0239, abs=5e-4)
        assert report.h_min == pytest.approx(8.69e5, rel=0.02)
        assert report.p_E == pytest.approx(0.0302, abs=5e-4)
        assert report.s_a == pytest.approx(0.0260, abs=5e-4)
        assert report.s_v == pytest.approx(0.0281, abs=5e-4)
        assert report.pr_honest_abort == 2.00e-5
        assert report.pr_forge == pytest.approx(3e-5, abs=1e-6)
        assert 0.5 < report.pr_repudiation / 9.857e-5 < 2.0
        assert report.t_r_seconds == pytest.approx(5580.0)

    def test_threshold_ordering_invariant(self):
        report = replay_report()
        assert report.E_bar <= report.s_a <= report.s_v <= report.p_E

    def test_bounds_monotone_in_n_k(self):
        # same rates, longer code string: repudiation and forging shrink
        small = replay_report(n_k=2_000_000, r_k=120_000, h_target=8.69e5 / 4.45)
        large = replay_report()
        assert large.pr_repudiation <= small.pr_repudiation
        assert large.pr_forge <= small.pr_forge

    def test_csv_row(self):
        row = replay_report().to_csv_row("standard", 0.145, 6.02e-6)
        fields = row.split(",")
        assert fields[0] == "standard"
        assert float(fields[3]) == 5.58e12
        assert float(fields[4]) == pytest.approx(93.0)

    def test_serialization_canonical_names(self):
        payload = replay_report().to_dict()
        for name in (
            "h_min", "c_k0", "c_k1", "p_E", "E_bar", "s_a", "s_v",
            "pr_honest_abort", "pr_repudiation", "pr_forge", "p_F",
            "feasible", "l_k", "zeta", "n_k", "N_sig", "t_r_seconds",
        ):
            assert name in payload
        assert payload["t_r_seconds"] * 1e9 == payload["N_sig"]

    def test_infeasible_report(self):
        est = replay_estimate(e_obs=0.2)
        per_kgp = {"alice_bob": (est, est.n_k + est.r_k)}
        report = build_security_report(per_kgp, BUDGET, n_sig=1e12, pulse_rate=1e9)
        assert not report.feasible
        assert report.infeasible_reason is not None


@pytest.fixture(scope="module")
def tables():
    return ChannelTables(PUBLISHED_CONFIG, PUBLISHED_CONFIG, PUBLISHED_PROFILE)


class TestSignatureLengthSearch:
    def test_search_finds_budget(self, tables):
        # honest abort is pinned at 2*eps_PE = 2e-5, so the reachable target
        # with the worked-example knobs is of order 1e-4
        result = signature_length_search(
            PUBLISHED_CONFIG,
            PUBLISHED_CONFIG,
            PUBLISHED_PROFILE,
            BUDGET,
            target_security=1e-4,
            relative_tolerance=0.5,
            tables=tables,
        )
        assert result.report.meets_target(1e-4)
        assert 1e10 < result.n_sig < 2e13
        assert result.t_r_seconds == pytest.approx(result.n_sig / 1e9)
        assert result.n_k > 0
        # tighter targets need at least as large a budget
        tighter = signature_length_search(
            PUBLISHED_CONFIG,
            PUBLISHED_CONFIG,
            PUBLISHED_PROFILE,
            BUDGET,
            target_security=5e-5,
            relative_tolerance=0.5,
            tables=tables,
        )
        assert tighter.n_sig >= result.n_sig

    def test_trivial_target_returns_minimal_session(self, tables):
        trivial = signature_length_search(
            PUBLISHED_CONFIG,
            PUBLISHED_CONFIG,
            PUBLISHED_PROFILE,
            BUDGET,
            target_security=1.0,
            relative_tolerance=0.5,
            tables=tables,
        )
        strict = signature_length_search(
            PUBLISHED_CONFIG,
            PUBLISHED_CONFIG,
            PUBLISHED_PROFILE,
            BUDGET,
            target_security=1e-4,
            relative_tolerance=0.5,
            tables=tables,
        )
        assert trivial.n_sig <= strict.n_sig
        assert trivial.report.feasible

    def test_unreachable_target_reports_fixed_terms(self, tables):
        with pytest.raises(InfeasibleBoundsError, match="fixed terms"):
            signature_length_search(
                PUBLISHED_CONFIG,
                PUBLISHED_CONFIG,
                PUBLISHED_PROFILE,
                BUDGET,
                target_security=1e-6,
                relative_tolerance=0.5,
                tables=tables,
            )

    def test_infeasible_channel(self, tables):
        profile = SystemProfile(
            distance_km=50.0,
            loss_coeff_db_per_km=0.2,
            detector_efficiency=0.145,
            dark_count_prob=6.02e-6,
            misalignment=0.20,
        )
        with pytest.raises(InfeasibleBoundsError):
            signature_length_search(
                PUBLISHED_CONFIG,
                PUBLISHED_CONFIG,
                profile,
                BUDGET,
                target_security=1e-5,
                relative_tolerance=0.5,
            )
