"""Relay physics against the brute-force Fock oracle."""

import math

import numpy as np
import pytest

from mdiqds.relay import (
    FAILURE,
    PSI_MINUS,
    PSI_PLUS,
    BsmOutcome,
    RelayEngine,
    classify_pattern,
    occupation_distribution,
    relay_bsm,
    sift_bit,
)
from mdiqds.sources import PulseRecord, SystemProfile

from fock_oracle import occupation_probs, outcome_probs

IDEAL = SystemProfile(distance_km=0.0, detector_efficiency=1.0, dark_count_prob=0.0)


def pulse(party, basis, bit, n, flipped=0):
    return PulseRecord(party, "s", basis, bit, n, flipped)


def engine_outcome(pol_a, k_a, l_a, pol_b, k_b, l_b, eta=1.0, dark=0.0):
    engine = RelayEngine(eta, dark)
    return engine.outcome_probabilities((pol_a, k_a, l_a, pol_b, k_b, l_b))


class TestOccupationDistribution:
    @pytest.mark.parametrize(
        "config,photons",
        [
            (("H", 1, 0, "V", 1, 0), [("a", "H"), ("b", "V")]),
            (("H", 1, 0, "H", 1, 0), [("a", "H"), ("b", "H")]),
            (("D", 1, 0, "D", 1, 0), [("a", "D"), ("b", "D")]),
            (("D", 1, 0, "A", 1, 0), [("a", "D"), ("b", "A")]),
            (("H", 2, 0, "V", 1, 0), [("a", "H"), ("a", "H"), ("b", "V")]),
            (("H", 1, 1, "D", 1, 0), [("a", "H"), ("a", "V"), ("b", "D")]),
            (("V", 2, 1, "A", 1, 1), [("a", "V")] * 2 + [("a", "H")] + [("b", "A"), ("b", "D")]),
        ],
    )
    def test_matches_bruteforce(self, config, photons):
        occs, probs = occupation_distribution(*config)
        got = dict(zip(occs, probs))
        want = occupation_probs(photons)
        assert set(got) == set(want)
        for occ in want:
            assert got[occ] == pytest.approx(want[occ], abs=1e-12), (config, occ)

    def test_normalized(self):
        _, probs = occupation_distribution("D", 3, 1, "A", 2, 2)
        assert sum(probs) == pytest.approx(1.0, abs=1e-12)


class TestOutcomeProbabilities:
    def test_hv_ideal(self):
        p_minus, p_plus = engine_outcome("H", 1, 0, "V", 1, 0)
        assert p_minus == pytest.approx(0.5, abs=1e-12)
        assert p_plus == pytest.approx(0.5, abs=1e-12)

    def test_hh_bunches(self):
        p_minus, p_plus = engine_outcome("H", 1, 0, "H", 1, 0)
        assert p_minus == pytest.approx(0.0, abs=1e-12)
        assert p_plus == pytest.approx(0.0, abs=1e-12)

    def test_x_basis_correlations(self):
        p_minus, p_plus = engine_outcome("D", 1, 0, "D", 1, 0)
        assert p_minus == pytest.approx(0.0, abs=1e-12)
        assert p_plus == pytest.approx(0.5, abs=1e-12)
        p_minus, p_plus = engine_outcome("D", 1, 0, "A", 1, 0)
        assert p_minus == pytest.approx(0.5, abs=1e-12)
        assert p_plus == pytest.approx(0.0, abs=1e-12)

    def test_vacuum_no_darks_fails(self):
        p_minus, p_plus = engine_outcome("H", 0, 0, "H", 0, 0)
        assert p_minus == 0.0 and p_plus == 0.0

    @pytest.mark.parametrize(
        "config,photons",
        [
            (("H", 1, 0, "V", 1, 0), [("a", "H"), ("b", "V")]),
            (("H", 2, 0, "V", 2, 0), [("a", "H")] * 2 + [("b", "V")] * 2),
            (("D", 1, 1, "A", 2, 0), [("a", "D"), ("a", "A"), ("b", "A"), ("b", "A")]),
            (("H", 0, 0, "V", 0, 0), []),
        ],
    )
    def test_imperfect_detectors_vs_oracle(self, config, photons):
        eta, dark = 0.7, 0.01
        p_minus, p_plus = engine_outcome(*config, eta=eta, dark=dark)
        want_minus, want_plus, _ = outcome_probs(photons, eta=eta, dark=dark)
        assert p_minus == pytest.approx(want_minus, abs=1e-12)
        assert p_plus == pytest.approx(want_plus, abs=1e-12)


class TestRelayBsm:
    def test_monte_carlo_matches_oracle(self):
        rng = np.random.default_rng(7)
        shots = 20_000
        tally = {PSI_MINUS: 0, PSI_PLUS: 0, FAILURE: 0}
        a = pulse("A", "Z", 0, 1)
        b = pulse("B", "Z", 1, 1)
        engine = RelayEngine.for_profile(IDEAL)
        for _ in range(shots):
            tally[relay_bsm(a, b, IDEAL, rng, engine).result] += 1
        assert tally[FAILURE] == 0
        for key in (PSI_MINUS, PSI_PLUS):
            sigma = math.sqrt(shots * 0.25)
            assert abs(tally[key] - shots * 0.5) < 3 * sigma

    def test_bunching_never_succeeds(self):
        rng = np.random.default_rng(11)
        a = pulse("A", "Z", 0, 1)
        b = pulse("B", "Z", 0, 1)
        engine = RelayEngine.for_profile(IDEAL)
        for _ in range(2000):
            assert relay_bsm(a, b, IDEAL, rng, engine).result == FAILURE

    def test_vacuum_fails(self):
        rng = np.random.default_rng(3)
        out = relay_bsm(pulse("A", "Z", 0, 0), pulse("B", "Z", 1, 0), IDEAL, rng)
        assert out == BsmOutcome(FAILURE, frozenset())

    def test_phi_patterns_are_failures(self):
        assert classify_pattern(frozenset({0, 2})) == FAILURE  # D1H + D2H
        assert classify_pattern(frozenset({1, 3})) == FAILURE  # D1V + D2V
        assert classify_pattern(frozenset({0, 1, 2})) == FAILURE
        assert classify_pattern(frozenset({0, 1, 2, 3})) == FAILURE
        assert classify_pattern(frozenset({2})) == FAILURE

    def test_never_reports_phi(self):
        rng = np.random.default_rng(5)
        profile = SystemProfile(
            distance_km=0.0, detector_efficiency=0.5, dark_count_prob=0.05
        )
        engine = RelayEngine.for_profile(profile)
        a = pulse("A", "X", 0, 2, flipped=1)
        b = pulse("B", "Z", 1, 1)
        seen = set()
        for _ in range(5000):
            seen.add(relay_bsm(a, b, profile, rng, engine).result)
        assert seen <= {PSI_MINUS, PSI_PLUS, FAILURE}


class TestOneSideAnnouncements:
    @pytest.mark.parametrize(
        "eta,dark,mis",
        [(1.0, 0.0, 0.0), (0.145, 6.02e-6, 0.01), (0.93, 5e-4, 0.3), (0.5, 0.01, 1.0)],
    )
    def test_polarization_independence(self, eta, dark, mis):
        # the session engine thins single-side pulses with one constant per
        # party; that is only exact if a lone photon announces independently
        # of its polarization, frame rotation included
        engine = RelayEngine(eta, dark, mis)
        values = set()
        for pol in "HVDA":
            for key in ((pol, 1, 0, "H", 0, 0), (pol, 0, 1, "H", 0, 0),
                        ("H", 0, 0, pol, 1, 0), ("H", 0, 0, pol, 0, 1)):
                p_minus, p_plus = engine.outcome_probabilities(key)
                values.add((round(p_minus, 15), round(p_plus, 15)))
        assert len(values) == 1


class TestSiftBit:
    def test_z_basis_flips(self):
        assert sift_bit("Z", PSI_MINUS, 1) == 0
        assert sift_bit("Z", PSI_PLUS, 0) == 1

    def test_x_basis(self):
        for bit in (0, 1):
            assert sift_bit("X", PSI_PLUS, bit) == bit
            assert sift_bit("X", PSI_MINUS, bit) == bit ^ 1
