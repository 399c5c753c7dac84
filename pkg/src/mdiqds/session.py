"""Key-generation sessions: vectorized Monte-Carlo runs and their closed-form
expectations.

The session engine samples every pulse of both transmitters, but defers
drawing any variable that cannot influence the recorded data.  A pulse whose
photons all die in fiber can only be announced through dark counts, and dark
counts are independent of everything the parties chose, so those pulses are
classified with one uniform draw each and only promoted to full events when
the (rare) dark coincidence fires.  The resulting event stream is distributed
identically to pulse-at-a-time simulation with `sample_pulse`, `transmit`,
`relay_bsm` and `sift_bit`, which the fast path shares its physics tables
with.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExhaustedError, ValidationError
from .relay import RelayEngine
from .sources import (
    BASES,
    INTENSITY_LABELS,
    N_CUT,
    POLARIZATION,
    DecoySourceConfig,
    SystemProfile,
)

BELLS = ("psi_minus", "psi_plus")

_POL_INDEX = {"H": 0, "V": 1, "D": 2, "A": 3}
_POL_NAMES = ("H", "V", "D", "A")

# Contributions to the closed-form rates below this joint source probability
# are skipped and accumulated into a reported residual bound.
_RATE_FLOOR = 1e-18


def _binomial_matrix(t: float) -> np.ndarray:
    """B[n, k] = P(k of n photons survive a channel of transmittance t)."""
    b = np.zeros((N_CUT + 1, N_CUT + 1))
    for n in range(N_CUT + 1):
        for k in range(n + 1):
            b[n, k] = math.comb(n, k) * t**k * (1.0 - t) ** (n - k)
    return b


def _normalized_cdf(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    if total <= 0:
        return np.cumsum(np.full(weights.shape, 1.0 / weights.size))
    return np.cumsum(weights / total)


def _is_error(basis_idx: int, bits_same: bool, bell_idx: int) -> bool:
    """Whether a recorded event is a mismatch after Bob's sifting flip.

    Z basis anti-correlates on both announced states, so same-bit events are
    errors; X basis anti-correlates only on psi_minus.
    """
    if basis_idx == 0:
        return bits_same
    return bits_same if bell_idx == 0 else not bits_same


class ChannelTables:
    """Per-(sources, profile) sampling tables shared by the Monte-Carlo and
    closed-form paths."""

    def __init__(
        self,
        config_a: DecoySourceConfig,
        config_b: DecoySourceConfig,
        profile: SystemProfile,
    ):
        self.config_a = config_a
        self.config_b = config_b
        self.profile = profile
        self.engine = RelayEngine.for_profile(profile)
        t = profile.transmittance()
        self.binom_survive = _binomial_matrix(t)

        self.intensity_probs = {}
        self.source_pmf = {}
        self.arrive_pmf = {}
        self.src_given_arrive_cdf = {}
        self.marginal_zero = {}
        self.marginal_single = {}
        self.zero_intensity_cdf = {}
        self.single_intensity_cdf = {}
        self.multi_joint_cdf = {}
        self.multi_joint_cells = {}
        self.basis_z_prob = {}
        self.p_side_single = {}
        for party, cfg in (("a", config_a), ("b", config_b)):
            probs = np.array([cfg.intensity_probs[l] for l in INTENSITY_LABELS])
            self.intensity_probs[party] = probs
            pmf = np.stack([cfg.photon_pmf(l) for l in INTENSITY_LABELS])
            self.source_pmf[party] = pmf
            arrive = pmf @ self.binom_survive
            self.arrive_pmf[party] = arrive
            # source photon number given (intensity, arrived count), by Bayes
            cond = pmf[:, :, None] * self.binom_survive[None, :, :]
            sums = cond.sum(axis=1, keepdims=True)
            sums[sums == 0.0] = 1.0
            self.src_given_arrive_cdf[party] = np.cumsum(cond / sums, axis=1)
            self.marginal_zero[party] = float(probs @ arrive[:, 0])
            self.marginal_single[party] = float(probs @ arrive[:, 1])
            self.zero_intensity_cdf[party] = _normalized_cdf(probs * arrive[:, 0])
            self.single_intensity_cdf[party] = _normalized_cdf(probs * arrive[:, 1])
            multi = probs[:, None] * arrive[:, 2:]
            self.multi_joint_cells[party] = np.array(
                [(i, k) for i in range(3) for k in range(2, N_CUT + 1)]
            )
            self.multi_joint_cdf[party] = _normalized_cdf(multi.reshape(-1))
            self.basis_z_prob[party] = cfg.basis_probs["Z"]

        # a lone arriving photon (or none) announces independently of its
        # polarization; take the Bell-state probabilities from the engine
        one_a = self.engine.outcome_probabilities(("H", 1, 0, "H", 0, 0))
        one_b = self.engine.outcome_probabilities(("H", 0, 0, "H", 1, 0))
        self.p_side_single = {"a": one_a, "b": one_b}
        self.p_dark = self.engine.outcome_probabilities(("H", 0, 0, "H", 0, 0))
        self._rates = None
        self._source_outcome_cache: dict[tuple, np.ndarray] = {}

    def outcome_thresholds(self, packed_keys: np.ndarray) -> np.ndarray:
        """(P(psi_minus), P(psi_minus)+P(psi_plus)) per packed input key."""
        out = np.empty((len(packed_keys), 2))
        for row, packed in enumerate(packed_keys):
            key = _unpack_key(int(packed))
            p_minus, p_plus = self.engine.outcome_probabilities(key)
            out[row, 0] = p_minus
            out[row, 1] = p_minus + p_plus
        return out

    # -- closed-form expectations ------------------------------------------

    def _source_outcome(self, pol_a: int, n: int, pol_b: int, m: int):
        """Announcement probabilities for source photon numbers (n, m)."""
        key = (pol_a, n, pol_b, m)
        cached = self._source_outcome_cache.get(key)
        if cached is not None:
            return cached
        p = np.zeros(2)
        for k_a in range(n + 1):
            w_a = self.binom_survive[n, k_a]
            for k_b in range(m + 1):
                w = w_a * self.binom_survive[m, k_b]
                if w <= 0.0:
                    continue
                p_minus, p_plus = self.engine.outcome_probabilities(
                    (_POL_NAMES[pol_a], k_a, 0, _POL_NAMES[pol_b], k_b, 0)
                )
                p[0] += w * p_minus
                p[1] += w * p_plus
        self._source_outcome_cache[key] = p
        return p

    def expected_rates(self) -> "RateTable":
        """Exact per-cell announcement and error expectations under the same
        source, loss, misalignment, detector and dark-count model as the
        Monte-Carlo path (photon numbers truncated at N_CUT)."""
        if self._rates is not None:
            return self._rates
        gain = np.zeros((2, 2, 3, 3))
        err = np.zeros((2, 2, 3, 3))
        population = np.zeros((2, 2, 3, 3, N_CUT + 1, N_CUT + 1))
        residual = 0.0
        for ia in range(3):
            pmf_a = self.source_pmf["a"][ia]
            for ib in range(3):
                pmf_b = self.source_pmf["b"][ib]
                for basis_idx, basis in enumerate(BASES):
                    for bit_a in (0, 1):
                        pol_a = _POL_INDEX[POLARIZATION[(basis, bit_a)]]
                        for bit_b in (0, 1):
                            pol_b = _POL_INDEX[POLARIZATION[(basis, bit_b)]]
                            same = bit_a == bit_b
                            for n in range(N_CUT + 1):
                                for m in range(N_CUT + 1):
                                    w = 0.25 * pmf_a[n] * pmf_b[m]
                                    if w < _RATE_FLOOR:
                                        residual += w
                                        continue
                                    p_bell = self._source_outcome(pol_a, n, pol_b, m)
                                    for bell in range(2):
                                        gain[bell, basis_idx, ia, ib] += w * p_bell[bell]
                                        population[bell, basis_idx, ia, ib, n, m] += (
                                            w * p_bell[bell]
                                        )
                                        if _is_error(basis_idx, same, bell):
                                            err[bell, basis_idx, ia, ib] += w * p_bell[bell]
        error_rate = np.divide(err, gain, out=np.zeros_like(err), where=gain > 0)
        pz_a, pz_b = self.basis_z_prob["a"], self.basis_z_prob["b"]
        self._rates = RateTable(
            gain=gain,
            error_rate=error_rate,
            population=population,
            residual=residual,
            intensity_probs_a=self.intensity_probs["a"],
            intensity_probs_b=self.intensity_probs["b"],
            basis_match_probs=np.array([pz_a * pz_b, (1.0 - pz_a) * (1.0 - pz_b)]),
        )
        return self._rates


@dataclass
class RateTable:
    """Closed-form per-cell expectations, conditional on the intensity pair
    and on both parties choosing the same basis.

    ``gain[bell, basis, ia, ib]`` is P(announce bell | cell); ``error_rate``
    is the conditional sifted mismatch fraction; ``population[..., n, m]``
    resolves the gain by source photon numbers.
    """

    gain: np.ndarray
    error_rate: np.ndarray
    population: np.ndarray
    residual: float
    intensity_probs_a: np.ndarray
    intensity_probs_b: np.ndarray
    basis_match_probs: np.ndarray

    def expected_set_sizes(self, n_pulses: float) -> dict[str, np.ndarray]:
        """Expected |Z_k^{a,b}| and |X_k^{a,b}| for a pulse budget."""
        pa = self.intensity_probs_a[:, None]
        pb = self.intensity_probs_b[None, :]
        out = {}
        for basis_idx, name in ((0, "Z"), (1, "X")):
            p_basis = self.basis_match_probs[basis_idx]
            out[name] = n_pulses * p_basis * pa * pb * self.gain[:, basis_idx]
        return out

    def expected_population(self, n_pulses: float) -> np.ndarray:
        """Expected ground-truth counts S_{k,nm} per set for a pulse budget."""
        pa = self.intensity_probs_a[None, :, None, None, None]
        pb = self.intensity_probs_b[None, None, :, None, None]
        scaled = np.empty_like(self.population)
        for basis_idx in range(2):
            p_basis = self.basis_match_probs[basis_idx]
            scaled[:, basis_idx] = n_pulses * p_basis * pa * pb * self.population[:, basis_idx]
        return scaled


def _pack_key(pol_a, main_a, flip_a, pol_b, main_b, flip_b):
    return ((((pol_a * 16 + main_a) * 16 + flip_a) * 4 + pol_b) * 16 + main_b) * 16 + flip_b


def _unpack_key(packed: int):
    flip_b = packed % 16
    packed //= 16
    main_b = packed % 16
    packed //= 16
    pol_b = packed % 4
    packed //= 4
    flip_a = packed % 16
    packed //= 16
    main_a = packed % 16
    packed //= 16
    return (
        _POL_NAMES[packed],
        main_a,
        flip_a,
        _POL_NAMES[pol_b],
        main_b,
        flip_b,
    )


@dataclass(frozen=True)
class StopRule:
    """Stop when every per-set count reaches its minimum, or when the pulse
    budget is exhausted.  With both set, hitting the budget before the minima
    is an error."""

    total_pulses: int | None = None
    min_z_per_set: int | None = None
    min_x_per_set: int | None = None

    def __post_init__(self):
        if self.total_pulses is None and self.min_z_per_set is None:
            raise ValidationError("stop rule needs a pulse budget or per-set minima")

    def minima_met(self, z_counts: np.ndarray, x_counts: np.ndarray) -> bool:
        if self.min_z_per_set is not None and z_counts.min() < self.min_z_per_set:
            return False
        if self.min_x_per_set is not None and x_counts.min() < self.min_x_per_set:
            return False
        return True

    @property
    def has_minima(self) -> bool:
        return self.min_z_per_set is not None or self.min_x_per_set is not None


@dataclass
class SiftedData:
    """Accumulated sifting output of one key-generation session.

    Per-event records are kept for every announced coincidence: Bell state,
    basis, intensity pair, the paired bits after Bob's flip, and the true
    source photon numbers (ground truth, for estimator validation only).
    """

    n_pulses: int
    z_counts: np.ndarray
    x_counts: np.ndarray
    z_errors: np.ndarray
    x_errors: np.ndarray
    population: np.ndarray
    ev_bell: np.ndarray
    ev_basis: np.ndarray
    ev_ia: np.ndarray
    ev_ib: np.ndarray
    ev_alice_bit: np.ndarray
    ev_bob_bit: np.ndarray
    ev_src_a: np.ndarray
    ev_src_b: np.ndarray

    @property
    def n_signals_sent(self) -> int:
        """Pulses drawn by the non-Alice party (equal for both parties)."""
        return self.n_pulses

    def set_size(self, basis: str, bell_idx: int, ia: int, ib: int) -> int:
        counts = self.z_counts if basis == "Z" else self.x_counts
        return int(counts[bell_idx, ia, ib])

    def _event_mask(self, basis_idx, bell_idx, ia, ib):
        return (
            (self.ev_basis == basis_idx)
            & (self.ev_bell == bell_idx)
            & (self.ev_ia == ia)
            & (self.ev_ib == ib)
        )

    def signal_z_bits(self, bell_idx: int) -> tuple[np.ndarray, np.ndarray]:
        """Paired (alice, bob) bits of the signal-signal Z set."""
        mask = self._event_mask(0, bell_idx, 0, 0)
        return self.ev_alice_bit[mask], self.ev_bob_bit[mask]

    def signal_z_source_photons(self, bell_idx: int) -> tuple[np.ndarray, np.ndarray]:
        mask = self._event_mask(0, bell_idx, 0, 0)
        return self.ev_src_a[mask], self.ev_src_b[mask]

    def signal_x_truth(self, bell_idx: int):
        """(errors, src_a, src_b) for the signal-signal X set."""
        mask = self._event_mask(1, bell_idx, 0, 0)
        errors = self.ev_alice_bit[mask] != self.ev_bob_bit[mask]
        return errors, self.ev_src_a[mask], self.ev_src_b[mask]

    def to_csv(self, path) -> None:
        header = "k,a,b,basis,alice_bit,bob_bit,alice_photons,bob_photons"
        rows = np.column_stack(
            [
                self.ev_bell,
                self.ev_ia,
                self.ev_ib,
                self.ev_basis,
                self.ev_alice_bit,
                self.ev_bob_bit,
                self.ev_src_a,
                self.ev_src_b,
            ]
        )
        labels = np.array(INTENSITY_LABELS)
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for bell, ia, ib, basis, abit, bbit, sa, sb in rows:
                fh.write(
                    f"{BELLS[bell]},{labels[ia]},{labels[ib]},{BASES[basis]},"
                    f"{abit},{bbit},{sa},{sb}\n"
                )


class _EventBuffer:
    def __init__(self):
        self.chunks = {name: [] for name in
                       ("bell", "basis", "ia", "ib", "abit", "bbit", "srca", "srcb")}

    def add(self, **arrays):
        n = len(arrays["bell"])
        if n == 0:
            return
        for name, arr in arrays.items():
            self.chunks[name].append(np.asarray(arr))

    def concat(self, name):
        chunks = self.chunks[name]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


def run_kgp_session(
    config_a: DecoySourceConfig,
    config_b: DecoySourceConfig,
    profile: SystemProfile,
    stop_rule: StopRule,
    seed: int,
    tables: ChannelTables | None = None,
    batch_size: int = 1 << 20,
) -> SiftedData:
    """Run one measurement-device-independent key-generation session.

    Deterministic for a fixed seed: every batch derives its random stream
    from (seed, batch index), so results do not depend on scheduling.
    """
    if tables is None:
        tables = ChannelTables(config_a, config_b, profile)

    z_counts = np.zeros((2, 3, 3), dtype=np.int64)
    x_counts = np.zeros((2, 3, 3), dtype=np.int64)
    z_errors = np.zeros((2, 3, 3), dtype=np.int64)
    x_errors = np.zeros((2, 3, 3), dtype=np.int64)
    population = np.zeros((2, 2, 3, 3, N_CUT + 1, N_CUT + 1), dtype=np.int64)
    events = _EventBuffer()

    pulses_done = 0
    batch_idx = 0
    while True:
        if stop_rule.total_pulses is not None and pulses_done >= stop_rule.total_pulses:
            if stop_rule.has_minima and not stop_rule.minima_met(z_counts, x_counts):
                raise BudgetExhaustedError(
                    f"pulse budget {stop_rule.total_pulses} exhausted with per-set "
                    f"minima unmet (min Z set {z_counts.min()}, min X set {x_counts.min()})"
                )
            break
        if (
            stop_rule.total_pulses is None
            and stop_rule.minima_met(z_counts, x_counts)
        ):
            break
        if stop_rule.total_pulses is not None:
            m = min(batch_size, stop_rule.total_pulses - pulses_done)
        else:
            m = batch_size
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(batch_idx,))
        )
        _run_batch(tables, m, rng, z_counts, x_counts, z_errors, x_errors, population, events)
        pulses_done += m
        batch_idx += 1
        if (
            stop_rule.total_pulses is None
            and stop_rule.minima_met(z_counts, x_counts)
        ):
            break

    return SiftedData(
        n_pulses=pulses_done,
        z_counts=z_counts,
        x_counts=x_counts,
        z_errors=z_errors,
        x_errors=x_errors,
        population=population,
        ev_bell=events.concat("bell"),
        ev_basis=events.concat("basis"),
        ev_ia=events.concat("ia"),
        ev_ib=events.concat("ib"),
        ev_alice_bit=events.concat("abit"),
        ev_bob_bit=events.concat("bbit"),
        ev_src_a=events.concat("srca"),
        ev_src_b=events.concat("srcb"),
    )


def _run_batch(
    tables: ChannelTables,
    m: int,
    rng: np.random.Generator,
    z_counts,
    x_counts,
    z_errors,
    x_errors,
    population,
    events: _EventBuffer,
) -> None:
    # One uniform per party classifies each pulse's arriving photons into
    # {0, 1, 2+}.  Only pulses where both sides arrive, or where one side
    # carries a multi-photon bunch, need full materialization: a lone photon
    # (or nothing) can only be announced through dark counts, with a
    # polarization-independent probability handled by thinned counts.
    u_a = rng.random(m)
    u_b = rng.random(m)
    z0_a, z1_a = tables.marginal_zero["a"], tables.marginal_single["a"]
    z0_b, z1_b = tables.marginal_zero["b"], tables.marginal_single["b"]
    class_a = (u_a >= z0_a).astype(np.int8) + (u_a >= z0_a + z1_a).astype(np.int8)
    class_b = (u_b >= z0_b).astype(np.int8) + (u_b >= z0_b + z1_b).astype(np.int8)

    both = (class_a > 0) & (class_b > 0)
    heavy = both | ((class_a == 2) & (class_b == 0)) | ((class_b == 2) & (class_a == 0))
    n_single_a = int(np.count_nonzero((class_a == 1) & (class_b == 0)))
    n_single_b = int(np.count_nonzero((class_b == 1) & (class_a == 0)))
    n_dark = int(np.count_nonzero((class_a == 0) & (class_b == 0)))

    recs = []
    if heavy.any():
        recs.append(_process_heavy(tables, class_a[heavy], class_b[heavy], rng))
    for party, count in (("a", n_single_a), ("b", n_single_b)):
        rec = _process_single_side(tables, party, count, rng)
        if rec is not None:
            recs.append(rec)
    if n_dark:
        rec = _process_dark(tables, n_dark, rng)
        if rec is not None:
            recs.append(rec)

    for rec in recs:
        bell, basis, ia, ib, abit, bbit, err, srca, srcb = rec
        if len(bell) == 0:
            continue
        for basis_idx, counts, errors in ((0, z_counts, z_errors), (1, x_counts, x_errors)):
            sel = basis == basis_idx
            if not sel.any():
                continue
            np.add.at(counts, (bell[sel], ia[sel], ib[sel]), 1)
            esel = sel & err
            if esel.any():
                np.add.at(errors, (bell[esel], ia[esel], ib[esel]), 1)
        np.add.at(population, (bell, basis, ia, ib, srca, srcb), 1)
        events.add(bell=bell, basis=basis, ia=ia, ib=ib, abit=abit, bbit=bbit,
                   srca=srca, srcb=srcb)


def _draw_party(tables: ChannelTables, party: str, klass: np.ndarray, rng):
    """Intensity index and arriving photon count for one party of the heavy
    subset, conditioned on its arrival class (0, 1, or 2+)."""
    n = len(klass)
    intensity = np.empty(n, dtype=np.int64)
    arrived = np.zeros(n, dtype=np.int64)
    for value, cdf in (
        (0, tables.zero_intensity_cdf[party]),
        (1, tables.single_intensity_cdf[party]),
    ):
        mask = klass == value
        cnt = int(np.count_nonzero(mask))
        if cnt:
            idx = np.searchsorted(cdf, rng.random(cnt), side="right")
            intensity[mask] = np.minimum(idx, 2)
            arrived[mask] = value
    mask = klass == 2
    cnt = int(np.count_nonzero(mask))
    if cnt:
        cells = tables.multi_joint_cells[party]
        idx = np.searchsorted(tables.multi_joint_cdf[party], rng.random(cnt), side="right")
        idx = np.minimum(idx, len(cells) - 1)
        intensity[mask] = cells[idx, 0]
        arrived[mask] = cells[idx, 1]
    return intensity, arrived


def _process_heavy(tables: ChannelTables, class_a: np.ndarray, class_b: np.ndarray, rng):
    """Fully materialize pulses whose relay input needs the Fock engine."""
    n = len(class_a)
    ia, arr_a = _draw_party(tables, "a", class_a, rng)
    ib, arr_b = _draw_party(tables, "b", class_b, rng)
    basis_a = (rng.random(n) >= tables.basis_z_prob["a"]).astype(np.int64)
    basis_b = (rng.random(n) >= tables.basis_z_prob["b"]).astype(np.int64)
    bit_a = rng.integers(0, 2, n)
    bit_b = rng.integers(0, 2, n)

    # basis 0 = Z (H/V by bit), basis 1 = X (D/A by bit)
    pol_a = basis_a * 2 + bit_a
    pol_b = basis_b * 2 + bit_b
    zero = np.zeros(n, dtype=np.int64)
    packed = _pack_key(pol_a, arr_a, zero, pol_b, arr_b, zero)
    uniq, inverse = np.unique(packed, return_inverse=True)
    thresholds = tables.outcome_thresholds(uniq)[inverse]
    u = rng.random(n)
    is_minus = u < thresholds[:, 0]
    is_plus = (~is_minus) & (u < thresholds[:, 1])
    announced = is_minus | is_plus
    recorded = announced & (basis_a == basis_b)
    if not recorded.any():
        return tuple(np.empty(0, dtype=np.int64) for _ in range(9))

    sel = np.flatnonzero(recorded)
    bell = np.where(is_minus[sel], 0, 1)
    basis = basis_a[sel]
    src_a = _draw_source_photons(tables, "a", ia[sel], arr_a[sel], rng)
    src_b = _draw_source_photons(tables, "b", ib[sel], arr_b[sel], rng)
    abit = bit_a[sel]
    raw_b = bit_b[sel]
    bbit = _sift_bits(basis, bell, raw_b)
    err = abit != bbit
    return bell, basis, ia[sel], ib[sel], abit, bbit, err, src_a, src_b


def _process_thinned(
    tables: ChannelTables,
    n_pulses: int,
    p_minus: float,
    p_plus: float,
    arr_a: int,
    arr_b: int,
    rng,
):
    """Announcements among pulses whose outcome probability is a known
    constant (no arriving photons, or one lone photon on a single side).

    The per-pulse Bernoulli announcement is drawn as one binomial count
    (exact thinning; the probability is independent of every per-pulse
    choice), then attributes are drawn per announced event.
    """
    total = p_minus + p_plus
    if total <= 0.0 or n_pulses == 0:
        return None
    count = int(rng.binomial(n_pulses, total))
    if count == 0:
        return None
    bell = (rng.random(count) >= p_minus / total).astype(np.int64)
    # both parties must share a basis, else the event is discarded in sifting
    pz = tables.basis_z_prob["a"] * tables.basis_z_prob["b"]
    px = (1.0 - tables.basis_z_prob["a"]) * (1.0 - tables.basis_z_prob["b"])
    u = rng.random(count)
    keep = u < pz + px
    if not keep.any():
        return None
    bell = bell[keep]
    k = len(bell)
    basis = (u[keep] >= pz).astype(np.int64)
    cdf_a = (
        tables.single_intensity_cdf["a"] if arr_a else tables.zero_intensity_cdf["a"]
    )
    cdf_b = (
        tables.single_intensity_cdf["b"] if arr_b else tables.zero_intensity_cdf["b"]
    )
    ia = np.minimum(np.searchsorted(cdf_a, rng.random(k), side="right"), 2)
    ib = np.minimum(np.searchsorted(cdf_b, rng.random(k), side="right"), 2)
    abit = rng.integers(0, 2, k)
    raw_b = rng.integers(0, 2, k)
    bbit = _sift_bits(basis, bell, raw_b)
    err = abit != bbit
    src_a = _draw_source_photons(tables, "a", ia, np.full(k, arr_a, dtype=np.int64), rng)
    src_b = _draw_source_photons(tables, "b", ib, np.full(k, arr_b, dtype=np.int64), rng)
    return bell, basis, ia, ib, abit, bbit, err, src_a, src_b


def _process_single_side(tables: ChannelTables, party: str, n_pulses: int, rng):
    """One photon arrived from ``party``, nothing from the other side."""
    p_minus, p_plus = tables.p_side_single[party]
    arr_a, arr_b = (1, 0) if party == "a" else (0, 1)
    return _process_thinned(tables, n_pulses, p_minus, p_plus, arr_a, arr_b, rng)


def _process_dark(tables: ChannelTables, n_dark: int, rng):
    """Pulses with no arriving photons: only dark coincidences announce."""
    p_minus, p_plus = tables.p_dark
    return _process_thinned(tables, n_dark, p_minus, p_plus, 0, 0, rng)


def _sift_bits(basis: np.ndarray, bell: np.ndarray, raw_bits: np.ndarray) -> np.ndarray:
    flip = (basis == 0) | (bell == 0)
    return raw_bits ^ flip.astype(raw_bits.dtype)


def _draw_source_photons(tables, party, intensity, arrived, rng):
    """Ground-truth source photon numbers for recorded events, drawn from the
    exact conditional given (intensity, arrived)."""
    n = len(intensity)
    out = np.empty(n, dtype=np.int64)
    cdf = tables.src_given_arrive_cdf[party]
    for i in range(3):
        for k in np.unique(arrived[intensity == i]):
            mask = (intensity == i) & (arrived == k)
            cnt = int(np.count_nonzero(mask))
            if cnt == 0:
                continue
            idx = np.searchsorted(cdf[i, :, k], rng.random(cnt), side="right")
            out[mask] = np.minimum(idx, N_CUT)
    return out


def expected_rates(
    config_a: DecoySourceConfig,
    config_b: DecoySourceConfig,
    profile: SystemProfile,
    tables: ChannelTables | None = None,
) -> RateTable:
    """Closed-form expected gains and error rates per (intensity pair, basis,
    Bell state), for sizing Monte-Carlo runs and cross-checking them."""
    if tables is None:
        tables = ChannelTables(config_a, config_b, profile)
    return tables.expected_rates()


def _spread_counts(total: int, weights: np.ndarray) -> np.ndarray:
    """Apportion ``total`` integer counts by largest remainder."""
    if total <= 0 or weights.sum() <= 0:
        return np.zeros_like(weights, dtype=np.int64)
    exact = weights / weights.sum() * total
    floors = np.floor(exact).astype(np.int64)
    short = total - floors.sum()
    if short > 0:
        order = np.argsort(exact - floors)[::-1]
        floors.flat[order.ravel()[:short]] += 1
    return floors


def expected_sifted_data(rates: RateTable, n_pulses: float) -> SiftedData:
    """Deterministic session whose counts equal the rounded closed-form
    expectations.  Used to size budgets and to exercise the estimators at
    scales a desk cannot simulate."""
    sizes = rates.expected_set_sizes(n_pulses)
    pop_expected = rates.expected_population(n_pulses)
    z_counts = np.round(sizes["Z"]).astype(np.int64)
    x_counts = np.round(sizes["X"]).astype(np.int64)
    z_errors = np.round(sizes["Z"] * rates.error_rate[:, 0]).astype(np.int64)
    x_errors = np.round(sizes["X"] * rates.error_rate[:, 1]).astype(np.int64)

    population = np.zeros_like(pop_expected, dtype=np.int64)
    ev = {name: [] for name in ("bell", "basis", "ia", "ib", "abit", "bbit", "srca", "srcb")}
    for bell in range(2):
        for basis, counts, errors in ((0, z_counts, z_errors), (1, x_counts, x_errors)):
            for ia in range(3):
                for ib in range(3):
                    total = int(counts[bell, ia, ib])
                    if total == 0:
                        continue
                    cell = _spread_counts(total, pop_expected[bell, basis, ia, ib])
                    population[bell, basis, ia, ib] = cell
                    if ia == 0 and ib == 0:
                        n_err = int(errors[bell, ia, ib])
                        abit = np.zeros(total, dtype=np.int8)
                        bbit = np.zeros(total, dtype=np.int8)
                        bbit[:n_err] ^= 1
                        src = np.repeat(
                            np.arange(cell.size), cell.reshape(-1)
                        ).astype(np.int16)
                        srca, srcb = np.divmod(src, N_CUT + 1)
                        ev["bell"].append(np.full(total, bell, dtype=np.int8))
                        ev["basis"].append(np.full(total, basis, dtype=np.int8))
                        ev["ia"].append(np.full(total, ia, dtype=np.int8))
                        ev["ib"].append(np.full(total, ib, dtype=np.int8))
                        ev["abit"].append(abit)
                        ev["bbit"].append(bbit)
                        ev["srca"].append(srca.astype(np.int8))
                        ev["srcb"].append(srcb.astype(np.int8))

    def cat(name):
        return np.concatenate(ev[name]) if ev[name] else np.empty(0, dtype=np.int8)

    return SiftedData(
        n_pulses=int(n_pulses),
        z_counts=z_counts,
        x_counts=x_counts,
        z_errors=z_errors,
        x_errors=x_errors,
        population=population,
        ev_bell=cat("bell"),
        ev_basis=cat("basis"),
        ev_ia=cat("ia"),
        ev_ib=cat("ib"),
        ev_alice_bit=cat("abit"),
        ev_bob_bit=cat("bbit"),
        ev_src_a=cat("srca"),
        ev_src_b=cat("srcb"),
    )
