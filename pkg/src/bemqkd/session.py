"""Seeded Monte-Carlo BB84 sessions with single photons.

Rounds are simulated in fixed-size vectorized chunks drawn sequentially from
one numpy stream, so a seed fully determines the tallies.  Timing indices are
0 and 1 for Eve's resend timings ``t0``/``t1`` and 2 for an undisturbed photon
(``t2``).  Detector indices follow ``H, V, P, M`` = (Z,0), (Z,1), (X,0), (X,1).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import LABELS, DetectorBank
from .core import RandomSource, ps_to_fs
from .fsa import FsaParameters, fsa_count_rate, fsa_error_rate

TIMING_LABELS = ("t0", "t1", "t2")
CHUNK = 1 << 20


class Attack(enum.Enum):
    NONE = "none"
    FSA = "fsa"
    PARTIAL_FSA = "partial-fsa"
    TSA_PROBE = "tsa-probe"


@dataclass(frozen=True)
class SessionConfig:
    """One simulated session.

    ``n_pulses`` caps the number of emitted rounds; when ``target_sifted`` is
    set the session stops as soon as that many sifted bits exist.
    ``compensation`` scales every efficiency, standing in for Eve lowering the
    channel loss to hide a reduced detection rate.
    """

    n_pulses: int
    params: FsaParameters
    attack: Attack = Attack.NONE
    attack_fraction: float = 1.0
    include_dark_counts: bool = False
    dark_count_rate: float = 4e-6
    seed: int = 0
    target_sifted: int | None = None
    compensation: float = 1.0

    def __post_init__(self):
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be at least 1")
        if not 0.0 <= self.attack_fraction <= 1.0:
            raise ValueError("attack_fraction must lie in [0, 1]")
        if not 0.0 <= self.dark_count_rate <= 1.0:
            raise ValueError("dark_count_rate must lie in [0, 1]")
        if self.target_sifted is not None and self.target_sifted < 1:
            raise ValueError("target_sifted must be positive when given")
        if self.compensation < 0:
            raise ValueError("compensation must be non-negative")

    def efficiency_table(self) -> np.ndarray:
        """Bob's efficiency indexed by ``[basis, timing]``."""
        p = self.params
        table = np.array(
            [[p.eta_z_t0, p.eta_z_t1, p.kappa], [p.eta_x_t0, p.eta_x_t1, p.kappa]]
        )
        return np.clip(table * self.compensation, 0.0, 1.0)


@dataclass
class SessionStats:
    emitted: int = 0
    detected: int = 0
    sifted: int = 0
    errors: int = 0
    double_clicks: int = 0
    clicks: dict[tuple[str, str], int] = field(
        default_factory=lambda: {(d, t): 0 for d in LABELS for t in TIMING_LABELS}
    )
    # Equivalent-model decomposition of sifted clicks: part 1 holds clicks
    # whose basis Eve forced, part 2 the mismatch-free remainder.
    part1_sifted: int = 0
    part1_errors: int = 0
    part2_sifted: int = 0
    part2_errors: int = 0

    @property
    def qber(self) -> float:
        return self.errors / self.sifted if self.sifted else math.nan

    @property
    def qber_stderr(self) -> float:
        if not self.sifted:
            return math.nan
        q = self.qber
        return math.sqrt(q * (1.0 - q) / self.sifted)

    @property
    def detection_rate(self) -> float:
        return self.detected / self.emitted if self.emitted else math.nan

    @property
    def part1_fraction(self) -> float:
        return self.part1_sifted / self.sifted if self.sifted else math.nan

    def as_dict(self) -> dict:
        return {
            "emitted": self.emitted,
            "detected": self.detected,
            "sifted": self.sifted,
            "errors": self.errors,
            "double_clicks": self.double_clicks,
            "qber": self.qber,
            "qber_stderr": self.qber_stderr,
            "detection_rate": self.detection_rate,
            "part1_sifted": self.part1_sifted,
            "part1_errors": self.part1_errors,
            "part2_sifted": self.part2_sifted,
            "part2_errors": self.part2_errors,
        }


def _chunk(rng: np.random.Generator, n: int, cfg: SessionConfig, eff: np.ndarray) -> dict:
    a_basis = rng.integers(0, 2, n)
    a_bit = rng.integers(0, 2, n)
    e_basis = rng.integers(0, 2, n)
    e_coin = rng.integers(0, 2, n)
    b_basis = rng.integers(0, 2, n)
    b_coin = rng.integers(0, 2, n)
    u_attack = rng.random(n)
    u_click = rng.random(n)
    u_part = rng.random(n)
    shift = rng.integers(0, 2, n)

    if cfg.attack is Attack.FSA:
        attacked = np.ones(n, dtype=bool)
    elif cfg.attack is Attack.PARTIAL_FSA:
        attacked = u_attack < cfg.attack_fraction
    else:
        attacked = np.zeros(n, dtype=bool)

    e_bit = np.where(e_basis == a_basis, a_bit, e_coin)
    ph_basis = np.where(attacked, e_basis, a_basis)
    ph_bit = np.where(attacked, e_bit, a_bit)
    if cfg.attack is Attack.TSA_PROBE:
        timing = shift
    else:
        # Eve resends Z states at t0 and X states at t1.
        timing = np.where(attacked, e_basis, 2)

    sig_click = u_click < eff[b_basis, timing]
    bob_bit = np.where(b_basis == ph_basis, ph_bit, b_coin)
    det = 2 * b_basis + bob_bit

    if cfg.include_dark_counts:
        fired = rng.random((n, 4)) < cfg.dark_count_rate
        fired[np.flatnonzero(sig_click), det[sig_click]] = True
        n_fired = fired.sum(axis=1)
        detected = n_fired == 1
        double = n_fired > 1
        det = np.where(detected, fired.argmax(axis=1), det)
        b_basis = det // 2
        bob_bit = det % 2
        clean_signal = sig_click & detected
    else:
        detected = sig_click
        double = np.zeros(n, dtype=bool)
        clean_signal = sig_click

    sifted = detected & (b_basis == a_basis)
    error = sifted & (bob_bit != a_bit)

    forced = sifted & attacked & clean_signal & (e_basis == b_basis)
    own = eff[b_basis, timing]
    other = eff[1 - b_basis, timing]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(own > 0, np.minimum(other / own, 1.0), 1.0)
    part1 = forced & (u_part < 1.0 - ratio)

    return {
        "detected": detected,
        "double": double,
        "sifted": sifted,
        "error": error,
        "det": det,
        "timing": timing,
        "part1": part1,
    }


def run_session(config: SessionConfig) -> SessionStats:
    """Simulate a session; identical configs give identical stats."""
    rng = RandomSource(config.seed).stream()
    eff = config.efficiency_table()
    stats = SessionStats()
    clicks = np.zeros(12, dtype=np.int64)
    while stats.emitted < config.n_pulses:
        if config.target_sifted is not None and stats.sifted >= config.target_sifted:
            break
        n = min(CHUNK, config.n_pulses - stats.emitted)
        c = _chunk(rng, n, config, eff)
        if config.target_sifted is not None:
            need = config.target_sifted - stats.sifted
            cum = np.cumsum(c["sifted"])
            if cum[-1] >= need:
                stop = int(np.searchsorted(cum, need)) + 1
                c = {k: v[:stop] for k, v in c.items()}
                n = stop
        d = c["detected"]
        stats.emitted += n
        stats.detected += int(d.sum())
        stats.double_clicks += int(c["double"].sum())
        stats.sifted += int(c["sifted"].sum())
        stats.errors += int(c["error"].sum())
        p1 = c["part1"]
        stats.part1_sifted += int(p1.sum())
        stats.part1_errors += int((p1 & c["error"]).sum())
        clicks += np.bincount(c["det"][d] * 3 + c["timing"][d], minlength=12)
    stats.part2_sifted = stats.sifted - stats.part1_sifted
    stats.part2_errors = stats.errors - stats.part1_errors
    for i, label in enumerate(LABELS):
        for j, t in enumerate(TIMING_LABELS):
            stats.clicks[(label, t)] = int(clicks[3 * i + j])
    return stats


def analytic_detection_rate(config: SessionConfig) -> float:
    """Expected detected/emitted without dark counts."""
    eff = config.efficiency_table()
    if config.attack is Attack.NONE:
        return float(eff[:, 2].mean())
    attacked = float(eff[:, :2].mean())
    if config.attack is Attack.PARTIAL_FSA:
        r = config.attack_fraction
        return (1.0 - r) * float(eff[:, 2].mean()) + r * attacked
    return attacked


def analytic_qber(config: SessionConfig) -> float:
    """Expected QBER without dark counts (0 when nothing is attacked)."""
    if config.attack in (Attack.NONE, Attack.TSA_PROBE):
        return 0.0
    eff = config.efficiency_table()
    scaled = FsaParameters(eff[0, 0], eff[0, 1], eff[1, 0], eff[1, 1], kappa=eff[0, 2])
    r = 1.0 if config.attack is Attack.FSA else config.attack_fraction
    denom = (1.0 - r) * scaled.kappa + r * fsa_count_rate(scaled)
    return r * fsa_error_rate(scaled) / denom if denom > 0 else math.nan


def estimate_detection_rate_drop(params: FsaParameters) -> float:
    """Detection rate under uniform t0/t1 shifting relative to matched timing.

    Averaged over the two bases; equals ``(1 + eta) / 2`` for symmetric
    parameters.
    """
    z = 0.5 * (params.eta_z_t0 + params.eta_z_t1) / params.eta_z_t0
    x = 0.5 * (params.eta_x_t0 + params.eta_x_t1) / params.eta_x_t1
    return 0.5 * (z + x)


@dataclass(frozen=True)
class TimingInference:
    """Eve's verdict on each detector's activation timing.

    ``log_odds`` is the log likelihood ratio of "calibrated at t0" over
    "calibrated at t1"; ``clicks`` holds the disclosed clicks seen at each
    probed timing.
    """

    verdicts: dict[str, str]
    log_odds: dict[str, float]
    clicks: dict[str, tuple[int, int]]

    def odds(self, label: str) -> float:
        """Posterior odds in favour of the verdict (1.0 for Unknown)."""
        llr = abs(self.log_odds[label])
        return math.inf if llr > 700 else math.exp(llr)

    def correct(self, bank: DetectorBank, t0: float, t1: float) -> bool:
        truth = {
            label: "t0" if ps_to_fs(t) == ps_to_fs(t0) else "t1" for label, t in bank.timings.items()
        }
        return truth == self.verdicts


def _log_likelihood_ratio(n0: int, n1: int, big0: int, big1: int, eta: float) -> float:
    if eta >= 1.0 or big0 == 0 or big1 == 0:
        return 0.0
    if eta == 0.0:
        if n0 > 0 and n1 == 0:
            return math.inf
        if n1 > 0 and n0 == 0:
            return -math.inf
        return 0.0
    # Conditional on the total, clicks split between t0 and t1 binomially;
    # the split probability depends on which timing the detector favours.
    pi0 = big0 / (big0 + eta * big1)
    pi1 = eta * big0 / (eta * big0 + big1)
    return n0 * math.log(pi0 / pi1) + n1 * math.log((1.0 - pi0) / (1.0 - pi1))


def tsa_probe(
    bank: DetectorBank,
    params: FsaParameters,
    n_probe: int,
    rng: np.random.Generator,
    t0: float,
    t1: float,
    disclosed_fraction: float = 0.1,
    odds_threshold: float = 100.0,
    count_floor: int = 1,
) -> TimingInference:
    """Time-shift probing: learn each detector's timing from public information.

    Eve delays every probe photon to ``t0`` or ``t1`` at random.  Sifting
    reveals which rounds clicked and error estimation reveals the bit (hence
    the detector) of a random ``disclosed_fraction`` of sifted rounds.  A
    detector calibrated at the probed timing clicks with efficiency ``kappa``,
    otherwise with ``eta * kappa``.  A verdict is issued once the dominant
    timing has ``count_floor`` disclosed clicks and the likelihood odds reach
    ``odds_threshold``.
    """
    if n_probe < 1:
        raise ValueError("n_probe must be at least 1")
    if not 0.0 < disclosed_fraction <= 1.0:
        raise ValueError("disclosed_fraction must lie in (0, 1]")
    kappa, eta = params.kappa, params.eta
    slot = np.empty(4, dtype=np.int64)
    for i, t in enumerate(bank.timings.values()):
        if ps_to_fs(t) == ps_to_fs(t0):
            slot[i] = 0
        elif ps_to_fs(t) == ps_to_fs(t1):
            slot[i] = 1
        else:
            raise ValueError(f"detector timing {t} ps is neither t0 nor t1")

    shift = rng.integers(0, 2, n_probe)
    a_basis = rng.integers(0, 2, n_probe)
    a_bit = rng.integers(0, 2, n_probe)
    b_basis = rng.integers(0, 2, n_probe)
    coin = rng.integers(0, 2, n_probe)
    u_click = rng.random(n_probe)
    u_disclose = rng.random(n_probe)

    det = 2 * b_basis + np.where(b_basis == a_basis, a_bit, coin)
    eff = np.where(slot[det] == shift, kappa, eta * kappa)
    click = u_click < eff
    disclosed = click & (b_basis == a_basis) & (u_disclose < disclosed_fraction)

    big0 = int((shift == 0).sum())
    big1 = n_probe - big0
    counts = np.bincount(det[disclosed] * 2 + shift[disclosed], minlength=8)
    verdicts, log_odds, clicks = {}, {}, {}
    threshold = math.log(odds_threshold)
    for i, label in enumerate(LABELS):
        n0, n1 = int(counts[2 * i]), int(counts[2 * i + 1])
        llr = _log_likelihood_ratio(n0, n1, big0, big1, eta)
        clicks[label] = (n0, n1)
        log_odds[label] = llr
        if max(n0, n1) >= count_floor and abs(llr) >= threshold:
            verdicts[label] = "t0" if llr > 0 else "t1"
        else:
            verdicts[label] = "Unknown"
    return TimingInference(verdicts=verdicts, log_odds=log_odds, clicks=clicks)
