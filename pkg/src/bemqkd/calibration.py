"""Activation-timing calibration under a two-pulse faked calibration signal.

Each of Bob's four gated detectors is aligned by scanning its activation
timing over one gating cycle and keeping the timing with the highest count.
Eve replaces the single calibration pulse per cycle with two pulses, so every
detector locks onto one of two timings at random.  This module simulates the
scans, classifies the resulting timing assignment, and implements the two
software countermeasures (timing-spread monitoring and a laser self test).
"""
from __future__ import annotations

import enum
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .core import (
    DEFAULT_GRID,
    EfficiencyCurve,
    RandomSource,
    TimingGrid,
    bisect_root,
    curve_efficiency,
    ps_to_fs,
)

LABELS = ("H", "V", "P", "M")
BASIS_OF = {"H": "Z", "V": "Z", "P": "X", "M": "X"}
BASIS_PAIRS = {"Z": ("H", "V"), "X": ("P", "M")}

FAKED_INTERVAL = 320.0
# 202.5 and 522.5 ps sit 2.5 ps from their nearest grid points (200 and 525),
# so both peaks of the scanned curve are equally strong on the 12.5 ps grid.
FAKED_FIRST_OFFSET = 202.5


@dataclass(frozen=True)
class CalibrationSignal:
    """Pulses injected into every gating cycle during the timing scan.

    ``pulse_weights`` scales the mean photon number of each pulse relative to
    ``mean_photon_number`` (all 1.0 when omitted).
    """

    pulse_offsets: tuple[float, ...]
    mean_photon_number: float = 0.7
    pulses_per_step: int = 5000
    pulse_weights: tuple[float, ...] | None = None
    cycle_period: float = 800.0

    def __post_init__(self):
        offsets = tuple(float(o) for o in self.pulse_offsets)
        object.__setattr__(self, "pulse_offsets", offsets)
        if not 1 <= len(offsets) <= 2:
            raise ValueError("a calibration signal carries one or two pulses per cycle")
        if len(set(offsets)) != len(offsets):
            raise ValueError("pulse offsets must be distinct")
        if any(not 0.0 <= o < self.cycle_period for o in offsets):
            raise ValueError(f"pulse offsets must lie in [0, {self.cycle_period})")
        if self.mean_photon_number < 0:
            raise ValueError("mean photon number must be non-negative")
        if self.pulses_per_step < 1:
            raise ValueError("pulses_per_step must be at least 1")
        if self.pulse_weights is not None:
            weights = tuple(float(w) for w in self.pulse_weights)
            if len(weights) != len(offsets) or any(w < 0 for w in weights):
                raise ValueError("one non-negative weight per pulse is required")
            object.__setattr__(self, "pulse_weights", weights)

    @classmethod
    def legitimate(cls, offset: float = 400.0, **kw) -> CalibrationSignal:
        return cls(pulse_offsets=(offset,), **kw)

    @classmethod
    def faked(
        cls, first_offset: float = FAKED_FIRST_OFFSET, interval: float = FAKED_INTERVAL, **kw
    ) -> CalibrationSignal:
        return cls(pulse_offsets=(first_offset, first_offset + interval), **kw)

    @property
    def weights(self) -> tuple[float, ...]:
        return self.pulse_weights or (1.0,) * len(self.pulse_offsets)

    def peak_timings(self, grid: TimingGrid = DEFAULT_GRID) -> tuple[float, float]:
        """Grid timings ``(t0, t1)`` that the scan peaks map to.

        A single-pulse signal has one peak, returned twice.
        """
        peaks = [grid.nearest(o) for o in self.pulse_offsets]
        return (peaks[0], peaks[-1])


@dataclass(frozen=True)
class Detector:
    curve: EfficiencyCurve
    timing: float


@dataclass(frozen=True)
class DetectorBank:
    """The four polarization detectors: Z basis = {H, V}, X basis = {P, M}."""

    detectors: Mapping[str, Detector]

    def __post_init__(self):
        if sorted(self.detectors) != sorted(LABELS):
            raise ValueError(f"a detector bank needs exactly the labels {LABELS}")
        object.__setattr__(self, "detectors", {k: self.detectors[k] for k in LABELS})

    @classmethod
    def uniform(cls, timing: float = 0.0, curve: EfficiencyCurve | None = None) -> DetectorBank:
        curve = curve or EfficiencyCurve()
        return cls({k: Detector(curve, timing) for k in LABELS})

    @classmethod
    def from_timings(
        cls, timings: Mapping[str, float], curve: EfficiencyCurve | None = None
    ) -> DetectorBank:
        curve = curve or EfficiencyCurve()
        return cls({k: Detector(curve, float(timings[k])) for k in LABELS})

    @property
    def timings(self) -> dict[str, float]:
        return {k: d.timing for k, d in self.detectors.items()}

    def with_timings(self, timings: Mapping[str, float]) -> DetectorBank:
        return DetectorBank(
            {k: Detector(d.curve, float(timings.get(k, d.timing))) for k, d in self.detectors.items()}
        )

    def check_on_grid(self, grid: TimingGrid) -> None:
        off = {k: t for k, t in self.timings.items() if not grid.contains(t)}
        if off:
            raise ValueError(f"activation timings not on the {grid.step} ps grid: {off}")

    def efficiency(self, label: str, arrival: float) -> float:
        """Efficiency of detector ``label`` for a pulse arriving at offset ``arrival``."""
        det = self.detectors[label]
        return curve_efficiency(det.curve, arrival - det.timing)


class MismatchKind(enum.Enum):
    NO_MISMATCH = "NoMismatch"
    PARTIAL_DEM = "PartialDem"
    DUAL_DEM = "DualDem"
    BEM = "Bem"


# Each detector locks to t0 or t1 with probability 1/2, independently.
THEORETICAL_FREQUENCIES = {
    MismatchKind.NO_MISMATCH: 1 / 8,
    MismatchKind.PARTIAL_DEM: 1 / 2,
    MismatchKind.DUAL_DEM: 1 / 4,
    MismatchKind.BEM: 1 / 8,
}
BEM_VARIANT_FREQUENCY = 1 / 16


@dataclass(frozen=True)
class MismatchOutcome:
    kind: MismatchKind
    basis: str | None = None  # PartialDem: basis holding the mismatch
    variant: str | None = None  # Bem: "ZEarly" or "XEarly"

    @property
    def label(self) -> str:
        if self.kind is MismatchKind.PARTIAL_DEM:
            return f"PartialDem({self.basis})"
        if self.kind is MismatchKind.BEM:
            return f"Bem({self.variant})"
        return self.kind.value


def scan_detector(
    curve: EfficiencyCurve,
    signal: CalibrationSignal,
    grid: TimingGrid,
    rng: np.random.Generator,
) -> float:
    """Scan one detector's activation timing and return the max-count timing in ps.

    Counts at each candidate timing are Binomial(pulses_per_step, p) with
    p = 1 - exp(-mu * eta_eff) + dark, eta_eff summed over the pulses of one
    cycle.  Equal maxima are broken uniformly at random.
    """
    timings = grid.timings()
    eta_eff = np.zeros_like(timings)
    for offset, w in zip(signal.pulse_offsets, signal.weights):
        eta_eff += w * curve_efficiency(curve, offset - timings)
    p = -np.expm1(-signal.mean_photon_number * eta_eff) + curve.dark_count_rate
    counts = rng.binomial(signal.pulses_per_step, np.clip(p, 0.0, 1.0))
    best = np.flatnonzero(counts == counts.max())
    k = best[0] if len(best) == 1 else rng.choice(best)
    return float(timings[k])


def run_calibration(
    bank: DetectorBank,
    signal: CalibrationSignal,
    grid: TimingGrid,
    rng: np.random.Generator,
) -> DetectorBank:
    """Independently re-scan all four detectors; the input bank is left alone."""
    return bank.with_timings(
        {label: scan_detector(det.curve, signal, grid, rng) for label, det in bank.detectors.items()}
    )


def _which(t: float, t0: float, t1: float) -> int:
    t_fs = ps_to_fs(t)
    if t_fs == ps_to_fs(t0):
        return 0
    if t_fs == ps_to_fs(t1):
        return 1
    raise ValueError(f"timing {t} ps is neither t0={t0} nor t1={t1}")


def classify_outcome(bank: DetectorBank, t0: float, t1: float) -> MismatchOutcome:
    """Classify a post-calibration timing assignment over ``{t0, t1}``."""
    slot = {label: _which(t, t0, t1) for label, t in bank.timings.items()}
    z = (slot["H"], slot["V"])
    x = (slot["P"], slot["M"])
    z_split, x_split = z[0] != z[1], x[0] != x[1]
    if not z_split and not x_split:
        if z[0] == x[0]:
            return MismatchOutcome(MismatchKind.NO_MISMATCH)
        return MismatchOutcome(MismatchKind.BEM, variant="ZEarly" if z[0] == 0 else "XEarly")
    if z_split and x_split:
        return MismatchOutcome(MismatchKind.DUAL_DEM)
    return MismatchOutcome(MismatchKind.PARTIAL_DEM, basis="Z" if z_split else "X")


def snap_to_peaks(bank: DetectorBank, t0: float, t1: float, grid: TimingGrid) -> DetectorBank:
    """Replace each timing by whichever of ``t0``/``t1`` is closer around the cycle.

    A finite-statistics scan can lock one grid step beside a peak; this maps
    it back to the peak it belongs to before classification.
    """
    snapped = {
        label: t0 if grid.wrapped_distance(t, t0) <= grid.wrapped_distance(t, t1) else t1
        for label, t in bank.timings.items()
    }
    return bank.with_timings(snapped)


def monitor_timing_spread(bank: DetectorBank, threshold: float) -> bool:
    """Alarm when any two activation timings differ by more than ``threshold`` ps.

    Differences are taken around the gating cycle.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    period = next(iter(bank.detectors.values())).curve.cycle_period
    spread = 0.0
    for a, b in itertools.combinations(bank.timings.values(), 2):
        d = (a - b) % period
        spread = max(spread, min(d, period - d))
    return spread > threshold


def compensated_mean_photon_number(target_click_probability: float, efficiency: float) -> float:
    """Mean photon number giving click probability ``1 - exp(-mu * efficiency)``.

    Lets Eve keep the calibration count rate unchanged after splitting the
    signal into two pulses.
    """
    if not 0.0 <= target_click_probability < 1.0:
        raise ValueError("target click probability must lie in [0, 1)")
    if efficiency <= 0:
        raise ValueError("efficiency must be positive")

    def f(mu):
        return -math.expm1(-mu * efficiency) - target_click_probability

    hi = 1.0
    while f(hi) < 0:
        hi *= 2.0
    return bisect_root(f, 0.0, hi)


@dataclass(frozen=True)
class ProbeResult:
    timing: float
    clicks: dict[str, int]
    efficiency: dict[str, float]
    eta_z: float
    eta_x: float
    basis_ratio: float  # min/max of (eta_z, eta_x); nan when both are unresolved
    dem_ratio: dict[str, float]
    bem: bool
    dem: bool


@dataclass(frozen=True)
class SelfTestReport:
    probes: list[ProbeResult]
    ratio_bound: float

    @property
    def bem_detected(self) -> bool:
        return any(p.bem for p in self.probes)

    @property
    def dem_detected(self) -> bool:
        return any(p.dem for p in self.probes)

    @property
    def verdict(self) -> str:
        flags = [name for name, hit in (("BEM", self.bem_detected), ("DEM", self.dem_detected)) if hit]
        return "+".join(flags) if flags else "clean"


def _ratio(a: float, b: float, clicks_a: int, clicks_b: int, min_clicks: int) -> float:
    if max(clicks_a, clicks_b) < min_clicks:
        return math.nan
    hi = max(a, b)
    return min(a, b) / hi if hi > 0 else math.nan


def self_test(
    bank: DetectorBank,
    grid: TimingGrid,
    probe_timings: Sequence[float],
    rng: np.random.Generator,
    n_pulses: int = 10_000,
    mean_photon_number: float = 1.0,
    ratio_bound: float = 0.5,
    min_clicks: int = 20,
) -> SelfTestReport:
    """Probe the calibrated bank with an attenuated local laser.

    At every probe timing ``n_pulses`` pulses are fired; each detector sees a
    quarter of the mean photon number (passive basis splitter followed by a
    polarizing splitter).  Efficiencies are recovered by inverting the click
    probability.  A probe flags BEM when the Z/X efficiency ratio, and DEM when
    the ratio inside a basis, falls below ``ratio_bound``.  Ratios are only
    judged once the stronger side has ``min_clicks`` clicks.
    """
    if len(probe_timings) == 0:
        raise ValueError("at least one probe timing is required")
    bank.check_on_grid(grid)
    mu_d = mean_photon_number / 4.0
    probes = []
    for t in probe_timings:
        clicks, eff = {}, {}
        for label, det in bank.detectors.items():
            eta = curve_efficiency(det.curve, t - det.timing)
            p = min(1.0, -math.expm1(-mu_d * eta) + det.curve.dark_count_rate)
            k = int(rng.binomial(n_pulses, p))
            signal_frac = max(k / n_pulses - det.curve.dark_count_rate, 0.0)
            clicks[label] = k
            eff[label] = -math.log1p(-min(signal_frac, 1 - 1e-15)) / mu_d
        eta_z = 0.5 * (eff["H"] + eff["V"])
        eta_x = 0.5 * (eff["P"] + eff["M"])
        basis_ratio = _ratio(
            eta_z, eta_x, clicks["H"] + clicks["V"], clicks["P"] + clicks["M"], min_clicks
        )
        dem_ratio = {
            b: _ratio(eff[a], eff[c], clicks[a], clicks[c], min_clicks)
            for b, (a, c) in BASIS_PAIRS.items()
        }
        probes.append(
            ProbeResult(
                timing=float(t),
                clicks=clicks,
                efficiency=eff,
                eta_z=eta_z,
                eta_x=eta_x,
                basis_ratio=basis_ratio,
                dem_ratio=dem_ratio,
                bem=basis_ratio < ratio_bound,
                dem=any(r < ratio_bound for r in dem_ratio.values()),
            )
        )
    return SelfTestReport(probes=probes, ratio_bound=ratio_bound)


@dataclass(frozen=True)
class TrialResult:
    trial: int
    timings: dict[str, float]
    outcome: MismatchOutcome


@dataclass
class CalibrationCampaign:
    """Outcomes of repeated attacked calibrations, in trial order."""

    t0: float
    t1: float
    trials: list[TrialResult] = field(default_factory=list)

    def counts(self) -> dict[MismatchKind, int]:
        out = {k: 0 for k in MismatchKind}
        for tr in self.trials:
            out[tr.outcome.kind] += 1
        return out

    def bem_variant_counts(self) -> dict[str, int]:
        out = {"ZEarly": 0, "XEarly": 0}
        for tr in self.trials:
            if tr.outcome.kind is MismatchKind.BEM:
                out[tr.outcome.variant] += 1
        return out

    def chi_square(self) -> tuple[float, float]:
        """Pearson statistic and p-value against the 1/8, 1/2, 1/4, 1/8 split."""
        n = len(self.trials)
        if n == 0:
            return math.nan, math.nan
        observed = [self.counts()[k] for k in MismatchKind]
        expected = [n * THEORETICAL_FREQUENCIES[k] for k in MismatchKind]
        res = stats.chisquare(observed, expected)
        return float(res.statistic), float(res.pvalue)


def _run_trials(args) -> list[TrialResult]:
    bank, signal, grid, seed, indices, t0, t1 = args
    source = RandomSource(seed)
    out = []
    for i in indices:
        scanned = run_calibration(bank, signal, grid, source.stream(i))
        outcome = classify_outcome(snap_to_peaks(scanned, t0, t1, grid), t0, t1)
        out.append(TrialResult(i, scanned.timings, outcome))
    return out


def run_campaign(
    signal: CalibrationSignal,
    n_trials: int,
    seed: int,
    grid: TimingGrid = DEFAULT_GRID,
    bank: DetectorBank | None = None,
    workers: int = 1,
) -> CalibrationCampaign:
    """Repeat the attacked calibration ``n_trials`` times.

    Trial ``i`` draws from its own stream derived from ``(seed, i)``, so the
    result does not depend on ``workers``.
    """
    if n_trials < 0:
        raise ValueError("n_trials must be non-negative")
    bank = bank or DetectorBank.uniform()
    t0, t1 = signal.peak_timings(grid)
    indices = list(range(n_trials))
    if workers <= 1 or n_trials < 2 * workers:
        results = _run_trials((bank, signal, grid, seed, indices, t0, t1))
    else:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_trials, [(bank, signal, grid, seed, c, t0, t1) for c in chunks])
            results = sorted(itertools.chain.from_iterable(parts), key=lambda r: r.trial)
    return CalibrationCampaign(t0=t0, t1=t1, trials=results)
