import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from bemqkd.calibration import (
    LABELS,
    CalibrationSignal,
    DetectorBank,
    MismatchKind,
    THEORETICAL_FREQUENCIES,
    classify_outcome,
    compensated_mean_photon_number,
    monitor_timing_spread,
    run_calibration,
    run_campaign,
    scan_detector,
    self_test,
    snap_to_peaks,
)
from bemqkd.core import EfficiencyCurve, RandomSource, TimingGrid, curve_efficiency

GRID = TimingGrid()
CURVE = EfficiencyCurve()
T0, T1 = 200.0, 525.0


def bank_of(h, v, p, m):
    return DetectorBank.from_timings(dict(zip(LABELS, (h, v, p, m))))


def test_faked_signal_defaults():
    s = CalibrationSignal.faked()
    assert s.pulse_offsets[1] - s.pulse_offsets[0] == 320.0
    assert s.mean_photon_number == 0.7
    assert s.peak_timings(GRID) == (T0, T1)


@pytest.mark.parametrize(
    "kw",
    [
        dict(pulse_offsets=()),
        dict(pulse_offsets=(1.0, 2.0, 3.0)),
        dict(pulse_offsets=(5.0, 5.0)),
        dict(pulse_offsets=(900.0,)),
        dict(pulse_offsets=(5.0,), pulses_per_step=0),
        dict(pulse_offsets=(5.0,), mean_photon_number=-1),
        dict(pulse_offsets=(5.0, 10.0), pulse_weights=(1.0,)),
    ],
)
def test_signal_rejects(kw):
    with pytest.raises(ValueError):
        CalibrationSignal(**kw)


def test_scan_single_pulse_noiseless():
    sig = CalibrationSignal.legitimate(400.0, pulses_per_step=10**9)
    assert scan_detector(CURVE, sig, GRID, np.random.default_rng(0)) == 400.0


def test_scan_two_pulses_equiprobable():
    sig = CalibrationSignal.faked(pulses_per_step=10**7)
    picks = [scan_detector(CURVE, sig, GRID, RandomSource(5).stream(i)) for i in range(1000)]
    assert set(picks) <= {T0, T1}
    assert picks.count(T0) / 1000 == pytest.approx(0.5, abs=0.05)


def test_scan_prefers_stronger_pulse():
    sig = CalibrationSignal.faked(pulse_weights=(1.0, 0.5))
    # Independent oracle: compare only the two peak bins, 10^4 draws.
    rng = np.random.default_rng(123)
    p = [
        -math.expm1(-0.7 * w * curve_efficiency(CURVE, 2.5)) + CURVE.dark_count_rate
        for w in sig.weights
    ]
    strong, weak = rng.binomial(5000, p[0], 10**4), rng.binomial(5000, p[1], 10**4)
    assert np.mean(strong > weak) > 0.9

    picks = [scan_detector(CURVE, sig, GRID, RandomSource(9).stream(i)) for i in range(10**4)]
    near_strong = sum(GRID.wrapped_distance(t, T0) < GRID.wrapped_distance(t, T1) for t in picks)
    assert near_strong / len(picks) > 0.9


def test_scan_on_grid_and_near_pulse():
    sig = CalibrationSignal.legitimate(333.0, pulses_per_step=10**5)
    picks = [scan_detector(CURVE, sig, GRID, RandomSource(1).stream(i)) for i in range(300)]
    assert all(GRID.contains(t) for t in picks)
    close = sum(GRID.wrapped_distance(t, 333.0) <= GRID.step for t in picks)
    assert close / len(picks) >= 0.99


def test_run_calibration_legitimate():
    bank = DetectorBank.uniform(0.0)
    sig = CalibrationSignal.legitimate(400.0, pulses_per_step=10**9)
    out = run_calibration(bank, sig, GRID, np.random.default_rng(2))
    assert out.timings == {k: 400.0 for k in LABELS}
    assert bank.timings == {k: 0.0 for k in LABELS}


def test_campaign_320_trials_band():
    camp = run_campaign(CalibrationSignal.faked(), 320, seed=2024)
    assert 9 <= camp.bem_variant_counts()["ZEarly"] <= 33
    assert sum(camp.counts().values()) == 320


def test_campaign_deterministic_and_worker_independent():
    a = run_campaign(CalibrationSignal.faked(), 40, seed=7)
    b = run_campaign(CalibrationSignal.faked(), 40, seed=7, workers=2)
    assert a.trials == b.trials


def test_campaign_empty():
    camp = run_campaign(CalibrationSignal.faked(), 0, seed=1)
    assert camp.trials == []
    assert all(math.isnan(v) for v in camp.chi_square())


@pytest.mark.parametrize(
    "timings, label",
    [
        ((T0, T0, T1, T1), "Bem(ZEarly)"),
        ((T1, T1, T0, T0), "Bem(XEarly)"),
        ((T0, T0, T0, T0), "NoMismatch"),
        ((T1, T1, T1, T1), "NoMismatch"),
        ((T0, T1, T0, T1), "DualDem"),
        ((T0, T1, T0, T0), "PartialDem(Z)"),
        ((T1, T1, T0, T1), "PartialDem(X)"),
    ],
)
def test_classify_examples(timings, label):
    assert classify_outcome(bank_of(*timings), T0, T1).label == label


def test_classify_rejects_foreign_timing():
    with pytest.raises(ValueError):
        classify_outcome(bank_of(T0, T0, T1, 300.0), T0, T1)


def test_classify_enumeration_matches_theory():
    # Exhaustive oracle over the 16 equally likely assignments.
    counts = {k: 0 for k in MismatchKind}
    variants = {"ZEarly": 0, "XEarly": 0}
    for combo in itertools.product((T0, T1), repeat=4):
        out = classify_outcome(bank_of(*combo), T0, T1)
        counts[out.kind] += 1
        if out.variant:
            variants[out.variant] += 1
    assert {k: c / 16 for k, c in counts.items()} == THEORETICAL_FREQUENCIES
    assert variants == {"ZEarly": 1, "XEarly": 1}


def test_classify_coin_flip_chi_square():
    rng = np.random.default_rng(11)
    flips = rng.integers(0, 2, (10**5, 4))
    idx = flips @ np.array([8, 4, 2, 1])
    table = {}
    for code in range(16):
        bits = [(code >> s) & 1 for s in (3, 2, 1, 0)]
        table[code] = classify_outcome(bank_of(*[(T0, T1)[b] for b in bits]), T0, T1)
    kinds = list(MismatchKind)
    observed = np.zeros(4)
    z_early = x_early = 0
    for code, n in zip(*np.unique(idx, return_counts=True)):
        out = table[code]
        observed[kinds.index(out.kind)] += n
        z_early += n * (out.variant == "ZEarly")
        x_early += n * (out.variant == "XEarly")
    expected = [1e5 * THEORETICAL_FREQUENCIES[k] for k in kinds]
    assert stats.chisquare(observed, expected).pvalue > 0.001
    assert stats.binomtest(int(z_early), int(z_early + x_early), 0.5).pvalue > 0.001


def test_snap_to_peaks():
    bank = bank_of(212.5, 187.5, 512.5, 537.5)
    snapped = snap_to_peaks(bank, T0, T1, GRID)
    assert snapped.timings == {"H": T0, "V": T0, "P": T1, "M": T1}


@pytest.mark.parametrize(
    "timings, threshold, alarm",
    [
        ((T0,) * 4, 50.0, False),
        ((200.0, 200.0, 520.0, 520.0), 50.0, True),
        ((200.0, 240.0, 200.0, 240.0), 50.0, False),
        ((5.0, 5.0, 795.0, 795.0), 50.0, False),
    ],
)
def test_monitor_examples(timings, threshold, alarm):
    assert monitor_timing_spread(bank_of(*timings), threshold) is alarm


def test_monitor_rejects_nonpositive_threshold():
    with pytest.raises(ValueError):
        monitor_timing_spread(DetectorBank.uniform(), 0.0)


@given(
    st.lists(st.sampled_from(GRID.timings().tolist()), min_size=4, max_size=4),
    st.floats(0.1, 400),
    st.floats(0.1, 400),
)
def test_monitor_monotone(timings, a, b):
    lo, hi = sorted((a, b))
    bank = bank_of(*timings)
    if monitor_timing_spread(bank, hi):
        assert monitor_timing_spread(bank, lo)


def test_compensated_mean_photon_number():
    mu = compensated_mean_photon_number(0.05, 0.13)
    assert mu == pytest.approx(-math.log1p(-0.05) / 0.13, rel=1e-10)
    assert compensated_mean_photon_number(0.0, 0.13) == 0.0


def test_self_test_clean_bank():
    bank = DetectorBank.uniform(400.0)
    rep = self_test(bank, GRID, [400.0], np.random.default_rng(3))
    assert rep.verdict == "clean"
    assert rep.probes[0].basis_ratio == pytest.approx(1.0, abs=0.15)


def test_self_test_flags_bem():
    bank = bank_of(T0, T0, T1, T1)
    rep = self_test(bank, GRID, [T0, T1], np.random.default_rng(4))
    assert rep.bem_detected and not rep.dem_detected
    at_t0 = rep.probes[0]
    assert at_t0.eta_x / at_t0.eta_z < 0.01


def test_self_test_flags_dual_dem():
    bank = bank_of(T0, T1, T0, T1)
    rep = self_test(bank, GRID, [T0, T1], np.random.default_rng(5))
    assert rep.dem_detected and not rep.bem_detected
    assert rep.verdict == "DEM"


def test_self_test_requires_probes_and_grid():
    with pytest.raises(ValueError):
        self_test(DetectorBank.uniform(), GRID, [], np.random.default_rng(0))
    with pytest.raises(ValueError):
        self_test(bank_of(0, 0, 0, 3.0), GRID, [0.0], np.random.default_rng(0))
