import math

import numpy as np
import pytest
from scipy import stats as sps

from bemqkd.calibration import LABELS, DetectorBank
from bemqkd.core import RandomSource
from bemqkd.fsa import FsaParameters, fsa_qber, partial_fsa_qber
from bemqkd.security import controlled_fraction
from bemqkd.session import (
    Attack,
    SessionConfig,
    analytic_detection_rate,
    analytic_qber,
    estimate_detection_rate_drop,
    run_session,
    tsa_probe,
)

T0, T1 = 200.0, 525.0


def within(observed, expected, n, k):
    sigma = math.sqrt(expected * (1 - expected) / n)
    return abs(observed - expected) <= k * sigma


def test_no_attack():
    cfg = SessionConfig(n_pulses=10**6, params=FsaParameters.symmetric(0.13, 0.282), seed=1)
    s = run_session(cfg)
    assert s.emitted == 10**6
    assert within(s.detected / s.emitted, 0.13, s.emitted, 3)
    assert s.errors == 0 and s.qber == 0.0
    assert within(s.sifted / s.detected, 0.5, s.detected, 3)
    assert all(s.clicks[(d, t)] == 0 for d in LABELS for t in ("t0", "t1"))


def test_full_fsa_boundary():
    cfg = SessionConfig(
        n_pulses=10**9,
        params=FsaParameters.symmetric(0.13, 0.282),
        attack=Attack.FSA,
        seed=2,
        target_sifted=200_000,
    )
    s = run_session(cfg)
    assert s.sifted == 200_000
    assert within(s.qber, fsa_qber(0.282), s.sifted, 3)
    assert analytic_qber(cfg) == pytest.approx(fsa_qber(0.282), abs=1e-15)


def test_partial_fsa():
    cfg = SessionConfig(
        n_pulses=10**9,
        params=FsaParameters.symmetric(0.13, 0.3),
        attack=Attack.PARTIAL_FSA,
        attack_fraction=0.5,
        seed=3,
        target_sifted=200_000,
    )
    s = run_session(cfg)
    assert within(s.qber, 0.04545, s.sifted, 3)
    assert analytic_qber(cfg) == pytest.approx(partial_fsa_qber(0.3, 0.5), abs=1e-15)


def test_partial_fsa_random_pairs():
    rng = np.random.default_rng(99)
    for i in range(20):
        eta, r = rng.uniform(0.05, 1.0), rng.uniform(0.05, 1.0)
        cfg = SessionConfig(
            n_pulses=10**9,
            params=FsaParameters.symmetric(0.5, eta),
            attack=Attack.PARTIAL_FSA,
            attack_fraction=r,
            seed=1000 + i,
            target_sifted=10**5,
        )
        s = run_session(cfg)
        assert within(s.qber, partial_fsa_qber(eta, r), s.sifted, 4), (eta, r, s.qber)


def test_fsa_mismatched_branches_split_evenly():
    cfg = SessionConfig(
        n_pulses=4 * 10**6, params=FsaParameters.symmetric(0.13, 0.6), attack=Attack.FSA, seed=4
    )
    s = run_session(cfg)
    # X detectors clicking at t0 only see Eve's Z resends, so Bob's bit is a coin.
    for a, b, t in (("P", "M", "t0"), ("H", "V", "t1")):
        n_a, n_b = s.clicks[(a, t)], s.clicks[(b, t)]
        assert within(n_a / (n_a + n_b), 0.5, n_a + n_b, 3)
    assert analytic_detection_rate(cfg) == pytest.approx(0.13 * 1.6 / 2)
    assert within(s.detection_rate, analytic_detection_rate(cfg), s.emitted, 3)


def test_deterministic():
    cfg = SessionConfig(
        n_pulses=300_000, params=FsaParameters.symmetric(0.13, 0.4), attack=Attack.FSA, seed=5
    )
    assert run_session(cfg) == run_session(cfg)
    other = SessionConfig(
        n_pulses=300_000, params=FsaParameters.symmetric(0.13, 0.4), attack=Attack.FSA, seed=6
    )
    assert run_session(cfg) != run_session(other)


@pytest.mark.parametrize("eta", [0.0, 0.282, 0.6, 1.0])
def test_equivalent_model_accounting(eta):
    cfg = SessionConfig(
        n_pulses=3 * 10**6,
        params=FsaParameters.symmetric(0.5, eta),
        attack=Attack.FSA,
        seed=7,
    )
    s = run_session(cfg)
    p = s.part1_fraction
    e1 = s.part1_errors / s.part1_sifted if s.part1_sifted else 0.0
    e2 = s.part2_errors / s.part2_sifted if s.part2_sifted else 0.0
    assert s.part1_errors == 0
    assert s.qber == pytest.approx(p * e1 + (1 - p) * e2, abs=1e-12)
    assert within(p, controlled_fraction(eta), s.sifted, 3)


def test_dark_counts():
    cfg = SessionConfig(
        n_pulses=10**6,
        params=FsaParameters.symmetric(0.13, 1.0),
        include_dark_counts=True,
        dark_count_rate=1e-3,
        seed=8,
    )
    s = run_session(cfg)
    assert s.errors > 0 and s.double_clicks > 0
    assert s.errors <= s.sifted <= s.detected <= s.emitted


def test_config_validation():
    p = FsaParameters.symmetric(0.13, 0.5)
    for kw in (dict(n_pulses=0), dict(n_pulses=1, attack_fraction=2), dict(n_pulses=1, target_sifted=0)):
        with pytest.raises(ValueError):
            SessionConfig(params=p, **kw)


def test_compensation_restores_rate():
    p = FsaParameters.symmetric(0.13, 0.0)
    plain = SessionConfig(n_pulses=10, params=p, attack=Attack.TSA_PROBE)
    comp = SessionConfig(n_pulses=10, params=p, attack=Attack.TSA_PROBE, compensation=2.0)
    assert analytic_detection_rate(plain) == pytest.approx(0.065)
    assert analytic_detection_rate(comp) == pytest.approx(0.13)


@pytest.mark.parametrize("eta, drop", [(0.0, 0.5), (1.0, 1.0), (0.5, 0.75)])
def test_detection_rate_drop(eta, drop):
    assert estimate_detection_rate_drop(FsaParameters.symmetric(0.13, eta)) == pytest.approx(drop)


def test_tsa_session_rate_drop():
    params = FsaParameters.symmetric(0.13, 0.3)
    s = run_session(SessionConfig(n_pulses=2 * 10**6, params=params, attack=Attack.TSA_PROBE, seed=9))
    assert s.errors == 0
    assert within(s.detection_rate, 0.13 * 0.65, s.emitted, 3)


def bem_bank():
    return DetectorBank.from_timings({"H": T0, "V": T0, "P": T1, "M": T1})


def dual_bank():
    return DetectorBank.from_timings({"H": T0, "V": T1, "P": T1, "M": T0})


@pytest.mark.parametrize("bank", [bem_bank(), dual_bank()])
def test_tsa_probe_complete_separation(bank):
    params = FsaParameters.symmetric(1.0, 0.0)
    inf = tsa_probe(bank, params, 10**4, np.random.default_rng(1), T0, T1)
    assert inf.correct(bank, T0, T1)
    assert all(inf.odds(k) == math.inf for k in LABELS)


def test_tsa_probe_no_separation():
    inf = tsa_probe(bem_bank(), FsaParameters.symmetric(1.0, 1.0), 10**4, np.random.default_rng(2), T0, T1)
    assert set(inf.verdicts.values()) == {"Unknown"}
    assert all(inf.odds(k) == 1.0 for k in LABELS)


def test_tsa_probe_partial_separation():
    # Oracle: disclosed clicks per detector are Poisson-thinned binomials with
    # means n * kappa * eff / 16 * f at each timing.  Probability that the
    # likelihood ratio points the wrong way or stays under the 100:1 bar.
    n, eta, f = 10**4, 0.3, 0.1
    lam0, lam1 = n / 2 / 8 * f, n / 2 / 8 * f * eta
    need = math.ceil(math.log(100) / math.log(1 / eta))
    k = np.arange(0, 400)
    p0, p1 = sps.poisson.pmf(k, lam0), sps.poisson.pmf(k, lam1)
    diff = np.subtract.outer(k, k)
    p_ok_one = float((np.outer(p0, p1) * (diff >= need)).sum())
    assert p_ok_one**4 >= 0.999

    bank = dual_bank()
    params = FsaParameters.symmetric(1.0, eta)
    hits = sum(
        tsa_probe(bank, params, n, RandomSource(77).stream(i), T0, T1).correct(bank, T0, T1)
        for i in range(300)
    )
    assert hits == 300


def test_tsa_probe_rejects_foreign_timing():
    bank = DetectorBank.from_timings({"H": T0, "V": T0, "P": T1, "M": 300.0})
    with pytest.raises(ValueError):
        tsa_probe(bank, FsaParameters.symmetric(1.0, 0.0), 10, np.random.default_rng(0), T0, T1)
