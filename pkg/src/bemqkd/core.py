"""Numeric foundations shared by every other module.

Binary entropy, gated-detector efficiency curves, the activation-timing grid,
a scalar bisection root finder and the seeding convention for random streams.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

FS_PER_PS = 1000
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def binary_entropy(x: float) -> float:
    """Shannon entropy of a Bernoulli(x) variable in bits.

    >>> binary_entropy(0.5)
    1.0
    >>> binary_entropy(0.0)
    0.0
    """
    if not 0.0 <= x <= 1.0 or math.isnan(x):
        raise ValueError(f"binary entropy argument must lie in [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def bisect_root(
    f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12, maxiter: int = 200
) -> float:
    """Root of ``f`` in ``[lo, hi]`` by plain bisection.

    ``f(lo)`` and ``f(hi)`` must not have the same strict sign.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise ValueError(f"root not bracketed: f({lo})={flo}, f({hi})={fhi}")
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if (fmid > 0) == (flo > 0):
            lo, flo = mid, fmid
        else:
            hi = mid
        if hi - lo <= xtol:
            break
    return 0.5 * (lo + hi)


def ps_to_fs(t_ps: float) -> int:
    return int(round(t_ps * FS_PER_PS))


def fs_to_ps(t_fs: int) -> float:
    return t_fs / FS_PER_PS


@dataclass(frozen=True)
class TimingGrid:
    """Candidate activation timings of one gating cycle.

    Held internally in integer femtoseconds so that the 12.5 ps grid is exact;
    the public surface speaks picoseconds.
    """

    step_fs: int = 12_500
    n_steps: int = 64

    def __post_init__(self):
        if self.step_fs <= 0:
            raise ValueError("grid step must be positive")
        if self.n_steps < 2:
            raise ValueError("grid needs at least two steps")

    @classmethod
    def from_ps(cls, step: float = 12.5, n_steps: int = 64) -> TimingGrid:
        return cls(step_fs=ps_to_fs(step), n_steps=n_steps)

    @property
    def step(self) -> float:
        return fs_to_ps(self.step_fs)

    @property
    def cycle_fs(self) -> int:
        return self.step_fs * self.n_steps

    @property
    def cycle_period(self) -> float:
        return fs_to_ps(self.cycle_fs)

    def timings(self) -> np.ndarray:
        """All candidate timings in ps."""
        return np.arange(self.n_steps) * self.step_fs / FS_PER_PS

    def timings_fs(self) -> np.ndarray:
        return np.arange(self.n_steps, dtype=np.int64) * self.step_fs

    def contains(self, t_ps: float) -> bool:
        t_fs = ps_to_fs(t_ps)
        return 0 <= t_fs < self.cycle_fs and t_fs % self.step_fs == 0

    def nearest(self, t_ps: float) -> float:
        """Grid timing closest to ``t_ps`` (wrapping); ties go to the earlier point."""
        t_fs = ps_to_fs(t_ps) % self.cycle_fs
        k, rem = divmod(t_fs, self.step_fs)
        if 2 * rem > self.step_fs:
            k += 1
        return fs_to_ps((k % self.n_steps) * self.step_fs)

    def wrapped_distance(self, a_ps: float, b_ps: float) -> float:
        """Distance between two offsets on the cycle circle, in ps."""
        d = (ps_to_fs(a_ps) - ps_to_fs(b_ps)) % self.cycle_fs
        return fs_to_ps(min(d, self.cycle_fs - d))


DEFAULT_GRID = TimingGrid()


@dataclass(frozen=True)
class EfficiencyCurve:
    """Gaussian gate-efficiency profile versus pulse-to-gate offset.

    ``center`` is the offset (pulse arrival minus activation timing) at which
    the detector is most efficient.  Dark counts are a separate per-gate
    probability and are not part of the profile.
    """

    center: float = 0.0
    fwhm: float = 50.0
    peak_efficiency: float = 0.13
    dark_count_rate: float = 4e-6
    cycle_period: float = 800.0

    def __post_init__(self):
        if self.fwhm <= 0:
            raise ValueError("fwhm must be positive")
        for name in ("peak_efficiency", "dark_count_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.cycle_period <= 0:
            raise ValueError("cycle_period must be positive")

    @property
    def sigma(self) -> float:
        return self.fwhm * FWHM_TO_SIGMA

    def __call__(self, offset):
        return curve_efficiency(self, offset)


def curve_efficiency(curve: EfficiencyCurve, offset):
    """Detection efficiency at ``offset`` ps; accepts scalars or arrays.

    Offsets wrap modulo the cycle period, so the distance to the center is
    measured around the cycle.
    """
    period = curve.cycle_period
    d = np.mod(np.asarray(offset, dtype=float) - curve.center, period)
    d = np.minimum(d, period - d)
    value = curve.peak_efficiency * np.exp(-0.5 * (d / curve.sigma) ** 2)
    if np.ndim(value) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class RandomSource:
    """A 64-bit seed from which independent numpy streams are derived.

    ``stream()`` is the session-level stream; ``stream(i)`` is the stream of
    trial ``i``.  Streams with different keys never overlap, so trials can run
    in any order or in parallel without changing results.
    """

    seed: int

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def stream(self, *key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=tuple(key)))
