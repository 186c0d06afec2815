"""Secure key rate of single-photon BB84 with basis-dependent efficiency mismatch.

The receiver at the early timing is replaced by an equivalent model: with
probability ``c1`` the photon meets a Z-only detector (Eve fixes the
basis), with ``c2`` a mismatch-free detector, and with ``c3`` nothing.  The
share ``p`` of clicks coming from the Z-only part is the fraction of
detections whose basis Eve controls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import binary_entropy, bisect_root

# Slack for e_b sitting exactly on the feasibility edge.
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class EquivalentModelSplit:
    c1: float
    c2: float
    c3: float
    p: float
    # Part efficiencies are fixed by construction.
    eta_x_part1: float = 0.0
    eta_z_part1: float = 1.0
    eta_x_part2: float = 1.0
    eta_z_part2: float = 1.0


@dataclass(frozen=True)
class KeyRatePoint:
    eta: float
    e_b: float
    rate: float


def controlled_fraction(eta: float) -> float:
    """Fraction of clicks whose basis Eve controls, ``(1 - eta) / (1 + eta)``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta must lie in [0, 1], got {eta!r}")
    return (1.0 - eta) / (1.0 + eta)


def split_equivalent_model(eta_z_t0: float, eta_x_t0: float) -> EquivalentModelSplit:
    """Branch probabilities reproducing the real count rates at ``t0``.

    Requires the Z basis to be the favoured one at ``t0``; swap the bases
    before calling for the mirrored mismatch.
    """
    if not 0.0 <= eta_x_t0 <= eta_z_t0 <= 1.0:
        raise ValueError(
            f"need 0 <= eta_x_t0 <= eta_z_t0 <= 1, got eta_z_t0={eta_z_t0}, eta_x_t0={eta_x_t0}"
        )
    c1 = eta_z_t0 - eta_x_t0
    c2 = eta_x_t0
    denom = c1 + 2.0 * c2
    if denom <= 0:
        raise ValueError("no clicks at t0: the split is undefined")
    return EquivalentModelSplit(c1=c1, c2=c2, c3=1.0 - c1 - c2, p=c1 / denom)


def _check_feasible(eta: float, e_b: float) -> float:
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta!r}")
    if e_b < 0 or math.isnan(e_b):
        raise ValueError(f"e_b must be non-negative, got {e_b!r}")
    inner = e_b * (1.0 + eta) / (2.0 * eta)
    if inner > 1.0 + ROUNDOFF:
        raise ValueError(f"e_b={e_b} is infeasible at eta={eta}: needs e_b <= 2 eta / (1 + eta)")
    return min(inner, 1.0)


def bem_secure_key_rate(eta: float, e_b: float) -> float:
    """Individual-attack key rate with mismatch ratio ``eta`` and QBER ``e_b``.

    Negative values mean no secure key; they are returned unclamped.
    """
    inner = _check_feasible(eta, e_b)
    return (2.0 * eta / (1.0 + eta)) * (1.0 - binary_entropy(inner)) - binary_entropy(e_b)


def gllp_key_rate(delta: float, e_b: float) -> float:
    """Key rate when the detection basis of a fraction ``delta`` of counts is Eve's."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must lie in [0, 1], got {delta!r}")
    if e_b < 0:
        raise ValueError(f"e_b must be non-negative, got {e_b!r}")
    if delta == 1.0:
        if e_b > 0:
            raise ValueError("delta = 1 leaves no uncontrolled counts to carry errors")
        return 0.0
    good = 1.0 - delta
    ratio = e_b / good
    if ratio > 1.0 + ROUNDOFF:
        raise ValueError(f"e_b={e_b} exceeds the uncontrolled fraction {good}")
    return good - binary_entropy(e_b) - good * binary_entropy(min(ratio, 1.0))


def key_rate_point(eta: float, e_b: float) -> KeyRatePoint:
    return KeyRatePoint(eta=eta, e_b=e_b, rate=bem_secure_key_rate(eta, e_b))


def qber_threshold(eta: float) -> float:
    """Largest tolerable QBER: the first zero of the key rate in ``e_b``.

    On ``[0, eta / (1 + eta)]`` the rate falls monotonically from
    ``2 eta / (1 + eta)`` to ``-h(e_b)``, which brackets a single root.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta!r}")
    hi = eta / (1.0 + eta)
    if bem_secure_key_rate(eta, 0.0) <= 0:
        return 0.0
    return bisect_root(lambda e: bem_secure_key_rate(eta, e), 0.0, hi, xtol=1e-13)
