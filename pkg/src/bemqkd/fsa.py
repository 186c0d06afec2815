"""Analytics of the faked-states attack on a receiver with basis-dependent mismatch.

Eve measures each photon in a random basis and resends her result in the
same basis, timed at ``t0`` for Z and ``t1`` for X.  With Bob's Z detectors
efficient at ``t0`` and his X detectors at ``t1``, a basis mismatch between
Eve and Bob is suppressed by the efficiency ratio ``eta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .core import binary_entropy, bisect_root

QBER_CAP = 0.11


def _check_prob(name: str, v: float) -> None:
    if not 0.0 <= v <= 1.0 or math.isnan(v):
        raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


@dataclass(frozen=True)
class FsaParameters:
    """Equivalent transmission-and-detection efficiencies of Bob's two bases.

    ``kappa`` is the efficiency of an undisturbed photon (both bases alike at
    the third timing ``t2``); it defaults to ``eta_z_t0``.
    """

    eta_z_t0: float
    eta_z_t1: float
    eta_x_t0: float
    eta_x_t1: float
    kappa: float | None = None

    def __post_init__(self):
        for name in ("eta_z_t0", "eta_z_t1", "eta_x_t0", "eta_x_t1"):
            _check_prob(name, getattr(self, name))
        if self.kappa is None:
            object.__setattr__(self, "kappa", self.eta_z_t0)
        _check_prob("kappa", self.kappa)
        if self.is_dark:
            return
        if self.eta_z_t0 <= 0 or self.eta_x_t1 <= 0:
            raise ValueError("matched efficiencies eta_z_t0 and eta_x_t1 must be positive")
        r_x = self.eta_z_t1 / self.eta_x_t1
        r_z = self.eta_x_t0 / self.eta_z_t0
        if abs(r_x - r_z) > 1e-9:
            raise ValueError(
                f"mismatch must be symmetric: eta_z_t1/eta_x_t1={r_x} != eta_x_t0/eta_z_t0={r_z}"
            )
        if r_z > 1.0 + 1e-12:
            raise ValueError(f"mismatch ratio must not exceed 1, got {r_z}")

    @classmethod
    def symmetric(cls, kappa: float, eta: float) -> FsaParameters:
        """Matched efficiency ``kappa`` in both bases, mismatched ``eta * kappa``."""
        _check_prob("eta", eta)
        return cls(
            eta_z_t0=kappa, eta_z_t1=eta * kappa, eta_x_t0=eta * kappa, eta_x_t1=kappa, kappa=kappa
        )

    @property
    def is_dark(self) -> bool:
        """All four efficiencies zero: nothing is ever detected and ``eta`` is undefined."""
        return not any((self.eta_z_t0, self.eta_z_t1, self.eta_x_t0, self.eta_x_t1))

    @property
    def eta(self) -> float:
        if self.is_dark:
            raise ValueError("mismatch ratio is undefined for an all-zero receiver")
        return self.eta_x_t0 / self.eta_z_t0

    def efficiency(self, basis: str, timing: int) -> float:
        return {
            ("Z", 0): self.eta_z_t0,
            ("Z", 1): self.eta_z_t1,
            ("X", 0): self.eta_x_t0,
            ("X", 1): self.eta_x_t1,
        }[(basis, timing)]


@dataclass(frozen=True)
class FsaRow:
    alice: tuple[str, int]
    eve_result: tuple[str, int]
    eve_probability: float  # P(Eve's basis and result | Alice's state)
    resent: tuple[str, int, int]  # basis, bit, timing index
    bob: tuple[str, int]
    detection_probability: float

    @property
    def is_error(self) -> bool:
        return self.bob[1] != self.alice[1]


RESEND_TIMING = {"Z": 0, "X": 1}


def build_fsa_table(params: FsaParameters) -> list[FsaRow]:
    """Every (Alice state, Eve branch, Bob outcome) row, Bob measuring in Alice's basis."""
    rows = []
    for a_basis in ("Z", "X"):
        for a_bit in (0, 1):
            other = "X" if a_basis == "Z" else "Z"
            branches = [((a_basis, a_bit), 0.5)]
            branches += [((other, b), 0.25) for b in (0, 1)]
            for (e_basis, e_bit), p_eve in branches:
                t = RESEND_TIMING[e_basis]
                eff = params.efficiency(a_basis, t)
                for bob_bit in (0, 1):
                    if e_basis == a_basis:
                        prob = eff if bob_bit == e_bit else 0.0
                    else:
                        prob = 0.5 * eff
                    rows.append(
                        FsaRow(
                            alice=(a_basis, a_bit),
                            eve_result=(e_basis, e_bit),
                            eve_probability=p_eve,
                            resent=(e_basis, e_bit, t),
                            bob=(a_basis, bob_bit),
                            detection_probability=prob,
                        )
                    )
    return rows


def fsa_count_rate(params: FsaParameters) -> float:
    """Bob's count rate in Alice's basis under the full attack."""
    return 0.25 * (params.eta_z_t1 + params.eta_z_t0 + params.eta_x_t1 + params.eta_x_t0)


def fsa_error_rate(params: FsaParameters) -> float:
    return 0.125 * (params.eta_z_t1 + params.eta_x_t0)


def fsa_qber(eta: float) -> float:
    """QBER of the full attack at mismatch ratio ``eta``."""
    _check_prob("eta", eta)
    return eta / (2.0 * (1.0 + eta))


def partial_fsa_qber(eta: float, r: float) -> float:
    """QBER when a fraction ``r`` of photons is attacked and the rest arrive at ``t2``."""
    _check_prob("eta", eta)
    _check_prob("r", r)
    return r * eta / (4.0 - 2.0 * r + 2.0 * r * eta)


def partial_fsa_key_rate(eta: float, r: float) -> float:
    """Individual-attack key rate I(A:B) - I(A:E) under the partial attack."""
    e_b = partial_fsa_qber(eta, r)
    q = fsa_qber(eta)
    return (1.0 - binary_entropy(e_b)) - r * (1.0 - binary_entropy(q))


def max_attack_fraction(eta: float, qber_cap: float = QBER_CAP) -> float:
    """Largest attacked fraction keeping the partial-attack QBER at or below ``qber_cap``.

    Solved by bisection; ``max_attack_fraction_closed_form`` is the algebraic
    counterpart used to cross-check it.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta!r}")
    _check_prob("qber_cap", qber_cap)
    if partial_fsa_qber(eta, 1.0) <= qber_cap:
        return 1.0
    return bisect_root(lambda r: partial_fsa_qber(eta, r) - qber_cap, 0.0, 1.0, xtol=1e-13)


def max_attack_fraction_closed_form(eta: float, qber_cap: float = QBER_CAP) -> float:
    r = 4.0 * qber_cap / (eta + 2.0 * qber_cap * (1.0 - eta))
    return min(1.0, max(0.0, r))
