"""SNR/SINR and composed error models for a two-user cooperative NOMA pair.

User 1 is the strong user (larger BS gain) and acts as decode-and-forward
relay for user 2. Gains are normalised by the noise power, so sigma^2 = 1
everywhere below. The composed errors keep the first-order forms used for
URLLC targets (cross terms such as eps_a * eps_b in sums are dropped).

The ``*_arr`` helpers work on raw numpy arrays and are what the solvers
call in their inner loops; the dataclass-based functions wrap them.
"""

from dataclasses import dataclass

import numpy as np

from .fbl import decoding_error


class DegenerateSchemeError(ValueError):
    """Raised when a scheme is evaluated on an allocation it cannot use."""


@dataclass(frozen=True)
class ChannelTriple:
    """Noise-normalised gains (per watt) of BS->u1, BS->u2 and u1->u2."""

    g1: float
    g2: float
    g12: float

    def __post_init__(self):
        if min(self.g1, self.g2, self.g12) <= 0:
            raise ValueError("channel gains must be positive")

    @property
    def ordered(self) -> bool:
        return self.g1 > self.g2


@dataclass(frozen=True)
class Allocation:
    p1I: float
    p2I: float
    p2II: float
    mI: int
    mII: int

    @property
    def p_sum(self) -> float:
        return self.p1I + self.p2I

    @property
    def energy(self) -> float:
        return self.mI * (self.p1I + self.p2I) + self.mII * self.p2II


@dataclass(frozen=True)
class SystemBudget:
    """Frame, power and reliability budget for one pair.

    ``dp`` and ``m_stride`` are search resolutions; ``dp=None`` means
    kappa_p * p_ave / 500.
    """

    d_max: int = 200
    p_ave: float = 10.0
    kappa_p: float = 1.2
    eps1_th: float = 1e-7
    eps2_th: float = 1e-5
    phi: float = 1.0
    bisect_tol: float = 1e-15
    dp: float | None = None
    m_stride: int = 1
    require_binding: bool = False

    def __post_init__(self):
        if self.kappa_p < 1 or self.phi < 1:
            raise ValueError("kappa_p and phi must be >= 1")
        if not (0 < self.eps1_th < 0.5 and 0 < self.eps2_th < 0.5):
            raise ValueError("BLER targets must lie in (0, 0.5)")
        if self.dp is not None and self.dp <= 0:
            raise ValueError("dp must be positive")
        if self.m_stride < 1 or self.d_max < 1:
            raise ValueError("m_stride and d_max must be >= 1")
        if self.p_ave <= 0:
            raise ValueError("p_ave must be positive")

    @property
    def p_peak(self) -> float:
        return self.kappa_p * self.p_ave

    @property
    def power_step(self) -> float:
        return self.dp if self.dp is not None else self.p_peak / 500.0

    @property
    def rate_ratio(self) -> float:
        """r22_I / r11 at equal throughputs."""
        return (1.0 - self.eps1_th) / (1.0 - self.eps2_th)


@dataclass(frozen=True)
class RateAssignment:
    r11: float
    r22_I: float
    r22_II: float
    r22_C: float

    @classmethod
    def coupled(cls, r11: float, mI: int, mII: int, budget: SystemBudget, ratio: float | None = None) -> "RateAssignment":
        """Rates that equalise both throughputs and carry the same payload in both phases."""
        r22_I = (budget.rate_ratio if ratio is None else ratio) * r11
        r22_II = mI / mII * r22_I if mII > 0 else 0.0
        r22_C = r22_I * mI / max(mI, mII)
        return cls(r11, r22_I, r22_II, r22_C)


# -- array kernels ---------------------------------------------------------

def sinr_user2_arr(g2, p1, p2, phi):
    return p2 * g2 / (p1 * g2 + phi)


def sinr_sic_arr(g1, p1, p2, phi):
    return p2 * g1 / (p1 * g1 + phi)


def snr_user1_arr(g1, p1, phi):
    return p1 * g1 / phi


def mrc_arr(gI, gII, mI, mII):
    mC = np.maximum(mI, mII)
    return mI / mC * gI + mII / mC * gII, mC


def error_sc_arr(e22I, e12I, e22II):
    return e22I * (e12I + e22II)


def error_mrc_arr(e12I, e22I, e22C):
    return e12I * e22I + (1.0 - e12I) * e22C


# -- dataclass API -----------------------------------------------------------

def sinr_p1_user2(ch: ChannelTriple, a: Allocation, phi: float = 1.0) -> float:
    """SINR of x2 at user 2 in phase I (x1 treated as interference)."""
    return sinr_user2_arr(ch.g2, a.p1I, a.p2I, phi)


def sinr_p1_sic(ch: ChannelTriple, a: Allocation, phi: float = 1.0) -> float:
    """SINR of x2 at user 1 in phase I (first SIC stage)."""
    return sinr_sic_arr(ch.g1, a.p1I, a.p2I, phi)


def snr_p1_user1(ch: ChannelTriple, a: Allocation, phi: float = 1.0) -> float:
    """SNR of x1 at user 1 after x2 has been cancelled."""
    return snr_user1_arr(ch.g1, a.p1I, phi)


def snr_p2(ch: ChannelTriple, a: Allocation) -> float:
    """SNR of the relayed packet at user 2 in phase II."""
    return a.p2II * ch.g12


def mrc_combined(ch: ChannelTriple, a: Allocation, phi: float = 1.0) -> tuple[float, int]:
    """Combined SINR and effective blocklength of the MRC packet."""
    g, mc = mrc_arr(sinr_p1_user2(ch, a, phi), snr_p2(ch, a), a.mI, a.mII)
    return float(g), int(mc)


def _phase1_errors(ch, a, rates, phi):
    e12 = decoding_error(sinr_p1_sic(ch, a, phi), rates.r22_I, a.mI)
    e11 = decoding_error(snr_p1_user1(ch, a, phi), rates.r11, a.mI)
    e22 = decoding_error(sinr_p1_user2(ch, a, phi), rates.r22_I, a.mI)
    return e12, e11, e22


def error_user1(ch: ChannelTriple, a: Allocation, rates: RateAssignment, phi: float = 1.0) -> float:
    e12, e11, _ = _phase1_errors(ch, a, rates, phi)
    return e12 + e11


def error_user2_noma(ch: ChannelTriple, a: Allocation, rates: RateAssignment, phi: float = 1.0) -> float:
    return decoding_error(sinr_p1_user2(ch, a, phi), rates.r22_I, a.mI)


def error_user2_sc(ch: ChannelTriple, a: Allocation, rates: RateAssignment, phi: float = 1.0) -> float:
    if a.mII < 1:
        raise DegenerateSchemeError("selection combining needs a phase-II frame (mII >= 1)")
    e12, _, e22 = _phase1_errors(ch, a, rates, phi)
    e22II = decoding_error(snr_p2(ch, a), rates.r22_II, a.mII)
    return float(error_sc_arr(e22, e12, e22II))


def error_user2_mrc(ch: ChannelTriple, a: Allocation, rates: RateAssignment, phi: float = 1.0) -> float:
    e12, _, e22 = _phase1_errors(ch, a, rates, phi)
    gc, mc = mrc_combined(ch, a, phi)
    e22C = decoding_error(gc, rates.r22_C, mc)
    return float(error_mrc_arr(e12, e22, e22C))


def throughput(mI, d_max, rate, eps):
    """Correctly decoded bits per channel use over the whole frame."""
    return mI / d_max * rate * (1.0 - eps)
