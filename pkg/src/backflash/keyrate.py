"""Asymptotic decoy-state BB84 key rate, with and without backflash leakage.

Two-decoy (vacuum + weak) bounds on the single-photon yield and error rate,
the GLLP-type rate, the backflash leak probability and the attacked rate in
which the leaked fraction is treated like the multi-photon fraction.

Rates are per emitted signal pulse. Every public rate is clamped to >= 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Iterable, Mapping

import numpy as np

from .attack import CountRecord, REFERENCE_N_BOB, decode_fraction, reference_records

# default link and detector parameters
ALPHA_DB_PER_KM = 0.2
P_DARK = 1e-5
E_MIS = 0.01
ETA_DET = 0.125
F_EC = 1.12
Q_SIFT = 0.5

ER_MEAN = 23.4


def _check_prob(name, x):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")


@dataclass(frozen=True)
class ChannelParams:
    """Fiber link and detection parameters.

    ``y0`` defaults to ``p_dark`` (the per-gate dark-count probability is
    taken as the whole background yield) and ``e0`` to 1/2.
    """

    alpha: float = ALPHA_DB_PER_KM
    distance: float = 0.0
    eta_det: float = ETA_DET
    p_dark: float = P_DARK
    e_mis: float = E_MIS
    f_ec: float = F_EC
    q_sift: float = Q_SIFT
    e0: float = 0.5
    y0: float | None = None

    def __post_init__(self):
        if self.y0 is None:
            object.__setattr__(self, "y0", self.p_dark)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.distance < 0:
            raise ValueError("distance must be >= 0")
        if self.f_ec < 1:
            raise ValueError("f_ec must be >= 1")
        for name in ("eta_det", "p_dark", "e_mis", "q_sift", "e0", "y0"):
            _check_prob(name, getattr(self, name))

    @property
    def transmittance(self) -> float:
        """Overall eta: detector efficiency times fiber transmission."""
        return self.eta_det * 10 ** (-self.alpha * self.distance / 10)

    def at(self, distance: float) -> "ChannelParams":
        return replace(self, distance=distance)


@dataclass(frozen=True)
class Intensities:
    mu: float
    nu1: float
    nu2: float = 0.0

    def __post_init__(self):
        if not (self.mu > self.nu1 > self.nu2 >= 0):
            raise ValueError(f"need mu > nu1 > nu2 >= 0, got {self}")
        if not self.nu1 + self.nu2 < self.mu:
            raise ValueError(f"need nu1 + nu2 < mu, got {self}")


@dataclass(frozen=True)
class GainStats:
    q_mu: float
    q_nu1: float
    q_nu2: float
    e_mu: float
    e_nu1: float
    e_nu2: float


@dataclass(frozen=True)
class LeakParams:
    """Inputs of the backflash leak estimate.

    n_backflash is N_B (Eve's counted backflash photons) for n_clicks Bob
    clicks, eta_det_eve and eta_ch_eve fold Eve's detector and tap back to
    the emission probability.
    """

    n_backflash: float
    n_clicks: float = REFERENCE_N_BOB
    eta_det_eve: float = ETA_DET
    eta_ch_eve: float = 1.0
    er_mean: float = ER_MEAN

    def __post_init__(self):
        if self.n_backflash < 0 or self.n_clicks < 0:
            raise ValueError("counts must be >= 0")
        for name in ("eta_det_eve", "eta_ch_eve"):
            x = getattr(self, name)
            if not 0.0 < x <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {x}")
        if self.er_mean < 0:
            raise ValueError("er_mean must be >= 0")


# ---------------------------------------------------------------------------
# Elementary pieces
# ---------------------------------------------------------------------------


def binary_entropy(x):
    """H2(x) in bits, with H2(0) = H2(1) = 0. Scalar in, float out."""
    arr = np.asarray(x, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise ValueError(f"binary entropy needs x in [0, 1], got {x}")
    out = _h2(arr)
    return float(out) if out.ndim == 0 else out


def _h2(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inner = (x > 0) & (x < 1)
    xs = np.where(inner, x, 0.5)
    return np.where(inner, -xs * np.log2(xs) - (1 - xs) * np.log2(1 - xs), 0.0)


def channel_model(p: ChannelParams, intensity):
    """Gain and QBER of a Poissonian source of mean photon number ``intensity``.

    gain = Y0 + 1 - exp(-eta mu),  qber * gain = e0 Y0 + e_d (1 - exp(-eta mu))
    """
    mu = np.asarray(intensity, dtype=float)
    if np.any(mu < 0):
        raise ValueError("intensity must be >= 0")
    click = -np.expm1(-p.transmittance * mu)
    gain = np.clip(p.y0 + click, 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        qber = np.where(gain > 0, (p.e0 * p.y0 + p.e_mis * click) / np.where(gain > 0, gain, 1.0), 0.0)
    qber = np.clip(qber, 0.0, 1.0)
    if gain.ndim == 0:
        return float(gain), float(qber)
    return gain, qber


def gain_stats(p: ChannelParams, i: Intensities) -> GainStats:
    (qm, em), (q1, e1), (q2, e2) = (channel_model(p, x) for x in (i.mu, i.nu1, i.nu2))
    return GainStats(qm, q1, q2, em, e1, e2)


def _y1_lower(q_mu, q_nu1, q_nu2, mu, nu1, nu2, y0):
    # mu nu1 - mu nu2 - nu1^2 + nu2^2 factored as (nu1 - nu2)(mu - nu1 - nu2)
    pref = mu / ((nu1 - nu2) * (mu - nu1 - nu2))
    bracket = (
        q_nu1 * np.exp(nu1)
        - q_nu2 * np.exp(nu2)
        - (nu1**2 - nu2**2) / mu**2 * (q_mu * np.exp(mu) - y0)
    )
    return np.clip(pref * bracket, 0.0, 1.0)


def _e1_upper(q_nu1, q_nu2, e_nu1, e_nu2, nu1, nu2, y1):
    num = e_nu1 * q_nu1 * np.exp(nu1) - e_nu2 * q_nu2 * np.exp(nu2)
    with np.errstate(divide="ignore", invalid="ignore"):
        e1 = np.where(y1 > 0, num / ((nu1 - nu2) * np.where(y1 > 0, y1, 1.0)), np.inf)
    return np.where(np.isfinite(e1), np.clip(e1, 0.0, 0.5), np.inf)


def y1_lower(g: GainStats, i: Intensities, y0: float) -> float:
    """Lower bound on the single-photon yield from two decoys.

    Y1 >= mu / (mu nu1 - mu nu2 - nu1^2 + nu2^2)
          * [Q_nu1 e^nu1 - Q_nu2 e^nu2 - (nu1^2 - nu2^2)/mu^2 (Q_mu e^mu - Y0)]

    clamped to [0, 1].
    """
    if not (i.mu > i.nu1 > i.nu2 >= 0 and i.nu1 + i.nu2 < i.mu):
        raise ValueError("intensities violate mu > nu1 > nu2 >= 0, nu1 + nu2 < mu")
    return float(_y1_lower(g.q_mu, g.q_nu1, g.q_nu2, i.mu, i.nu1, i.nu2, y0))


def e1_upper(g: GainStats, i: Intensities, y1: float) -> float:
    """Upper bound on the single-photon error rate, clamped to [0, 1/2].

    Returns ``inf`` when ``y1 == 0`` (no bound available).
    """
    if not i.nu1 > i.nu2:
        raise ValueError("need nu1 > nu2")
    if y1 < 0:
        raise ValueError("y1 must be >= 0")
    return float(_e1_upper(g.q_nu1, g.q_nu2, g.e_nu1, g.e_nu2, i.nu1, i.nu2, y1))


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def _decoy_terms(p: ChannelParams, mu, nu1, nu2):
    q_mu, e_mu = channel_model(p, mu)
    q_n1, e_n1 = channel_model(p, nu1)
    q_n2, e_n2 = channel_model(p, nu2)
    y1 = _y1_lower(q_mu, q_n1, q_n2, mu, nu1, nu2, p.y0)
    e1 = _e1_upper(q_n1, q_n2, e_n1, e_n2, nu1, nu2, y1)
    q1 = y1 * mu * np.exp(-mu)
    return np.asarray(q_mu), np.asarray(e_mu), q1, e1


def _rate_clean(p: ChannelParams, q_mu, e_mu, q1, e1):
    secure = np.where(np.isfinite(e1), q1 * (1 - _h2(np.where(np.isfinite(e1), e1, 0.5))), 0.0)
    return np.maximum(0.0, p.q_sift * (secure - q_mu * p.f_ec * _h2(e_mu)))


def _rate_attack(p: ChannelParams, q_mu, e_mu, q1, p_l):
    with np.errstate(divide="ignore", invalid="ignore"):
        one_minus = np.where(q_mu > 0, q1 / np.where(q_mu > 0, q_mu, 1.0), 0.0) - p_l
        ratio = np.where(one_minus > 0, e_mu / np.where(one_minus > 0, one_minus, 1.0), np.inf)
    ok = (one_minus > 0) & (ratio <= 0.5)
    bracket = one_minus - p.f_ec * _h2(e_mu) - one_minus * _h2(np.where(ok, ratio, 0.5))
    return np.where(ok, np.maximum(0.0, p.q_sift * q_mu * bracket), 0.0)


def rate_arrays(p: ChannelParams, mu, nu1, nu2, p_l: float | None = None) -> np.ndarray:
    """Vectorized rate over intensity arrays; ``p_l=None`` means no attack.

    Callers are responsible for the intensity constraints.
    """
    q_mu, e_mu, q1, e1 = _decoy_terms(p, np.asarray(mu, float), np.asarray(nu1, float), np.asarray(nu2, float))
    if p_l is None:
        return _rate_clean(p, q_mu, e_mu, q1, e1)
    return _rate_attack(p, q_mu, e_mu, q1, p_l)


def keyrate_no_attack(p: ChannelParams, i: Intensities) -> float:
    """R = q { -Q_mu f H2(E_mu) + Q1 [1 - H2(e1)] } with decoy-estimated Q1, e1."""
    return float(rate_arrays(p, i.mu, i.nu1, i.nu2))


def keyrate_attack(p: ChannelParams, i: Intensities, p_l: float) -> float:
    """GLLP rate with the insecure fraction Delta' = Delta + P_L.

    R' = q Q_mu [(1 - D') - f H2(E_mu) - (1 - D') H2(E_mu / (1 - D'))],
    Delta = 1 - Q1/Q_mu. Zero once 1 - D' <= 0 or E_mu/(1 - D') > 1/2.
    """
    if not 0.0 <= p_l < 1.0:
        raise ValueError("p_l must lie in [0, 1)")
    return float(rate_arrays(p, i.mu, i.nu1, i.nu2, p_l))


def delta_multiphoton(p: ChannelParams, i: Intensities) -> float:
    """Delta = 1 - Q1/Q_mu with the decoy lower bound for Q1."""
    q_mu, _, q1, _ = _decoy_terms(p, i.mu, i.nu1, i.nu2)
    return float(1 - q1 / q_mu)


# ---------------------------------------------------------------------------
# Backflash leakage
# ---------------------------------------------------------------------------


def p_backflash(lp: LeakParams) -> float:
    """P_B = N_B / (N eta_det eta_ch)."""
    denom = lp.n_clicks * lp.eta_det_eve * lp.eta_ch_eve
    if denom <= 0:
        raise ValueError("n_clicks * eta_det_eve * eta_ch_eve must be > 0")
    pb = lp.n_backflash / denom
    if pb > 1:
        raise ValueError(f"inconsistent leak inputs: P_B = {pb:.4g} > 1")
    return pb


def p_leak(lp: LeakParams) -> float:
    """P_L = (1 - 1/(ER + 1)) P_B."""
    return decode_fraction(lp.er_mean) * p_backflash(lp)


def backflash_count(records: Mapping[str, CountRecord], state: str = "mean", counting: str = "both") -> float:
    """N_B from Eve's count table.

    ``counting``: "both" uses C_E + C_E_perp, "matching" only C_E.
    ``state``: a key of ``records`` for one column, or "mean" to average all.
    """
    if counting not in ("both", "matching"):
        raise ValueError(f"counting must be 'both' or 'matching', got {counting!r}")

    def n(rec: CountRecord) -> int:
        return rec.c_e + rec.c_e_perp if counting == "both" else rec.c_e

    if state == "mean":
        return float(np.mean([n(r) for r in records.values()]))
    if state not in records:
        raise ValueError(f"unknown state {state!r}; expected 'mean' or one of {sorted(records)}")
    return float(n(records[state]))


def leak_from_table(
    state: str = "mean", counting: str = "both", eta_det_eve: float = ETA_DET,
    eta_ch_eve: float = 1.0, er_mean: float = ER_MEAN,
) -> LeakParams:
    recs = reference_records()
    return LeakParams(backflash_count(recs, state, counting), REFERENCE_N_BOB, eta_det_eve, eta_ch_eve, er_mean)


# ---------------------------------------------------------------------------
# Intensity optimization and distance search
# ---------------------------------------------------------------------------

_UNIT = 0.005          # lattice spacing of every candidate intensity
_MU_RANGE = (10, 200)  # 0.05 .. 1.0
_NU1_MIN = 2           # 0.01


def _lattice(mu_idx, nu1_idx, nu2_idx):
    m, a, b = (x.ravel() for x in np.meshgrid(mu_idx, nu1_idx, nu2_idx, indexing="ij"))
    keep = (
        (m >= _MU_RANGE[0]) & (m <= _MU_RANGE[1]) & (a >= _NU1_MIN) & (b >= 0)
        & (a < m) & (b < a) & (a + b < m)
    )
    return m[keep], a[keep], b[keep]


def _best(p, p_l, m, a, b):
    r = rate_arrays(p, m * _UNIT, a * _UNIT, b * _UNIT, p_l)
    k = int(np.argmax(r))
    return float(r[k]), (int(m[k]), int(a[k]), int(b[k]))


def coarse_grid() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coarse candidates: mu step 0.05, nu1 step 0.02 from 0.01, nu2 step 0.01."""
    m, a, b = _lattice(np.arange(10, 201, 10), np.arange(2, 200, 4), np.arange(0, 200, 2))
    return m * _UNIT, a * _UNIT, b * _UNIT


def optimize_intensities(p: ChannelParams, p_l: float | None = None) -> tuple[Intensities, float]:
    """Grid search for the rate-maximizing (mu, nu1, nu2).

    A coarse grid followed by two refinement passes (0.01 then 0.005) around
    the incumbent. ``p_l=None`` optimizes the no-attack rate, a float the
    attacked one. Deterministic: ties go to the first candidate in
    (mu, nu1, nu2) lexicographic order.
    """
    m, a, b = _lattice(np.arange(10, 201, 10), np.arange(2, 200, 4), np.arange(0, 200, 2))
    rate, (bm, ba, bb) = _best(p, p_l, m, a, b)
    for half_width, step in ((10, 2), (2, 1)):
        cand = _lattice(
            np.arange(bm - half_width, bm + half_width + 1, step),
            np.arange(ba - half_width, ba + half_width + 1, step),
            np.arange(bb - half_width, bb + half_width + 1, step),
        )
        r, idx = _best(p, p_l, *cand)
        if r > rate:
            rate, (bm, ba, bb) = r, idx
    return Intensities(bm * _UNIT, ba * _UNIT, bb * _UNIT), rate


def optimized_rate(p: ChannelParams, distance: float, p_l: float | None = None) -> float:
    return optimize_intensities(p.at(distance), p_l)[1]


def max_distance(
    p: ChannelParams, p_l: float | None = None, l_max: float = 300.0, resolution: float = 0.5
) -> float:
    """Largest distance (km) at which the optimized rate is still positive.

    1 km sweep from 0 to ``l_max``, then bisection of the last bracket down
    to ``resolution``. Returns 0 if no distance yields key, ``l_max`` if the
    rate never vanishes.
    """
    distances = np.arange(0.0, l_max + 0.5, 1.0)
    positive = np.array([optimized_rate(p, float(d), p_l) > 0 for d in distances])
    if not positive.any():
        return 0.0
    k = int(np.nonzero(positive)[0][-1])
    if k == len(distances) - 1:
        return float(distances[k])
    return refine_cutoff(p, p_l, float(distances[k]), float(distances[k + 1]), resolution)


def refine_cutoff(p: ChannelParams, p_l: float | None, lo: float, hi: float, resolution: float = 0.5) -> float:
    """Bisect ``[lo, hi]`` (positive rate at lo, none at hi) down to ``resolution``."""
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if optimized_rate(p, mid, p_l) > 0:
            lo = mid
        else:
            hi = mid
    return lo


def rate_sweep(p: ChannelParams, distances: Iterable[float], p_l: float | None) -> tuple[np.ndarray, np.ndarray]:
    """Per-distance optimized rates ``(no_attack, attack)``; attack is None-safe."""
    distances = list(distances)
    clean = np.array([optimized_rate(p, d) for d in distances])
    attacked = clean.copy() if p_l is None else np.array([optimized_rate(p, d, p_l) for d in distances])
    return clean, attacked


def cutoff_from_sweep(distances, rates) -> float:
    """Last swept distance with a positive rate (0 if none)."""
    pos = np.nonzero(np.asarray(rates) > 0)[0]
    return float(np.asarray(distances)[pos[-1]]) if pos.size else 0.0


def write_rate_csv(distances, clean, attacked, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("distance_km", "rate_no_attack", "rate_attack"))
        for d, r0, r1 in zip(distances, clean, attacked):
            w.writerow((repr(float(d)), repr(float(r0)), repr(float(r1))))
