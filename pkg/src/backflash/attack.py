"""Eve's side of the backflash attack.

Calibration of Eve's polarization controller, the spectrum-weighted
extinction ratio she achieves on backflash photons, and count statistics in
the shape of a Bob-clicks / Eve-clicks table.

Backflash photons leave Bob's detector in |H> (slow axis of his PBS, unit
transmittance), run backwards through Bob's controller, then through Eve's
controller and PBS into her detectors. The SPAD on Eve's slow port decodes
"same state as Bob" (N_H), the other one the orthogonal state (N_V).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .components import (
    PaddleControllerConfig,
    PaddleSpec,
    PBSCurves,
    SpectralCurve,
    controller_matrices,
    controller_propagate,
    default_paddles,
    retardance,
)
from .jones import rotated_retarder_batch

CALIBRATION_TARGET = 1000.0
CALIBRATION_FLOOR = 100.0
DEFAULT_STEPS = 50
TIE_TOL = 1e-9

# Eve's counts after 5e6 clicks of Bob's detector, one column per Alice state:
# state -> (C_E, C_E_perp)
REFERENCE_COUNTS = {
    "H": (22526, 796),
    "V": (18534, 1287),
    "A": (18336, 741),
    "D": (18854, 723),
}
REFERENCE_N_BOB = 5_000_000


@dataclass(frozen=True)
class CalibrationResult:
    eve_angles: tuple[float, float, float]
    achieved_ratio: float
    scan_steps: int
    p_h: float = math.nan
    p_v: float = math.nan


@dataclass(frozen=True)
class ERResult:
    wavelengths: np.ndarray
    n_h: np.ndarray
    n_v: np.ndarray
    total_er: float
    decode_fraction: float

    @property
    def per_wavelength(self) -> list[tuple[float, float, float]]:
        return list(zip(self.wavelengths.tolist(), self.n_h.tolist(), self.n_v.tolist()))


@dataclass(frozen=True)
class CountRecord:
    c_e: int
    c_e_perp: int
    n_bob: int

    def __post_init__(self):
        if min(self.c_e, self.c_e_perp, self.n_bob) < 0:
            raise ValueError("counts must be >= 0")
        if self.c_e + self.c_e_perp > self.n_bob:
            raise ValueError("Eve cannot click more often than Bob")


def angle_grid(steps: int) -> np.ndarray:
    """Paddle angles k*pi/steps, k = 0..steps-1 (retarders are pi-periodic)."""
    return np.arange(steps) * (math.pi / steps)


def _paddle_stack(paddle: PaddleSpec, grid: np.ndarray, wavelength: float) -> np.ndarray:
    return rotated_retarder_batch(grid, retardance(paddle, wavelength))


def scan_probabilities(
    bob: PaddleControllerConfig,
    eve_paddles: Sequence[PaddleSpec],
    wavelength: float,
    steps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """P_H and P_V for every Eve angle triple on the grid, shape ``(steps,)*3``.

    Index ``[i, j, k]`` holds paddles 1, 2, 3 at ``angle_grid(steps)[i, j, k]``.
    """
    grid = angle_grid(steps)
    v0 = controller_matrices(bob, [wavelength])[0] @ np.array([1.0, 0.0], dtype=complex)
    u1, u2, u3 = (_paddle_stack(p, grid, wavelength) for p in eve_paddles)
    v1 = u1 @ v0                                   # (i, 2)
    v2 = np.einsum("jab,ib->ija", u2, v1)          # (i, j, 2)
    v3 = np.einsum("kab,ijb->ijka", u3, v2)        # (i, j, k, 2)
    p = np.abs(v3) ** 2
    return p[..., 0], p[..., 1]


def _ratio(p_h, p_v):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p_v > 0, p_h / np.where(p_v > 0, p_v, 1.0), np.inf)


def select_calibration_index(
    ratio: np.ndarray, target: float = CALIBRATION_TARGET, floor: float = CALIBRATION_FLOOR
) -> tuple[int, ...]:
    """Grid point whose ratio is closest to ``target`` in log scale.

    Only points with ratio >= ``floor`` compete; if none do, or only
    infinite ratios do, the global maximum wins. Scores within ``TIE_TOL``
    of the best count as ties and the first index in C order wins, so
    symmetric settings are not chosen by rounding noise.
    """
    qualified = ratio >= floor
    if qualified.any():
        with np.errstate(divide="ignore"):
            dist = np.where(qualified, np.abs(np.log(ratio) - math.log(target)), np.inf)
        if np.isfinite(dist).any():
            return _first(dist <= dist.min() + TIE_TOL)
    if np.isinf(ratio).any():
        return _first(np.isinf(ratio))
    return _first(ratio >= np.max(ratio) * (1 - TIE_TOL))


def _first(mask: np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(mask)), mask.shape))


def calibrate(
    bob: PaddleControllerConfig,
    eve_paddles: Sequence[PaddleSpec] | None = None,
    wavelength: float = 1550.0,
    steps: int = DEFAULT_STEPS,
    target: float = CALIBRATION_TARGET,
) -> CalibrationResult:
    """Exhaustive steps^3 scan of Eve's controller with |H> launched backwards.

    Picks the setting whose P_H/P_V is nearest ``target`` (see
    :func:`select_calibration_index`).
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if wavelength <= 0:
        raise ValueError("wavelength must be > 0")
    eve_paddles = tuple(eve_paddles) if eve_paddles is not None else default_paddles()
    p_h, p_v = scan_probabilities(bob, eve_paddles, wavelength, steps)
    ratio = _ratio(p_h, p_v)
    idx = select_calibration_index(ratio, target)
    grid = angle_grid(steps)
    return CalibrationResult(
        eve_angles=tuple(float(grid[i]) for i in idx),
        achieved_ratio=float(ratio[idx]),
        scan_steps=steps,
        p_h=float(p_h[idx]),
        p_v=float(p_v[idx]),
    )


def default_bob_angles(
    paddles: Sequence[PaddleSpec] | None = None, wavelength: float = 1550.0, steps: int = DEFAULT_STEPS
) -> tuple[float, float, float]:
    """Grid point maximizing P_H for |H> through Bob's controller alone.

    Points within ``1e-12`` of the maximum count as ties; the first in C
    order wins, so rounding noise cannot pick the answer.
    """
    paddles = tuple(paddles) if paddles is not None else default_paddles()
    identity = PaddleControllerConfig(paddles=(PaddleSpec(0), PaddleSpec(0), PaddleSpec(0)))
    p_h, _ = scan_probabilities(identity, paddles, wavelength, steps)
    flat = p_h.ravel()
    first = int(np.nonzero(flat >= flat.max() - 1e-12)[0][0])
    idx = np.unravel_index(first, p_h.shape)
    grid = angle_grid(steps)
    return tuple(float(grid[i]) for i in idx)


def wavelength_grid(spectrum: SpectralCurve, step: float) -> np.ndarray:
    lo, hi = spectrum.support
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def simulate_er(
    bob: PaddleControllerConfig,
    eve: PaddleControllerConfig,
    spectrum: SpectralCurve,
    pbs: PBSCurves,
    detector_curve: SpectralCurve,
    grid_step: float = 1.0,
) -> ERResult:
    """Eve's extinction ratio on broadband backflash light.

    Every grid wavelength contributes both PBS port probabilities weighted by
    S(lambda) * eta(lambda) * grid_step. ``total_er`` is ``inf`` when nothing
    reaches the orthogonal detector.
    """
    if grid_step <= 0:
        raise ValueError("grid_step must be > 0")
    lam = wavelength_grid(spectrum, grid_step)
    out = controller_propagate(eve, lam, controller_propagate(bob, lam, (1.0, 0.0)))
    p_h = np.abs(out[:, 0]) ** 2
    p_v = np.abs(out[:, 1]) ** 2
    ts, tf = pbs.t_slow(lam), pbs.t_fast(lam)
    weight = spectrum(lam) * detector_curve(lam) * grid_step
    n_h = weight * (p_h * ts + p_v * tf)
    n_v = weight * (p_h * tf + p_v * ts)
    sum_h, sum_v = float(np.sum(n_h)), float(np.sum(n_v))
    total = sum_h / sum_v if sum_v > 0 else math.inf
    return ERResult(lam, n_h, n_v, total, decode_fraction(total))


def write_er_csv(result: ERResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("wavelength_nm", "n_h", "n_v"))
        for lam, nh, nv in result.per_wavelength:
            w.writerow((repr(lam), repr(nh), repr(nv)))


def decode_fraction(er: float) -> float:
    """Share of backflash photons Eve decodes correctly: ER / (ER + 1)."""
    if er < 0 or math.isnan(er):
        raise ValueError(f"extinction ratio must be >= 0, got {er}")
    if math.isinf(er):
        return 1.0
    return er / (er + 1.0)


def estimate_er(counts: CountRecord) -> float:
    """C_E / C_E_perp, or ``inf`` if the orthogonal detector never clicked."""
    if counts.c_e_perp == 0:
        return math.inf
    return counts.c_e / counts.c_e_perp


def monte_carlo_counts(n_bob: int, p_backflash_detect: float, er: float, seed) -> CountRecord:
    """Synthetic Eve counts for ``n_bob`` clicks at Bob.

    Each Bob click gives an Eve click with probability ``p_backflash_detect``;
    each Eve click lands on the matching detector with probability
    ER / (ER + 1). Both stages are sampled as binomials from one generator.
    """
    if not 0.0 <= p_backflash_detect <= 1.0:
        raise ValueError("p_backflash_detect must lie in [0, 1]")
    if not er > 0:
        raise ValueError("er must be > 0")
    if n_bob < 0:
        raise ValueError("n_bob must be >= 0")
    rng = np.random.default_rng(seed)
    n_eve = int(rng.binomial(n_bob, p_backflash_detect))
    c_e = int(rng.binomial(n_eve, decode_fraction(er)))
    return CountRecord(c_e, n_eve - c_e, n_bob)


def reference_records() -> dict[str, CountRecord]:
    return {s: CountRecord(ce, cp, REFERENCE_N_BOB) for s, (ce, cp) in REFERENCE_COUNTS.items()}
