"""Wavelength-dependent models of the optics on the backflash path.

Covers the 3-paddle fiber polarization controller, the polarizing beam
splitter, the single-photon detector efficiency and the backflash emission
spectrum. Wavelengths are in nanometres throughout; paddle geometry is in
metres.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .jones import (
    PolarizationState,
    PolarizationTransform,
    compose,
    project_hv,
    rotated_retarder,
    rotated_retarder_batch,
)

QUARTZ_CONSTANT = 0.133
DESIGN_WAVELENGTH_NM = 1550.0
CSV_HEADER = ("wavelength_nm", "value")


class CurveFormatError(ValueError):
    """Malformed spectral-curve data; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


# ---------------------------------------------------------------------------
# Polarization controller
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PaddleSpec:
    loops: float
    cladding_diameter: float = 125e-6
    paddle_diameter: float = 16.85e-3
    material_constant: float = QUARTZ_CONSTANT

    def __post_init__(self):
        if self.loops < 0:
            raise ValueError("loops must be >= 0")
        if self.cladding_diameter <= 0 or self.paddle_diameter <= 0:
            raise ValueError("diameters must be > 0")
        if self.material_constant <= 0:
            raise ValueError("material_constant must be > 0")


def retardance(p: PaddleSpec, wavelength):
    """Stress-induced retardance of one fiber paddle, in radians.

    phi = 2 pi^2 a N d^2 / (lambda D)

    Accepts a scalar or an array of wavelengths (nm).
    """
    lam = np.asarray(wavelength, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("wavelength must be > 0")
    phi = (
        2 * math.pi**2 * p.material_constant * p.loops * p.cladding_diameter**2
        / (lam * 1e-9 * p.paddle_diameter)
    )
    return float(phi) if phi.ndim == 0 else phi


def default_paddles() -> tuple[PaddleSpec, PaddleSpec, PaddleSpec]:
    """Quarter/half/quarter-wave paddles at 1550 nm (1, 2, 1 loops)."""
    return (PaddleSpec(1), PaddleSpec(2), PaddleSpec(1))


@dataclass(frozen=True)
class PaddleControllerConfig:
    """Three paddles and their rotation angles; angles are reduced to [0, pi)."""

    paddles: tuple[PaddleSpec, PaddleSpec, PaddleSpec] = field(default_factory=default_paddles)
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        paddles = tuple(self.paddles)
        angles = tuple(float(a) for a in self.angles)
        if len(paddles) != 3:
            raise ValueError(f"a controller has exactly three paddles, got {len(paddles)}")
        if len(angles) != 3:
            raise ValueError(f"a controller has exactly three angles, got {len(angles)}")
        object.__setattr__(self, "paddles", paddles)
        object.__setattr__(self, "angles", tuple(canonical_angle(a) for a in angles))

    def with_angles(self, angles: Sequence[float]) -> "PaddleControllerConfig":
        return PaddleControllerConfig(self.paddles, tuple(angles))


def canonical_angle(theta: float) -> float:
    a = math.fmod(theta, math.pi)
    if a < 0:
        a += math.pi
    # fmod of values just below a multiple of pi can round up to pi itself
    return 0.0 if a >= math.pi else a


def controller_transform(c: PaddleControllerConfig, wavelength: float) -> PolarizationTransform:
    """Jones matrix of the whole controller at one wavelength."""
    return compose(
        [rotated_retarder(theta, retardance(p, wavelength)) for p, theta in zip(c.paddles, c.angles)]
    )


def controller_matrices(c: PaddleControllerConfig, wavelengths) -> np.ndarray:
    """Stack of controller matrices, shape ``(len(wavelengths), 2, 2)``."""
    lam = np.atleast_1d(np.asarray(wavelengths, dtype=float))
    out = np.broadcast_to(np.eye(2, dtype=complex), lam.shape + (2, 2))
    for p, theta in zip(c.paddles, c.angles):
        out = rotated_retarder_batch(theta, retardance(p, lam)) @ out
    return out


def controller_propagate(c: PaddleControllerConfig, wavelengths, amplitudes) -> np.ndarray:
    """Push Jones vectors through the controller, one per wavelength.

    ``amplitudes`` broadcasts against ``(len(wavelengths), 2)``; the result
    has that shape. Cheaper than :func:`controller_matrices` when only a
    few input states matter.
    """
    lam = np.atleast_1d(np.asarray(wavelengths, dtype=float))
    v = np.broadcast_to(np.asarray(amplitudes, dtype=complex), lam.shape + (2,))
    h, w = v[..., 0], v[..., 1]
    for p, theta in zip(c.paddles, c.angles):
        # same closed form as rotated_retarder_batch, applied without building matrices
        half = 0.5 * retardance(p, lam)
        c2, s2 = math.cos(2 * theta), math.sin(2 * theta)
        ch, ish = np.cos(half), 1j * np.sin(half)
        h, w = ch * h + ish * (c2 * h + s2 * w), ch * w + ish * (s2 * h - c2 * w)
    return np.stack([h, w], axis=-1)


# ---------------------------------------------------------------------------
# Spectral curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralCurve:
    """Sampled wavelength -> value function.

    Linear interpolation between samples and zero outside the sampled range.
    Probability-valued curves (transmittance, efficiency) are additionally
    bounded by 1.
    """

    wavelengths: np.ndarray
    values: np.ndarray
    probability: bool = False

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float)
        val = np.array(self.values, dtype=float)
        if wl.ndim != 1 or wl.shape != val.shape:
            raise CurveFormatError("wavelengths and values must be 1-D arrays of equal length")
        if wl.size == 0:
            raise CurveFormatError("a curve needs at least one sample")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(val))):
            raise CurveFormatError("samples must be finite")
        bad = np.nonzero(np.diff(wl) <= 0)[0]
        if bad.size:
            i = int(bad[0]) + 1
            raise CurveFormatError(f"wavelengths must be strictly increasing (sample {i}: {wl[i]!r})")
        if np.any(val < 0):
            raise CurveFormatError("values must be >= 0")
        if self.probability and np.any(val > 1):
            raise CurveFormatError("probability-valued curve has values > 1")
        wl.setflags(write=False)
        val.setflags(write=False)
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_function(cls, func, start: float, stop: float, step: float = 1.0, probability=False):
        n = int(round((stop - start) / step)) + 1
        wl = start + step * np.arange(n)
        return cls(wl, np.asarray(func(wl), dtype=float), probability=probability)

    @classmethod
    def constant(cls, value: float, start: float = 1000.0, stop: float = 2200.0, probability=True):
        return cls(np.array([start, stop]), np.array([value, value]), probability=probability)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def __call__(self, wavelength):
        out = np.interp(wavelength, self.wavelengths, self.values, left=0.0, right=0.0)
        return float(out) if np.ndim(out) == 0 else out

    def scaled(self, c: float) -> "SpectralCurve":
        return SpectralCurve(self.wavelengths, c * self.values, probability=self.probability and c <= 1)

    def integral(self) -> float:
        return float(np.trapezoid(self.values, self.wavelengths)) if self.values.size > 1 else 0.0

    def normalized(self) -> "SpectralCurve":
        """Rescaled so the integral over wavelength equals 1."""
        total = self.integral()
        if total <= 0:
            raise ValueError("curve has zero area and cannot be normalized")
        return SpectralCurve(self.wavelengths, self.values / total, probability=False)

    def argmax(self) -> float:
        return float(self.wavelengths[int(np.argmax(self.values))])


def write_curve(curve: SpectralCurve, path) -> None:
    """Write ``wavelength_nm,value`` CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for lam, val in zip(curve.wavelengths, curve.values):
            w.writerow((repr(float(lam)), repr(float(val))))


def read_curve(path, probability: bool = False) -> SpectralCurve:
    """Parse a ``wavelength_nm,value`` CSV file.

    Raises CurveFormatError (with the 1-based line number) on a bad header,
    malformed numbers, negative values, duplicates or non-increasing rows.
    """
    path = Path(path)
    wl: list[float] = []
    val: list[float] = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise CurveFormatError(f"expected header {','.join(CSV_HEADER)!r}", line=1, path=path)
        for lineno, row in enumerate(rows, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise CurveFormatError(f"expected 2 columns, got {len(row)}", line=lineno, path=path)
            try:
                lam, v = float(row[0]), float(row[1])
            except ValueError:
                raise CurveFormatError(f"not a number: {','.join(row)!r}", line=lineno, path=path) from None
            if not (math.isfinite(lam) and math.isfinite(v)):
                raise CurveFormatError("non-finite sample", line=lineno, path=path)
            if wl and lam == wl[-1]:
                raise CurveFormatError(f"duplicate wavelength {lam!r}", line=lineno, path=path)
            if wl and lam < wl[-1]:
                raise CurveFormatError(
                    f"wavelength {lam!r} is not increasing (previous {wl[-1]!r})", line=lineno, path=path
                )
            if v < 0:
                raise CurveFormatError(f"negative value {v!r}", line=lineno, path=path)
            if probability and v > 1:
                raise CurveFormatError(f"value {v!r} exceeds 1 for a probability curve", line=lineno, path=path)
            wl.append(lam)
            val.append(v)
    if not wl:
        raise CurveFormatError("no samples", path=path)
    return SpectralCurve(np.array(wl), np.array(val), probability=probability)


# ---------------------------------------------------------------------------
# Beam splitter, detector, backflash spectrum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PBSCurves:
    """Transmittance of an H-polarized photon into the slow and fast ports."""

    t_slow: SpectralCurve
    t_fast: SpectralCurve


def pbs_split(
    s: PolarizationState, wavelength: float, t_slow: SpectralCurve, t_fast: SpectralCurve
) -> tuple[float, float]:
    """Port probabilities ``(slow, fast)``; crosstalk mixes incoherently."""
    p_h, p_v = project_hv(s)
    ts, tf = t_slow(wavelength), t_fast(wavelength)
    return p_h * ts + p_v * tf, p_h * tf + p_v * ts


def detector_efficiency(curve: SpectralCurve, wavelength):
    return curve(wavelength)


def default_pbs_curves(k_slow: float = 0.10, k_fast: float = 0.06) -> PBSCurves:
    # Quadratic departure from the 1550 nm design point, sampled every nm over
    # the band the backflash spectrum can reach. The fast port is leak-free
    # at 1550 nm so the calibration ratio is the whole chain's extinction there.
    def x2(lam):
        return ((lam - DESIGN_WAVELENGTH_NM) / 450.0) ** 2

    def slow(lam):
        return np.clip(0.97 - k_slow * x2(lam), 0.0, 1.0)

    def fast(lam):
        return np.clip(k_fast * x2(lam), 0.0, 1.0)

    return PBSCurves(
        SpectralCurve.from_function(slow, 1100.0, 2000.0, probability=True),
        SpectralCurve.from_function(fast, 1100.0, 2000.0, probability=True),
    )


def default_detector_curve() -> SpectralCurve:
    """InGaAs-like SPAD: 25 % plateau on 1200-1600 nm, linear roll-off to 0 at 1800 nm."""
    return SpectralCurve(np.array([1200.0, 1600.0, 1800.0]), np.array([0.25, 0.25, 0.0]), probability=True)


def default_backflash_spectrum(
    peak: float = 1600.0, sigma_left: float = 80.0, sigma_right: float = 150.0,
    start: float = 1400.0, stop: float = 2000.0,
) -> SpectralCurve:
    """Asymmetric Gaussian emission spectrum truncated to ``[start, stop]`` nm.

    Unnormalized (peak value 1); call :meth:`SpectralCurve.normalized` for a
    unit-area density.
    """

    def shape(lam):
        sigma = np.where(lam < peak, sigma_left, sigma_right)
        return np.exp(-0.5 * ((lam - peak) / sigma) ** 2)

    return SpectralCurve.from_function(shape, start, stop)


def monochromatic_spectrum(wavelength: float, width: float = 1.0) -> SpectralCurve:
    """Triangle of half-width ``width`` nm; on a 1 nm grid only the centre sample is non-zero."""
    return SpectralCurve(
        np.array([wavelength - width, wavelength, wavelength + width]), np.array([0.0, 1.0, 0.0])
    )
