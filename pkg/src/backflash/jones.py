"""Jones calculus for fully polarized single-photon states.

States live on the horizontal/vertical basis. Transforms are 2x2 complex
matrices. Composition order is fixed once for the whole package: the first
optical element a photon traverses is the *rightmost* factor, so
``compose([m1, m2, m3])`` returns ``m3 @ m2 @ m1``.

Global phase carries no meaning anywhere in this package; compare states
with :func:`fidelity`, never amplitude by amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NORM_TOL = 1e-6


@dataclass(frozen=True)
class PolarizationState:
    """Jones vector ``(amp_h, amp_v)``."""

    amp_h: complex
    amp_v: complex

    @classmethod
    def from_vector(cls, vec) -> "PolarizationState":
        vec = np.asarray(vec, dtype=complex).reshape(2)
        return cls(complex(vec[0]), complex(vec[1]))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_h, self.amp_v], dtype=complex)

    @property
    def norm(self) -> float:
        return float(np.sqrt(abs(self.amp_h) ** 2 + abs(self.amp_v) ** 2))

    def normalized(self) -> "PolarizationState":
        n = self.norm
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        return PolarizationState(self.amp_h / n, self.amp_v / n)

    def inner(self, other: "PolarizationState") -> complex:
        """``<self|other>``."""
        return complex(np.vdot(self.vector, other.vector))


_S = 1 / np.sqrt(2)
H = PolarizationState(1 + 0j, 0j)
V = PolarizationState(0j, 1 + 0j)
D = PolarizationState(_S + 0j, _S + 0j)
A = PolarizationState(_S + 0j, -_S + 0j)


def fidelity(a: PolarizationState, b: PolarizationState) -> float:
    """|<a|b>|^2 for normalized states; 1 means equal up to global phase."""
    return abs(a.inner(b)) ** 2


@dataclass(frozen=True, eq=False)
class PolarizationTransform:
    """A 2x2 complex Jones matrix.

    ``t @ state`` applies the transform, ``t2 @ t1`` is "t1 then t2".
    """

    entries: np.ndarray = field(repr=True)

    def __post_init__(self):
        m = np.array(self.entries, dtype=complex)
        if m.shape != (2, 2):
            raise ValueError(f"Jones matrix must be 2x2, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def identity(cls) -> "PolarizationTransform":
        return cls(np.eye(2))

    @property
    def dagger(self) -> "PolarizationTransform":
        return PolarizationTransform(self.entries.conj().T)

    def unitarity_error(self) -> float:
        """max |(M M^dagger - I)_ij|."""
        return float(np.max(np.abs(self.entries @ self.entries.conj().T - np.eye(2))))

    def __matmul__(self, other):
        if isinstance(other, PolarizationTransform):
            return PolarizationTransform(self.entries @ other.entries)
        if isinstance(other, PolarizationState):
            return apply(self, other)
        return NotImplemented


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotated_retarder(theta: float, phi: float) -> PolarizationTransform:
    """Linear retarder of retardance ``phi`` with its axis rotated by ``theta``.

    R(theta) . diag(exp(i phi/2), exp(-i phi/2)) . R(-theta)
    """
    core = np.diag([np.exp(0.5j * phi), np.exp(-0.5j * phi)])
    return PolarizationTransform(rotation(theta) @ core @ rotation(-theta))


def rotated_retarder_batch(theta, phi) -> np.ndarray:
    """Broadcast version of :func:`rotated_retarder` returning ``(..., 2, 2)`` arrays.

    Closed form of the same product, used by the scans that evaluate
    thousands of paddle settings or wavelengths at once.
    """
    theta, phi = np.asarray(theta, float), np.asarray(phi, float)
    c2, s2 = np.cos(2 * theta), np.sin(2 * theta)
    ch, sh = np.cos(0.5 * phi), np.sin(0.5 * phi)
    out = np.empty(np.broadcast_shapes(theta.shape, phi.shape) + (2, 2), dtype=complex)
    # cos(phi/2) I + i sin(phi/2) [[cos 2t, sin 2t], [sin 2t, -cos 2t]]
    out[..., 0, 0].real = ch
    out[..., 0, 0].imag = sh * c2
    out[..., 1, 1].real = ch
    out[..., 1, 1].imag = -sh * c2
    out[..., 0, 1].real = 0.0
    out[..., 0, 1].imag = sh * s2
    out[..., 1, 0] = out[..., 0, 1]
    return out


def compose(transforms: Sequence[PolarizationTransform]) -> PolarizationTransform:
    """Cascade transforms in propagation order (first element hit first)."""
    if len(transforms) == 0:
        raise ValueError("compose() needs at least one transform")
    out = transforms[0].entries
    for t in transforms[1:]:
        out = t.entries @ out
    return PolarizationTransform(out)


def apply(t: PolarizationTransform, s: PolarizationState) -> PolarizationState:
    return PolarizationState.from_vector(t.entries @ s.vector)


def project_hv(s: PolarizationState) -> tuple[float, float]:
    """Projective measurement on the H/V basis, returning ``(p_h, p_v)``."""
    p_h = abs(s.amp_h) ** 2
    p_v = abs(s.amp_v) ** 2
    if abs(p_h + p_v - 1.0) > NORM_TOL:
        raise ValueError(f"state is not normalized (|s|^2 = {p_h + p_v:.9g})")
    return p_h, p_v
