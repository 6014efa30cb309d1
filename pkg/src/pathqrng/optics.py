"""Transfer matrices of the integrated optical components.

Amplitude convention: an MMI splitter with power transmission T and power
reflection R acts on the two incoming modes as [[t, i r], [i r, t]] with
t = sqrt(T), r = sqrt(R).  Insertion loss is allowed (t^2 + r^2 <= 1).
A thermo-optic phase shifter pair contributes diag(e^{2i z1}, e^{2i z2});
the factor 2 in the exponent follows the device's double-pass geometry, so
an MZI built as MMI . PS . MMI rotates by zeta = z1 - z2 while z1 + z2 only
moves the global phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .qmath import ID4

#: nominal design wavelength of the chip, nm
DESIGN_WAVELENGTH_NM = 730.0

#: validation guard on phase-error magnitudes, radians; generous compared
#: to anything a calibrated heater actually exhibits
EPS_MAX = 0.25


@dataclass(frozen=True)
class MmiParams:
    """Amplitude coefficients of a 2x2 MMI splitter.

    ``table`` optionally holds wavelength-resolved coefficients as rows of
    (wavelength_nm, t, r); lookups interpolate linearly between nodes and
    refuse to extrapolate.  Without a table the coefficients are flat in
    wavelength.
    """

    t: float
    r: float
    table: tuple[tuple[float, float, float], ...] | None = None

    def __post_init__(self) -> None:
        for tt, rr in [(self.t, self.r)] + [(row[1], row[2]) for row in (self.table or ())]:
            if not (0.0 <= tt <= 1.0 and 0.0 <= rr <= 1.0):
                raise ValueError(f"amplitudes must lie in [0, 1], got t={tt!r} r={rr!r}")
            if tt * tt + rr * rr > 1.0 + 1e-12:
                raise ValueError(f"t^2 + r^2 = {tt * tt + rr * rr!r} exceeds 1")
        if self.table is not None:
            wl = [row[0] for row in self.table]
            if len(wl) < 2 or sorted(wl) != wl or len(set(wl)) != len(wl):
                raise ValueError("wavelength table needs >= 2 strictly increasing nodes")

    @classmethod
    def from_power(cls, t_power: float, r_power: float,
                   table: tuple[tuple[float, float, float], ...] | None = None) -> "MmiParams":
        """Build from power coefficients (the units a lab reports)."""
        if t_power < 0.0 or r_power < 0.0:
            raise ValueError("power coefficients must be non-negative")
        return cls(math.sqrt(t_power), math.sqrt(r_power), table)

    def resolve(self, wavelength_nm: float | None = None) -> tuple[float, float]:
        """Coefficients at a wavelength; the flat values when no table is set."""
        if self.table is None:
            return self.t, self.r
        if wavelength_nm is None:
            raise ValueError("this MMI is wavelength-tabulated; a wavelength is required")
        wl = np.array([row[0] for row in self.table])
        if not (wl[0] <= wavelength_nm <= wl[-1]):
            raise ValueError(
                f"wavelength {wavelength_nm} nm outside table range [{wl[0]}, {wl[-1]}]")
        ts = np.array([row[1] for row in self.table])
        rs = np.array([row[2] for row in self.table])
        return float(np.interp(wavelength_nm, wl, ts)), float(np.interp(wavelength_nm, wl, rs))


#: ideal lossless 50:50 splitter
IDEAL_MMI = MmiParams(2.0 ** -0.5, 2.0 ** -0.5)


@dataclass(frozen=True)
class PhaseSetting:
    """Nominal phases of one shifter pair plus their independent errors."""

    zeta1: float
    zeta2: float
    delta1: float = 0.0
    delta2: float = 0.0

    def __post_init__(self) -> None:
        for name in ("zeta1", "zeta2", "delta1", "delta2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for d in (self.delta1, self.delta2):
            if abs(d) > EPS_MAX:
                raise ValueError(f"phase error {d!r} exceeds the {EPS_MAX} rad guard")


@dataclass(frozen=True)
class LossModel:
    """Channel-symmetric amplitude loss.

    ``gamma`` collects propagation and insertion losses into one scalar;
    ``crossing_transmission`` is the power transmission of a waveguide
    crossing, folded in as an amplitude factor.  Because the loss operator
    is proportional to the identity, it cancels in every normalized
    detection probability; it is kept explicit so the cancellation is a
    tested property instead of an assumption.
    """

    gamma: float = 1.0
    crossing_transmission: float = 0.98

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma!r}")
        if not 0.0 < self.crossing_transmission <= 1.0:
            raise ValueError("crossing_transmission must lie in (0, 1]")

    @property
    def amplitude(self) -> float:
        """Net amplitude factor applied to every path."""
        return self.gamma * math.sqrt(self.crossing_transmission)


LOSSLESS = LossModel(1.0, 1.0)


@dataclass(frozen=True)
class WavelengthSpectrum:
    """Discrete probability measure over source wavelengths.

    ``nodes`` are (wavelength_nm, weight) pairs; weights are probability
    masses and must sum to 1 within 1e-12.
    """

    nodes: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.nodes:
            raise ValueError("spectrum needs at least one node")
        if any(w < 0.0 for _, w in self.nodes):
            raise ValueError("spectrum weights must be non-negative")
        total = math.fsum(w for _, w in self.nodes)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"spectrum weights sum to {total!r}, expected 1")

    @classmethod
    def single(cls, wavelength_nm: float = DESIGN_WAVELENGTH_NM) -> "WavelengthSpectrum":
        return cls(((float(wavelength_nm), 1.0),))

    @classmethod
    def gaussian(cls, center_nm: float = DESIGN_WAVELENGTH_NM, fwhm_nm: float = 20.0,
                 points: int = 21,
                 span_nm: tuple[float, float] = (720.0, 740.0)) -> "WavelengthSpectrum":
        """Gaussian envelope sampled on equally spaced nodes across the band."""
        if points < 1:
            raise ValueError("points must be >= 1")
        if fwhm_nm <= 0.0:
            raise ValueError("fwhm_nm must be positive")
        wl = np.linspace(span_nm[0], span_nm[1], points)
        sigma = fwhm_nm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        w = np.exp(-0.5 * ((wl - center_nm) / sigma) ** 2)
        w = w / math.fsum(w)
        # nudge the largest weight so the masses sum to 1 exactly in floats
        w[int(np.argmax(w))] += 1.0 - math.fsum(w)
        return cls(tuple((float(a), float(b)) for a, b in zip(wl, w)))

    @property
    def wavelengths(self) -> np.ndarray:
        return np.array([n[0] for n in self.nodes])

    @property
    def weights(self) -> np.ndarray:
        return np.array([n[1] for n in self.nodes])


def mmi_matrix(p: MmiParams, wavelength_nm: float | None = None) -> np.ndarray:
    """2x2 splitter transfer matrix [[t, i r], [i r, t]] at a wavelength."""
    t, r = p.resolve(wavelength_nm)
    return np.array([[t, 1j * r], [1j * r, t]], dtype=complex)


def phase_shifter_matrix(s: PhaseSetting) -> np.ndarray:
    """diag(e^{2i(z1+d1)}, e^{2i(z2+d2)})."""
    return np.array(
        [[np.exp(2j * (s.zeta1 + s.delta1)), 0.0],
         [0.0, np.exp(2j * (s.zeta2 + s.delta2))]], dtype=complex)


def mzi_matrix(mmi: MmiParams, s: PhaseSetting, wavelength_nm: float | None = None) -> np.ndarray:
    """Mach-Zehnder transfer matrix MMI . PS . MMI.

    For ideal 50:50 splitters this is
    i e^{i(z1+z2)} [[sin z, cos z], [cos z, -sin z]] with z = z1 - z2 (errors
    included in z1, z2), i.e. a rotation by the phase difference alone.
    """
    m = mmi_matrix(mmi, wavelength_nm)
    return m @ phase_shifter_matrix(s) @ m


def loss_operator(m: LossModel) -> np.ndarray:
    """Scalar loss on the full 4-mode space, gamma_eff * I."""
    return m.amplitude * ID4
