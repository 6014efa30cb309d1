"""Composition of the full photonic circuit.

The chip has three parts, in propagation order:

1. generation: one MMI plus a relative phase xi prepares the path-entangled
   single-photon state (t |UF> + i r e^{i xi} |DN>) / sqrt(t^2 + r^2);
2. relative-position rotation: one MZI per absolute branch rotates the
   {|F>, |N>} qubit by phi = phi1 - phi2;
3. absolute-position rotation: an MZI-equivalent per relative branch
   (the physical layout uses crossings to regroup the waveguides) rotates
   the {|U>, |D>} qubit by theta = theta1 - theta2.

Each of the four physical phase shifters per stage carries its own error
offset, which is what breaks the ideal product form B(phi) (x) A(theta) and
motivates the whole certification machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optics import (DESIGN_WAVELENGTH_NM, EPS_MAX, IDEAL_MMI, LOSSLESS, LossModel, MmiParams,
                     PhaseSetting, WavelengthSpectrum, loss_operator, mzi_matrix)
from .qmath import CHANNELS, as_density, distribution_dict, tensor_product

_P_FIRST = np.diag([1.0, 0.0]).astype(complex)
_P_SECOND = np.diag([0.0, 1.0]).astype(complex)

Errors4 = tuple[float, float, float, float]
_NO_ERRORS: Errors4 = (0.0, 0.0, 0.0, 0.0)


def _check_errors(d: Errors4, name: str) -> Errors4:
    d = tuple(float(x) for x in d)  # type: ignore[assignment]
    if len(d) != 4:
        raise ValueError(f"{name} needs exactly 4 offsets")
    for x in d:
        if not math.isfinite(x) or abs(x) > EPS_MAX:
            raise ValueError(f"{name} offset {x!r} not finite or beyond the {EPS_MAX} rad guard")
    return d


@dataclass(frozen=True)
class GenerationSetting:
    """Relative phase of the generation stage.

    ``xi`` is the phase between the |UF> and |DN> components; xi = -pi/2
    makes the ideal state (|UF> + |DN>)/sqrt(2).  The two compensation
    phases mirror the knobs used to trim the far and near branches during
    alignment; they default to 0, leaving a single effective xi.
    """

    xi: float = -math.pi / 2.0
    comp_far: float = 0.0
    comp_near: float = 0.0

    def __post_init__(self) -> None:
        for name in ("xi", "comp_far", "comp_near"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def effective_xi(self) -> float:
        return self.xi + self.comp_near - self.comp_far


@dataclass(frozen=True)
class RotationSetting:
    """Heater phases of both rotation stages plus per-shifter errors.

    The rotation angles seen by the Bell analysis are the differences
    phi = phi1 - phi2 and theta = theta1 - theta2.  ``dphi`` and ``dtheta``
    hold the four error offsets of each stage in the order (branch-1
    shifter 1, branch-1 shifter 2, branch-2 shifter 1, branch-2 shifter 2),
    where branch 1 is |U> for the phi stage and |F> for the theta stage.
    """

    phi1: float
    phi2: float
    theta1: float
    theta2: float
    dphi: Errors4 = _NO_ERRORS
    dtheta: Errors4 = _NO_ERRORS

    def __post_init__(self) -> None:
        for name in ("phi1", "phi2", "theta1", "theta2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "dphi", _check_errors(self.dphi, "dphi"))
        object.__setattr__(self, "dtheta", _check_errors(self.dtheta, "dtheta"))

    @property
    def phi(self) -> float:
        return self.phi1 - self.phi2

    @property
    def theta(self) -> float:
        return self.theta1 - self.theta2

    @classmethod
    def from_angles(cls, phi: float, theta: float, dphi: Errors4 = _NO_ERRORS,
                    dtheta: Errors4 = _NO_ERRORS) -> "RotationSetting":
        """Place the full rotation on the first shifter of each pair."""
        return cls(phi, 0.0, theta, 0.0, dphi, dtheta)

    def scaled(self, factor: float) -> "RotationSetting":
        """All phases (nominal and error) multiplied by ``factor``.

        Used for the thermo-optic dispersion model, where a heater set for
        the design wavelength produces a phase scaled by lambda_0/lambda.
        """
        return RotationSetting(
            self.phi1 * factor, self.phi2 * factor, self.theta1 * factor, self.theta2 * factor,
            tuple(d * factor for d in self.dphi), tuple(d * factor for d in self.dtheta))


@dataclass(frozen=True)
class ChipConfig:
    """Every physical parameter of the simulated chip.

    ``mzi_mmis`` holds the splitter parameters of the four rotation MZIs in
    the order (phi stage |U> branch, phi stage |D> branch, theta stage |F>
    branch, theta stage |N> branch).  ``phase_dispersion`` enables the
    lambda_0/lambda scaling of all heater phases during broadband averaging.
    """

    generation_mmi: MmiParams = IDEAL_MMI
    mzi_mmis: tuple[MmiParams, MmiParams, MmiParams, MmiParams] = (
        IDEAL_MMI, IDEAL_MMI, IDEAL_MMI, IDEAL_MMI)
    generation: GenerationSetting = GenerationSetting()
    loss: LossModel = field(default_factory=LossModel)
    spectrum: WavelengthSpectrum = field(
        default_factory=lambda: WavelengthSpectrum.single(DESIGN_WAVELENGTH_NM))
    phase_dispersion: bool = False

    def __post_init__(self) -> None:
        if len(self.mzi_mmis) != 4:
            raise ValueError("mzi_mmis needs exactly 4 entries")

    @classmethod
    def balanced(cls, **kwargs) -> "ChipConfig":
        """All splitters ideal 50:50, lossless, monochromatic."""
        return cls(loss=LOSSLESS, **kwargs)

    @classmethod
    def unbalanced(cls, t_power: float = 0.4, r_power: float = 0.6, **kwargs) -> "ChipConfig":
        """Every splitter at the same measured power ratio (default 40:60)."""
        mmi = MmiParams.from_power(t_power, r_power)
        return cls(generation_mmi=mmi, mzi_mmis=(mmi, mmi, mmi, mmi), **kwargs)


def generation_state(g: GenerationSetting, mmi: MmiParams = IDEAL_MMI,
                     wavelength_nm: float | None = None) -> np.ndarray:
    """State after the generation stage, (t|UF> + i r e^{i xi}|DN>)/sqrt(t^2+r^2).

    The branch the photon transmits into ends up in |UF>, the reflected
    branch in |DN>; the splitter's i sits on the reflected amplitude.
    """
    t, r = mmi.resolve(wavelength_nm)
    norm = math.hypot(t, r)
    if norm == 0.0:
        raise ValueError("generation MMI with t = r = 0 produces no state")
    psi = np.zeros(4, dtype=complex)
    psi[0] = t * np.exp(1j * g.comp_far)
    psi[3] = 1j * r * np.exp(1j * (g.xi + g.comp_near))
    return psi / norm


def relative_rotation_stage(phi1: float, phi2: float, dphi: Errors4 = _NO_ERRORS,
                            mmi_u: MmiParams = IDEAL_MMI, mmi_d: MmiParams | None = None,
                            wavelength_nm: float | None = None) -> np.ndarray:
    """phi-stage transfer matrix P_U (x) MZI_U + P_D (x) MZI_D.

    One MZI per absolute branch acts on the relative-position qubit; the
    branches see the same nominal phases but independent errors, so the
    result is block diagonal and generally not a product operator.
    """
    if mmi_d is None:
        mmi_d = mmi_u
    mu = mzi_matrix(mmi_u, PhaseSetting(phi1, phi2, dphi[0], dphi[1]), wavelength_nm)
    md = mzi_matrix(mmi_d, PhaseSetting(phi1, phi2, dphi[2], dphi[3]), wavelength_nm)
    return tensor_product(_P_FIRST, mu) + tensor_product(_P_SECOND, md)


def absolute_rotation_stage(theta1: float, theta2: float, dtheta: Errors4 = _NO_ERRORS,
                            mmi_f: MmiParams = IDEAL_MMI, mmi_n: MmiParams | None = None,
                            wavelength_nm: float | None = None) -> np.ndarray:
    """theta-stage transfer matrix MZI_F (x) P_F + MZI_N (x) P_N.

    The mirror image of the phi stage: one MZI-equivalent per relative
    branch rotates the absolute-position qubit.
    """
    if mmi_n is None:
        mmi_n = mmi_f
    mf = mzi_matrix(mmi_f, PhaseSetting(theta1, theta2, dtheta[0], dtheta[1]), wavelength_nm)
    mn = mzi_matrix(mmi_n, PhaseSetting(theta1, theta2, dtheta[2], dtheta[3]), wavelength_nm)
    return tensor_product(mf, _P_FIRST) + tensor_product(mn, _P_SECOND)


def rotation_ideal(phi: float, theta: float) -> np.ndarray:
    """Error-free product rotation A(theta) (x) B(phi) with ideal splitters."""
    a = mzi_matrix(IDEAL_MMI, PhaseSetting(theta, 0.0))
    b = mzi_matrix(IDEAL_MMI, PhaseSetting(phi, 0.0))
    return tensor_product(a, b)


def rotation_real(r: RotationSetting,
                  mmis: tuple[MmiParams, MmiParams, MmiParams, MmiParams] | None = None,
                  wavelength_nm: float | None = None) -> np.ndarray:
    """Full rotation operator with independent shifter errors.

    The photon traverses the phi stage first, so the theta stage sits on
    the left of the product.  With all errors zero and equal splitters the
    result factorizes back into rotation_ideal times global phases.
    """
    if mmis is None:
        mmis = (IDEAL_MMI, IDEAL_MMI, IDEAL_MMI, IDEAL_MMI)
    rel = relative_rotation_stage(r.phi1, r.phi2, r.dphi, mmis[0], mmis[1], wavelength_nm)
    ab = absolute_rotation_stage(r.theta1, r.theta2, r.dtheta, mmis[2], mmis[3], wavelength_nm)
    return ab @ rel


def detection_probabilities(state: np.ndarray, u: np.ndarray,
                            loss: LossModel = LOSSLESS) -> dict[str, float]:
    """Normalized click probabilities on the four output channels.

    P(ab) = Tr[U L rho L^dag U^dag P_ab] / Tr[U L rho L^dag U^dag].  The
    scalar loss cancels in the ratio; non-unitary (lossy) transfer matrices
    are renormalized the same way.
    """
    rho = as_density(state)
    lu = u @ loss_operator(loss)
    out = lu @ rho @ np.conj(lu).T
    weights = np.clip(np.diag(out).real, 0.0, None)
    total = float(np.sum(weights))
    if total <= 1e-300:
        raise ValueError("state is annihilated by the transfer operator")
    return distribution_dict(weights / total)


def broadband_probabilities(cfg: ChipConfig, r: RotationSetting) -> dict[str, float]:
    """Click probabilities averaged over the source spectrum.

    Each wavelength node is simulated independently (its own splitter
    coefficients and, when ``phase_dispersion`` is set, heater phases
    scaled by lambda_0/lambda) and the distributions are mixed with the
    node weights, a convex combination of per-wavelength statistics.
    """
    acc = np.zeros(4)
    for wavelength_nm, weight in cfg.spectrum.nodes:
        setting = r
        if cfg.phase_dispersion:
            setting = r.scaled(DESIGN_WAVELENGTH_NM / wavelength_nm)
        psi = generation_state(cfg.generation, cfg.generation_mmi, wavelength_nm)
        u = rotation_real(setting, cfg.mzi_mmis, wavelength_nm)
        p = detection_probabilities(psi, u, cfg.loss)
        acc += weight * np.array([p[c] for c in CHANNELS])
    return distribution_dict(acc)
