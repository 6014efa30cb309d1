"""CHSH correlation analysis.

The correlation coefficient of a 4-outcome click distribution is

    E = P(UF) + P(DN) - P(UN) - P(DF),

the expectation of sigma_z (x) sigma_z after the rotations.  Four
coefficients at angle settings (phi, phi') x (theta, theta') combine into
the CHSH function

    chi = E(phi, theta) - E(phi, theta') + E(phi', theta) + E(phi', theta'),

classically bounded by 2 and quantum mechanically by 2 sqrt(2).  For the
ideal chip E(phi, theta) = cos 2(phi - theta), and the one-parameter family
phi = -alpha/2, phi' = alpha/2, theta = 0, theta' = alpha collapses chi to
3 cos(alpha) - cos(3 alpha), maximal at alpha = pi/4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np

from .qmath import distribution_vector

SQRT6 = math.sqrt(6.0)

#: grid-independent quantum maximum of |chi|
CHI_QUANTUM_MAX = 2.0 * math.sqrt(2.0)


def correlation_coefficient(p: Mapping[str, float] | Sequence[float]) -> float:
    """E = P(UF) + P(DN) - P(UN) - P(DF) of one 4-outcome distribution."""
    v = distribution_vector(p)
    return float(v[0] + v[3] - v[1] - v[2])


def chi_from_coefficients(e00: float, e01: float, e10: float, e11: float) -> float:
    """CHSH combination with the minus sign on the (phi, theta') term.

    Arguments are E(phi, theta), E(phi, theta'), E(phi', theta),
    E(phi', theta') in that order.
    """
    for e in (e00, e01, e10, e11):
        if abs(e) > 1.0 + 1e-9:
            raise ValueError(f"correlation coefficient {e!r} outside [-1, 1]")
    return e00 - e01 + e10 + e11


def chi_alpha_ideal(alpha: float) -> float:
    """chi of the ideal chip along the one-parameter CHSH family."""
    return 3.0 * math.cos(alpha) - math.cos(3.0 * alpha)


def alpha_angles(alpha: float) -> tuple[float, float, float, float]:
    """(phi, phi', theta, theta') realizing chi(alpha) on the ideal chip.

    With E = cos 2(phi - theta) the tuple below gives coefficients
    (cos a, cos 3a, cos a, cos a), whose CHSH combination is exactly
    3 cos(alpha) - cos(3 alpha).
    """
    return (-alpha / 2.0, alpha / 2.0, 0.0, alpha)


def unbalanced_correlation(phi: float, theta: float, eta: float = 1.0 / 3125.0) -> float:
    """Closed-form E(phi, theta) for a chip whose splitters are all 40:60.

    ``eta`` is an overall visibility scale; 1/3125 normalizes the loss-free
    transfer-matrix model, while a fitted value absorbs experimental
    visibility reduction.  Term by term:

        eta * ( 5 - 48 sqrt6
                - 24 (5 + 2 sqrt6) cos 2phi
                - 24 (5 + 2 sqrt6) cos 2theta
                + 48 (30 - 13 sqrt6) cos 2(phi + theta)
                + 288 (5 + 2 sqrt6) cos 2(phi - theta) )
    """
    return eta * (5.0 - 48.0 * SQRT6
                  - 24.0 * (5.0 + 2.0 * SQRT6) * math.cos(2.0 * phi)
                  - 24.0 * (5.0 + 2.0 * SQRT6) * math.cos(2.0 * theta)
                  + 48.0 * (30.0 - 13.0 * SQRT6) * math.cos(2.0 * (phi + theta))
                  + 288.0 * (5.0 + 2.0 * SQRT6) * math.cos(2.0 * (phi - theta)))


@dataclass(frozen=True)
class CorrelationGrid:
    """Correlation coefficients tabulated over a (phi, theta) scan.

    ``e[i, j]`` is E(phi_values[i], theta_values[j]); NaN marks cells with
    no data (discarded or unreachable acquisitions), which every search
    skips.  ``stderr`` optionally carries per-cell standard errors.
    """

    phi_values: tuple[float, ...]
    theta_values: tuple[float, ...]
    e: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self) -> None:
        e = np.asarray(self.e, dtype=float)
        object.__setattr__(self, "e", e)
        if e.shape != (len(self.phi_values), len(self.theta_values)):
            raise ValueError(f"E shape {e.shape} does not match the angle lists")
        finite = e[np.isfinite(e)]
        if finite.size and np.max(np.abs(finite)) > 1.0 + 1e-9:
            raise ValueError("grid holds a correlation coefficient outside [-1, 1]")
        if self.stderr is not None:
            se = np.asarray(self.stderr, dtype=float)
            object.__setattr__(self, "stderr", se)
            if se.shape != e.shape:
                raise ValueError("stderr shape does not match E")


@dataclass(frozen=True)
class ChiResult:
    """One CHSH value with the angle tuple that produced it.

    ``angles`` is (phi, phi', theta, theta'); the minus sign always sits on
    the E(phi, theta') term, so the sign assignment that won a search is
    encoded in the ordering of the reported tuple.  ``sign`` records
    whether this was the search maximum or minimum.
    """

    chi: float
    angles: tuple[float, float, float, float]
    stderr: float = 0.0
    sign: str = "max"

    def __post_init__(self) -> None:
        if self.sign not in ("max", "min"):
            raise ValueError("sign must be 'max' or 'min'")
        if abs(self.chi) > CHI_QUANTUM_MAX + 3.0 * self.stderr + 1e-9:
            raise ValueError(
                f"chi = {self.chi!r} violates the quantum bound beyond statistical slack")


def best_combination_search(grid: CorrelationGrid) -> tuple[ChiResult, ChiResult]:
    """Exhaustive CHSH search over every angle combination of a grid.

    Evaluates chi for all ordered pairs (phi, phi') and (theta, theta')
    with distinct entries, which covers all four placements of the minus
    sign via relabeling.  Cells with NaN are excluded.  Returns the global
    maximum and minimum; exact ties are broken toward the lexicographically
    smallest (phi, phi', theta, theta') tuple.
    """
    ph = np.asarray(grid.phi_values, dtype=float)
    th = np.asarray(grid.theta_values, dtype=float)
    if ph.size < 2 or th.size < 2:
        raise ValueError("the search needs at least 2 phi values and 2 theta values")
    e = grid.e

    best: dict[str, tuple[float, tuple[float, float, float, float], float] | None] = {
        "max": None, "min": None}

    def consider(chi: float, angles: tuple[float, float, float, float], se: float) -> None:
        for sign, better in (("max", lambda a, b: a > b), ("min", lambda a, b: a < b)):
            cur = best[sign]
            if cur is None or better(chi, cur[0]) or (chi == cur[0] and angles < cur[1]):
                best[sign] = (chi, angles, se)

    # Unordered pairs with all four minus placements enumerate the same set
    # as ordered pairs with a fixed minus position; evaluate the four
    # placements explicitly and relabel so the minus lands on (phi, theta').
    for ia, ib in combinations(range(ph.size), 2):
        for jc, jd in combinations(range(th.size), 2):
            quad = (e[ia, jc], e[ia, jd], e[ib, jc], e[ib, jd])
            if any(not np.isfinite(q) for q in quad):
                continue
            eac, ead, ebc, ebd = quad
            total = eac + ead + ebc + ebd
            se = 0.0
            if grid.stderr is not None:
                ses = (grid.stderr[ia, jc], grid.stderr[ia, jd],
                       grid.stderr[ib, jc], grid.stderr[ib, jd])
                # the same 4 independent cells enter every minus placement
                se = float(np.sqrt(np.nansum(np.square(ses))))
            # minus on (a, c) | (a, d) | (b, c) | (b, d), relabeled tuples
            consider(total - 2.0 * eac, (ph[ia], ph[ib], th[jd], th[jc]), se)
            consider(total - 2.0 * ead, (ph[ia], ph[ib], th[jc], th[jd]), se)
            consider(total - 2.0 * ebc, (ph[ib], ph[ia], th[jd], th[jc]), se)
            consider(total - 2.0 * ebd, (ph[ib], ph[ia], th[jc], th[jd]), se)

    if best["max"] is None or best["min"] is None:
        raise ValueError("grid has no complete angle combination without missing data")
    vmax, amax, semax = best["max"]
    vmin, amin, semin = best["min"]
    return (ChiResult(vmax, amax, stderr=semax, sign="max"),
            ChiResult(vmin, amin, stderr=semin, sign="min"))


def _subinterval_chis(streams: Sequence, subinterval_s: float) -> np.ndarray:
    """chi per consecutive subinterval from four raw event streams.

    Streams are ordered (phi,theta), (phi,theta'), (phi',theta),
    (phi',theta').  Probabilities per subinterval are empirical channel
    frequencies of the raw detection records; no time-bin reassignment is
    involved in the Bell statistics.
    """
    if len(streams) != 4:
        raise ValueError("need exactly 4 streams, one per angle pair")
    if subinterval_s <= 0.0:
        raise ValueError("subinterval_s must be positive")
    n_sub = min(int(math.floor(s.duration_s / subinterval_s + 1e-9)) for s in streams)
    if n_sub < 2:
        raise ValueError("streams must cover at least 2 subintervals")
    width_ns = subinterval_s * 1e9
    es = np.empty((4, n_sub))
    for i, s in enumerate(streams):
        inside = s.timestamps_ns < n_sub * width_ns
        idx = (s.timestamps_ns[inside] / width_ns).astype(np.int64)
        ch = s.channels[inside].astype(np.int64)
        counts = np.bincount(idx * 4 + ch, minlength=4 * n_sub).reshape(n_sub, 4).astype(float)
        totals = counts.sum(axis=1)
        if np.any(totals == 0.0):
            raise ValueError(f"stream {i} has an empty {subinterval_s} s subinterval")
        p = counts / totals[:, None]
        es[i] = p[:, 0] + p[:, 3] - p[:, 1] - p[:, 2]
    return es[0] - es[1] + es[2] + es[3]


def chi_stderr(streams: Sequence, subinterval_s: float = 0.2) -> float:
    """Standard error of chi from the scatter over time subintervals.

    Splits the four aligned streams into consecutive subintervals, computes
    chi in each, and returns the Bessel-corrected sample standard deviation
    divided by sqrt(N).
    """
    chis = _subinterval_chis(streams, subinterval_s)
    return float(np.std(chis, ddof=1) / math.sqrt(len(chis)))
