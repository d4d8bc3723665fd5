"""Local linear map between complex energy and Lambda = J(J+1).

A CE trajectory fitted as E(Lambda) = A Lambda + B can be inverted along
the real energy axis to predict the corresponding Regge trajectory, and
for small Im A read as a rigid rotor with a fixed lifetime (J-shifting).
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import BranchCutError, UnphysicalParameterError, ValidationError
from .tracking import CETrajectory


@dataclass(frozen=True)
class LinearCEMap:
    A: complex
    B: complex
    fit_window: tuple
    fit_residual: float
    j_window: tuple = ()

    def __post_init__(self):
        if not abs(self.A) ** 2 > 0:
            raise ValidationError("linear CE map is not invertible (A = 0)")

    @property
    def delta(self) -> float:
        return self.A.real**2 + self.A.imag**2


def fit_linear_ce(ce: CETrajectory, j_window: Optional[Sequence[int]] = None) -> LinearCEMap:
    """Least-squares fit E_pole(Lambda) = A Lambda + B over Lambda = J(J+1).

    ``j_window`` is an inclusive ``(J_lo, J_hi)`` range; all entries are used
    when omitted. ``fit_residual`` is the RMS deviation in meV.
    """
    entries = ce.entries
    if j_window is not None:
        lo, hi = j_window
        entries = [e for e in entries if lo <= e.J <= hi]
    if len(entries) < 3:
        raise ValidationError(f"linear CE fit needs >= 3 entries, got {len(entries)}")
    js = np.array([e.J for e in entries], dtype=float)
    lam = js * (js + 1.0)
    if np.ptp(lam) == 0:
        raise ValidationError("rank-deficient CE fit: all Lambda equal")
    energies = np.array([e.E_pole for e in entries], dtype=complex)
    design = np.column_stack([lam, np.ones_like(lam)]).astype(complex)
    (A, B), *_ = np.linalg.lstsq(design, energies, rcond=None)
    resid = energies - design @ np.array([A, B])
    rms = float(np.sqrt(np.mean(np.abs(resid) ** 2)))
    return LinearCEMap(A=complex(A), B=complex(B), fit_window=(float(lam.min()), float(lam.max())),
                       fit_residual=rms, j_window=(int(js.min()), int(js.max())))


def lambda_of_energy(cmap: LinearCEMap, E: float) -> complex:
    """Complex Lambda on the real energy axis (E_2 = 0) from the inverted map."""
    A1, A2 = cmap.A.real, cmap.A.imag
    B1, B2 = cmap.B.real, cmap.B.imag
    d = cmap.delta
    lam1 = (A1 * E - (A1 * B1 + A2 * B2)) / d
    lam2 = (-A2 * E - (A1 * B2 - A2 * B1)) / d
    return complex(lam1, lam2)


def ce_to_regge(cmap: LinearCEMap, E: float, *, large_j: bool = False) -> complex:
    """Regge pole position J(E) predicted by the linear map.

    J = -1/2 + sqrt(Lambda + 1/4) on the principal branch (Re J >= -1/2;
    Im J >= 0 whenever Im Lambda >= 0). ``large_j`` uses Lambda ~ J^2 instead.
    """
    lam = lambda_of_energy(cmap, float(E))
    arg = lam if large_j else lam + 0.25
    if arg.real < 0 and abs(arg.imag) <= 1e-14 * abs(arg):
        raise BranchCutError(f"branch cut: Lambda + 1/4 = {arg} on the negative real axis")
    root = cmath.sqrt(arg)
    return root if large_j else root - 0.5


def regge_to_ce(cmap: LinearCEMap, J) -> complex:
    """Complex energy A J(J+1) + B of the pole at angular momentum J."""
    J = complex(J)
    return cmap.A * J * (J + 1.0) + cmap.B


def predict_regge_trajectory(cmap: LinearCEMap, energies, *, large_j: bool = False) -> np.ndarray:
    return np.array([ce_to_regge(cmap, E, large_j=large_j) for E in energies], dtype=complex)


@dataclass(frozen=True)
class JShiftingParams:
    """Rigid-rotor reading of a linear CE map (hbar = 1, energies in meV)."""

    I_moment: float
    E0: float
    tau: float

    def J1(self, E, *, large_j: bool = True) -> float:
        """Real part of the rotating complex's angular momentum at energy E."""
        lam1 = 2.0 * self.I_moment * (E - self.E0)
        if lam1 < 0:
            raise ValidationError(f"E={E} lies below the binding energy {self.E0}")
        return math.sqrt(lam1) if large_j else math.sqrt(lam1 + 0.25) - 0.5

    def angular_velocity(self, E, **kw) -> float:
        return self.J1(E, **kw) / self.I_moment

    def life_angle(self, E, **kw) -> float:
        """Mean rotation before decay, omega * tau (equal to 1 / Im J)."""
        return self.angular_velocity(E, **kw) * self.tau

    def lambda1(self, E) -> float:
        return 2.0 * self.I_moment * (E - self.E0)

    @property
    def lambda2(self) -> float:
        return 2.0 * self.I_moment / self.tau


def j_shifting_params(cmap: LinearCEMap, a2_tol: float = 0.1) -> JShiftingParams:
    """Moment of inertia 1/(2 A_1), binding energy B_1 and lifetime -1/B_2.

    Requires |A_2| <= a2_tol |A_1|; raises ``UnphysicalParameterError`` for
    A_1 <= 0 or a non-decaying state (B_2 >= 0).
    """
    A1, A2 = cmap.A.real, cmap.A.imag
    if A1 <= 0:
        raise UnphysicalParameterError(f"unphysical moment of inertia: A_1 = {A1}")
    if abs(A2) > a2_tol * abs(A1):
        raise ValidationError(f"|A_2| = {abs(A2):.3g} too large for J-shifting "
                              f"(limit {a2_tol} |A_1| = {a2_tol * abs(A1):.3g})")
    if cmap.B.imag >= 0:
        raise UnphysicalParameterError(f"growing state: Im B = {cmap.B.imag} >= 0")
    return JShiftingParams(I_moment=1.0 / (2.0 * A1), E0=cmap.B.real, tau=-1.0 / cmap.B.imag)


def map_to_json(cmap: LinearCEMap, a2_tol: float = 0.1) -> str:
    doc = {
        "A": [cmap.A.real, cmap.A.imag],
        "B": [cmap.B.real, cmap.B.imag],
        "units": {"A": "meV", "B": "meV", "I_moment": "1/meV", "E0": "meV",
                  "tau": "hbar/meV"},
        "fit_window_Lambda": list(cmap.fit_window),
        "j_window": list(cmap.j_window),
        "fit_residual_meV": cmap.fit_residual,
    }
    try:
        p = j_shifting_params(cmap, a2_tol)
        doc["j_shifting"] = {"I_moment": p.I_moment, "E0": p.E0, "tau": p.tau}
    except (ValidationError, UnphysicalParameterError) as exc:
        doc["j_shifting"] = None
        doc["j_shifting_error"] = str(exc)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
