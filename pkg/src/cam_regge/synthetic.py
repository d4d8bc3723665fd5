"""S-matrix tables with analytically known Regge poles.

The model is additive,

    S(E, lambda) = background(E, lambda) + sum_n rho_n(E) / (lambda - lambda_n(E)),

so positions and residues are exact by construction. Unitarity is not
enforced; generated tables skip the unitarity check.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .pade import ANGULAR_MOMENTUM, ComplexPole
from .scatter import HBAR2_2MU, Kinematics, SMatrixTable, TransitionLabel

NODE_GUARD = 1e-3
IM_LAMBDA_MAX = 6.0
FHD_REDUCED_MASS = 19.0 * 3.0 / 22.0


def _poly_e(coeffs, e_ref, E):
    x = E - e_ref
    acc = 0j
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@dataclass(frozen=True)
class PolePath:
    """lambda_n(E) = J_n(E) + 1/2 for one pole.

    ``kind`` is ``"polynomial"`` (``coeffs`` in powers of ``E - e_ref``),
    ``"j_shifting"`` (J_n = -1/2 + sqrt(2 I (E - E0 + i/tau) + 1/4)) or
    ``"table"`` (``values`` aligned with the model's energy grid).
    """

    kind: str
    coeffs: tuple = ()
    e_ref: float = 0.0
    I: float = 0.0
    E0: float = 0.0
    tau: float = 0.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("polynomial", "j_shifting", "table"):
            raise ValidationError(f"unknown pole path kind {self.kind!r}")
        if self.kind == "j_shifting" and not (self.I > 0 and self.tau > 0):
            raise ValidationError("j_shifting path needs I > 0 and tau > 0")

    def at(self, E: float, index: Optional[int] = None) -> complex:
        if self.kind == "polynomial":
            return _poly_e(self.coeffs, self.e_ref, E)
        if self.kind == "j_shifting":
            lam_big = 2.0 * self.I * (E - self.E0 + 1j / self.tau)
            return cmath.sqrt(lam_big + 0.25)
        if index is None:
            raise ValidationError("table pole paths are only defined on the grid")
        return complex(self.values[index])


@dataclass(frozen=True)
class PoleTerm:
    label: str
    path: PolePath
    residue: tuple = (0.05,)
    residue_e_ref: float = 0.0

    def residue_at(self, E: float) -> complex:
        return _poly_e(self.residue, self.residue_e_ref, E)


@dataclass(frozen=True)
class PoleModelSpec:
    """Energy grid, J range, kinematics and the analytic S-matrix model.

    ``background[p][q]`` multiplies ``(lambda - lambda_ref)^p (E - e_ref)^q``
    (degree in lambda at most 4).
    """

    energies: tuple
    j_max: int
    poles: tuple = ()
    background: tuple = ((0j,),)
    background_e_ref: float = 0.0
    lambda_ref: float = 0.0
    transition: TransitionLabel = TransitionLabel(0, 0, 0, 3, 0, 0)
    kinematics: Kinematics = field(default_factory=lambda: Kinematics.reduced_mass(FHD_REDUCED_MASS))
    threshold_energy: Optional[float] = None

    def __post_init__(self):
        if len(self.background) > 5:
            raise ValidationError("background degree in lambda must be <= 4")
        if self.j_max < self.transition.j_min:
            raise ValidationError("j_max below J_min")
        for pole in self.poles:
            if pole.path.kind == "table" and len(pole.path.values) != len(self.energies):
                raise ValidationError(f"pole {pole.label}: table path length mismatch")

    @property
    def j_values(self) -> np.ndarray:
        return np.arange(self.transition.j_min, self.j_max + 1)

    def _index(self, E):
        for i, e in enumerate(self.energies):
            if math.isclose(e, E, rel_tol=1e-12, abs_tol=1e-12):
                return i
        return None

    def pole_position(self, pole: PoleTerm, E: float) -> complex:
        return pole.path.at(E, self._index(E))

    def background_at(self, E: float, lam):
        acc = 0j
        for p in reversed(range(len(self.background))):
            acc = acc * (lam - self.lambda_ref) + _poly_e(self.background[p],
                                                          self.background_e_ref, E)
        return acc


def exact_s(spec: PoleModelSpec, E: float, lam) -> complex:
    """Closed-form S(E, lambda) of the model."""
    value = spec.background_at(E, lam)
    for pole in spec.poles:
        value = value + pole.residue_at(E) / (lam - spec.pole_position(pole, E))
    return value


def exact_poles(spec: PoleModelSpec, E: float) -> list:
    """The model's Regge poles at ``E`` (lambda_n, rho_n)."""
    return [ComplexPole(position=complex(spec.pole_position(p, E)),
                        residue=complex(p.residue_at(E)), axis=ANGULAR_MOMENTUM,
                        fixed_value=float(E), flags=("exact", p.label))
            for p in spec.poles]


def exact_ce_poles(spec: PoleModelSpec, J: int) -> list:
    """Complex-energy poles of ``j_shifting`` paths at integer J (E0 + J(J+1)/2I - i/tau)."""
    out = []
    for p in spec.poles:
        path = p.path
        if path.kind == "j_shifting":
            out.append(path.E0 + J * (J + 1) / (2.0 * path.I) - 1j / path.tau)
    return out


def _k_squared(spec, E):
    kin = spec.kinematics
    if kin.mode == "explicit":
        k = kin.k_of_E[float(E)]
        return k * k
    return kin.mu * E / HBAR2_2MU


def exact_ics(spec: PoleModelSpec, E: float) -> float:
    """Partial-wave sum evaluated directly from the closed form."""
    terms = []
    for J in range(spec.transition.j_min, spec.j_max + 1):
        s = exact_s(spec, E, J + 0.5)
        terms.append((J + 0.5) * abs(s) ** 2)
    return 2.0 * math.pi / _k_squared(spec, E) * math.fsum(terms)


def generate_table(spec: PoleModelSpec) -> SMatrixTable:
    """Sample the model at lambda = J + 1/2 on the energy grid.

    Raises ``ValidationError`` when a pole leaves 0 < Im lambda < 6 or
    comes within 1e-3 of a node.
    """
    energies = np.array(spec.energies, dtype=float)
    lams = spec.j_values + 0.5
    values = np.empty((energies.size, lams.size), dtype=complex)
    for i, E in enumerate(energies):
        for pole in spec.poles:
            pos = spec.pole_position(pole, E)
            if not 0 < pos.imag < IM_LAMBDA_MAX:
                raise ValidationError(f"pole {pole.label} at E={E}: Im lambda = {pos.imag} "
                                      f"outside (0, {IM_LAMBDA_MAX})")
            near = np.min(np.abs(lams - pos))
            if near < NODE_GUARD:
                J = int(spec.j_values[np.argmin(np.abs(lams - pos))])
                raise ValidationError(f"pole {pole.label} collides with node J={J} at E={E}")
        values[i] = exact_s(spec, E, lams)
    return SMatrixTable(spec.transition, energies, spec.j_values, values, spec.kinematics,
                        threshold_energy=spec.threshold_energy, check_unitarity=False)


def energy_grid(start: float, stop: float, step: float) -> tuple:
    """Uniform grid rounded to 10 decimals so values are reproducible."""
    n = int(round((stop - start) / step)) + 1
    return tuple(round(start + i * step, 10) for i in range(n))


def _c(x):
    if isinstance(x, (list, tuple)):
        return complex(x[0], x[1] if len(x) > 1 else 0.0)
    return complex(x)


def _path_from_doc(doc):
    kind = doc["kind"]
    if kind == "polynomial":
        return PolePath(kind, coeffs=tuple(_c(c) for c in doc["coeffs"]),
                        e_ref=float(doc.get("e_ref", 0.0)))
    if kind == "j_shifting":
        return PolePath(kind, I=float(doc["I"]), E0=float(doc["E0"]), tau=float(doc["tau"]))
    if kind == "table":
        return PolePath(kind, values=tuple(_c(v) for v in doc["lambda"]))
    raise ValidationError(f"unknown pole path kind {kind!r}")


def spec_from_json(text: str) -> PoleModelSpec:
    """Parse the synthetic-model JSON document (schema in the README)."""
    doc = json.loads(text)
    try:
        en = doc["energies"]
        energies = energy_grid(en["start"], en["stop"], en["step"]) if isinstance(en, dict) \
            else tuple(float(e) for e in en)
        transition = TransitionLabel.parse(doc.get("transition", "0 0 0 -> 3 0 0"))
        kin_doc = doc.get("kinematics", {"mu_amu": FHD_REDUCED_MASS})
        if "explicit_k" in kin_doc:
            kin = Kinematics.explicit(dict(zip(energies, kin_doc["explicit_k"])))
        else:
            kin = Kinematics.reduced_mass(kin_doc["mu_amu"])
        bg = doc.get("background", {"coeffs": [[0.0]]})
        background = tuple(tuple(_c(c) for c in row) for row in bg["coeffs"])
        poles = tuple(
            PoleTerm(label=p.get("label", f"P{i + 1}"), path=_path_from_doc(p["path"]),
                     residue=tuple(_c(c) for c in p["residue"]["coeffs"]),
                     residue_e_ref=float(p["residue"].get("e_ref", 0.0)))
            for i, p in enumerate(doc.get("poles", [])))
        return PoleModelSpec(energies=energies, j_max=int(doc["j_max"]), poles=poles,
                             background=background,
                             background_e_ref=float(bg.get("e_ref", 0.0)),
                             lambda_ref=float(bg.get("lambda_ref", 0.0)),
                             transition=transition, kinematics=kin,
                             threshold_energy=doc.get("threshold_mev"))
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"bad synthetic spec: {exc!r}") from None


def single_pole_spec(*, lambda0: complex, slope: complex = 1.0, e_ref: float = 0.0,
                     residue: complex = 0.05, background: complex = 0.0,
                     energies: Sequence[float], j_max: int = 40) -> PoleModelSpec:
    """One pole moving linearly in lambda: lambda(E) = lambda0 + slope (E - e_ref)."""
    path = PolePath("polynomial", coeffs=(complex(lambda0), complex(slope)), e_ref=e_ref)
    return PoleModelSpec(energies=tuple(energies), j_max=j_max,
                         poles=(PoleTerm("P1", path, (complex(residue),)),),
                         background=((complex(background),),))
