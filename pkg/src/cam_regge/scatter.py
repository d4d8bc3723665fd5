"""Scattering-matrix tables, kinematics and the partial-wave-sum cross section.

Units are fixed throughout the package: energies in meV, lengths in
angstrom, cross sections in angstrom^2.
"""

from __future__ import annotations

import io
import json
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, TextIO

import numpy as np

from .errors import ChannelClosedError, TableFormatError, ValidationError

# CODATA 2018 (hbar and the elementary charge are exact in the 2019 SI).
HBAR_JS = 1.054571817e-34
ATOMIC_MASS_KG = 1.66053906660e-27
MEV_J = 1.602176634e-22
ANGSTROM_M = 1e-10

#: hbar^2 / (2 m_u) in meV * angstrom^2; k^2 = mu[u] * E[meV] / HBAR2_2MU
HBAR2_2MU = HBAR_JS**2 / (2.0 * ATOMIC_MASS_KG) / MEV_J / ANGSTROM_M**2

UNITARITY_SLACK = 1e-3

_TRANSITION_RE = re.compile(
    r"^\s*(\d+)\s+(\d+)\s+(\d+)\s*->\s*(\d+)\s+(\d+)\s+(\d+)\s*$")


@dataclass(frozen=True)
class TransitionLabel:
    """Initial (v, j, omega) and final (v_p, j_p, omega_p) quantum numbers."""

    v: int
    j: int
    omega: int
    v_p: int
    j_p: int
    omega_p: int

    def __post_init__(self):
        for name in ("v", "j", "omega", "v_p", "j_p", "omega_p"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 0:
                raise ValidationError(
                    f"transition field {name}={value!r} must be a non-negative integer")
        if self.omega > self.j or self.omega_p > self.j_p:
            raise ValidationError("helicity cannot exceed the rotational quantum number")

    @property
    def j_min(self) -> int:
        return max(self.omega, self.omega_p)

    @classmethod
    def parse(cls, text: str) -> "TransitionLabel":
        match = _TRANSITION_RE.match(text)
        if match is None:
            raise TableFormatError(f"cannot parse transition {text!r}; "
                                   "expected 'v j omega -> v' j' omega''")
        return cls(*(int(g) for g in match.groups()))

    def __str__(self):
        return (f"{self.v} {self.j} {self.omega} -> "
                f"{self.v_p} {self.j_p} {self.omega_p}")


@dataclass(frozen=True)
class Kinematics:
    """How the reactant wavevector is obtained at each energy.

    ``mode`` is ``"reduced-mass"`` (``mu`` in atomic mass units) or
    ``"explicit"`` (``k_of_E`` maps grid energies to k in 1/angstrom).
    """

    mode: str
    mu: Optional[float] = None
    k_of_E: Optional[Mapping[float, float]] = None
    energy_unit: str = "meV"
    length_unit: str = "angstrom"

    def __post_init__(self):
        if self.mode == "reduced-mass":
            if self.mu is None or not self.mu > 0:
                raise ValidationError("reduced-mass kinematics needs mu > 0")
        elif self.mode == "explicit":
            if not self.k_of_E:
                raise ValidationError("explicit kinematics needs a k table")
            if any(not k > 0 for k in self.k_of_E.values()):
                raise ValidationError("explicit wavevectors must be positive")
        else:
            raise ValidationError(f"unknown kinematics mode {self.mode!r}")

    @classmethod
    def reduced_mass(cls, mu: float) -> "Kinematics":
        return cls(mode="reduced-mass", mu=float(mu))

    @classmethod
    def explicit(cls, k_of_E: Mapping[float, float]) -> "Kinematics":
        return cls(mode="explicit", k_of_E={float(e): float(k) for e, k in k_of_E.items()})


def wavevector_squared(kin: Kinematics, E: float) -> float:
    """Return k^2 in 1/angstrom^2 at collision energy ``E`` (meV)."""
    if not E > 0:
        raise ValidationError(f"below zero collision energy: E={E}")
    if kin.mode == "explicit":
        try:
            k = kin.k_of_E[float(E)]
        except KeyError:
            raise ValidationError(f"no explicit wavevector at E={E}") from None
        return k * k
    return kin.mu * E / HBAR2_2MU


@dataclass(frozen=True)
class UnitarityWarning:
    energy: float
    J: int
    modulus: float

    def __str__(self):
        return f"|S|={self.modulus:.6g} exceeds unitarity at (E={self.energy}, J={self.J})"


@dataclass(frozen=True, eq=False)
class SMatrixTable:
    """Complex S(E, J) on an energy-major, J-minor grid for one transition.

    ``values[i, n]`` is the element at ``energies[i]`` and ``j_values[n]``.
    Arrays are made read-only on construction.
    """

    transition: TransitionLabel
    energies: np.ndarray
    j_values: np.ndarray
    values: np.ndarray
    kinematics: Kinematics
    threshold_energy: Optional[float] = None
    unitarity_slack: float = UNITARITY_SLACK
    check_unitarity: bool = True
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        energies = np.array(self.energies, dtype=float)
        j_values = np.array(self.j_values, dtype=int)
        values = np.array(self.values, dtype=complex)
        if energies.ndim != 1 or energies.size == 0:
            raise TableFormatError("energies must be a non-empty 1-d sequence")
        if np.any(np.diff(energies) <= 0):
            raise TableFormatError("energies must be strictly increasing")
        if j_values.size == 0 or np.any(np.diff(j_values) != 1):
            raise TableFormatError("J values must form a contiguous range")
        if j_values[0] != self.transition.j_min:
            raise TableFormatError(
                f"J range starts at {j_values[0]} but J_min = max(omega, omega') "
                f"= {self.transition.j_min}")
        if values.shape != (energies.size, j_values.size):
            raise TableFormatError(
                f"values shape {values.shape} does not match grid "
                f"({energies.size}, {j_values.size})")
        if not np.all(np.isfinite(values)):
            raise TableFormatError("S-matrix values must be finite")
        if self.kinematics.mode == "explicit":
            missing = [e for e in energies if float(e) not in self.kinematics.k_of_E]
            if missing:
                raise TableFormatError(f"no wavevector for energies {missing[:5]}")
        found = list(self.warnings)
        if self.check_unitarity:
            moduli = np.abs(values)
            for i, n in zip(*np.nonzero(moduli > 1.0 + self.unitarity_slack)):
                found.append(UnitarityWarning(float(energies[i]), int(j_values[n]),
                                              float(moduli[i, n])))
        for arr in (energies, j_values, values):
            arr.setflags(write=False)
        object.__setattr__(self, "energies", energies)
        object.__setattr__(self, "j_values", j_values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "warnings", tuple(found))

    @property
    def j_min(self) -> int:
        return int(self.j_values[0])

    @property
    def j_max(self) -> int:
        return int(self.j_values[-1])

    @property
    def lambdas(self) -> np.ndarray:
        """Real nodes lambda = J + 1/2."""
        return self.j_values + 0.5

    def energy_index(self, E: float) -> int:
        idx = int(np.searchsorted(self.energies, E))
        for cand in (idx - 1, idx):
            if 0 <= cand < self.energies.size and math.isclose(
                    self.energies[cand], E, rel_tol=1e-12, abs_tol=1e-12):
                return cand
        raise ValidationError(f"E={E} is not a grid energy")

    def is_open(self, E: float) -> bool:
        return self.threshold_energy is None or E >= self.threshold_energy

    def k_squared(self, E: float) -> float:
        return wavevector_squared(self.kinematics, float(E))

    def probabilities(self) -> np.ndarray:
        """Reaction probabilities |S|^2 on the grid."""
        return np.abs(self.values) ** 2

    def row(self, E: float) -> np.ndarray:
        return self.values[self.energy_index(E)]

    def column(self, J: int) -> np.ndarray:
        n = int(J) - self.j_min
        if not 0 <= n < self.j_values.size:
            raise ValidationError(f"J={J} outside table range")
        return self.values[:, n]

    def to_json(self) -> str:
        """Canonical JSON dump consumed by downstream tools."""
        kin = {"mode": self.kinematics.mode}
        if self.kinematics.mode == "reduced-mass":
            kin["mu_amu"] = self.kinematics.mu
        else:
            kin["k_invA"] = [self.kinematics.k_of_E[float(e)] for e in self.energies]
        doc = {
            "transition": str(self.transition),
            "kinematics": kin,
            "threshold_mev": self.threshold_energy,
            "energies_mev": self.energies.tolist(),
            "j_values": self.j_values.tolist(),
            "re_s": self.values.real.tolist(),
            "im_s": self.values.imag.tolist(),
            "warnings": [str(w) for w in self.warnings],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def load_smatrix_table(source, format: str = "csv", *,
                       unitarity_slack: float = UNITARITY_SLACK,
                       check_unitarity: bool = True) -> SMatrixTable:
    """Read an S-matrix CSV from a path, a text stream or a string.

    The header must carry ``# transition: v j omega -> v' j' omega'`` and
    ``# kinematics: mu_amu=<x>`` or ``# kinematics: explicit_k``; an optional
    ``# threshold_mev=<x>`` sets the channel threshold. Data rows are
    ``E_meV, J, Re_S, Im_S[, k_invA]`` in any order.
    """
    if format not in ("csv", "json"):
        raise TableFormatError(f"unsupported format {format!r}")
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and ("\n" in source or source.lstrip()[:1] in ("#", "{")):
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    if format == "json":
        return _table_from_json(text, unitarity_slack, check_unitarity)
    return _table_from_csv(text, unitarity_slack, check_unitarity)


def _table_from_csv(text, unitarity_slack, check_unitarity):
    transition = None
    kin_spec = None
    threshold = None
    cells = {}
    k_rows = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, sep, rest = body.partition(":")
            if sep and key.strip() == "transition":
                transition = TransitionLabel.parse(rest)
            elif sep and key.strip() == "kinematics":
                kin_spec = rest.strip()
            elif body.startswith("threshold_mev"):
                try:
                    threshold = float(body.split("=", 1)[1])
                except (IndexError, ValueError):
                    raise TableFormatError(f"line {lineno}: bad threshold {body!r}") from None
            continue
        parts = [p.strip() for p in line.split(",")]
        if parts[0] == "E_meV":
            continue
        if len(parts) not in (4, 5):
            raise TableFormatError(f"line {lineno}: expected 4 or 5 columns, got {len(parts)}")
        try:
            E = float(parts[0])
            J = int(parts[1])
            s = complex(float(parts[2]), float(parts[3]))
            k = float(parts[4]) if len(parts) == 5 else None
        except ValueError as exc:
            raise TableFormatError(f"line {lineno}: {exc}") from None
        if (E, J) in cells:
            raise TableFormatError(f"duplicate cell (E={E}, J={J}) at line {lineno}")
        cells[(E, J)] = s
        if k is not None:
            if E in k_rows and k_rows[E] != k:
                raise TableFormatError(f"line {lineno}: inconsistent k at E={E}")
            k_rows[E] = k
    if transition is None:
        raise TableFormatError("header is missing '# transition:'")
    if kin_spec is None:
        raise TableFormatError("header is missing '# kinematics:'")
    if not cells:
        raise TableFormatError("no data rows")

    energies = sorted({e for e, _ in cells})
    js = sorted({j for _, j in cells})
    if js != list(range(js[0], js[-1] + 1)):
        raise TableFormatError(f"J values are not contiguous: {js}")
    values = np.empty((len(energies), len(js)), dtype=complex)
    for i, E in enumerate(energies):
        for n, J in enumerate(js):
            try:
                values[i, n] = cells[(E, J)]
            except KeyError:
                raise TableFormatError(f"missing cell (E={E}, J={J})") from None

    if kin_spec.startswith("mu_amu"):
        try:
            kin = Kinematics.reduced_mass(float(kin_spec.split("=", 1)[1]))
        except (IndexError, ValueError):
            raise TableFormatError(f"bad kinematics {kin_spec!r}") from None
    elif kin_spec == "explicit_k":
        missing = [E for E in energies if E not in k_rows]
        if missing:
            raise TableFormatError(f"explicit_k kinematics but no k_invA at E={missing[0]}")
        kin = Kinematics.explicit(k_rows)
    else:
        raise TableFormatError(f"bad kinematics {kin_spec!r}")
    return SMatrixTable(transition, np.array(energies), np.array(js), values, kin,
                        threshold_energy=threshold, unitarity_slack=unitarity_slack,
                        check_unitarity=check_unitarity)


def _table_from_json(text, unitarity_slack, check_unitarity):
    doc = json.loads(text)
    kin_doc = doc["kinematics"]
    energies = doc["energies_mev"]
    if kin_doc["mode"] == "reduced-mass":
        kin = Kinematics.reduced_mass(kin_doc["mu_amu"])
    else:
        kin = Kinematics.explicit(dict(zip(energies, kin_doc["k_invA"])))
    values = np.array(doc["re_s"]) + 1j * np.array(doc["im_s"])
    return SMatrixTable(TransitionLabel.parse(doc["transition"]), np.array(energies),
                        np.array(doc["j_values"]), values, kin,
                        threshold_energy=doc.get("threshold_mev"),
                        unitarity_slack=unitarity_slack, check_unitarity=check_unitarity)


def write_smatrix_csv(table: SMatrixTable, stream: Optional[TextIO] = None) -> str:
    """Serialise ``table`` in the input CSV format (17 significant digits)."""
    out = io.StringIO()
    out.write(f"# transition: {table.transition}\n")
    explicit = table.kinematics.mode == "explicit"
    if explicit:
        out.write("# kinematics: explicit_k\n")
    else:
        out.write(f"# kinematics: mu_amu={table.kinematics.mu!r}\n")
    if table.threshold_energy is not None:
        out.write(f"# threshold_mev={table.threshold_energy!r}\n")
    out.write("E_meV,J,Re_S,Im_S" + (",k_invA" if explicit else "") + "\n")
    for i, E in enumerate(table.energies):
        k_col = f",{table.kinematics.k_of_E[float(E)]:.16e}" if explicit else ""
        for n, J in enumerate(table.j_values):
            s = table.values[i, n]
            out.write(f"{E:.16e},{J},{s.real:.16e},{s.imag:.16e}{k_col}\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def pws_ics(table: SMatrixTable, E: float) -> float:
    """Integral cross section (angstrom^2) from the partial-wave sum.

    sigma = (2 pi / k^2) * sum_{J=J_min}^{J_max} (J + 1/2) |S(E, J)|^2,
    accumulated in ascending J so results are reproducible bit for bit.
    """
    if not table.is_open(E):
        raise ChannelClosedError(
            f"channel closed: E={E} meV below threshold {table.threshold_energy} meV")
    row = table.row(E)
    total = 0.0
    for J, s in zip(table.j_values.tolist(), row.tolist()):
        total += (J + 0.5) * (s.real * s.real + s.imag * s.imag)
    return 2.0 * math.pi / table.k_squared(E) * total


def pws_ics_all(table: SMatrixTable, energies: Optional[Iterable[float]] = None) -> np.ndarray:
    """``pws_ics`` over many energies; closed-channel energies give NaN."""
    energies = table.energies if energies is None else energies
    out = []
    for E in energies:
        try:
            out.append(pws_ics(table, E))
        except ChannelClosedError:
            out.append(math.nan)
    return np.array(out)


def warn_unitarity(table: SMatrixTable) -> None:
    """Re-emit the table's unitarity records through :mod:`warnings`."""
    for w in table.warnings:
        warnings.warn(str(w), RuntimeWarning, stacklevel=2)
