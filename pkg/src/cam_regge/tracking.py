"""Linking per-energy (or per-J) poles into continuous trajectories."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ValidationError

TYPE_I = "type-I"
TYPE_II = "type-II"
UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class TrackPolicy:
    match_radius: float = 0.1
    gap_max: int = 20

    def __post_init__(self):
        if not self.match_radius > 0:
            raise ValidationError("tracking: match_radius must be positive")
        if self.gap_max < 0:
            raise ValidationError("tracking: gap_max must be non-negative")


@dataclass(frozen=True)
class TrajectoryEntry:
    E: float
    lam: complex
    residue: Optional[complex]
    s_conj: Optional[complex] = None
    flags: tuple = ()

    @property
    def J(self) -> complex:
        return self.lam - 0.5


@dataclass
class ReggeTrajectory:
    """Regge pole lambda_n(E) with residue, sorted by energy.

    ``gaps`` holds ``(E_before, E_after)`` pairs of consecutive entries
    between which the pole was not found on the grid.
    """

    label: str
    entries: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return np.array([e.E for e in self.entries])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([e.lam for e in self.entries], dtype=complex)

    @property
    def residues(self) -> np.ndarray:
        return np.array([np.nan if e.residue is None else e.residue for e in self.entries],
                        dtype=complex)

    def entry_at(self, E: float) -> Optional[TrajectoryEntry]:
        for e in self.entries:
            if math.isclose(e.E, E, rel_tol=1e-12, abs_tol=1e-12):
                return e
        return None

    def in_gap(self, E: float) -> bool:
        return any(a < E < b for a, b in self.gaps)


@dataclass(frozen=True)
class CEEntry:
    J: int
    E_pole: complex
    residue_E: Optional[complex]


@dataclass
class CETrajectory:
    """Complex-energy pole E_0(J) followed over integer J."""

    label: str
    entries: list = field(default_factory=list)
    gaps: list = field(default_factory=list)

    @property
    def js(self) -> np.ndarray:
        return np.array([e.J for e in self.entries])

    @property
    def positions(self) -> np.ndarray:
        return np.array([e.E_pole for e in self.entries], dtype=complex)


def _fold(grid, candidates, policy, key_of=lambda item: item[0]):
    """Greedy nearest-neighbour linking with linear velocity prediction.

    ``candidates[k]`` is a list of ``(position, residue, payload)``.
    Returns a list of ``(entries, gaps)`` where entries are
    ``(grid_value, item)`` in grid order.
    """
    active = []
    finished = []
    for g, key in enumerate(grid):
        items = sorted(candidates.get(key, ()),
                       key=lambda it: (it[0].real, it[0].imag,
                                       -abs(it[1]) if it[1] is not None else 0.0))
        pairs = []
        for ti, tr in enumerate(active):
            k_last, last = tr["entries"][-1]
            pred = last[0]
            if len(tr["entries"]) > 1:
                k_prev, prev = tr["entries"][-2]
                pred = last[0] + (last[0] - prev[0]) / (k_last - k_prev) * (key - k_last)
            for ii, it in enumerate(items):
                d = abs(it[0] - pred)
                if d <= policy.match_radius:
                    res = abs(it[1]) if it[1] is not None else 0.0
                    pairs.append((d, -res, ti, ii))
        pairs.sort()
        taken_t, taken_i = set(), set()
        for d, _, ti, ii in pairs:
            if ti in taken_t or ii in taken_i:
                continue
            taken_t.add(ti)
            taken_i.add(ii)
            tr = active[ti]
            if tr["misses"]:
                tr["gaps"].append((tr["entries"][-1][0], key))
                tr["misses"] = 0
            tr["entries"].append((key, items[ii]))
        still = []
        for ti, tr in enumerate(active):
            if ti not in taken_t:
                tr["misses"] += 1
                if tr["misses"] > policy.gap_max:
                    finished.append(tr)
                    continue
            still.append(tr)
        for ii, it in enumerate(items):
            if ii not in taken_i:
                still.append({"entries": [(key, it)], "gaps": [], "misses": 0})
        active = still
    finished.extend(active)
    # creation order: first grid point, then position
    finished.sort(key=lambda tr: (tr["entries"][0][0],
                                  tr["entries"][0][1][0].real, tr["entries"][0][1][0].imag))
    return [(tr["entries"], tr["gaps"]) for tr in finished]


def track(per_energy_poles: Mapping, policy: TrackPolicy = TrackPolicy(),
          label_prefix: str = "T") -> list:
    """Link Regge poles found at successive energies into trajectories.

    ``per_energy_poles`` maps every grid energy (including those with no
    poles) to a list of :class:`~cam_regge.pade.ComplexPole`. A trajectory
    survives up to ``gap_max`` consecutive misses; longer absences close it.
    """
    grid = sorted(float(e) for e in per_energy_poles)
    candidates = {}
    for E, poles in per_energy_poles.items():
        candidates[float(E)] = [(complex(p.position), p.residue, p) for p in poles]
    out = []
    for n, (entries, gaps) in enumerate(_fold(grid, candidates, policy), start=1):
        traj_entries = [TrajectoryEntry(E=E, lam=complex(item[0]), residue=item[1],
                                        s_conj=getattr(item[2], "s_conj", None),
                                        flags=tuple(getattr(item[2], "flags", ())))
                        for E, item in entries]
        out.append(ReggeTrajectory(f"{label_prefix}{n}", traj_entries, list(gaps)))
    return out


def track_ce(per_j_poles: Mapping, policy: TrackPolicy = TrackPolicy(match_radius=0.5),
             label_prefix: str = "CE") -> list:
    """Link complex-energy poles over integer J into CE trajectories."""
    grid = sorted(int(j) for j in per_j_poles)
    candidates = {int(J): [(complex(p.position), p.residue, p) for p in poles]
                  for J, poles in per_j_poles.items()}
    out = []
    for n, (entries, gaps) in enumerate(_fold(grid, candidates, policy), start=1):
        ce_entries = [CEEntry(J=int(J), E_pole=complex(item[0]), residue_E=item[1])
                      for J, item in entries]
        out.append(CETrajectory(f"{label_prefix}{n}", ce_entries, list(gaps)))
    return out


def concatenate_tracks(first: Sequence[ReggeTrajectory], second: Sequence[ReggeTrajectory],
                       policy: TrackPolicy = TrackPolicy()) -> list:
    """Join trajectories tracked on two adjacent half grids.

    A trajectory of ``second`` that starts on the first energy after the
    seam continues the ``first`` trajectory whose velocity-predicted
    position is nearest (within ``match_radius``). Labels are reassigned
    in creation order, as :func:`track` would.
    """
    seam_a = max(e.E for tr in first for e in tr.entries)
    seam_b = min(e.E for tr in second for e in tr.entries)
    enders = [tr for tr in first if tr.entries[-1].E == seam_a]
    starters = [tr for tr in second if tr.entries[0].E == seam_b]
    pairs = []
    for ti, tr in enumerate(enders):
        last = tr.entries[-1]
        pred = last.lam
        if len(tr.entries) > 1:
            prev = tr.entries[-2]
            pred = last.lam + (last.lam - prev.lam) / (last.E - prev.E) * (seam_b - last.E)
        for si, st in enumerate(starters):
            d = abs(st.entries[0].lam - pred)
            if d <= policy.match_radius:
                res = st.entries[0].residue
                pairs.append((d, -(abs(res) if res is not None else 0.0), ti, si))
    pairs.sort()
    joined, used_t, used_s = {}, set(), set()
    for _, _, ti, si in pairs:
        if ti not in used_t and si not in used_s:
            used_t.add(ti)
            used_s.add(si)
            joined[ti] = si
    merged = []
    for tr in first:
        if tr in enders and enders.index(tr) in joined:
            st = starters[joined[enders.index(tr)]]
            merged.append(ReggeTrajectory("", tr.entries + st.entries, tr.gaps + st.gaps))
        else:
            merged.append(ReggeTrajectory("", list(tr.entries), list(tr.gaps)))
    for si, st in enumerate(starters):
        if si not in used_s:
            merged.append(ReggeTrajectory("", list(st.entries), list(st.gaps)))
    merged.extend(ReggeTrajectory("", list(tr.entries), list(tr.gaps))
                  for tr in second if tr not in starters)
    merged.sort(key=lambda tr: (tr.entries[0].E, tr.entries[0].lam.real, tr.entries[0].lam.imag))
    for n, tr in enumerate(merged, start=1):
        tr.label = f"T{n}"
    return merged


def merge_labels(trajectories: Sequence[ReggeTrajectory], directive: Mapping[str, Sequence[str]]):
    """Apply a manual merge directive ``{new_label: [old_label, ...]}``.

    Used for identifications the geometric tracker cannot make, such as
    joining the two halves of a weak multiplet member across a long gap.
    """
    by_label = {tr.label: tr for tr in trajectories}
    consumed = set()
    merged = []
    for new, olds in directive.items():
        parts = []
        for old in olds:
            if old not in by_label:
                raise ValidationError(f"merge directive names unknown trajectory {old!r}")
            if old in consumed:
                raise ValidationError(f"trajectory {old!r} merged twice")
            consumed.add(old)
            parts.append(by_label[old])
        entries = sorted((e for p in parts for e in p.entries), key=lambda e: e.E)
        if len({e.E for e in entries}) != len(entries):
            raise ValidationError(f"merge {new!r}: overlapping energies")
        gaps = [g for p in parts for g in p.gaps]
        for p, q in zip(sorted(parts, key=lambda t: t.entries[0].E),
                        sorted(parts, key=lambda t: t.entries[0].E)[1:]):
            gaps.append((p.entries[-1].E, q.entries[0].E))
        merged.append(ReggeTrajectory(new, entries, sorted(gaps)))
    rest = [tr for tr in trajectories if tr.label not in consumed]
    return rest + merged


def _moving_average(x, window):
    return np.convolve(x, np.ones(window) / window, mode="valid")


def classify_type(traj, *, window: int = 5, trend_tol: float = 0.02,
                  near_axis: float = 0.5) -> str:
    """Classify a Regge trajectory from the trend of Im lambda(E).

    Type I: the smoothed Im lambda first decreases to an interior minimum
    (the state has to be lowered) and then rises. Type II: it starts near
    the axis (``Im lambda <= near_axis``) and never decreases by more than
    the trend tolerance. Anything else is undetermined.
    """
    if isinstance(traj, CETrajectory):
        raise ValidationError("use classify_ce_type for complex-energy trajectories")
    if len(traj.entries) < max(window, 5):
        return UNDETERMINED
    im = np.array([e.lam.imag for e in traj.entries])
    smooth = _moving_average(im, window)
    tol = trend_tol * max(float(np.max(np.abs(smooth))), 1e-300)
    m = int(np.argmin(smooth))
    if 0 < m < smooth.size - 1 and smooth[0] - smooth[m] > tol and smooth[-1] - smooth[m] > tol:
        return TYPE_I
    if np.all(np.diff(smooth) >= -tol) and smooth[-1] - smooth[0] > tol and im[0] <= near_axis:
        return TYPE_II
    return UNDETERMINED


def classify_ce_type(ce: CETrajectory, threshold: float) -> str:
    """Type from the lowest-J complex energy relative to the channel threshold."""
    if not ce.entries:
        return UNDETERMINED
    lowest = min(ce.entries, key=lambda e: e.J)
    return TYPE_I if lowest.E_pole.real > threshold else TYPE_II


def integer_crossings(energies, re_j):
    """Where a piecewise-linear Re J(E) crosses integers.

    Returns ``(K, E_K, i)`` triples with ``E_K`` in ``[energies[i], energies[i+1])``.
    """
    out = []
    for i in range(len(energies) - 1):
        a, b = re_j[i], re_j[i + 1]
        lo, hi = min(a, b), max(a, b)
        k0 = math.ceil(lo)
        for K in range(k0, math.floor(hi) + 1):
            if K == b and a != b:
                continue  # counted as the left end of the next interval
            if a == b:
                if a == K:
                    out.append((K, energies[i], i))
                continue
            frac = (K - a) / (b - a)
            out.append((K, energies[i] + frac * (energies[i + 1] - energies[i]), i))
    if len(re_j) and float(re_j[-1]).is_integer() and (
            len(re_j) == 1 or re_j[-2] != re_j[-1]):
        out.append((int(re_j[-1]), energies[-1], len(re_j) - 1))
    return out


def smooth_near_axis(traj: ReggeTrajectory) -> ReggeTrajectory:
    """Replace Im lambda by a monotone cubic through its integer-crossing values.

    Between the first and last crossing of Re J with an integer the
    imaginary part is resampled from a PCHIP interpolant; affected entries
    get the ``smoothed`` flag. Trajectories with fewer than two crossings
    are returned unchanged.
    """
    E = traj.energies
    lam = traj.lambdas
    if E.size < 2:
        return traj
    xs = integer_crossings(E, lam.real - 0.5)
    if len(xs) < 2:
        return traj
    ek = np.array([x[1] for x in xs])
    im_k = np.interp(ek, E, lam.imag)
    ek, idx = np.unique(ek, return_index=True)
    if ek.size < 2:
        return traj
    interp = PchipInterpolator(ek, im_k[idx])
    entries = []
    for e in traj.entries:
        if ek[0] <= e.E <= ek[-1]:
            lam_new = complex(e.lam.real, float(interp(e.E)))
            entries.append(replace(e, lam=lam_new, flags=tuple(e.flags) + ("smoothed",)))
        else:
            entries.append(e)
    return ReggeTrajectory(traj.label, entries, list(traj.gaps))


TRAJECTORY_COLUMNS = ["label", "E_meV", "re_J", "im_J", "re_residue", "im_residue",
                      "smoothed_flag", "gap_flag"]
CE_COLUMNS = ["label", "J", "re_E", "im_E", "re_residue", "im_residue", "gap_flag"]


def _r(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def trajectories_to_csv(trajectories: Sequence[ReggeTrajectory], grid=None) -> str:
    """Long-format trajectory CSV; gap rows carry NaN values and ``gap_flag=1``.

    With ``grid`` every missing grid energy inside a gap gets a row,
    otherwise one row at the gap midpoint.
    """
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    grid = None if grid is None else sorted(float(g) for g in grid)
    for tr in trajectories:
        rows = []
        for e in tr.entries:
            res = e.residue if e.residue is not None else complex(math.nan, math.nan)
            rows.append((e.E, [tr.label, _r(e.E), _r(e.lam.real - 0.5), _r(e.lam.imag),
                               _r(res.real), _r(res.imag),
                               int("smoothed" in e.flags), 0]))
        for a, b in tr.gaps:
            inside = [g for g in grid if a < g < b] if grid else [0.5 * (a + b)]
            for g in inside:
                rows.append((g, [tr.label, _r(g), "nan", "nan", "nan", "nan", 0, 1]))
        rows.sort(key=lambda r: r[0])
        for _, row in rows:
            w.writerow(row)
    return out.getvalue()


def trajectories_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != TRAJECTORY_COLUMNS:
        raise ValidationError(f"trajectory CSV header must be {TRAJECTORY_COLUMNS}")
    by_label = {}
    order = []
    for row in reader:
        label = row["label"]
        if label not in by_label:
            by_label[label] = []
            order.append(label)
        by_label[label].append(row)
    out = []
    for label in order:
        rows = sorted(by_label[label], key=lambda r: float(r["E_meV"]))
        entries, gaps = [], []
        pending_gap = False
        for row in rows:
            if row["gap_flag"] == "1":
                pending_gap = True
                continue
            E = float(row["E_meV"])
            res = complex(float(row["re_residue"]), float(row["im_residue"]))
            if pending_gap and entries:
                gaps.append((entries[-1].E, E))
            pending_gap = False
            entries.append(TrajectoryEntry(
                E=E, lam=complex(float(row["re_J"]) + 0.5, float(row["im_J"])),
                residue=None if math.isnan(res.real) else res,
                flags=("smoothed",) if row["smoothed_flag"] == "1" else ()))
        out.append(ReggeTrajectory(label, entries, gaps))
    return out


def ce_trajectories_to_csv(trajectories: Sequence[CETrajectory]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CE_COLUMNS)
    for tr in trajectories:
        rows = []
        for e in tr.entries:
            res = e.residue_E if e.residue_E is not None else complex(math.nan, math.nan)
            rows.append((e.J, [tr.label, e.J, _r(e.E_pole.real), _r(e.E_pole.imag),
                               _r(res.real), _r(res.imag), 0]))
        for a, b in tr.gaps:
            for J in range(int(a) + 1, int(b)):
                rows.append((J, [tr.label, J, "nan", "nan", "nan", "nan", 1]))
        rows.sort(key=lambda r: r[0])
        for _, row in rows:
            w.writerow(row)
    return out.getvalue()


def ce_trajectories_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != CE_COLUMNS:
        raise ValidationError(f"CE trajectory CSV header must be {CE_COLUMNS}")
    by_label, order = {}, []
    for row in reader:
        by_label.setdefault(row["label"], []).append(row)
        if row["label"] not in order:
            order.append(row["label"])
    out = []
    for label in order:
        entries, gaps, pending = [], [], False
        for row in sorted(by_label[label], key=lambda r: int(r["J"])):
            if row["gap_flag"] == "1":
                pending = True
                continue
            if pending and entries:
                gaps.append((entries[-1].J, int(row["J"])))
            pending = False
            res = complex(float(row["re_residue"]), float(row["im_residue"]))
            entries.append(CEEntry(J=int(row["J"]),
                                   E_pole=complex(float(row["re_E"]), float(row["im_E"])),
                                   residue_E=None if math.isnan(res.real) else res))
        out.append(CETrajectory(label, entries, gaps))
    return out
