"""Regge-pole decomposition of the integral cross section.

sigma(E) = sum_n sigma_n^res(E) + (2 pi / k^2) int |S(E, lambda)|^2 lambda dlambda + I(E)

with the remainder I obtained by subtraction from the partial-wave sum.
"""

from __future__ import annotations

import cmath
import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import CamError, NumericalError, PoleEvaluationError, QuadratureError, ValidationError
from .pade import PadePolicy, RationalApproximant, approximant_at_energy, conjugate_evaluate
from .scatter import SMatrixTable, pws_ics
from .tracking import ReggeTrajectory, integer_crossings

LOWER_LIMIT_SHIFT = 0.5
QUAD_RTOL = 1e-8
QUAD_MAX_REFINEMENTS = 20
_GL_X, _GL_W = leggauss(10)


def resonance_term(lam: complex, rho: complex, s_conj: complex, k2: float) -> float:
    """Contribution of one Regge pole to the cross section (angstrom^2).

    (8 pi^2 / k^2) Im[ lam rho S*(E, lam*) / (1 + exp(-2 i pi lam)) ], evaluated
    as ``w q / (1 + q)`` with ``q = exp(2 i pi lam)`` so deep poles do not
    overflow. May be negative.
    """
    lam = complex(lam)
    if not lam.imag > 0:
        raise ValidationError(f"Regge pole must have Im lambda > 0, got {lam}")
    if not k2 > 0:
        raise ValidationError("k^2 must be positive")
    q = cmath.exp(2j * math.pi * lam)
    if abs(1.0 + q) < 1e-14 * abs(q):
        raise NumericalError("pole exactly at half-integer real lambda with zero width")
    w = lam * complex(rho) * complex(s_conj)
    return 8.0 * math.pi**2 / k2 * (w * q / (1.0 + q)).imag


def _gl_panels(f, lo, hi):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = f(pts.ravel()).reshape(pts.shape)
    return half * (vals @ _GL_W)


def adaptive_gauss_legendre(f, breakpoints, rtol=QUAD_RTOL, max_refinements=QUAD_MAX_REFINEMENTS):
    """Integrate ``f`` over panels between ``breakpoints`` with bisection refinement.

    A panel is accepted when halving it changes its estimate by less than
    its width-proportional share of ``rtol * |total|``. Raises
    ``QuadratureError`` (carrying the last estimate) when panels remain
    unconverged after ``max_refinements`` rounds.
    """
    bp = np.asarray(breakpoints, dtype=float)
    lo, hi = bp[:-1], bp[1:]
    length = bp[-1] - bp[0]
    coarse = _gl_panels(f, lo, hi)
    accepted = 0.0
    total = float(np.sum(coarse))
    for _ in range(max_refinements + 1):
        mid = 0.5 * (lo + hi)
        left = _gl_panels(f, lo, mid)
        right = _gl_panels(f, mid, hi)
        fine = left + right
        total = accepted + float(np.sum(fine))
        share = rtol * abs(total) * (hi - lo) / length
        ok = np.abs(fine - coarse) <= share
        accepted += float(np.sum(fine[ok]))
        if np.all(ok):
            return total
        bad = ~ok
        lo = np.concatenate([lo[bad], mid[bad]])
        hi = np.concatenate([mid[bad], hi[bad]])
        coarse = np.concatenate([left[bad], right[bad]])
    raise QuadratureError(f"quadrature did not converge after {max_refinements} refinements",
                          estimate=total)


def background_integral(ra: RationalApproximant, j_min: int, k2: float, *,
                        lower_shift: float = LOWER_LIMIT_SHIFT,
                        lam_cap: Optional[float] = None,
                        rtol: float = QUAD_RTOL) -> float:
    """(2 pi / k^2) * integral of |S(E, lambda)|^2 lambda over real lambda.

    Integration runs from ``j_min + lower_shift`` to ``lam_cap`` (default:
    last sampled lambda + 1/2), beyond which |S|^2 is taken as zero.
    """
    lo = j_min + lower_shift
    hi = ra.window[1] + 0.5 if lam_cap is None else float(lam_cap)
    if hi <= lo:
        return 0.0
    n = max(int(math.ceil(hi - lo)), 1)
    bp = np.linspace(lo, hi, n + 1)

    def integrand(lam):
        s = ra.cf_value(lam)
        return lam * (s.real**2 + s.imag**2)

    return 2.0 * math.pi / k2 * adaptive_gauss_legendre(integrand, bp, rtol=rtol)


def attach_s_conj(traj: ReggeTrajectory, approximants: Mapping[float, RationalApproximant]):
    """Fill missing S*(E, lambda_n*) values from the per-energy approximants."""
    entries = []
    for e in traj.entries:
        if e.s_conj is None and e.E in approximants:
            try:
                e = replace(e, s_conj=complex(conjugate_evaluate(approximants[e.E], e.lam)))
            except PoleEvaluationError:
                pass
        entries.append(e)
    return ReggeTrajectory(traj.label, entries, list(traj.gaps))


@dataclass
class DecompositionResult:
    energies: np.ndarray
    sigma_exact: np.ndarray
    sigma_back_integral: np.ndarray
    sigma_res: dict
    residual_I: np.ndarray
    status: list
    lower_shift: float = LOWER_LIMIT_SHIFT
    messages: list = field(default_factory=list)

    @property
    def sigma_res_total(self) -> np.ndarray:
        total = np.zeros_like(self.sigma_exact)
        for arr in self.sigma_res.values():
            total = total + arr
        return total

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        labels = list(self.sigma_res)
        w.writerow(["E_meV", "sigma_exact", "sigma_back_int"]
                   + [f"sigma_res_{lab}" for lab in labels] + ["residual_I"])
        for i, E in enumerate(self.energies):
            w.writerow([repr(float(E)), repr(float(self.sigma_exact[i])),
                        repr(float(self.sigma_back_integral[i]))]
                       + [repr(float(self.sigma_res[lab][i])) for lab in labels]
                       + [repr(float(self.residual_I[i]))])
        return out.getvalue()


def _decompose_one(table, trajectories, policy, lower_shift, item):
    E, ra = item
    msgs = []
    complete = True
    try:
        exact = pws_ics(table, E)
        k2 = table.k_squared(E)
    except CamError as exc:
        return math.nan, math.nan, {t.label: math.nan for t in trajectories}, \
            "incomplete", [f"E={E}: {exc}"]
    try:
        if ra is None:
            ra = approximant_at_energy(table, E, policy)
        back = background_integral(ra, table.j_min, k2, lower_shift=lower_shift,
                                   lam_cap=table.j_max + 1.0)
    except CamError as exc:
        back, complete = math.nan, False
        msgs.append(f"E={E}: background: {exc}")
    res = {}
    for tr in trajectories:
        entry = tr.entry_at(E)
        if entry is None:
            res[tr.label] = 0.0
            continue
        try:
            s_conj = entry.s_conj
            if s_conj is None:
                if ra is None:
                    raise NumericalError("no approximant for S*")
                s_conj = complex(conjugate_evaluate(ra, entry.lam))
            if entry.residue is None:
                raise NumericalError("pole has no residue")
            res[tr.label] = resonance_term(entry.lam, entry.residue, s_conj, k2)
        except (CamError, ValueError) as exc:
            res[tr.label] = math.nan
            complete = False
            msgs.append(f"E={E}: {tr.label}: {exc}")
    return exact, back, res, "ok" if complete else "incomplete", msgs


def decompose(table: SMatrixTable, trajectories: Sequence[ReggeTrajectory] = (),
              approximants: Optional[Mapping[float, RationalApproximant]] = None, *,
              policy: PadePolicy = PadePolicy(), lower_shift: float = LOWER_LIMIT_SHIFT,
              jobs: int = 1) -> DecompositionResult:
    """Split the partial-wave cross section at every grid energy.

    Trajectories contribute zero at energies where they have no entry
    (outside their range or inside a gap). A failing constituent marks the
    energy ``incomplete`` and leaves NaN in that column; the run continues.
    The remainder ``residual_I`` is ``sigma_exact - sigma_back - sum(sigma_res)``.
    """
    approximants = approximants or {}
    energies = table.energies
    items = [(float(E), approximants.get(float(E))) for E in energies]
    worker = partial(_decompose_one, table, list(trajectories), policy, lower_shift)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(worker, items, chunksize=max(1, len(items) // (4 * jobs))))
    else:
        rows = [worker(it) for it in items]

    labels = [tr.label for tr in trajectories]
    exact = np.array([r[0] for r in rows])
    back = np.array([r[1] for r in rows])
    res = {lab: np.array([r[2][lab] for r in rows]) for lab in labels}
    residual = np.empty_like(exact)
    for i in range(exact.size):
        acc = exact[i] - back[i]
        for lab in labels:
            acc -= res[lab][i]
        residual[i] = acc
    messages = [m for r in rows for m in r[4]]
    return DecompositionResult(energies=np.array(energies), sigma_exact=exact,
                               sigma_back_integral=back, sigma_res=res, residual_I=residual,
                               status=[r[3] for r in rows], lower_shift=lower_shift,
                               messages=messages)


@dataclass(frozen=True)
class FanoFeature:
    label: str
    K: int
    E_K: float
    Gamma_K: Optional[float]
    gamma_K: Optional[complex]
    flags: tuple = ()


def _crossing_root(E, re_j, i, K):
    """Refine a bracketed crossing with the quadratic through three grid points."""
    n = len(E)
    a, b = re_j[i], re_j[i + 1] if i + 1 < n else re_j[i]
    if i + 1 >= n or a == b:
        return E[i]
    lin = E[i] + (K - a) / (b - a) * (E[i + 1] - E[i])
    if n < 3:
        return lin
    if i == 0:
        idx = (0, 1, 2)
    elif i + 2 >= n:
        idx = (n - 3, n - 2, n - 1)
    else:
        # extra point on the side closer to the crossing
        idx = (i - 1, i, i + 1) if lin - E[i] < E[i + 1] - lin else (i, i + 1, i + 2)
    x = np.array([E[j] for j in idx])
    y = np.array([re_j[j] for j in idx]) - K
    x0 = x[1]
    c2, c1, c0 = np.polyfit(x - x0, y, 2)
    if abs(c2) * (E[i + 1] - E[i]) ** 2 < 1e-14 * max(abs(c1) * (E[i + 1] - E[i]), 1e-300):
        return lin
    disc = c1 * c1 - 4 * c2 * c0
    if disc < 0:
        return lin
    sq = math.sqrt(disc)
    q = -0.5 * (c1 + math.copysign(sq, c1))
    roots = [q / c2, c0 / q if q != 0 else math.inf]
    lo, hi = E[i], E[i + 1]
    inside = [r + x0 for r in roots if lo - 1e-12 * (hi - lo) <= r + x0 <= hi + 1e-12 * (hi - lo)]
    if not inside:
        return lin
    return min(inside, key=lambda r: abs(r - lin))


def find_integer_crossings(traj: ReggeTrajectory) -> list:
    """Fano features where Re J_n(E) passes through integers K.

    The crossing energy is bracketed on the piecewise-linear Re J and
    refined with a local quadratic; dRe(lambda)/dE comes from central
    differences on the grid. Width ``2 Im lambda / dRe(lambda)/dE`` and
    strength ``lambda rho S* / dRe(lambda)/dE`` use linearly interpolated
    trajectory values. Crossings inside gaps are skipped.
    """
    if len(traj.entries) < 2:
        return []
    E = traj.energies
    lam = traj.lambdas
    re_j = lam.real - 0.5
    slope = np.gradient(lam.real, E, edge_order=1)
    rho = traj.residues
    s_conj = np.array([np.nan if e.s_conj is None else e.s_conj for e in traj.entries],
                      dtype=complex)
    gap_starts = {a for a, _ in traj.gaps}
    features = []
    for K, _, i in integer_crossings(E, re_j):
        if i + 1 < E.size and E[i] in gap_starts:
            continue
        ek = float(_crossing_root(E, re_j, i, K))
        d = float(np.interp(ek, E, slope))
        lam_k = complex(np.interp(ek, E, lam.real), np.interp(ek, E, lam.imag))
        rho_k = complex(np.interp(ek, E, rho.real), np.interp(ek, E, rho.imag))
        s_k = complex(np.interp(ek, E, s_conj.real), np.interp(ek, E, s_conj.imag))
        flags = ()
        if d <= 0:
            features.append(FanoFeature(traj.label, K, ek, None, None, ("non-monotone",)))
            continue
        gamma = lam_k * rho_k * s_k / d
        if cmath.isnan(gamma):
            gamma, flags = None, ("no-s-conj",)
        features.append(FanoFeature(traj.label, K, ek, 2.0 * lam_k.imag / d, gamma, flags))
    return features


# Both closed forms must agree with resonance_term to first order in their
# own limits; this fixes the -4 pi and 8 pi^2 prefactors.
def fano_approx(features: Sequence[FanoFeature], k2: float, E):
    """Sum of Fano line shapes -(4 pi / k^2) Re gamma_K / (E - E_K + i Gamma_K / 2)."""
    E = np.asarray(E, dtype=float)
    acc = np.zeros(E.shape, dtype=complex)
    for f in features:
        if f.Gamma_K is None or f.gamma_K is None:
            continue
        acc = acc + f.gamma_K / (E - f.E_K + 0.5j * f.Gamma_K)
    out = -4.0 * math.pi / np.asarray(k2) * acc.real
    return out[()] if out.ndim == 0 else out


def oscillation_approx(lam: complex, rho: complex, s_conj: complex, k2: float) -> float:
    """Deep-pole form (8 pi^2 / k^2) |w| exp(-2 pi Im lambda) sin(2 pi Re lambda + arg w)."""
    w = complex(lam) * complex(rho) * complex(s_conj)
    return (8.0 * math.pi**2 / k2 * abs(w) * math.exp(-2.0 * math.pi * lam.imag)
            * math.sin(2.0 * math.pi * lam.real + cmath.phase(w)))


FANO_COLUMNS = ["label", "K", "E_K_meV", "Gamma_K_meV", "re_gamma", "im_gamma"]


def fano_to_csv(features: Sequence[FanoFeature]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(FANO_COLUMNS)
    for f in features:
        g = f.gamma_K if f.gamma_K is not None else complex(math.nan, math.nan)
        gam = "nan" if f.Gamma_K is None else repr(float(f.Gamma_K))
        w.writerow([f.label, f.K, repr(float(f.E_K)), gam, repr(g.real), repr(g.imag)])
    return out.getvalue()
