"""Rational (Pade) continuation of S along one variable.

The interpolant is a Thiele continued fraction built from inverse
differences of the samples,

    C(z) = a0 + (z - z0) / (a1 + (z - z1) / (a2 + ...)),

so it needs only values at the sample points (integer J, or grid energies).
Nodes enter the fraction greedily, largest current interpolation error
first; construction stops as soon as every sample is reproduced, which
keeps exact rational data at its true degree.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import DegenerateDataError, PoleEvaluationError, ValidationError

ANGULAR_MOMENTUM = "angular-momentum"
ENERGY = "energy"

FIT_RTOL = 1e-12
NEWTON_MAXITER = 50
NEWTON_TOL = 1e-12
POLE_GUARD = 1e-12
MULTIPLE_ROOT_TOL = 1e-6


@dataclass(frozen=True)
class PadePolicy:
    """Construction and filtering knobs for one continuation axis."""

    eps_froissart: float = 1e-3
    residue_floor: float = 1e-8
    stability_fraction: float = 0.8
    match_radius: float = 0.1
    im_max: float = 3.0
    # "upper" keeps Im > 0 (Regge poles), "lower" keeps Im < 0 (decaying CE poles)
    half_plane: Optional[str] = "upper"
    fit_rtol: float = FIT_RTOL
    # poles whose real part lies farther than this outside the node window are dropped
    window_margin: float = 1.0
    max_nodes: Optional[int] = None
    window: Optional[int] = None
    loo: bool = True

    def __post_init__(self):
        for name in ("eps_froissart", "residue_floor", "stability_fraction",
                     "match_radius", "im_max", "fit_rtol"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"pade policy: {name} must be positive")
        if self.stability_fraction > 1:
            raise ValidationError("pade policy: stability_fraction must be <= 1")
        if self.half_plane not in (None, "upper", "lower"):
            raise ValidationError(f"pade policy: bad half_plane {self.half_plane!r}")
        if self.window_margin < 0:
            raise ValidationError("pade policy: window_margin must be non-negative")
        for name in ("max_nodes", "window"):
            value = getattr(self, name)
            if value is not None and value < 4:
                raise ValidationError(f"pade policy: {name} must be >= 4")

    @classmethod
    def energy_axis(cls, **overrides) -> "PadePolicy":
        params = dict(im_max=10.0, half_plane="lower", match_radius=0.1, max_nodes=40,
                      window_margin=0.0)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True, eq=False)
class RationalApproximant:
    """Continued-fraction interpolant plus its numerator/denominator polynomials.

    Polynomial coefficients are ascending powers of the scaled variable
    ``t = (z - center) / scale``, which keeps them well conditioned over
    the node window; :meth:`num` and :meth:`den` take the original variable.
    """

    axis: str
    fixed_value: Optional[float]
    nodes: np.ndarray
    cf_coeffs: np.ndarray
    num_poly: np.ndarray
    den_poly: np.ndarray
    center: float
    scale: float
    window: tuple
    sample_x: np.ndarray = field(repr=False)
    sample_f: np.ndarray = field(repr=False)

    @property
    def num_degree(self) -> int:
        return len(self.num_poly) - 1

    @property
    def den_degree(self) -> int:
        return len(self.den_poly) - 1

    def _t(self, z):
        return (np.asarray(z, dtype=complex) - self.center) / self.scale

    def num(self, z):
        return npoly.polyval(self._t(z), self.num_poly)

    def den(self, z):
        return npoly.polyval(self._t(z), self.den_poly)

    def den_prime(self, z):
        return npoly.polyval(self._t(z), npoly.polyder(self.den_poly)) / self.scale

    def cf_value(self, z):
        """Backward evaluation of the continued fraction (no pole check)."""
        z = np.asarray(z, dtype=complex)
        a = self.cf_coeffs
        x = self.nodes
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            v = np.full(z.shape, a[-1], dtype=complex)
            for k in range(len(a) - 2, -1, -1):
                v = a[k] + (z - x[k]) / v
        return v

    def ratio_value(self, z):
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.num(z) / self.den(z)

    @cached_property
    def den_roots(self) -> np.ndarray:
        if self.den_degree < 1:
            return np.empty(0, dtype=complex)
        return self.center + self.scale * npoly.polyroots(self.den_poly)

    @cached_property
    def num_roots(self) -> np.ndarray:
        if self.num_degree < 1:
            return np.empty(0, dtype=complex)
        return self.center + self.scale * npoly.polyroots(self.num_poly)


def _samples_arrays(samples):
    pairs = list(samples)
    x = np.array([float(p[0]) for p in pairs])
    f = np.array([complex(p[1]) for p in pairs])
    return x, f


def build_rational(samples: Iterable, *, axis: str = ANGULAR_MOMENTUM,
                   fixed_value: Optional[float] = None, fit_rtol: float = FIT_RTOL,
                   max_nodes: Optional[int] = None) -> RationalApproximant:
    """Build the continued-fraction interpolant through ``(abscissa, value)`` pairs.

    Parameters
    ----------
    samples :
        At least four ``(x, S(x))`` pairs with distinct real abscissae.
    axis, fixed_value :
        Bookkeeping: which variable is continued and the value held fixed.
    fit_rtol :
        A sample counts as reproduced when the fraction matches it to this
        relative accuracy; construction ends once all samples are reproduced.
    max_nodes :
        Optional cap on the number of nodes entering the fraction.

    Raises
    ------
    ValidationError
        Fewer than four samples or duplicate abscissae.
    DegenerateDataError
        No candidate node yields a finite inverse difference.
    """
    x, f = _samples_arrays(samples)
    if x.size < 4:
        raise ValidationError("rational interpolation needs at least 4 samples")
    if np.unique(x).size != x.size:
        raise ValidationError("duplicate abscissae in rational interpolation samples")
    if not np.all(np.isfinite(f)):
        raise ValidationError("samples must be finite")

    lo, hi = float(x.min()), float(x.max())
    center, scale = 0.5 * (lo + hi), 0.5 * (hi - lo)
    limit = x.size if max_nodes is None else min(int(max_nodes), x.size)
    fscale = float(np.max(np.abs(f))) if np.any(f) else 1.0
    tol = fit_rtol * np.maximum(np.abs(f), 1e-3 * fscale)

    remaining = np.arange(x.size)
    phi = f.copy()
    coeffs: list = []
    pivots: list = []
    approx = np.zeros_like(f)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        while remaining.size and len(coeffs) < limit:
            err = np.abs(approx[remaining] - f[remaining])
            if coeffs and np.all(err <= tol[remaining]):
                break
            order = np.argsort(-np.nan_to_num(err, nan=np.inf), kind="stable")
            chosen = None
            for pos in order:
                a = phi[remaining[pos]]
                if not np.isfinite(a) or abs(a) > 1e250:
                    continue
                if coeffs and abs(a) < 1e-250:
                    continue
                chosen = pos
                break
            if chosen is None:
                raise DegenerateDataError("degenerate data: every pivot order "
                                          "overflows the inverse differences")
            p = remaining[chosen]
            a = phi[p]
            coeffs.append(a)
            pivots.append(p)
            remaining = np.delete(remaining, chosen)
            phi[remaining] = _inverse_difference(x[remaining] - x[p], phi[remaining], a)
            approx = _cf_eval(np.array(coeffs), x[pivots], x)

    a = np.array(coeffs, dtype=complex)
    nodes = x[pivots]
    num, den = _cf_polynomials(a, (nodes - center) / scale, scale)
    _check_attainable(a, nodes, f[pivots], num, den, center, scale, fscale)
    return RationalApproximant(axis=axis, fixed_value=fixed_value, nodes=nodes,
                               cf_coeffs=a, num_poly=num, den_poly=den,
                               center=center, scale=scale, window=(lo, hi),
                               sample_x=x, sample_f=f)


def _check_attainable(a, nodes, f_nodes, num, den, center, scale, fscale):
    """Raise when a pivot node is not reproduced (no interpolant of this type exists)."""
    tol = 1e-8 * np.maximum(np.abs(f_nodes), 1e-3 * fscale)
    with np.errstate(all="ignore"):
        cf = _cf_eval(a, nodes, nodes)
        t = (nodes - center) / scale
        ratio = npoly.polyval(t, num) / npoly.polyval(t, den)
    good = (np.abs(cf - f_nodes) <= tol) | (np.abs(ratio - f_nodes) <= tol)
    if not np.all(good):
        bad = nodes[~good][0]
        raise DegenerateDataError(f"degenerate data: unattainable sample at x={bad}")


def _inverse_difference(dx, phi, a):
    # complex 1/0 must become inf and dx/inf must become 0 (numpy gives nan)
    out = np.empty_like(phi)
    infinite = ~np.isfinite(phi)
    diff = phi - a
    zero = ~infinite & (diff == 0)
    ok = ~infinite & ~zero
    out[infinite] = 0.0
    out[zero] = complex(np.inf, 0.0)
    out[ok] = dx[ok] / diff[ok]
    return out


def _cf_eval(a, nodes, z):
    v = np.full(z.shape, a[-1], dtype=complex)
    for k in range(len(a) - 2, -1, -1):
        v = a[k] + (z - nodes[k]) / v
    return v


def _trim(c, rel=1e-13):
    c = np.array(c, dtype=complex)
    big = np.max(np.abs(c)) if c.size else 0.0
    n = c.size
    while n > 1 and abs(c[n - 1]) <= rel * big:
        n -= 1
    return c[:n]


def _cf_polynomials(a, u, scale):
    """Numerator/denominator from the three-term recurrence, in t-coordinates."""
    p_prev, p = np.array([1.0 + 0j]), np.array([a[0]])
    q_prev, q = np.array([0.0 + 0j]), np.array([1.0 + 0j])
    for k in range(1, len(a)):
        lin = scale * np.array([-u[k - 1], 1.0])
        p_new = npoly.polyadd(a[k] * p, npoly.polymul(lin, p_prev))
        q_new = npoly.polyadd(a[k] * q, npoly.polymul(lin, q_prev))
        norm = np.max(np.abs(q_new)) or 1.0
        p_prev, p = p / norm, p_new / norm
        q_prev, q = q / norm, q_new / norm
    norm = np.max(np.abs(q))
    return _trim(p / norm), _trim(q / norm)


def evaluate(ra: RationalApproximant, z):
    """Value of the continuation at ``z`` (scalar or array).

    Raises ``PoleEvaluationError`` when ``z`` sits within 1e-12 of a
    denominator root.
    """
    zz = np.asarray(z, dtype=complex)
    if ra.den_roots.size:
        dist = np.min(np.abs(zz[..., None] - ra.den_roots), axis=-1)
        if np.any(dist < POLE_GUARD):
            raise PoleEvaluationError(f"evaluation at pole: z={z}")
    value = ra.cf_value(zz)
    bad = ~np.isfinite(value)
    if np.any(bad):
        value = np.where(bad, ra.ratio_value(zz), value)
    return value[()] if value.ndim == 0 else value


def conjugate_evaluate(ra: RationalApproximant, z):
    """Return ``conj(S(conj(z)))``, the factor S*(E, lambda*) at a pole."""
    return np.conj(evaluate(ra, np.conj(np.asarray(z, dtype=complex))))[()]


@dataclass(frozen=True)
class ComplexPole:
    """A pole of the continuation: position, residue and diagnostics.

    On the angular-momentum axis ``position`` is lambda = J + 1/2; on the
    energy axis it is the complex energy in meV.
    """

    position: complex
    residue: Optional[complex]
    axis: str = ANGULAR_MOMENTUM
    fixed_value: Optional[float] = None
    pole_zero_dist: float = math.inf
    stability: Optional[float] = None
    multiplicity: int = 1
    flags: tuple = ()
    s_conj: Optional[complex] = None

    @property
    def J(self) -> complex:
        return self.position - 0.5


def _newton_polish(c, t0):
    dc = npoly.polyder(c)
    abs_c = np.abs(c)
    t = complex(t0)
    for _ in range(NEWTON_MAXITER):
        val = npoly.polyval(t, c)
        scale = npoly.polyval(abs(t), abs_c)
        if abs(val) <= NEWTON_TOL * scale:
            return t, True
        d = npoly.polyval(t, dc)
        if d == 0:
            return t, False
        step = val / d
        t -= step
        if abs(step) <= 1e-15 * max(1.0, abs(t)):
            val = npoly.polyval(t, c)
            return t, abs(val) <= NEWTON_TOL * npoly.polyval(abs(t), abs_c)
    return t, False


def extract_poles(ra: RationalApproximant) -> list:
    """Denominator roots with residues num(z0) / den'(z0), sorted by position.

    Roots come from companion-matrix eigenvalues, polished by Newton
    iteration. Roots that coincide (to ``MULTIPLE_ROOT_TOL`` in scaled
    units) are reported once with their multiplicity and no residue.
    """
    if ra.den_degree < 1:
        return []
    t_roots = npoly.polyroots(ra.den_poly)
    polished = []
    for t0 in t_roots:
        t, ok = _newton_polish(ra.den_poly, t0)
        polished.append((t, ok))
    zeros = ra.num_roots
    poles = []
    used = [False] * len(polished)
    for i, (t, ok) in enumerate(polished):
        if used[i]:
            continue
        group = [i]
        for j in range(i + 1, len(polished)):
            if not used[j] and abs(polished[j][0] - t) < MULTIPLE_ROOT_TOL:
                group.append(j)
        for j in group:
            used[j] = True
        z0 = complex(ra.center + ra.scale * t)
        flags = [] if ok else ["unpolished"]
        if len(group) > 1:
            flags.append("multiple")
            residue = None
        else:
            dq = npoly.polyval(t, npoly.polyder(ra.den_poly))
            residue = complex(ra.scale * npoly.polyval(t, ra.num_poly) / dq)
        dist = float(np.min(np.abs(zeros - z0))) if zeros.size else math.inf
        poles.append(ComplexPole(position=z0, residue=residue, axis=ra.axis,
                                 fixed_value=ra.fixed_value, pole_zero_dist=dist,
                                 multiplicity=len(group), flags=tuple(flags)))
    poles.sort(key=lambda p: (p.position.real, p.position.imag))
    return poles


def _in_half_plane(pos, policy):
    if policy.half_plane == "upper":
        return pos.imag > 0
    if policy.half_plane == "lower":
        return pos.imag < 0
    return True


def filter_spurious(poles: Sequence[ComplexPole], ra: RationalApproximant,
                    samples=None, policy: PadePolicy = PadePolicy()) -> list:
    """Drop Froissart doublets, negligible residues, unstable and deep poles.

    A pole survives when its nearest numerator zero is farther than
    ``eps_froissart``, ``|residue| >= residue_floor``, ``|Im| <= im_max`` on
    the policy's half plane, its real part lies within ``window_margin`` of
    the node window, and a pole within ``match_radius`` reappears in at
    least ``stability_fraction`` of the leave-one-out refits.
    """
    if samples is None:
        samples = list(zip(ra.sample_x, ra.sample_f))
    kept = []
    for pole in poles:
        if pole.residue is None or pole.pole_zero_dist <= policy.eps_froissart:
            continue
        if abs(pole.residue) < policy.residue_floor:
            continue
        if abs(pole.position.imag) > policy.im_max or not _in_half_plane(pole.position, policy):
            continue
        lo, hi = ra.window
        if not lo - policy.window_margin <= pole.position.real <= hi + policy.window_margin:
            continue
        kept.append(pole)
    if not kept or not policy.loo:
        return kept

    x, f = _samples_arrays(samples)
    refit_poles = []
    for i in range(x.size):
        mask = np.arange(x.size) != i
        try:
            refit = build_rational(zip(x[mask], f[mask]), axis=ra.axis,
                                   fixed_value=ra.fixed_value, fit_rtol=policy.fit_rtol,
                                   max_nodes=policy.max_nodes)
            roots = refit.den_roots
        except (ValidationError, DegenerateDataError, np.linalg.LinAlgError):
            roots = np.empty(0, dtype=complex)
        refit_poles.append(roots)
    out = []
    for pole in kept:
        hits = sum(1 for roots in refit_poles
                   if roots.size and np.min(np.abs(roots - pole.position)) <= policy.match_radius)
        score = hits / len(refit_poles)
        if score >= policy.stability_fraction:
            out.append(dataclasses.replace(pole, stability=score))
    return out


def _j_window(table, row, policy):
    js = table.j_values
    if policy.window is None or policy.window >= js.size:
        return slice(0, js.size)
    centre = int(np.argmax(np.abs(row)))
    start = min(max(centre - policy.window // 2, 0), js.size - policy.window)
    return slice(start, start + policy.window)


def approximant_at_energy(table, E: float, policy: PadePolicy = PadePolicy()) -> RationalApproximant:
    """Continuation of S(E, lambda) in lambda = J + 1/2 at one grid energy."""
    row = table.row(E)
    sl = _j_window(table, row, policy)
    return build_rational(zip(table.lambdas[sl], row[sl]), axis=ANGULAR_MOMENTUM,
                          fixed_value=float(E), fit_rtol=policy.fit_rtol,
                          max_nodes=policy.max_nodes)


def regge_poles_at_energy(table, E: float, policy: PadePolicy = PadePolicy()):
    """Filtered Regge poles at ``E`` with ``s_conj`` = S*(E, lambda_n*) attached.

    Returns ``(approximant, poles)``.
    """
    ra = approximant_at_energy(table, E, policy)
    poles = filter_spurious(extract_poles(ra), ra, policy=policy)
    out = []
    for p in poles:
        try:
            s_conj = complex(conjugate_evaluate(ra, p.position))
        except PoleEvaluationError:
            s_conj = None
        out.append(dataclasses.replace(p, s_conj=s_conj))
    return ra, out


def ce_poles_at_j(table, J: int, policy: Optional[PadePolicy] = None,
                  energy_range: Optional[tuple] = None):
    """Continuation of S(E, J) into complex E at fixed integer ``J``.

    Returns ``(approximant, poles)``; closed-channel energies are skipped.
    """
    policy = PadePolicy.energy_axis() if policy is None else policy
    col = table.column(J)
    mask = np.array([table.is_open(E) for E in table.energies])
    if energy_range is not None:
        mask &= (table.energies >= energy_range[0]) & (table.energies <= energy_range[1])
    ra = build_rational(zip(table.energies[mask], col[mask]), axis=ENERGY,
                        fixed_value=float(J), fit_rtol=policy.fit_rtol,
                        max_nodes=policy.max_nodes)
    return ra, filter_spurious(extract_poles(ra), ra, policy=policy)


POLE_COLUMNS = ["axis", "fixed_value", "re_pos", "im_pos", "re_residue", "im_residue",
                "pole_zero_dist", "stability", "flags"]


def _fmt(x):
    return "nan" if x is None else repr(float(x))


def poles_to_csv(poles: Iterable[ComplexPole]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(POLE_COLUMNS)
    for p in poles:
        res = p.residue if p.residue is not None else complex(math.nan, math.nan)
        writer.writerow([p.axis, _fmt(p.fixed_value), _fmt(p.position.real),
                         _fmt(p.position.imag), _fmt(res.real), _fmt(res.imag),
                         _fmt(p.pole_zero_dist), _fmt(p.stability), "|".join(p.flags)])
    return out.getvalue()


def poles_from_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != POLE_COLUMNS:
        raise ValidationError(f"pole CSV header must be {POLE_COLUMNS}")
    poles = []
    for row in reader:
        res = complex(float(row["re_residue"]), float(row["im_residue"]))
        stab = float(row["stability"])
        poles.append(ComplexPole(
            position=complex(float(row["re_pos"]), float(row["im_pos"])),
            residue=None if math.isnan(res.real) else res,
            axis=row["axis"], fixed_value=float(row["fixed_value"]),
            pole_zero_dist=float(row["pole_zero_dist"]),
            stability=None if math.isnan(stab) else stab,
            flags=tuple(f for f in row["flags"].split("|") if f)))
    return poles
