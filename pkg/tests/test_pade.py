import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cam_regge.errors import DegenerateDataError, PoleEvaluationError, ValidationError
from cam_regge.pade import (ENERGY, ComplexPole, PadePolicy, build_rational, conjugate_evaluate,
                            evaluate, extract_poles, filter_spurious, poles_from_csv,
                            poles_to_csv)

LAM = np.arange(21) + 0.5
P_SINGLE = 10.3 + 0.4j


def single(z):
    return 1.0 / (z - P_SINGLE)


P1, P2 = 2 + 1j, 7 + 3j


def two_pole(z):
    return (z * z + 1) / (z - P1) / (z - P2)


# partial-fraction residues of two_pole
R1 = (P1 * P1 + 1) / (P1 - P2)
R2 = (P2 * P2 + 1) / (P2 - P1)


def _ra(f, x=LAM):
    return build_rational(zip(x, f(x)))


class TestBuild:
    def test_constant(self):
        ra = build_rational([(x, 0.7 - 0.2j) for x in LAM])
        assert ra.den_degree == 0
        for z in (0.0, 3.3 + 2j, 100.0):
            assert evaluate(ra, z) == pytest.approx(0.7 - 0.2j, rel=1e-14)

    def test_single_pole_is_rational_equivalent(self):
        ra = _ra(single)
        assert np.allclose(evaluate(ra, LAM), single(LAM), rtol=1e-12, atol=0)
        off = np.array([3.1 + 0.7j, 12.2 - 1.5j, 19.9 + 2.0j, 0.1 - 0.3j])
        assert np.max(np.abs(evaluate(ra, off) - single(off))) < 1e-8

    def test_two_pole_roots(self):
        ra = _ra(two_pole, np.arange(15) + 0.5)
        roots = ra.den_roots
        for p in (P1, P2):
            assert np.min(np.abs(roots - p)) < 1e-8

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            build_rational([(0.5, 1), (1.5, 2), (2.5, 3)])

    def test_duplicate_abscissae(self):
        with pytest.raises(ValidationError, match="duplicate"):
            build_rational([(0.5, 1), (1.5, 2), (1.5, 3), (2.5, 1)])

    def test_nonfinite_samples(self):
        with pytest.raises(ValidationError):
            build_rational([(0.5, 1), (1.5, np.nan), (2.5, 3), (3.5, 1)])

    def test_repeated_values_are_attainable(self):
        x = np.arange(4) + 0.5
        ra = build_rational(zip(x, [0, 0, 1j, 1j]))
        assert np.allclose([evaluate(ra, xi) for xi in x], [0, 0, 1j, 1j], atol=1e-14)

    @pytest.mark.parametrize("values", [[1, 1, 1, 0], [0, 0, 0, 1]])
    def test_degenerate_data(self, values):
        with pytest.raises(DegenerateDataError, match="degenerate data"):
            build_rational(zip(np.arange(4) + 0.5, values))

    def test_degree_split_generic_data(self, rng):
        for n in (4, 7, 12, 19):
            x = np.arange(n) + 0.5
            ra = build_rational(zip(x, rng.normal(size=n) + 1j * rng.normal(size=n)))
            used = len(ra.cf_coeffs)
            assert used == n
            assert ra.num_degree <= math.ceil((used - 1) / 2)
            assert ra.den_degree <= (used - 1) // 2


class TestEvaluate:
    def test_at_nodes(self):
        ra = _ra(single)
        assert evaluate(ra, LAM[4]) == pytest.approx(single(LAM[4]), rel=1e-12)

    def test_single_pole_at_conjugate_point(self):
        ra = _ra(single)
        z = P_SINGLE.conjugate()
        assert abs(evaluate(ra, z) - single(z)) < 1e-8 * abs(single(z))
        assert single(z) == pytest.approx(1.25j)

    def test_at_pole(self):
        ra = _ra(single)
        pole = extract_poles(ra)[0].position
        with pytest.raises(PoleEvaluationError, match="evaluation at pole"):
            evaluate(ra, pole)

    def test_fraction_and_ratio_agree(self):
        ra = _ra(two_pole, np.arange(15) + 0.5)
        re = np.linspace(0.5, 14.5, 29)
        im = np.linspace(-2.0, 2.0, 9)
        z = (re[:, None] + 1j * im[None, :]).ravel()
        z = z[np.min(np.abs(z[:, None] - np.array([P1, P2])[None, :]), axis=1) > 0.05]
        cf, rat = ra.cf_value(z), ra.ratio_value(z)
        assert np.max(np.abs(cf - rat) / np.abs(rat)) < 1e-8


class TestConjugateEvaluate:
    def test_real_point(self):
        ra = _ra(single)
        v = conjugate_evaluate(ra, 4.2)
        assert v == evaluate(ra, 4.2).conjugate()
        assert abs(v) == abs(evaluate(ra, 4.2))

    def test_at_pole_position(self):
        ra = _ra(single)
        assert conjugate_evaluate(ra, P_SINGLE) == pytest.approx(
            single(P_SINGLE.conjugate()).conjugate(), rel=1e-8)

    def test_constant(self):
        ra = build_rational([(x, 2 + 3j) for x in LAM])
        assert conjugate_evaluate(ra, 1 + 1j) == pytest.approx(2 - 3j)


class TestExtract:
    def test_single_pole_and_residue(self):
        r = 0.05 - 0.02j
        ra = _ra(lambda z: r / (z - P_SINGLE))
        (p,) = extract_poles(ra)
        assert abs(p.position - P_SINGLE) < 1e-8
        assert abs(p.residue - r) < 1e-8
        assert p.J == pytest.approx(P_SINGLE - 0.5)

    def test_constant_has_no_poles(self):
        assert extract_poles(build_rational([(x, 1.0) for x in LAM])) == []

    def test_partial_fraction_residues(self):
        ra = _ra(two_pole, np.arange(15) + 0.5)
        poles = extract_poles(ra)
        assert len(poles) == 2
        for p0, r0 in ((P1, R1), (P2, R2)):
            p = min(poles, key=lambda q: abs(q.position - p0))
            assert abs(p.position - p0) < 1e-8
            assert abs(p.residue - r0) < 1e-8 * abs(r0)

    def test_double_root_flagged(self):
        ra = _ra(lambda z: 1.0 / (z - P_SINGLE) ** 2)
        poles = extract_poles(ra)
        assert len(poles) == 1
        assert poles[0].multiplicity == 2
        assert poles[0].residue is None
        assert "multiple" in poles[0].flags


class TestFilter:
    def test_exact_pole_survives(self):
        ra = _ra(lambda z: 0.3 + 0.05 / (z - P_SINGLE))
        kept = filter_spurious(extract_poles(ra), ra)
        assert len(kept) == 1
        assert kept[0].stability == 1.0

    def test_noise_doublets_removed(self, rng):
        x = np.arange(30) + 0.5
        for _ in range(3):
            noise = 1e-4 * (rng.uniform(-1, 1, x.size) + 1j * rng.uniform(-1, 1, x.size))
            ra = build_rational(zip(x, 0.3 + 0.05 / (x - P_SINGLE) + noise))
            poles = extract_poles(ra)
            doublets = [p for p in poles if p.pole_zero_dist < 1e-3]
            assert doublets
            kept = filter_spurious(poles, ra)
            kept_pos = {p.position for p in kept}
            assert not any(p.position in kept_pos for p in doublets)
            assert len(kept) == 1
            assert abs(kept[0].position - P_SINGLE) < 1e-2

    def test_deep_pole_removed(self):
        ra = _ra(lambda z: 0.3 + 0.05 / (z - (10.3 + 5j)))
        assert len(extract_poles(ra)) == 1
        assert filter_spurious(extract_poles(ra), ra) == []

    def test_small_residue_removed(self):
        ra = _ra(lambda z: 0.3 + 1e-9 / (z - P_SINGLE))
        kept = filter_spurious(extract_poles(ra), ra)
        assert all(abs(p.position - P_SINGLE) > 1e-3 for p in kept)

    def test_energy_axis_keeps_lower_half_plane(self):
        e = np.linspace(60.0, 64.0, 21)
        pole = 62.0 - 0.2j
        ra = build_rational(zip(e, 0.1 + 0.02 / (e - pole)), axis=ENERGY, fixed_value=20)
        kept = filter_spurious(extract_poles(ra), ra, policy=PadePolicy.energy_axis())
        assert len(kept) == 1 and abs(kept[0].position - pole) < 1e-8
        assert filter_spurious(extract_poles(ra), ra) == []

    def test_bad_policy(self):
        with pytest.raises(ValidationError):
            PadePolicy(eps_froissart=0.0)
        with pytest.raises(ValidationError):
            PadePolicy(stability_fraction=1.5)


def test_poles_csv_round_trip():
    poles = [ComplexPole(position=10.3 + 0.4j, residue=0.05 - 0.01j, axis="angular-momentum",
                         fixed_value=12.5, pole_zero_dist=0.3, stability=0.9,
                         flags=("unpolished",)),
             ComplexPole(position=3 + 0.1j, residue=None, axis="angular-momentum",
                         fixed_value=12.6, multiplicity=2, flags=("multiple",))]
    back = poles_from_csv(poles_to_csv(poles))
    assert [p.position for p in back] == [p.position for p in poles]
    assert back[0].residue == poles[0].residue
    assert back[1].residue is None
    assert back[0].flags == ("unpolished",)


# -- properties ---------------------------------------------------------------

finite = st.floats(-10, 10, allow_nan=False)
generic_samples = st.tuples(st.integers(0, 2**32 - 1), st.integers(4, 24))


def _generic(seed, n):
    g = np.random.default_rng(seed)
    return np.arange(n) + 0.5, g.normal(size=n) + 1j * g.normal(size=n)


@given(generic_samples)
def test_interpolation_exactness(draw):
    x, f = _generic(*draw)
    ra = build_rational(zip(x, f))
    got = np.array([evaluate(ra, xi) for xi in x])
    scale = np.maximum(np.abs(f), 1e-3 * np.max(np.abs(f)))
    assert np.all(np.abs(got - f) <= 1e-10 * scale)


@given(generic_samples, finite, finite)
def test_conjugation_identity(draw, a, b):
    x, f = _generic(*draw)
    ra = build_rational(zip(x, f))
    z = complex(a, b)
    try:
        direct = evaluate(ra, z.conjugate())
    except PoleEvaluationError:
        return
    assert conjugate_evaluate(ra, z) == direct.conjugate()


pole_params = st.tuples(st.floats(2.0, 18.0), st.floats(0.05, 1.0),
                        st.floats(0.01, 0.2), st.floats(0, 2 * math.pi))


@given(st.lists(pole_params, min_size=1, max_size=3), st.floats(0.05, 0.5))
def test_rational_exactness(params, bg):
    positions = np.array([complex(r, i) for r, i, _, _ in params])
    if len(positions) > 1 and np.min(np.abs(positions[:, None] - positions[None, :])
                                     + np.eye(len(positions)) * 99) < 0.1:
        return
    if np.min(np.abs(positions[:, None] - LAM[None, :])) < 1e-3:
        return
    residues = np.array([m * np.exp(1j * ph) for _, _, m, ph in params])
    f = bg + sum(r / (LAM - p) for r, p in zip(residues, positions))
    ra = build_rational(zip(LAM, f))
    kept = filter_spurious(extract_poles(ra), ra)
    for p in kept:
        assert np.min(np.abs(positions - p.position)) < 1e-8
    for p0, r0 in zip(positions, residues):
        match = [p for p in kept if abs(p.position - p0) < 1e-8]
        assert match
        # residue consistency: residue * Q'(z0) = P(z0)
        p = match[0]
        q_prime = ra.den_prime(p.position)
        assert abs(p.residue * q_prime - ra.num(p.position)) <= 1e-10 * abs(ra.num(p.position))
