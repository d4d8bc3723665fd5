import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import constants

from cam_regge.errors import ChannelClosedError, TableFormatError, ValidationError
from cam_regge.scatter import (HBAR2_2MU, Kinematics, SMatrixTable, TransitionLabel,
                               load_smatrix_table, pws_ics, wavevector_squared,
                               write_smatrix_csv)
from oracle_values import HBAR2_2MU_MEV_A2, K2_FHD_100MEV, PWS_EXP_SUM

HEADER = "# transition: 0 0 0 -> 3 0 0\n# kinematics: mu_amu=2.590909\n"


def _csv(energies, js, value=lambda E, J: 0.1 + 0.01j * J, drop=(), extra=""):
    lines = [HEADER + extra + "E_meV,J,Re_S,Im_S"]
    for E in energies:
        for J in js:
            if (E, J) in drop:
                continue
            s = value(E, J)
            lines.append(f"{E:.6e},{J},{s.real:.6e},{s.imag:.6e}")
    return "\n".join(lines) + "\n"


def _table(values, energies=(1.0,), j0=0, kin=None, transition=None, threshold=None):
    values = np.atleast_2d(np.asarray(values, dtype=complex))
    transition = transition or TransitionLabel(0, j0, j0, 0, j0, j0)
    return SMatrixTable(transition, np.asarray(energies, dtype=float),
                        np.arange(j0, j0 + values.shape[1]), values,
                        kin or Kinematics.reduced_mass(1.0), threshold_energy=threshold,
                        check_unitarity=False)


class TestConstants:
    def test_frozen_constant_matches_codata(self):
        c = constants.hbar**2 / (2 * constants.atomic_mass) / (constants.e * 1e-3) / 1e-20
        assert HBAR2_2MU == pytest.approx(c, rel=1e-8)

    def test_frozen_constant_matches_oracle(self):
        assert HBAR2_2MU == pytest.approx(HBAR2_2MU_MEV_A2, rel=1e-15)


class TestWavevector:
    def test_explicit_passthrough(self):
        assert wavevector_squared(Kinematics.explicit({5.0: 2.0}), 5.0) == 4.0

    def test_unit_mass_at_c(self):
        assert wavevector_squared(Kinematics.reduced_mass(1.0), HBAR2_2MU) == pytest.approx(1.0)

    def test_fhd_reduced_mass(self):
        k2 = wavevector_squared(Kinematics.reduced_mass(19 * 3 / 22), 100.0)
        assert k2 == pytest.approx(K2_FHD_100MEV, rel=1e-14)

    @pytest.mark.parametrize("E", [0.0, -1.0])
    def test_nonpositive_energy(self, E):
        with pytest.raises(ValidationError, match="below zero collision energy"):
            wavevector_squared(Kinematics.reduced_mass(1.0), E)


class TestLoad:
    def test_well_formed(self):
        t = load_smatrix_table(_csv([58.5, 58.6, 58.7], range(4)))
        assert t.values.shape == (3, 4)
        assert t.values.size == 12
        assert t.transition == TransitionLabel(0, 0, 0, 3, 0, 0)

    def test_missing_cell(self):
        text = _csv([58.54, 58.64], range(4), drop={(58.54, 2)})
        with pytest.raises(TableFormatError, match=r"missing cell \(E=58.54, J=2\)"):
            load_smatrix_table(text)

    def test_duplicate_cell(self):
        text = _csv([1.0], range(4))
        text += "1.000000e+00,2,0.1,0.0\n"
        with pytest.raises(TableFormatError, match="duplicate cell"):
            load_smatrix_table(text)

    def test_non_contiguous_j(self):
        with pytest.raises(TableFormatError, match="not contiguous"):
            load_smatrix_table(_csv([1.0], [0, 1, 3, 4]))

    def test_unitarity_warning(self):
        text = _csv([1.0, 2.0], range(4),
                    value=lambda E, J: 1.5 if (E, J) == (2.0, 1) else 0.2)
        t = load_smatrix_table(text)
        assert len(t.warnings) == 1
        assert t.warnings[0].J == 1

    def test_missing_header(self):
        with pytest.raises(TableFormatError, match="transition"):
            load_smatrix_table("# kinematics: mu_amu=1\nE_meV,J,Re_S,Im_S\n1,0,0,0\n")

    def test_bad_row_reports_line(self):
        text = _csv([1.0], range(4)) + "1.0,x,0,0\n"
        with pytest.raises(TableFormatError, match="line 8"):
            load_smatrix_table(text)

    def test_j_start_must_match_helicity(self):
        text = _csv([1.0], range(0, 4)).replace("0 0 0 -> 3 0 0", "0 0 0 -> 3 0 2")
        with pytest.raises(ValidationError):
            load_smatrix_table(text)

    def test_stream_and_path(self, tmp_path):
        text = _csv([1.0, 2.0], range(5))
        p = tmp_path / "t.csv"
        p.write_text(text)
        a = load_smatrix_table(str(p))
        b = load_smatrix_table(io.StringIO(text))
        assert np.array_equal(a.values, b.values)

    def test_explicit_kinematics(self):
        text = ("# transition: 0 0 0 -> 0 0 0\n# kinematics: explicit_k\n"
                "E_meV,J,Re_S,Im_S,k_invA\n1.0,0,1.0,0.0,1.0\n")
        t = load_smatrix_table(text)
        assert pws_ics(t, 1.0) == pytest.approx(math.pi)

    def test_write_round_trip(self):
        t = _table([[0.1 + 0.2j, 0.3 - 0.1j, 1e-17j, 0.25]], energies=[3.5])
        back = load_smatrix_table(write_smatrix_csv(t), check_unitarity=False)
        assert np.array_equal(back.values, t.values)
        assert back.kinematics == t.kinematics

    def test_json_round_trip(self):
        t = _table([[0.1 + 0.2j, 0.3, 0.0, 0.25j]], energies=[3.5], threshold=1.0)
        back = load_smatrix_table(t.to_json(), format="json")
        assert np.array_equal(back.values, t.values)
        assert back.threshold_energy == 1.0


class TestPws:
    def test_zero(self):
        assert pws_ics(_table(np.zeros(5)), 1.0) == 0.0

    def test_single_term(self):
        t = _table([1.0], kin=Kinematics.explicit({1.0: 1.0}))
        assert pws_ics(t, 1.0) == pytest.approx(math.pi, rel=1e-15)

    def test_exponential_weights(self):
        J = np.arange(61)
        t = _table(np.exp(-J / 10.0), kin=Kinematics.explicit({1.0: 1.0}))
        assert pws_ics(t, 1.0) == pytest.approx(PWS_EXP_SUM, rel=1e-13)

    def test_sum_starts_at_j_min(self):
        t = _table([0.5, 0.5], j0=2, transition=TransitionLabel(0, 0, 0, 1, 2, 2),
                   kin=Kinematics.explicit({1.0: 1.0}))
        assert t.j_min == 2
        assert pws_ics(t, 1.0) == pytest.approx(2 * math.pi * 0.25 * (2.5 + 3.5))

    def test_threshold(self):
        t = _table(np.full((3, 3), 0.1), energies=[1.0, 2.0, 3.0], threshold=2.0)
        with pytest.raises(ChannelClosedError, match="channel closed"):
            pws_ics(t, 1.0)
        assert pws_ics(t, 2.0) > 0
        assert pws_ics(t, 3.0) > 0


row_values = st.lists(st.complex_numbers(max_magnitude=1.0, allow_nan=False,
                                         allow_infinity=False), min_size=1, max_size=30)


@given(row_values, st.randoms(use_true_random=False))
def test_row_permutation_invariance(values, rnd):
    js = range(len(values))
    text = _csv([1.0, 2.0], js, value=lambda E, J: values[J] * E / 2)
    head, body = text.split("E_meV,J,Re_S,Im_S\n")
    rows = body.splitlines()
    rnd.shuffle(rows)
    shuffled = head + "E_meV,J,Re_S,Im_S\n" + "\n".join(rows) + "\n"
    a = load_smatrix_table(text, check_unitarity=False)
    b = load_smatrix_table(shuffled, check_unitarity=False)
    assert pws_ics(a, 2.0) == pws_ics(b, 2.0)


@given(row_values, st.floats(0.1, 10.0))
def test_nonnegative_and_inverse_k2_scaling(values, scale):
    a = _table(values, kin=Kinematics.explicit({1.0: 1.0}))
    b = _table(values, kin=Kinematics.explicit({1.0: math.sqrt(scale)}))
    sa, sb = pws_ics(a, 1.0), pws_ics(b, 1.0)
    assert sa >= 0
    assert sb == pytest.approx(sa / scale, rel=1e-14, abs=0)


@given(row_values)
def test_appending_zero_partial_waves_is_bit_identical(values):
    a = _table(values)
    b = _table(list(values) + [0.0] * len(values))
    assert pws_ics(a, 1.0) == pws_ics(b, 1.0)
