import math
from fractions import Fraction

import pytest

from app.exceptions import InvalidSchemeError
from app.models.angular import HELICITIES, HalfInt, LevelScheme
from app.services.angular_momentum import (
    branching_table,
    cg,
    cg_squared,
    cos2_eta,
    mixing_angle,
)
from tests.conftest import brute_force_cg


def half(twice: int) -> Fraction:
    return Fraction(twice, 2)


class TestHalfInt:
    def test_parses_fractions_and_strings(self):
        assert HalfInt.of("3/2").twice_value == 3
        assert HalfInt.of(2).twice_value == 4
        assert HalfInt.of(-0.5).twice_value == -1
        assert str(HalfInt.of("5/2")) == "5/2"

    def test_rejects_non_half_integers(self):
        with pytest.raises(ValueError):
            HalfInt.of("1/3")

    def test_projections(self):
        assert [str(m) for m in HalfInt.of(1).projections()] == ["-1", "0", "1"]


class TestClebschGordan:
    @pytest.mark.parametrize("tj1", range(0, 9))
    @pytest.mark.parametrize("tj2", range(0, 9))
    def test_matches_brute_force_oracle(self, tj1, tj2):
        oracle = brute_force_cg(tj1, tj2)
        for (tm1, tm2, tJ, tM), expected in oracle.items():
            value = cg(half(tj1), half(tm1), half(tj2), half(tm2), half(tJ), half(tM))
            assert value == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("tj1,tj2", [(1, 1), (2, 2), (3, 2), (6, 2), (8, 8), (7, 4)])
    def test_completeness_is_exact(self, tj1, tj2):
        for tm1 in range(-tj1, tj1 + 1, 2):
            for tm2 in range(-tj2, tj2 + 1, 2):
                total = sum(
                    cg_squared(half(tj1), half(tm1), half(tj2), half(tm2), half(tJ), half(tm1 + tm2))
                    for tJ in range(abs(tj1 - tj2), tj1 + tj2 + 1, 2)
                )
                assert total == 1

    @pytest.mark.parametrize("tj1,tj2", [(2, 2), (4, 2), (3, 3), (8, 6)])
    def test_orthogonality(self, tj1, tj2):
        for tJ in range(abs(tj1 - tj2), tj1 + tj2 + 1, 2):
            for tJp in range(abs(tj1 - tj2), tj1 + tj2 + 1, 2):
                for tM in range(-min(tJ, tJp), min(tJ, tJp) + 1, 2):
                    overlap = sum(
                        cg(half(tj1), half(tm1), half(tj2), half(tM - tm1), half(tJ), half(tM))
                        * cg(half(tj1), half(tm1), half(tj2), half(tM - tm1), half(tJp), half(tM))
                        for tm1 in range(-tj1, tj1 + 1, 2)
                        if abs(tM - tm1) <= tj2
                    )
                    assert overlap == pytest.approx(1.0 if tJ == tJp else 0.0, abs=1e-12)

    def test_known_values(self):
        assert cg("1/2", "1/2", "1/2", "-1/2", 1, 0) == pytest.approx(1 / math.sqrt(2), abs=1e-15)
        assert cg("1/2", "-1/2", "1/2", "1/2", 0, 0) == pytest.approx(-1 / math.sqrt(2), abs=1e-15)
        assert cg(1, 1, 1, -1, 0, 0) == pytest.approx(1 / math.sqrt(3), abs=1e-15)

    def test_zero_outside_selection_rules(self):
        assert cg(1, 1, 1, 1, 2, 1) == 0.0
        assert cg(1, 0, 1, 0, 3, 0) == 0.0
        assert cg_squared(1, 1, 1, 0, 1, 1) == Fraction(1, 2)


class TestMixingAngle:
    def test_rubidium_scheme(self):
        scheme = LevelScheme.of(3, 2, 3)
        table = branching_table(scheme)
        assert cos2_eta(table) == Fraction(11, 17)
        assert mixing_angle(scheme) / (math.pi / 4) == pytest.approx(0.81, abs=0.005)

    def test_triangle_violation(self):
        with pytest.raises(InvalidSchemeError):
            mixing_angle(LevelScheme.of(3, 2, 9))

    @pytest.mark.parametrize("F_a,F_b,F_c", [(1, 1, 1), (2, 1, 2), (1, 2, 2), ("3/2", "1/2", "3/2")])
    def test_matches_oracle_table(self, F_a, F_b, F_c):
        scheme = LevelScheme.of(F_a, F_b, F_c)
        ta, tb, tc = scheme.F_a.twice_value, scheme.F_b.twice_value, scheme.F_c.twice_value
        write = brute_force_cg(ta, 2)
        emit = brute_force_cg(tc, 2)
        weights = {alpha: 0.0 for alpha in HELICITIES}
        table = branching_table(scheme)
        for tm in range(-ta, ta + 1, 2):
            for alpha in HELICITIES:
                x = write.get((tm, 2, tc, tm + 2), 0.0) * emit.get((tm + 2, 2 * alpha, tb, tm + 2 + 2 * alpha), 0.0)
                assert table[(half(tm), alpha)] == pytest.approx(x, abs=1e-12)
                weights[alpha] += x * x
        expected = math.acos(math.sqrt(weights[-1] / (weights[-1] + weights[1])))
        assert mixing_angle(scheme) == pytest.approx(expected, abs=1e-12)
