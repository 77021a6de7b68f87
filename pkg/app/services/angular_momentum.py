"""Clebsch-Gordan coefficients and the branching amplitudes X_m(alpha).

Coefficients follow the Condon-Shortley convention and are evaluated with the
Racah closed form in exact rational arithmetic; only the final square root is
taken in floating point.
"""
import logging
import math
from fractions import Fraction
from functools import lru_cache
from typing import Tuple

from app.exceptions import InvalidSchemeError
from app.models.angular import (
    HELICITIES,
    PHOTON,
    BranchingTable,
    HalfInt,
    LevelScheme,
    Number,
    triangle_ok,
)

logger = logging.getLogger(__name__)


def _half(twice: int) -> int:
    return twice // 2


@lru_cache(maxsize=65536)
def _cg_exact(tj1: int, tm1: int, tj2: int, tm2: int, tJ: int, tM: int) -> Tuple[int, Fraction]:
    """Sign and exact square of <j1 m1; j2 m2 | J M>, arguments doubled."""
    if tm1 + tm2 != tM:
        return 0, Fraction(0)
    j1, j2, J = HalfInt(tj1), HalfInt(tj2), HalfInt(tJ)
    if not triangle_ok(j1, j2, J):
        return 0, Fraction(0)
    if not (j1.contains(HalfInt(tm1)) and j2.contains(HalfInt(tm2)) and J.contains(HalfInt(tM))):
        return 0, Fraction(0)

    f = math.factorial
    a = _half(tJ + tj1 - tj2)
    b = _half(tJ - tj1 + tj2)
    c = _half(tj1 + tj2 - tJ)
    d = _half(tj1 + tj2 + tJ) + 1
    prefactor = Fraction((tJ + 1) * f(a) * f(b) * f(c), f(d))
    prefactor *= (
        f(_half(tJ + tM)) * f(_half(tJ - tM))
        * f(_half(tj1 - tm1)) * f(_half(tj1 + tm1))
        * f(_half(tj2 - tm2)) * f(_half(tj2 + tm2))
    )

    k_min = max(0, _half(tj2 - tJ - tm1), _half(tj1 - tJ + tm2))
    k_max = min(c, _half(tj1 - tm1), _half(tj2 + tm2))
    total = Fraction(0)
    for k in range(k_min, k_max + 1):
        denominator = (
            f(k) * f(c - k) * f(_half(tj1 - tm1) - k) * f(_half(tj2 + tm2) - k)
            * f(_half(tJ - tj2 + tm1) + k) * f(_half(tJ - tj1 - tm2) + k)
        )
        total += Fraction((-1) ** k, denominator)
    if total == 0:
        return 0, Fraction(0)
    return (1 if total > 0 else -1), prefactor * total * total


def cg_squared(j1: Number, m1: Number, j2: Number, m2: Number, J: Number, M: Number) -> Fraction:
    """Exact rational value of <j1 m1; j2 m2 | J M>^2."""
    args = [HalfInt.of(x).twice_value for x in (j1, m1, j2, m2, J, M)]
    return _cg_exact(*args)[1]


def cg(j1: Number, m1: Number, j2: Number, m2: Number, J: Number, M: Number) -> float:
    """<j1 m1; j2 m2 | J M>; exactly 0 for any forbidden coupling."""
    args = [HalfInt.of(x).twice_value for x in (j1, m1, j2, m2, J, M)]
    sign, square = _cg_exact(*args)
    if sign == 0:
        return 0.0
    return sign * math.sqrt(square)


def branching_table(scheme: LevelScheme) -> BranchingTable:
    """X_m(alpha) = C^{Fa,1,Fc}_{m,1,m+1} C^{Fc,1,Fb}_{m+1,alpha,m+alpha+1} for all m and alpha."""
    scheme.validate()
    entries = {}
    squares = {}
    one = HalfInt.of(1)
    for m in scheme.F_a.projections():
        m_c = m + one
        for alpha in HELICITIES:
            m_b = m_c + alpha
            write_sign, write_sq = _cg_exact(
                scheme.F_a.twice_value, m.twice_value, PHOTON.twice_value, 2,
                scheme.F_c.twice_value, m_c.twice_value,
            )
            emit_sign, emit_sq = _cg_exact(
                scheme.F_c.twice_value, m_c.twice_value, PHOTON.twice_value, 2 * alpha,
                scheme.F_b.twice_value, m_b.twice_value,
            )
            square = write_sq * emit_sq
            squares[(m, alpha)] = square
            entries[(m, alpha)] = write_sign * emit_sign * math.sqrt(square) if square else 0.0
    return BranchingTable(scheme=scheme, entries=entries, squares=squares)


def cos2_eta(table: BranchingTable) -> Fraction:
    """Exact cos^2(eta): weight of the alpha = -1 channel over both channels."""
    minus = table.weight_sum(-1)
    total = minus + table.weight_sum(1)
    if total == 0:
        raise InvalidSchemeError(
            f"scheme F_a={table.scheme.F_a}, F_b={table.scheme.F_b}, F_c={table.scheme.F_c} "
            "has no allowed decay channel"
        )
    return minus / total


def mixing_angle_from_table(table: BranchingTable) -> float:
    value = math.acos(math.sqrt(cos2_eta(table)))
    return min(max(value, 0.0), math.pi / 2)


def mixing_angle(scheme: LevelScheme) -> float:
    """Mixing angle eta in [0, pi/2] for the given level scheme."""
    eta = mixing_angle_from_table(branching_table(scheme))
    logger.debug(f"eta for F_a={scheme.F_a}, F_b={scheme.F_b}, F_c={scheme.F_c}: {eta:.6f} rad")
    return eta
