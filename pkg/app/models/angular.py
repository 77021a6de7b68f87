from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Tuple, Union

from app.exceptions import InvalidSchemeError

Number = Union[int, float, Fraction, str, "HalfInt"]

HELICITIES = (-1, 1)


@dataclass(frozen=True, order=True)
class HalfInt:
    """Angular-momentum quantum number stored as twice its value."""
    twice_value: int

    @classmethod
    def of(cls, value: Number) -> "HalfInt":
        if isinstance(value, HalfInt):
            return value
        if isinstance(value, str):
            value = Fraction(value)
        doubled = Fraction(value) * 2
        if doubled.denominator != 1:
            raise ValueError(f"{value} is not a multiple of 1/2")
        return cls(int(doubled))

    @property
    def is_integer(self) -> bool:
        return self.twice_value % 2 == 0

    def projections(self) -> List["HalfInt"]:
        """All m in {-j, ..., j} for this j."""
        if self.twice_value < 0:
            return []
        return [HalfInt(t) for t in range(-self.twice_value, self.twice_value + 1, 2)]

    def contains(self, m: "HalfInt") -> bool:
        """True when m is a valid projection of this angular momentum."""
        return abs(m.twice_value) <= self.twice_value and (self.twice_value - m.twice_value) % 2 == 0

    def __add__(self, other: Number) -> "HalfInt":
        return HalfInt(self.twice_value + HalfInt.of(other).twice_value)

    __radd__ = __add__

    def __sub__(self, other: Number) -> "HalfInt":
        return HalfInt(self.twice_value - HalfInt.of(other).twice_value)

    def __neg__(self) -> "HalfInt":
        return HalfInt(-self.twice_value)

    def __float__(self) -> float:
        return self.twice_value / 2

    def __int__(self) -> int:
        if not self.is_integer:
            raise ValueError(f"{self} is not an integer")
        return self.twice_value // 2

    def __str__(self) -> str:
        if self.is_integer:
            return str(self.twice_value // 2)
        return f"{self.twice_value}/2"


def triangle_ok(j1: HalfInt, j2: HalfInt, j3: HalfInt) -> bool:
    """Triangle rule |j1 - j2| <= j3 <= j1 + j2 with integer j1 + j2 + j3."""
    a, b, c = j1.twice_value, j2.twice_value, j3.twice_value
    if min(a, b, c) < 0:
        return False
    return abs(a - b) <= c <= a + b and (a + b + c) % 2 == 0


PHOTON = HalfInt(2)


@dataclass(frozen=True)
class LevelScheme:
    """Ground level a, ground level b and excited level c of the Raman transitions."""
    F_a: HalfInt
    F_b: HalfInt
    F_c: HalfInt

    @classmethod
    def of(cls, F_a: Number, F_b: Number, F_c: Number) -> "LevelScheme":
        return cls(HalfInt.of(F_a), HalfInt.of(F_b), HalfInt.of(F_c))

    def validate(self) -> None:
        if not triangle_ok(self.F_a, PHOTON, self.F_c):
            raise InvalidSchemeError(
                f"write transition F_a={self.F_a} -> F_c={self.F_c} violates the dipole triangle rule"
            )
        if not triangle_ok(self.F_c, PHOTON, self.F_b):
            raise InvalidSchemeError(
                f"emission F_c={self.F_c} -> F_b={self.F_b} violates the dipole triangle rule"
            )


@dataclass(frozen=True)
class BranchingTable:
    """X_m(alpha) amplitudes keyed by (m, alpha); exact squares kept alongside."""
    scheme: LevelScheme
    entries: Dict[Tuple[HalfInt, int], float] = field(default_factory=dict)
    squares: Dict[Tuple[HalfInt, int], Fraction] = field(default_factory=dict)

    def __getitem__(self, key: Tuple[HalfInt, int]) -> float:
        m, alpha = key
        return self.entries.get((HalfInt.of(m), alpha), 0.0)

    def items(self) -> Iterator[Tuple[Tuple[HalfInt, int], float]]:
        return iter(sorted(self.entries.items(), key=lambda kv: (kv[0][1], kv[0][0])))

    def weight_sum(self, alpha: int) -> Fraction:
        """Exact sum over m of X_m(alpha)^2."""
        return sum((sq for (m, a), sq in self.squares.items() if a == alpha), Fraction(0))

    def amplitudes(self, alpha: int) -> Dict[HalfInt, float]:
        return {m: x for (m, a), x in self.entries.items() if a == alpha}
