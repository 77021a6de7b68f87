import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

RIGHT_ANGLE = math.pi / 2
ANGLE_MATCH_TOLERANCE = 1e-6


def _deg(value: Optional[float]) -> Optional[float]:
    return None if value is None else math.degrees(value)


def _rad(value: Optional[float]) -> Optional[float]:
    return None if value is None else math.radians(value)


def same_polarizer_angle(a: Optional[float], b: Optional[float]) -> bool:
    """Polarizer orientations agree modulo pi; None means the polarizer is removed."""
    if a is None or b is None:
        return a is None and b is None
    diff = math.remainder(a - b, math.pi)
    return abs(diff) < ANGLE_MATCH_TOLERANCE


class MeasurementSetting(BaseModel):
    """Polarizer angles in radians. None removes that polarizer."""
    model_config = ConfigDict(frozen=True)

    theta_s: Optional[float] = None
    theta_i: Optional[float] = None

    @field_validator("theta_s", "theta_i")
    @classmethod
    def _finite(cls, value):
        if value is not None and not math.isfinite(value):
            raise ValueError("polarizer angle must be finite")
        return value

    @classmethod
    def from_degrees(cls, theta_s: Optional[float], theta_i: Optional[float]) -> "MeasurementSetting":
        return cls(theta_s=_rad(theta_s), theta_i=_rad(theta_i))

    @property
    def theta_s_deg(self) -> Optional[float]:
        return _deg(self.theta_s)

    @property
    def theta_i_deg(self) -> Optional[float]:
        return _deg(self.theta_i)

    def perpendicular(self, signal: bool, idler: bool) -> "MeasurementSetting":
        return MeasurementSetting(
            theta_s=self.theta_s + RIGHT_ANGLE if signal else self.theta_s,
            theta_i=self.theta_i + RIGHT_ANGLE if idler else self.theta_i,
        )

    def quartet(self) -> List["MeasurementSetting"]:
        """(s, i), (s_perp, i_perp), (s_perp, i), (s, i_perp): the four terms of E."""
        return [
            self,
            self.perpendicular(True, True),
            self.perpendicular(True, False),
            self.perpendicular(False, True),
        ]

    def matches(self, other: "MeasurementSetting") -> bool:
        return (same_polarizer_angle(self.theta_s, other.theta_s)
                and same_polarizer_angle(self.theta_i, other.theta_i))

    def label(self) -> str:
        def fmt(value):
            return "-" if value is None else f"{value:g}"
        return f"({fmt(self.theta_s_deg)}, {fmt(self.theta_i_deg)})"


class CHSHAngles(BaseModel):
    """theta_s, theta_s', theta_i, theta_i' in radians."""
    model_config = ConfigDict(frozen=True)

    theta_s: float
    theta_s_prime: float
    theta_i: float
    theta_i_prime: float

    @classmethod
    def from_degrees(cls, theta_s: float, theta_s_prime: float, theta_i: float,
                     theta_i_prime: float) -> "CHSHAngles":
        return cls(
            theta_s=math.radians(theta_s),
            theta_s_prime=math.radians(theta_s_prime),
            theta_i=math.radians(theta_i),
            theta_i_prime=math.radians(theta_i_prime),
        )

    @classmethod
    def canonical(cls) -> "CHSHAngles":
        return cls.from_degrees(-22.5, 22.5, 0.0, -45.0)

    def settings(self) -> List[MeasurementSetting]:
        """The four settings in S = E1 + E2 + E3 - E4 order."""
        return [
            MeasurementSetting(theta_s=self.theta_s, theta_i=self.theta_i),
            MeasurementSetting(theta_s=self.theta_s_prime, theta_i=self.theta_i),
            MeasurementSetting(theta_s=self.theta_s, theta_i=self.theta_i_prime),
            MeasurementSetting(theta_s=self.theta_s_prime, theta_i=self.theta_i_prime),
        ]

    def all_settings(self) -> List[MeasurementSetting]:
        """All 16 settings needed for S, each CHSH setting followed by its companions."""
        return [s for setting in self.settings() for s in setting.quartet()]


class FringeModel(BaseModel):
    eta: float
    amplitude: float = Field(ge=0)
    background: float = Field(default=0.0, ge=0)


class CountQuartet(BaseModel):
    """Counts at (s, i), (s_perp, i_perp), (s_perp, i), (s, i_perp)."""
    c_same: float = Field(ge=0)
    c_both_perp: float = Field(ge=0)
    c_signal_perp: float = Field(ge=0)
    c_idler_perp: float = Field(ge=0)

    @property
    def total(self) -> float:
        return self.c_same + self.c_both_perp + self.c_signal_perp + self.c_idler_perp


class CorrelationEstimate(BaseModel):
    theta_s_deg: float
    theta_i_deg: float
    E: float
    sigma_E: float = Field(ge=0)


class CHSHResult(BaseModel):
    E_values: List[CorrelationEstimate]
    S: float
    sigma_S: float = Field(ge=0)
    angles: CHSHAngles

    @property
    def violates_bound(self) -> bool:
        return abs(self.S) > 2.0
