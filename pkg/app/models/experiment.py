import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.measurement import MeasurementSetting

logger = logging.getLogger(__name__)

EVENT_LOG_VERSION = 1


class ExperimentConfig(BaseModel):
    """Parameters of the write/read sequence. Durations in ns, probabilities dimensionless."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: float = Field(default=0.81 * math.pi / 4, ge=0, le=math.pi / 2)
    excitation_prob: float = Field(default=0.05, ge=0, le=1)
    retrieval_eff: float = Field(default=0.55, ge=0, le=1)
    det_eff_s: float = Field(default=0.02, ge=0, le=1)
    det_eff_i: float = Field(default=0.04, ge=0, le=1)
    bg_prob_s: float = Field(default=5e-5, ge=0, le=1)
    bg_prob_i: float = Field(default=5e-5, ge=0, le=1)
    visibility: float = Field(default=0.95, ge=0, le=1)
    delta_t_ns: float = Field(default=200.0, ge=0)
    memory_tau_ns: float = Field(default=3700.0, gt=0)
    retrieval_tau_ns: Optional[float] = Field(default=None, gt=0)
    cycle_ns: float = Field(default=1500.0, gt=0)
    dark_ns: float = Field(default=640.0, gt=0)
    write_delay_ns: float = Field(default=20.0, ge=0)
    write_len_ns: float = Field(default=130.0, gt=0)
    read_len_ns: float = Field(default=120.0, gt=0)
    gate_d1_ns: float = Field(default=140.0, gt=0)
    gate_d2_ns: float = Field(default=130.0, gt=0)
    tia_resolution_ns: float = Field(default=2.0, gt=0)

    @model_validator(mode="after")
    def _check_timing(self):
        if self.dark_ns > self.cycle_ns:
            raise ValueError(f"dark period {self.dark_ns} ns exceeds the cycle {self.cycle_ns} ns")
        if self.tia_resolution_ns != round(self.tia_resolution_ns):
            raise ValueError("tia_resolution_ns must be a whole number of ns; timestamps are integer ns")
        if self.write_center_ns - self.gate_d1_ns / 2 < 0:
            raise ValueError("D1 gate opens before the start of the cycle; increase write_delay_ns")
        if self.read_gate_end_ns > self.dark_ns:
            logger.warning(
                f"read gate ends at {self.read_gate_end_ns:.0f} ns, beyond the {self.dark_ns:.0f} ns "
                f"dark period; dark period extended to {self.effective_dark_ns:.0f} ns"
            )
        return self

    @property
    def write_center_ns(self) -> float:
        return self.write_delay_ns + self.write_len_ns / 2

    @property
    def read_center_ns(self) -> float:
        return self.write_center_ns + self.delta_t_ns

    @property
    def read_gate_end_ns(self) -> float:
        return self.read_center_ns + self.gate_d2_ns / 2

    @property
    def effective_dark_ns(self) -> float:
        return max(self.dark_ns, self.read_gate_end_ns)

    @property
    def effective_cycle_ns(self) -> float:
        return self.cycle_ns + (self.effective_dark_ns - self.dark_ns)

    @property
    def effective_retrieval_tau_ns(self) -> float:
        return self.retrieval_tau_ns if self.retrieval_tau_ns is not None else self.memory_tau_ns

    def key_values(self) -> Dict[str, str]:
        return {key: repr(value) for key, value in self.model_dump(exclude_none=True).items()}


class Channel(str, Enum):
    """Detector channels: D1 (signal, start) and D2 (idler, stop)."""
    D1 = "D1"
    D2 = "D2"

    @property
    def code(self) -> int:
        return 1 if self is Channel.D1 else 2

    @classmethod
    def from_code(cls, code: int) -> "Channel":
        return cls.D1 if code == 1 else cls.D2


class DetectionEvent(NamedTuple):
    trial: int
    channel: Channel
    t_ns: int
    setting_id: int


@dataclass(eq=False)
class EventLog:
    """Header plus column-stored detection events sorted by (trial, t_ns)."""
    config: ExperimentConfig
    settings: List[MeasurementSetting]
    seed: int
    n_trials_per_setting: int
    trial: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    channel: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int8))
    t_ns: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    setting_id: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int32))

    def __post_init__(self):
        self.trial = np.asarray(self.trial, dtype=np.int64)
        self.channel = np.asarray(self.channel, dtype=np.int8)
        self.t_ns = np.asarray(self.t_ns, dtype=np.int64)
        self.setting_id = np.asarray(self.setting_id, dtype=np.int32)

    @classmethod
    def from_events(cls, config: ExperimentConfig, settings: List[MeasurementSetting], seed: int,
                    n_trials_per_setting: int, events: List[DetectionEvent]) -> "EventLog":
        return cls(
            config=config,
            settings=list(settings),
            seed=seed,
            n_trials_per_setting=n_trials_per_setting,
            trial=[e.trial for e in events],
            channel=[Channel(e.channel).code for e in events],
            t_ns=[e.t_ns for e in events],
            setting_id=[e.setting_id for e in events],
        )

    @property
    def n_events(self) -> int:
        return len(self.trial)

    @property
    def n_trials(self) -> int:
        return self.n_trials_per_setting * len(self.settings)

    @property
    def events(self) -> List[DetectionEvent]:
        return list(iter(self))

    def __iter__(self) -> Iterator[DetectionEvent]:
        for trial, channel, t_ns, setting_id in zip(
                self.trial.tolist(), self.channel.tolist(), self.t_ns.tolist(), self.setting_id.tolist()):
            yield DetectionEvent(trial, Channel.from_code(channel), t_ns, setting_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return (
            self.config == other.config
            and self.seed == other.seed
            and self.n_trials_per_setting == other.n_trials_per_setting
            and len(self.settings) == len(other.settings)
            and all(a.matches(b) for a, b in zip(self.settings, other.settings))
            and np.array_equal(self.trial, other.trial)
            and np.array_equal(self.channel, other.channel)
            and np.array_equal(self.t_ns, other.t_ns)
            and np.array_equal(self.setting_id, other.setting_id)
        )


class GateConfig(BaseModel):
    d1_center_ns: float
    d1_width_ns: float = Field(default=140.0, gt=0)
    d2_center_ns: float
    d2_width_ns: float = Field(default=130.0, gt=0)

    @classmethod
    def from_experiment(cls, config: ExperimentConfig) -> "GateConfig":
        return cls(
            d1_center_ns=config.write_center_ns,
            d1_width_ns=config.gate_d1_ns,
            d2_center_ns=config.read_center_ns,
            d2_width_ns=config.gate_d2_ns,
        )

    def bounds(self, channel: Channel) -> tuple:
        if channel is Channel.D1:
            return self.d1_center_ns - self.d1_width_ns / 2, self.d1_center_ns + self.d1_width_ns / 2
        return self.d2_center_ns - self.d2_width_ns / 2, self.d2_center_ns + self.d2_width_ns / 2

    def inside(self, channel: Channel, t_ns: np.ndarray) -> np.ndarray:
        low, high = self.bounds(channel)
        return (t_ns >= low) & (t_ns <= high)


class SettingCounts(BaseModel):
    n_s: int = Field(ge=0)
    n_i: int = Field(ge=0)
    n_si: int = Field(ge=0)
    n_trials: int = Field(ge=0)

    @model_validator(mode="after")
    def _pairs_bounded(self):
        if self.n_si > min(self.n_s, self.n_i):
            raise ValueError(f"coincidences {self.n_si} exceed singles ({self.n_s}, {self.n_i})")
        return self


class CoincidenceTable(BaseModel):
    counts: Dict[int, SettingCounts]

    def total(self) -> SettingCounts:
        return SettingCounts(
            n_s=sum(c.n_s for c in self.counts.values()),
            n_i=sum(c.n_i for c in self.counts.values()),
            n_si=sum(c.n_si for c in self.counts.values()),
            n_trials=sum(c.n_trials for c in self.counts.values()),
        )


class DecayPoint(BaseModel):
    delta_t_ns: float
    g_si: float = Field(ge=0)
    sigma: float = Field(gt=0)


class FringePoint(BaseModel):
    theta_s: float
    counts: float = Field(ge=0)
    sigma: float = Field(gt=0)


class FringeFit(BaseModel):
    amplitude: float
    background: float
    phase_offset: float
    visibility: float
    chi2: float
    residuals: List[float]


class ExponentialFit(BaseModel):
    tau_ns: float
    sigma_tau_ns: float
    amplitude: float
    floor: float
    chi2: float
    residuals: List[float]
