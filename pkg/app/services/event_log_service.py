"""Reading and writing the project's text file formats.

Event log::

    # version=1
    # <config key>=<value>          one per ExperimentConfig field
    # setting <id> <theta_s_deg|-> <theta_i_deg|->
    # seed=<n>
    # n_trials_per_setting=<n>
    <trial> <D1|D2> <t_ns> <setting_id>

Body lines are sorted by (trial, t_ns, channel). Parsing either returns a
complete EventLog or raises EventLogParseError with the offending line.
"""
import csv
import io
import logging
import math
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Set, Tuple, Union

import numpy as np
from dotenv import dotenv_values
from pydantic import ValidationError

from app.exceptions import ConfigError, EventLogParseError
from app.models.experiment import (
    EVENT_LOG_VERSION,
    Channel,
    DecayPoint,
    EventLog,
    ExperimentConfig,
    FringePoint,
)
from app.models.measurement import CHSHAngles, MeasurementSetting

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_KEY_VALUE = re.compile(r"^\s*(?:export\s+)?([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*?)\s*$")
_CHANNELS = {"D1": Channel.D1.code, "D2": Channel.D2.code}
# config keys every written log carries; optional ones are omitted when unset
_RECORDED_KEYS = frozenset(name for name, field in ExperimentConfig.model_fields.items() if field.default is not None)
_QUANTIZATION_TOLERANCE = 1e-6


def _format_angle(value: Optional[float]) -> str:
    return "-" if value is None else repr(float(value))


def _parse_angle(token: str) -> Optional[float]:
    if token == "-":
        return None
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"angle {token!r} is not finite")
    return value


def format_setting_line(setting_id: int, setting: MeasurementSetting) -> str:
    return f"setting {setting_id} {_format_angle(setting.theta_s_deg)} {_format_angle(setting.theta_i_deg)}"


def _parse_setting_tokens(tokens: List[str]) -> Tuple[int, MeasurementSetting]:
    if len(tokens) != 4 or tokens[0] != "setting":
        raise ValueError("expected 'setting <id> <theta_s_deg> <theta_i_deg>'")
    setting_id = int(tokens[1])
    return setting_id, MeasurementSetting.from_degrees(_parse_angle(tokens[2]), _parse_angle(tokens[3]))


def format_event_log(log: EventLog) -> str:
    lines = [f"# version={EVENT_LOG_VERSION}"]
    lines += [f"# {key}={value}" for key, value in log.config.key_values().items()]
    lines += [f"# {format_setting_line(k, s)}" for k, s in enumerate(log.settings)]
    lines.append(f"# seed={log.seed}")
    lines.append(f"# n_trials_per_setting={log.n_trials_per_setting}")
    for event in log:
        lines.append(f"{event.trial} {event.channel.value} {event.t_ns} {event.setting_id}")
    return "\n".join(lines) + "\n"


def write_event_log(log: EventLog, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_event_log(log), encoding="utf-8")
    logger.info(f"Wrote {log.n_events} events to {path}")
    return path


def parse_event_log(path: PathLike) -> EventLog:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise EventLogParseError(f"cannot read {path}: {e}") from e
    except UnicodeDecodeError as e:
        raise EventLogParseError(f"{path} is not a text event log") from e
    log = parse_event_log_text(text)
    logger.info(f"Parsed {log.n_events} events over {len(log.settings)} settings from {path}")
    return log


class _LogReader:
    def __init__(self):
        self.version_seen = False
        self.config_values: Dict[str, str] = {}
        self.keys_seen: Set[str] = set()
        self.settings: List[MeasurementSetting] = []
        self.seed: Optional[int] = None
        self.n_per_setting: Optional[int] = None
        self.header_done = False
        self.config: Optional[ExperimentConfig] = None
        self.columns: Tuple[list, list, list, list] = ([], [], [], [])
        self.last_key: Optional[Tuple[int, int, int]] = None

    def header_line(self, lineno: int, body: str) -> None:
        if self.header_done:
            raise EventLogParseError("header line after the first event", lineno)
        tokens = body.split()
        if not tokens:
            return
        if not self.version_seen:
            if tokens[0] != f"version={EVENT_LOG_VERSION}":
                raise EventLogParseError(
                    f"expected 'version={EVENT_LOG_VERSION}' as first header line, got {body!r}", lineno)
            self.version_seen = True
            return
        if tokens[0] == "setting":
            try:
                setting_id, setting = _parse_setting_tokens(tokens)
            except ValueError as e:
                raise EventLogParseError(f"bad setting line: {e}", lineno) from e
            if setting_id != len(self.settings):
                raise EventLogParseError(f"setting ids must be consecutive from 0, got {setting_id}", lineno)
            self.settings.append(setting)
            return
        match = _KEY_VALUE.match(body)
        if not match:
            raise EventLogParseError(f"malformed header line {body!r}", lineno)
        key, value = match.group(1), match.group(2)
        if key in self.keys_seen:
            raise EventLogParseError(f"duplicate header key {key!r}", lineno)
        self.keys_seen.add(key)
        if key in ("seed", "n_trials_per_setting"):
            try:
                number = int(value)
            except ValueError as e:
                raise EventLogParseError(f"{key} must be an integer, got {value!r}", lineno) from e
            if number < 0:
                raise EventLogParseError(f"{key} must be non-negative", lineno)
            setattr(self, "seed" if key == "seed" else "n_per_setting", number)
        elif key == "version":
            raise EventLogParseError("duplicate version line", lineno)
        elif key in ExperimentConfig.model_fields:
            self.config_values[key] = value
        else:
            raise EventLogParseError(f"unknown header key {key!r}", lineno)

    def finish_header(self, lineno: int) -> None:
        if not self.version_seen:
            raise EventLogParseError("missing version header", lineno)
        if self.seed is None or self.n_per_setting is None:
            raise EventLogParseError("header lacks seed or n_trials_per_setting", lineno)
        if not self.settings:
            raise EventLogParseError("header lists no settings", lineno)
        missing = sorted(_RECORDED_KEYS - self.config_values.keys())
        if missing:
            logger.warning(f"event log header lacks {', '.join(missing)}; using defaults")
        try:
            self.config = ExperimentConfig(**self.config_values)
        except ValidationError as e:
            raise EventLogParseError(f"invalid config in header: {e.errors()[0]['msg']}", lineno) from e
        self.header_done = True

    def event_line(self, lineno: int, body: str) -> None:
        if not self.header_done:
            self.finish_header(lineno)
        tokens = body.split(" ")
        if len(tokens) != 4:
            raise EventLogParseError(f"expected 4 space-separated fields, got {len(tokens)}", lineno)
        try:
            trial, t_ns, setting_id = int(tokens[0]), int(tokens[2]), int(tokens[3])
        except ValueError as e:
            raise EventLogParseError(f"non-integer field in {body!r}", lineno) from e
        channel = _CHANNELS.get(tokens[1])
        if channel is None:
            raise EventLogParseError(f"unknown channel {tokens[1]!r}", lineno)
        n_trials = self.n_per_setting * len(self.settings)
        if not 0 <= trial < n_trials:
            raise EventLogParseError(f"trial {trial} outside [0, {n_trials})", lineno)
        if setting_id != trial // self.n_per_setting:
            raise EventLogParseError(
                f"setting {setting_id} inconsistent with trial {trial} (expected {trial // self.n_per_setting})",
                lineno)
        steps = t_ns / self.config.tia_resolution_ns
        if abs(steps - round(steps)) > _QUANTIZATION_TOLERANCE:
            raise EventLogParseError(
                f"timestamp {t_ns} ns is not a multiple of the {self.config.tia_resolution_ns} ns resolution",
                lineno)
        key = (trial, t_ns, channel)
        if self.last_key is not None and key < self.last_key:
            raise EventLogParseError("events not sorted by trial and time", lineno)
        self.last_key = key
        for column, value in zip(self.columns, (trial, channel, t_ns, setting_id)):
            column.append(value)

    def build(self, lineno: int) -> EventLog:
        if not self.header_done:
            self.finish_header(lineno)
        trial, channel, t_ns, setting_id = self.columns
        return EventLog(
            config=self.config,
            settings=self.settings,
            seed=self.seed,
            n_trials_per_setting=self.n_per_setting,
            trial=np.array(trial, dtype=np.int64),
            channel=np.array(channel, dtype=np.int8),
            t_ns=np.array(t_ns, dtype=np.int64),
            setting_id=np.array(setting_id, dtype=np.int32),
        )


def parse_event_log_text(text: str) -> EventLog:
    reader = _LogReader()
    lineno = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#"):
            reader.header_line(lineno, line[1:].strip())
        else:
            reader.event_line(lineno, line.strip())
    return reader.build(lineno + 1)


def parse_experiment_config(path: PathLike) -> ExperimentConfig:
    """`key = value` file with `#` comments; unspecified keys keep their defaults."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config file not found", path=str(path))
    lines: Dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        match = _KEY_VALUE.match(line)
        if not match:
            raise ConfigError(f"malformed line {line!r}, expected key = value", line=lineno, path=str(path))
        key = match.group(1)
        if key not in ExperimentConfig.model_fields:
            raise ConfigError(f"unknown key {key!r}", line=lineno, path=str(path))
        if key in lines:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, path=str(path))
        lines[key] = lineno

    values = {key: value for key, value in dotenv_values(path).items() if key in lines}
    for key, value in values.items():
        if value is None or value == "":
            raise ConfigError(f"missing value for {key!r}", line=lines[key], path=str(path))
    try:
        config = ExperimentConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = error["loc"][0] if error["loc"] else None
        raise ConfigError(
            f"{key}: {error['msg']}" if key else error["msg"],
            line=lines.get(key), path=str(path),
        ) from e
    logger.info(f"Loaded experiment config from {path} ({len(values)} keys set)")
    return config


def parse_settings_file(path: PathLike) -> List[MeasurementSetting]:
    """`setting <id> <theta_s_deg|-> <theta_i_deg|->` lines, ids consecutive from 0."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("settings file not found", path=str(path))
    settings: List[MeasurementSetting] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            setting_id, setting = _parse_setting_tokens(line.split())
        except ValueError as e:
            raise ConfigError(str(e), line=lineno, path=str(path)) from e
        if setting_id != len(settings):
            raise ConfigError(f"setting ids must be consecutive from 0, got {setting_id}",
                              line=lineno, path=str(path))
        settings.append(setting)
    if not settings:
        raise ConfigError("no settings defined", path=str(path))
    return settings


def default_settings(angles: Optional[CHSHAngles] = None) -> List[MeasurementSetting]:
    """The 16 settings of a CHSH measurement."""
    return (angles or CHSHAngles.canonical()).all_settings()


def format_settings_file(settings: Iterable[MeasurementSetting]) -> str:
    return "".join(f"{format_setting_line(k, s)}\n" for k, s in enumerate(settings))


def _read_csv_rows(path: PathLike, columns: Tuple[str, ...]) -> List[Tuple[int, Dict[str, float]]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("data file not found", path=str(path))
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = [name.strip() for name in (reader.fieldnames or [])]
        missing = [c for c in columns if c not in header]
        if missing:
            raise ConfigError(f"missing CSV columns: {', '.join(missing)}", line=1, path=str(path))
        reader.fieldnames = header
        rows = []
        for row in reader:
            try:
                rows.append((reader.line_num, {c: float(row[c]) for c in columns}))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"non-numeric value in row: {e}", line=reader.line_num, path=str(path)) from e
    return rows


def read_fringe_points(path: PathLike) -> List[FringePoint]:
    """CSV columns theta_s_deg, counts, sigma."""
    points = []
    for lineno, row in _read_csv_rows(path, ("theta_s_deg", "counts", "sigma")):
        try:
            points.append(FringePoint(theta_s=math.radians(row["theta_s_deg"]), counts=row["counts"],
                                      sigma=row["sigma"]))
        except ValidationError as e:
            raise ConfigError(e.errors()[0]["msg"], line=lineno, path=str(path)) from e
    return points


def read_decay_points(path: PathLike) -> List[DecayPoint]:
    """CSV columns delta_t_ns, g_si, sigma."""
    points = []
    for lineno, row in _read_csv_rows(path, ("delta_t_ns", "g_si", "sigma")):
        try:
            points.append(DecayPoint(**row))
        except ValidationError as e:
            raise ConfigError(e.errors()[0]["msg"], line=lineno, path=str(path)) from e
    return points


def rows_to_csv(rows: List[Dict[str, object]]) -> str:
    if not rows:
        return ""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()
