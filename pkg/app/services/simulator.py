"""Monte Carlo generation of time-tagged detection records.

Every trial owns a fixed window of a single Philox stream keyed from the seed:
trial t reads counters 3t+1 to 3t+3, which gives twelve uniforms laid out in fixed
columns. A block starting at trial k sets the counter to 3k, so the outcome of a
trial depends only on (seed, trial index), not on the block size or on how
blocks are scheduled.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from app.config import get_settings
from app.models.experiment import (
    Channel,
    CoincidenceTable,
    EventLog,
    ExperimentConfig,
    SettingCounts,
)
from app.models.measurement import MeasurementSetting
from app.services.quantum_state import add_white_noise, ideal_state, projection_probabilities

logger = logging.getLogger(__name__)

# uniform columns drawn per trial
U_PAIR, U_SIG_POL, U_IDL_POL, U_SIG_DET, U_IDL_DET, U_SIG_BG, U_IDL_BG = range(7)
U_T_SIG, U_T_SIG_BG, U_T_IDL, U_T_IDL_BG = range(7, 11)
# twelve fill three Philox counter steps exactly; the last column is unused
N_UNIFORMS = 12
COUNTERS_PER_TRIAL = 3


def decoherence_visibility(delta_t_ns: float, tau_ns: float, v0: float) -> float:
    """v0 exp(-delta_t / tau)."""
    if tau_ns <= 0:
        raise ValueError(f"decay constant must be positive, got {tau_ns}")
    if delta_t_ns < 0:
        raise ValueError(f"storage time must be non-negative, got {delta_t_ns}")
    if not 0 <= v0 <= 1:
        raise ValueError(f"v0={v0} outside [0, 1]")
    return v0 * math.exp(-delta_t_ns / tau_ns)


def idler_efficiency(config: ExperimentConfig, delta_t_ns: Optional[float] = None) -> float:
    """Retrieval times idler detection efficiency after the storage time."""
    delta_t = config.delta_t_ns if delta_t_ns is None else delta_t_ns
    return config.det_eff_i * config.retrieval_eff * math.exp(-delta_t / config.effective_retrieval_tau_ns)


class TrialProbabilities(NamedTuple):
    p_s: float
    p_i: float
    p_si: float


def _pair_state(config: ExperimentConfig, delta_t_ns: float):
    v_eff = decoherence_visibility(delta_t_ns, config.memory_tau_ns, config.visibility)
    return add_white_noise(ideal_state(config.eta), v_eff)


def trial_probabilities(config: ExperimentConfig, setting: Optional[MeasurementSetting] = None,
                        delta_t_ns: Optional[float] = None) -> TrialProbabilities:
    """Per-trial probabilities of a D1 click, a D2 click, and both, in their gates."""
    delta_t = config.delta_t_ns if delta_t_ns is None else delta_t_ns
    setting = setting or MeasurementSetting()
    born = projection_probabilities(_pair_state(config, delta_t), setting)
    p = config.excitation_prob
    d_s = config.det_eff_s
    d_i = idler_efficiency(config, delta_t)
    b_s, b_i = config.bg_prob_s, config.bg_prob_i

    a = d_s * born.signal
    b = d_i * born.idler
    c = d_s * d_i * born.joint
    p_s = 1 - (1 - p * a) * (1 - b_s)
    p_i = 1 - (1 - p * b) * (1 - b_i)
    both_given_pair = 1 - (1 - a) * (1 - b_s) - (1 - b) * (1 - b_i) + (1 - a - b + c) * (1 - b_s) * (1 - b_i)
    p_si = p * both_given_pair + (1 - p) * b_s * b_i
    return TrialProbabilities(p_s, p_i, p_si)


def expected_g_si(config: ExperimentConfig, delta_t_ns: Optional[float] = None,
                  setting: Optional[MeasurementSetting] = None) -> float:
    """P_si / (P_s P_i) from the same model the Monte Carlo samples."""
    probs = trial_probabilities(config, setting, delta_t_ns)
    if probs.p_s == 0 or probs.p_i == 0:
        return float("nan")
    return probs.p_si / (probs.p_s * probs.p_i)


@dataclass
class SimulationRun:
    log: EventLog
    tally: CoincidenceTable


@dataclass
class _BlockResult:
    trial: np.ndarray
    channel: np.ndarray
    t_ns: np.ndarray
    setting_id: np.ndarray
    n_s: np.ndarray
    n_i: np.ndarray
    n_si: np.ndarray


class SimulationService:
    def __init__(self, workers: Optional[int] = None, block_trials: Optional[int] = None):
        settings = get_settings()
        self.workers = workers or settings.workers
        self.block_trials = block_trials or settings.block_trials

    def run_trials(self, config: ExperimentConfig, settings: Sequence[MeasurementSetting],
                   n_trials_per_setting: int, seed: int) -> EventLog:
        return self.simulate(config, settings, n_trials_per_setting, seed).log

    def simulate(self, config: ExperimentConfig, settings: Sequence[MeasurementSetting],
                 n_trials_per_setting: int, seed: int) -> SimulationRun:
        """Event log plus the ground-truth per-setting tally."""
        if not settings:
            raise ValueError("at least one measurement setting is required")
        if n_trials_per_setting < 1:
            raise ValueError(f"n_trials_per_setting must be >= 1, got {n_trials_per_setting}")
        if seed < 0:
            raise ValueError("seed must be non-negative")
        settings = list(settings)
        total = n_trials_per_setting * len(settings)
        n_blocks = -(-total // self.block_trials)
        tables = self._probability_tables(config, settings)
        logger.info(
            f"Simulating {total} trials over {len(settings)} settings "
            f"in {n_blocks} blocks with {self.workers} worker(s), seed {seed}"
        )

        def work(block: int) -> _BlockResult:
            return self._run_block(config, tables, n_trials_per_setting, total, seed, block)

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(work, range(n_blocks)))
        else:
            results = [work(block) for block in range(n_blocks)]

        log = EventLog(
            config=config,
            settings=settings,
            seed=seed,
            n_trials_per_setting=n_trials_per_setting,
            trial=np.concatenate([r.trial for r in results]),
            channel=np.concatenate([r.channel for r in results]),
            t_ns=np.concatenate([r.t_ns for r in results]),
            setting_id=np.concatenate([r.setting_id for r in results]),
        )
        n_s = sum(r.n_s for r in results)
        n_i = sum(r.n_i for r in results)
        n_si = sum(r.n_si for r in results)
        tally = CoincidenceTable(counts={
            k: SettingCounts(n_s=int(n_s[k]), n_i=int(n_i[k]), n_si=int(n_si[k]), n_trials=n_trials_per_setting)
            for k in range(len(settings))
        })
        logger.info(f"Simulation finished: {log.n_events} events, {int(n_si.sum())} coincidences")
        return SimulationRun(log=log, tally=tally)

    @staticmethod
    def _probability_tables(config: ExperimentConfig, settings: List[MeasurementSetting]) -> dict:
        state = _pair_state(config, config.delta_t_ns)
        born = [projection_probabilities(state, s) for s in settings]
        p_sig = np.array([b.signal for b in born])
        p_idl = np.array([b.idler for b in born])
        p_joint = np.array([b.joint for b in born])
        with np.errstate(divide="ignore", invalid="ignore"):
            idler_given_pass = np.where(p_sig > 0, p_joint / p_sig, 0.0)
            idler_given_block = np.where(p_sig < 1, (p_idl - p_joint) / (1 - p_sig), 0.0)
        return {
            "signal": p_sig,
            "idler_given_pass": np.clip(idler_given_pass, 0.0, 1.0),
            "idler_given_block": np.clip(idler_given_block, 0.0, 1.0),
            "d_i": idler_efficiency(config),
        }

    @staticmethod
    def _quantized_times(u: np.ndarray, low: float, high: float, resolution: float) -> np.ndarray:
        """Uniform TIA bins k*resolution inside [low, high]."""
        first = math.ceil(low / resolution - 1e-9)
        last = math.floor(high / resolution + 1e-9)
        n_bins = last - first + 1
        k = first + np.minimum((u * n_bins).astype(np.int64), n_bins - 1)
        return np.rint(k * resolution).astype(np.int64)

    def _run_block(self, config: ExperimentConfig, tables: dict, n_per_setting: int,
                   total: int, seed: int, block: int) -> _BlockResult:
        start = block * self.block_trials
        stop = min(start + self.block_trials, total)
        trials = np.arange(start, stop, dtype=np.int64)
        setting = trials // n_per_setting
        key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
        rng = np.random.Generator(np.random.Philox(key=key, counter=COUNTERS_PER_TRIAL * start))
        u = rng.random((stop - start, N_UNIFORMS))

        pair = u[:, U_PAIR] < config.excitation_prob
        signal_pass = u[:, U_SIG_POL] < tables["signal"][setting]
        idler_prob = np.where(signal_pass, tables["idler_given_pass"][setting], tables["idler_given_block"][setting])
        idler_pass = u[:, U_IDL_POL] < idler_prob
        sig_photon = pair & signal_pass & (u[:, U_SIG_DET] < config.det_eff_s)
        idl_photon = pair & idler_pass & (u[:, U_IDL_DET] < tables["d_i"])
        sig_bg = u[:, U_SIG_BG] < config.bg_prob_s
        idl_bg = u[:, U_IDL_BG] < config.bg_prob_i

        res = config.tia_resolution_ns
        d1_low = config.write_center_ns - config.gate_d1_ns / 2
        d1_high = config.write_center_ns + config.gate_d1_ns / 2
        d2_low = config.read_center_ns - config.gate_d2_ns / 2
        d2_high = config.read_center_ns + config.gate_d2_ns / 2

        parts = []
        for mask, column, channel, low, high in (
                (sig_photon, U_T_SIG, Channel.D1, d1_low, d1_high),
                (sig_bg, U_T_SIG_BG, Channel.D1, d1_low, d1_high),
                (idl_photon, U_T_IDL, Channel.D2, d2_low, d2_high),
                (idl_bg, U_T_IDL_BG, Channel.D2, d2_low, d2_high)):
            idx = np.nonzero(mask)[0]
            times = self._quantized_times(u[idx, column], low, high, res)
            parts.append((trials[idx], np.full(len(idx), channel.code, dtype=np.int8), times))

        trial_col = np.concatenate([p[0] for p in parts])
        channel_col = np.concatenate([p[1] for p in parts])
        time_col = np.concatenate([p[2] for p in parts])
        order = np.lexsort((channel_col, time_col, trial_col))
        trial_col, channel_col, time_col = trial_col[order], channel_col[order], time_col[order]

        n_settings = len(tables["signal"])
        fired_s = sig_photon | sig_bg
        fired_i = idl_photon | idl_bg
        return _BlockResult(
            trial=trial_col,
            channel=channel_col,
            t_ns=time_col,
            setting_id=(trial_col // n_per_setting).astype(np.int32),
            n_s=np.bincount(setting[fired_s], minlength=n_settings),
            n_i=np.bincount(setting[fired_i], minlength=n_settings),
            n_si=np.bincount(setting[fired_s & fired_i], minlength=n_settings),
        )


def run_trials(config: ExperimentConfig, settings: Sequence[MeasurementSetting],
               n_trials_per_setting: int, seed: int) -> EventLog:
    return SimulationService().run_trials(config, settings, n_trials_per_setting, seed)


def simulate(config: ExperimentConfig, settings: Sequence[MeasurementSetting],
             n_trials_per_setting: int, seed: int) -> SimulationRun:
    return SimulationService().simulate(config, settings, n_trials_per_setting, seed)
