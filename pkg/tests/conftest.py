"""Shared fixtures and independent oracles."""
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pytest

from app.models.experiment import Channel, DetectionEvent, EventLog, ExperimentConfig
from app.models.measurement import CHSHAngles, MeasurementSetting

# per CHSH setting: (same, both perp, signal perp, idler perp), 1000 pairs each
PUBLISHED_QUARTETS = [
    (410, 410, 90, 90),
    (397, 397, 103, 103),
    (368, 368, 132, 132),
    (102, 101, 399, 398),
]
PUBLISHED_E = [0.641, 0.587, 0.471, -0.595]
PUBLISHED_SIGMA_E = [0.024, 0.027, 0.029, 0.027]

D1_TIME_NS = 84
D2_TIME_NS = 284


def _lowering_factor(tj: int, tm: int) -> float:
    j, m = tj / 2, tm / 2
    return math.sqrt(j * (j + 1) - m * (m - 1))


def brute_force_cg(tj1: int, tj2: int) -> Dict[Tuple[int, int, int, int], float]:
    """<j1 m1 j2 m2 | J M> keyed by twice-values, from J^2 diagonalization plus lowering.

    The M = J state is fixed by <j1 j1, j2 J-j1 | J J> > 0, then J- generates the rest.
    """
    basis = [(tm1, tm2) for tm1 in range(-tj1, tj1 + 1, 2) for tm2 in range(-tj2, tj2 + 1, 2)]
    index = {b: k for k, b in enumerate(basis)}
    dim = len(basis)
    lowering = np.zeros((dim, dim))
    for (tm1, tm2), k in index.items():
        if tm1 > -tj1:
            lowering[index[(tm1 - 2, tm2)], k] += _lowering_factor(tj1, tm1)
        if tm2 > -tj2:
            lowering[index[(tm1, tm2 - 2)], k] += _lowering_factor(tj2, tm2)
    mz = np.array([(tm1 + tm2) / 2 for tm1, tm2 in basis])
    j_squared = lowering.T @ lowering + np.diag(mz * mz - mz)

    table = {}
    for tJ in range(abs(tj1 - tj2), tj1 + tj2 + 1, 2):
        sub = [k for k, (tm1, tm2) in enumerate(basis) if tm1 + tm2 == tJ]
        values, vectors = np.linalg.eigh(j_squared[np.ix_(sub, sub)])
        target = tJ / 2 * (tJ / 2 + 1)
        local = vectors[:, np.argmin(abs(values - target))]
        state = np.zeros(dim)
        state[sub] = local
        if state[index[(tj1, tJ - tj1)]] < 0:
            state = -state
        tM = tJ
        while True:
            for k, (tm1, tm2) in enumerate(basis):
                if tm1 + tm2 == tM:
                    table[(tm1, tm2, tJ, tM)] = state[k]
            if tM == -tJ:
                break
            state = lowering @ state / _lowering_factor(tJ, tM)
            tM -= 2
    return table


def bootstrap_sigma_E(counts: Sequence[float], n_resamples: int = 100_000, seed: int = 0) -> float:
    """Parametric Poisson bootstrap of E over a count quartet."""
    rng = np.random.default_rng(seed)
    draws = rng.poisson(np.asarray(counts, dtype=float), size=(n_resamples, 4))
    total = draws.sum(axis=1)
    e = (draws[:, 0] + draws[:, 1] - draws[:, 2] - draws[:, 3]) / total
    return float(np.std(e))


def paired_events(setting_id: int, n_per_setting: int, n_pairs: int, d1_only: int = 0,
                  d2_only: int = 0) -> List[DetectionEvent]:
    """In-gate pairs followed by unpaired singles for one setting."""
    events = []
    first = setting_id * n_per_setting
    for t in range(n_pairs):
        events.append(DetectionEvent(first + t, Channel.D1, D1_TIME_NS, setting_id))
        events.append(DetectionEvent(first + t, Channel.D2, D2_TIME_NS, setting_id))
    for t in range(n_pairs, n_pairs + d1_only):
        events.append(DetectionEvent(first + t, Channel.D1, D1_TIME_NS, setting_id))
    for t in range(n_pairs + d1_only, n_pairs + d1_only + d2_only):
        events.append(DetectionEvent(first + t, Channel.D2, D2_TIME_NS, setting_id))
    return events


@pytest.fixture
def default_config() -> ExperimentConfig:
    return ExperimentConfig()


@pytest.fixture
def published_log(default_config) -> EventLog:
    """Coincidence counts reproducing the published correlation table."""
    settings = CHSHAngles.canonical().all_settings()
    n = 1000
    events = []
    for q, quartet in enumerate(PUBLISHED_QUARTETS):
        for j, count in enumerate(quartet):
            events += paired_events(4 * q + j, n, count)
    return EventLog.from_events(default_config, settings, seed=0, n_trials_per_setting=n, events=events)


@pytest.fixture
def no_polarizer() -> List[MeasurementSetting]:
    return [MeasurementSetting()]
