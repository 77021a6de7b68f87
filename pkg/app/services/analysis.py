"""Gating, coincidence counting and fits over detection records."""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import least_squares

from app.exceptions import FitError, InsufficientDataError, MissingSettingsError
from app.models.experiment import (
    Channel,
    CoincidenceTable,
    DecayPoint,
    EventLog,
    ExponentialFit,
    FringeFit,
    FringePoint,
    GateConfig,
    SettingCounts,
)
from app.models.measurement import CHSHAngles, CHSHResult, CountQuartet, MeasurementSetting
from app.services.predictor import chsh_S, correlation_E

logger = logging.getLogger(__name__)

MAX_FIT_EVALUATIONS = 20_000
FIT_TOLERANCE = 1e-15


def _first_click_trials(log: EventLog, gates: GateConfig, channel: Channel) -> Tuple[np.ndarray, np.ndarray]:
    """Trials with an in-gate click on the channel, and the setting each ran under."""
    mask = (log.channel == channel.code) & gates.inside(channel, log.t_ns)
    trials, first = np.unique(log.trial[mask], return_index=True)
    return trials, log.setting_id[mask][first]


def gate_and_count(log: EventLog, gates: Optional[GateConfig] = None) -> CoincidenceTable:
    """Singles per channel and start/stop pairs per setting, at most one pair per trial."""
    gates = gates or GateConfig.from_experiment(log.config)
    n_settings = len(log.settings)
    trials_s, settings_s = _first_click_trials(log, gates, Channel.D1)
    trials_i, settings_i = _first_click_trials(log, gates, Channel.D2)
    _, paired, _ = np.intersect1d(trials_s, trials_i, assume_unique=True, return_indices=True)

    n_s = np.bincount(settings_s, minlength=n_settings)
    n_i = np.bincount(settings_i, minlength=n_settings)
    n_si = np.bincount(settings_s[paired], minlength=n_settings)
    table = CoincidenceTable(counts={
        k: SettingCounts(n_s=int(n_s[k]), n_i=int(n_i[k]), n_si=int(n_si[k]), n_trials=log.n_trials_per_setting)
        for k in range(n_settings)
    })
    logger.info(f"Gated {log.n_events} events: {int(n_s.sum())} D1, {int(n_i.sum())} D2, {int(n_si.sum())} pairs")
    return table


def _as_counts(table: Union[CoincidenceTable, SettingCounts]) -> SettingCounts:
    return table.total() if isinstance(table, CoincidenceTable) else table


def compute_g_si(table: Union[CoincidenceTable, SettingCounts]) -> Tuple[float, float]:
    """Normalized signal-idler correlation with its Poisson delta-method sigma."""
    counts = _as_counts(table)
    if counts.n_trials <= 0:
        raise InsufficientDataError("g_si needs at least one trial")
    if counts.n_s == 0 or counts.n_i == 0:
        raise InsufficientDataError(f"g_si undefined with zero singles (N_s={counts.n_s}, N_i={counts.n_i})")
    scale = counts.n_trials / (counts.n_s * counts.n_i)
    g = counts.n_si * scale
    if counts.n_si == 0:
        # one-count upper scale
        return 0.0, scale
    sigma = g * math.sqrt(1 / counts.n_si + 1 / counts.n_s + 1 / counts.n_i)
    return g, sigma


def detection_efficiency(table: Union[CoincidenceTable, SettingCounts]) -> Tuple[float, float]:
    """alpha_s = N_si/N_i and alpha_i = N_si/N_s."""
    counts = _as_counts(table)
    if counts.n_s == 0 or counts.n_i == 0:
        raise InsufficientDataError(f"efficiencies undefined with zero singles (N_s={counts.n_s}, N_i={counts.n_i})")
    return counts.n_si / counts.n_i, counts.n_si / counts.n_s


def decay_point(log: EventLog, gates: Optional[GateConfig] = None) -> DecayPoint:
    """g_si of a whole log at the storage time recorded in its header."""
    g, sigma = compute_g_si(gate_and_count(log, gates))
    return DecayPoint(delta_t_ns=log.config.delta_t_ns, g_si=g, sigma=sigma)


def _setting_ids(settings: Sequence[MeasurementSetting], wanted: MeasurementSetting) -> List[int]:
    return [k for k, s in enumerate(settings) if s.matches(wanted)]


def chsh_from_log(log: EventLog, gates: Optional[GateConfig] = None,
                  angles: Optional[CHSHAngles] = None) -> CHSHResult:
    """E for the four CHSH settings from coincidences at each setting and its companions."""
    angles = angles or CHSHAngles.canonical()
    table = gate_and_count(log, gates)

    missing = []
    quartet_ids: List[List[List[int]]] = []
    for setting in angles.settings():
        ids = []
        for companion in setting.quartet():
            found = _setting_ids(log.settings, companion)
            if not found:
                missing.append(companion.label())
            ids.append(found)
        quartet_ids.append(ids)
    if missing:
        raise MissingSettingsError(missing)

    estimates = []
    for ids in quartet_ids:
        c = [sum(table.counts[k].n_si for k in group) for group in ids]
        estimates.append(correlation_E(CountQuartet(
            c_same=c[0], c_both_perp=c[1], c_signal_perp=c[2], c_idler_perp=c[3])))
    result = chsh_S(estimates, angles)
    logger.info(f"CHSH from log: S = {result.S:.3f} +/- {result.sigma_S:.3f}")
    return result


def _check_fringe_coverage(theta: np.ndarray) -> None:
    if len(theta) < 4:
        raise InsufficientDataError(f"fringe fit needs at least 4 points, got {len(theta)}")
    folded = np.sort(np.mod(theta, math.pi))
    distinct = folded[np.concatenate([[True], np.diff(folded) > 1e-9])]
    if len(distinct) < 3:
        raise InsufficientDataError("fringe fit needs at least 3 distinct polarizer angles modulo pi")
    gaps = np.append(np.diff(distinct), distinct[0] + math.pi - distinct[-1])
    span = math.pi - gaps.max()
    if span < math.pi / 2 - 1e-9:
        raise InsufficientDataError(f"points span {math.degrees(span):.1f} deg, need at least half a period (90 deg)")


def fit_fringe(points: Sequence[FringePoint], eta: float, theta_i: float) -> FringeFit:
    """Weighted fit of amplitude, background and phase offset with eta and theta_i held fixed."""
    theta = np.array([p.theta_s for p in points], dtype=float)
    y = np.array([p.counts for p in points], dtype=float)
    sigma = np.array([p.sigma for p in points], dtype=float)
    _check_fringe_coverage(theta)

    u = math.cos(eta) * math.cos(theta_i)
    v = math.sin(eta) * math.sin(theta_i)
    r_sq = u * u + v * v
    if r_sq < 1e-15:
        raise FitError("fringe has no modulation at this idler angle", {"eta": eta, "theta_i": theta_i})
    psi = math.atan2(v, u)

    # C = B + A R^2 + A R^2 cos 2(theta + phi - psi) is linear in (1, cos 2theta, sin 2theta)
    design = np.column_stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)]) / sigma[:, None]
    (a0, a1, a2), *_ = np.linalg.lstsq(design, y / sigma, rcond=None)
    modulation = math.hypot(a1, a2)
    if modulation <= 1e-12 * max(abs(a0), 1.0):
        weights = 1 / sigma ** 2
        background = float(np.sum(weights * y) / np.sum(weights))
        residuals = y - background
        logger.info("Fringe fit: no modulation, visibility 0")
        return FringeFit(amplitude=0.0, background=background, phase_offset=0.0, visibility=0.0,
                         chi2=float(np.sum((residuals / sigma) ** 2)), residuals=residuals.tolist())

    p0 = [modulation / r_sq, a0 - modulation, psi + math.atan2(-a2, a1) / 2]

    def lobe(p):
        x = theta + p[2]
        return u * np.cos(x) + v * np.sin(x), -u * np.sin(x) + v * np.cos(x)

    def residual(p):
        w, _ = lobe(p)
        return (p[0] * 2 * w * w + p[1] - y) / sigma

    def jacobian(p):
        w, dw = lobe(p)
        return np.column_stack([2 * w * w, np.ones_like(w), 4 * p[0] * w * dw]) / sigma[:, None]

    result = least_squares(residual, p0, jac=jacobian, method="lm", xtol=FIT_TOLERANCE,
                           ftol=FIT_TOLERANCE, gtol=FIT_TOLERANCE, max_nfev=MAX_FIT_EVALUATIONS)
    if result.status <= 0:
        raise FitError("fringe fit did not converge", {"status": result.status, "message": result.message})

    amplitude, background, phase = (float(x) for x in result.x)
    if amplitude < 0:
        background += amplitude * 2 * r_sq
        amplitude = -amplitude
        phase += math.pi / 2
    phase = math.remainder(phase, math.pi)

    peak = amplitude * 2 * r_sq
    denominator = peak + 2 * background
    visibility = peak / denominator if denominator > 0 else 0.0
    residuals = -result.fun * sigma
    chi2 = float(np.sum(result.fun ** 2))
    logger.info(f"Fringe fit: amplitude {amplitude:.4g}, background {background:.4g}, "
                f"visibility {visibility:.4f}, chi2 {chi2:.3g}")
    return FringeFit(amplitude=amplitude, background=background, phase_offset=phase,
                     visibility=visibility, chi2=chi2, residuals=residuals.tolist())


def fit_exponential(points: Sequence[DecayPoint]) -> ExponentialFit:
    """Weighted fit of floor + A exp(-delta_t / tau)."""
    t = np.array([p.delta_t_ns for p in points], dtype=float)
    y = np.array([p.g_si for p in points], dtype=float)
    sigma = np.array([p.sigma for p in points], dtype=float)
    if len(np.unique(t)) < 3:
        raise InsufficientDataError(f"decay fit needs at least 3 distinct storage times, got {len(np.unique(t))}")

    span = float(t.max() - t.min())
    p0 = [float(y.max() - y.min()), float(y.min()), span / 2]
    # amplitude sign from the trend of the earliest and latest points
    if y[np.argmin(t)] < y[np.argmax(t)]:
        p0[0] = -p0[0]
        p0[1] = float(y.max())

    def residual(p):
        return (p[1] + p[0] * np.exp(-t / p[2]) - y) / sigma

    def jacobian(p):
        decay = np.exp(-t / p[2])
        return np.column_stack([decay, np.ones_like(t), p[0] * decay * t / p[2] ** 2]) / sigma[:, None]

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        result = least_squares(residual, p0, jac=jacobian, method="lm", xtol=FIT_TOLERANCE,
                               ftol=FIT_TOLERANCE, gtol=FIT_TOLERANCE, max_nfev=MAX_FIT_EVALUATIONS)
    amplitude, floor, tau = (float(x) for x in result.x)
    diagnostics = {"status": result.status, "nfev": result.nfev, "tau_ns": tau}
    if result.status <= 0 or not np.all(np.isfinite(result.x)):
        raise FitError("decay fit did not converge", diagnostics)
    if tau <= 0:
        raise FitError("decay fit returned a non-positive time constant", diagnostics)

    try:
        covariance = np.linalg.inv(result.jac.T @ result.jac)
    except np.linalg.LinAlgError as e:
        raise FitError("singular covariance in decay fit", diagnostics) from e
    variance = covariance[2, 2]
    if not np.isfinite(variance) or variance < 0:
        raise FitError("singular covariance in decay fit", diagnostics)

    chi2 = float(np.sum(result.fun ** 2))
    fit = ExponentialFit(tau_ns=tau, sigma_tau_ns=math.sqrt(variance), amplitude=amplitude, floor=floor,
                         chi2=chi2, residuals=(-result.fun * sigma).tolist())
    logger.info(f"Decay fit: tau = {fit.tau_ns:.1f} +/- {fit.sigma_tau_ns:.1f} ns, chi2 {chi2:.3g}")
    return fit


def per_setting_rows(log: EventLog, table: CoincidenceTable) -> List[Dict[str, object]]:
    """Counts, g_si and efficiencies for each setting of a log."""
    rows = []
    for k, setting in enumerate(log.settings):
        counts = table.counts[k]
        row: Dict[str, object] = {
            "setting_id": k,
            "theta_s_deg": setting.theta_s_deg,
            "theta_i_deg": setting.theta_i_deg,
            "n_trials": counts.n_trials,
            "n_s": counts.n_s,
            "n_i": counts.n_i,
            "n_si": counts.n_si,
        }
        try:
            row["g_si"], row["sigma_g_si"] = compute_g_si(counts)
            row["alpha_s"], row["alpha_i"] = detection_efficiency(counts)
        except InsufficientDataError:
            row.update(g_si=None, sigma_g_si=None, alpha_s=None, alpha_i=None)
        rows.append(row)
    return rows
