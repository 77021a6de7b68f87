"""Closed-form coincidence fringes, correlation functions and the CHSH combination."""
import math
from typing import Optional, Sequence, Tuple

from app.exceptions import InsufficientDataError
from app.models.measurement import (
    CHSHAngles,
    CHSHResult,
    CorrelationEstimate,
    CountQuartet,
    FringeModel,
    MeasurementSetting,
)
from app.services.quantum_state import add_white_noise, ideal_state, projection_probabilities


def coincidence_rate(model: FringeModel, setting: MeasurementSetting) -> float:
    """amplitude [(c+s)cos(ts-ti) + (c-s)cos(ts+ti)]^2 / 2 + background.

    Normalized so the eta = pi/4 maximum without background equals the amplitude.
    """
    c, s = math.cos(model.eta), math.sin(model.eta)
    ts, ti = setting.theta_s, setting.theta_i
    bracket = (c + s) * math.cos(ts - ti) + (c - s) * math.cos(ts + ti)
    return model.amplitude * bracket * bracket / 2 + model.background


def fringe_modulation(eta: float, theta_i: float) -> float:
    """Peak of the zero-background fringe over theta_s, per unit amplitude."""
    # bracket = 2(c cos ts cos ti + s sin ts sin ti), peak over ts is 2R with
    # R^2 = c^2 cos^2 ti + s^2 sin^2 ti
    c, s = math.cos(eta), math.sin(eta)
    r_sq = (c * math.cos(theta_i)) ** 2 + (s * math.sin(theta_i)) ** 2
    return 2 * r_sq


def fringe_visibility(model: FringeModel, theta_i: float) -> float:
    """(C_max - C_min)/(C_max + C_min) of the fringe over theta_s."""
    peak = model.amplitude * fringe_modulation(model.eta, theta_i)
    denominator = peak + 2 * model.background
    return peak / denominator if denominator > 0 else 0.0


def background_for_visibility(eta: float, theta_i: float, amplitude: float, visibility: float) -> float:
    """Background giving the requested fringe visibility."""
    if not 0 < visibility <= 1:
        raise ValueError(f"visibility={visibility} outside (0, 1]")
    peak = amplitude * fringe_modulation(eta, theta_i)
    return peak * (1 - visibility) / (2 * visibility)


def correlation_E(q: CountQuartet) -> Tuple[float, float]:
    """E = (C + C_perp_perp - C_perp_s - C_perp_i) / sum, with Poisson delta-method sigma."""
    total = q.total
    if total <= 0:
        raise InsufficientDataError("correlation function needs at least one count")
    plus = q.c_same + q.c_both_perp
    minus = q.c_signal_perp + q.c_idler_perp
    e = (plus - minus) / total
    variance = ((1 - e) ** 2 * plus + (1 + e) ** 2 * minus) / total ** 2
    return e, math.sqrt(variance)


def chsh_S(estimates: Sequence[Tuple[float, float]], angles: Optional[CHSHAngles] = None) -> CHSHResult:
    """S = E1 + E2 + E3 - E4 for E(s,i), E(s',i), E(s,i'), E(s',i'); sigma in quadrature."""
    if len(estimates) != 4:
        raise ValueError(f"CHSH needs four correlation estimates, got {len(estimates)}")
    angles = angles or CHSHAngles.canonical()
    signs = (1, 1, 1, -1)
    s_value = sum(sign * e for sign, (e, _) in zip(signs, estimates))
    sigma = math.sqrt(sum(sigma_e ** 2 for _, sigma_e in estimates))
    values = [
        CorrelationEstimate(theta_s_deg=setting.theta_s_deg, theta_i_deg=setting.theta_i_deg, E=e, sigma_E=sigma_e)
        for setting, (e, sigma_e) in zip(angles.settings(), estimates)
    ]
    return CHSHResult(E_values=values, S=s_value, sigma_S=sigma, angles=angles)


def _quartet(model: FringeModel, setting: MeasurementSetting) -> CountQuartet:
    counts = [coincidence_rate(model, s) for s in setting.quartet()]
    return CountQuartet(c_same=counts[0], c_both_perp=counts[1], c_signal_perp=counts[2], c_idler_perp=counts[3])


def predict_ideal_S(eta: float, angles: Optional[CHSHAngles] = None) -> float:
    """S from zero-background fringe counts at the four settings and their companions."""
    if not 0.0 <= eta <= math.pi / 2:
        raise ValueError(f"eta={eta} outside [0, pi/2]")
    angles = angles or CHSHAngles.canonical()
    model = FringeModel(eta=eta, amplitude=1.0)
    estimates = [correlation_E(_quartet(model, setting)) for setting in angles.settings()]
    return chsh_S([(e, 0.0) for e, _ in estimates], angles).S


def predict_chsh(eta: float, angles: Optional[CHSHAngles] = None, visibility: float = 1.0) -> CHSHResult:
    """Noise-free E values and S for the white-noise-degraded state."""
    angles = angles or CHSHAngles.canonical()
    state = add_white_noise(ideal_state(eta), visibility)
    estimates = []
    for setting in angles.settings():
        joint = [projection_probabilities(state, s).joint for s in setting.quartet()]
        e, _ = correlation_E(CountQuartet(
            c_same=joint[0], c_both_perp=joint[1], c_signal_perp=joint[2], c_idler_perp=joint[3]))
        estimates.append((e, 0.0))
    return chsh_S(estimates, angles)
