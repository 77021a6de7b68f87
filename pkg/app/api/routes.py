import logging
import math
from typing import List, Optional

from fastapi import APIRouter, File, HTTPException, Query, UploadFile

from app.exceptions import FitError
from app.models.angular import LevelScheme
from app.models.measurement import CHSHAngles, CHSHResult, FringeModel, MeasurementSetting
from app.services import analysis, predictor
from app.services.angular_momentum import branching_table, cos2_eta, mixing_angle_from_table
from app.services.event_log_service import parse_event_log_text

logger = logging.getLogger(__name__)

router = APIRouter()

DEFAULT_ETA = 0.81 * math.pi / 4


def _bad_request(e: Exception) -> HTTPException:
    logger.error(f"Rejected request: {e}", exc_info=True)
    return HTTPException(status_code=400, detail=str(e))


def _angles(values: Optional[List[float]]) -> CHSHAngles:
    if not values:
        return CHSHAngles.canonical()
    if len(values) != 4:
        raise ValueError(f"expected four angles, got {len(values)}")
    return CHSHAngles.from_degrees(*values)


async def _read_log(file: UploadFile):
    content = await file.read()
    try:
        text = content.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ValueError(f"{file.filename} is not a text event log") from e
    log = parse_event_log_text(text)
    logger.info(f"Received log {file.filename}: {log.n_events} events")
    return log


@router.get("/eta")
async def eta(Fa: str = Query("3"), Fb: str = Query("2"), Fc: str = Query("3")):
    """Mixing angle and branching amplitudes for a level scheme."""
    try:
        table = branching_table(LevelScheme.of(Fa, Fb, Fc))
        value = mixing_angle_from_table(table)
        return {
            "eta_rad": value,
            "eta_over_pi_4": value / (math.pi / 4),
            "cos2_eta": float(cos2_eta(table)),
            "table": [{"m": str(m), "alpha": alpha, "X": x} for (m, alpha), x in table.items()],
        }
    except (ValueError, ZeroDivisionError) as e:
        raise _bad_request(e)


@router.get("/predict-chsh", response_model=CHSHResult)
async def predict_chsh(
    eta: float = Query(DEFAULT_ETA, description="Mixing angle in radians"),
    visibility: float = Query(1.0),
    angles: Optional[List[float]] = Query(None, description="theta_s, theta_s', theta_i, theta_i' in degrees"),
):
    try:
        return predictor.predict_chsh(eta, _angles(angles), visibility)
    except ValueError as e:
        raise _bad_request(e)


@router.get("/predict-fringe")
async def predict_fringe(
    eta: float = Query(DEFAULT_ETA),
    theta_i: float = Query(67.5, description="Idler polarizer angle in degrees"),
    amplitude: float = Query(1.0),
    background: float = Query(0.0),
    points: int = Query(64, ge=2, le=4096),
):
    try:
        model = FringeModel(eta=eta, amplitude=amplitude, background=background)
        samples = []
        for k in range(points + 1):
            theta_s = 180.0 * k / points
            samples.append({"theta_s_deg": theta_s, "counts": predictor.coincidence_rate(
                model, MeasurementSetting.from_degrees(theta_s, theta_i))})
        return {"visibility": predictor.fringe_visibility(model, math.radians(theta_i)), "points": samples}
    except ValueError as e:
        raise _bad_request(e)


@router.post("/analyze-chsh", response_model=CHSHResult)
async def analyze_chsh(file: UploadFile = File(...),
                       angles: Optional[List[float]] = Query(None)):
    """S from an uploaded event log."""
    try:
        log = await _read_log(file)
        return analysis.chsh_from_log(log, angles=_angles(angles))
    except FitError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except ValueError as e:
        raise _bad_request(e)


@router.post("/analyze-gsi")
async def analyze_gsi(file: UploadFile = File(...)):
    """g_si, detection efficiencies and per-setting counts of an uploaded event log."""
    try:
        log = await _read_log(file)
        table = analysis.gate_and_count(log)
        g, sigma = analysis.compute_g_si(table)
        alpha_s, alpha_i = analysis.detection_efficiency(table)
        return {
            "delta_t_ns": log.config.delta_t_ns,
            "g_si": g,
            "sigma": sigma,
            "alpha_s": alpha_s,
            "alpha_i": alpha_i,
            "settings": analysis.per_setting_rows(log, table),
        }
    except ValueError as e:
        raise _bad_request(e)
