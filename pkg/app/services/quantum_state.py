"""Signal-photon / spin-wave two-qubit states and polarizer projections."""
import logging
import math
from typing import NamedTuple, Optional

import numpy as np

from app.exceptions import InvalidStateError
from app.models.measurement import MeasurementSetting
from app.models.quantum import TwoQubitState, WaveVectors

logger = logging.getLogger(__name__)

SIGMA_Y = np.array([[0, -1j], [1j, 0]])
SPIN_FLIP = np.kron(SIGMA_Y, SIGMA_Y)
IDENTITY_2 = np.eye(2)


def ideal_state(eta: float) -> TwoQubitState:
    """cos(eta)|r>|S-> + sin(eta)|l>|S+> as a density matrix."""
    if not 0.0 <= eta <= math.pi / 2:
        raise InvalidStateError(f"eta={eta} outside [0, pi/2]")
    c, s = math.cos(eta), math.sin(eta)
    rho = np.zeros((4, 4), dtype=complex)
    # rows/cols: |r S->, |r S+>, |l S->, |l S+>
    rho[0, 0] = c * c
    rho[3, 3] = s * s
    rho[0, 3] = rho[3, 0] = c * s
    raw_trace = np.trace(rho).real
    return TwoQubitState(rho=rho / raw_trace, raw_trace=raw_trace)


def add_white_noise(state: TwoQubitState, visibility: float) -> TwoQubitState:
    """V rho + (1 - V) I/4."""
    if not 0.0 <= visibility <= 1.0:
        raise InvalidStateError(f"visibility={visibility} outside [0, 1]")
    rho = visibility * state.rho + (1.0 - visibility) * np.eye(4) / 4
    return TwoQubitState(rho=rho, labels=state.labels, raw_trace=state.raw_trace)


def concurrence(state: TwoQubitState) -> float:
    """Wootters concurrence from the spin-flipped density matrix.

    With rho = V V^dagger, the square roots of the eigenvalues of rho rho_tilde are the
    singular values of V^T (sigma_y x sigma_y) V, which keeps pure states exact.
    """
    weights, vectors = np.linalg.eigh(state.rho)
    v = vectors * np.sqrt(np.clip(weights, 0.0, None))
    lambdas = np.linalg.svd(v.T @ SPIN_FLIP @ v, compute_uv=False)
    return float(max(0.0, lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]))


def polarizer_projector(theta: Optional[float]) -> np.ndarray:
    """Projector onto cos(theta)|0> + sin(theta)|1>; identity when the polarizer is removed."""
    if theta is None:
        return IDENTITY_2
    v = np.array([math.cos(theta), math.sin(theta)])
    return np.outer(v, v)


class ProjectionProbabilities(NamedTuple):
    signal: float
    idler: float
    joint: float


def projection_probabilities(state: TwoQubitState, setting: MeasurementSetting) -> ProjectionProbabilities:
    """Born probabilities that the signal, the idler, and both pass their polarizers."""
    p_s = polarizer_projector(setting.theta_s)
    p_i = polarizer_projector(setting.theta_i)
    rho = state.rho
    signal = np.trace(rho @ np.kron(p_s, IDENTITY_2)).real
    idler = np.trace(rho @ np.kron(IDENTITY_2, p_i)).real
    joint = np.trace(rho @ np.kron(p_s, p_i)).real
    return ProjectionProbabilities(
        signal=float(np.clip(signal, 0.0, 1.0)),
        idler=float(np.clip(idler, 0.0, 1.0)),
        joint=float(np.clip(joint, 0.0, 1.0)),
    )


def phase_match(k: WaveVectors) -> np.ndarray:
    """Idler wave vector k_i = k_w + k_r - k_s."""
    return k.k_w + k.k_r - k.k_s
