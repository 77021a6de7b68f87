from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.exceptions import InvalidStateError, OperatorError
from app.models.angular import HalfInt, Number

TOLERANCE = 1e-12

SIGNAL_LABELS = ("r", "l")
SPIN_WAVE_LABELS = ("S-", "S+")
BASIS_LABELS = tuple(f"{p}{s}" for p in SIGNAL_LABELS for s in SPIN_WAVE_LABELS)


@dataclass(frozen=True, eq=False)
class TwoQubitState:
    """Density matrix on {|r>, |l>} (signal) x {S-, S+} (spin wave)."""
    rho: np.ndarray
    labels: Tuple[str, ...] = BASIS_LABELS
    raw_trace: Optional[float] = None

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise InvalidStateError(f"density matrix must be 4x4, got {rho.shape}")
        if not np.allclose(rho, rho.conj().T, atol=TOLERANCE, rtol=0):
            raise InvalidStateError("density matrix is not Hermitian")
        trace = np.trace(rho).real
        if abs(trace - 1.0) > TOLERANCE:
            raise InvalidStateError(f"density matrix trace is {trace}, expected 1")
        if np.linalg.eigvalsh(rho).min() < -TOLERANCE:
            raise InvalidStateError("density matrix has a negative eigenvalue")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True, eq=False)
class WaveVectors:
    """Write, read and signal wave vectors in rad/m."""
    k_w: np.ndarray
    k_r: np.ndarray
    k_s: np.ndarray

    def __post_init__(self):
        for name in ("k_w", "k_r", "k_s"):
            vector = np.asarray(getattr(self, name), dtype=float)
            if vector.shape != (3,) or not np.all(np.isfinite(vector)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, vector)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """N atoms at fixed positions, all starting in the unpolarized level F_a."""
    n_atoms: int
    F_a: HalfInt
    F_b: HalfInt
    positions: np.ndarray
    delta_k: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.n_atoms < 1:
            raise OperatorError("ensemble needs at least one atom")
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if len(positions) != self.n_atoms:
            raise OperatorError(f"expected {self.n_atoms} positions, got {len(positions)}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "delta_k", np.asarray(self.delta_k, dtype=float).reshape(3))
        object.__setattr__(self, "F_a", HalfInt.of(self.F_a))
        object.__setattr__(self, "F_b", HalfInt.of(self.F_b))

    @property
    def ground_multiplicity(self) -> int:
        return self.F_a.twice_value + 1

    def phases(self) -> np.ndarray:
        """exp(-i dk . r_mu) for every atom."""
        return np.exp(-1j * self.positions @ self.delta_k)

    @classmethod
    def random(
        cls,
        n_atoms: int,
        F_a: Number = 3,
        F_b: Number = 2,
        seed: int = 0,
        cloud_size_m: float = 150e-6,
        delta_k: Optional[np.ndarray] = None,
    ) -> "EnsembleModel":
        rng = np.random.default_rng(seed)
        positions = rng.uniform(-cloud_size_m / 2, cloud_size_m / 2, size=(n_atoms, 3))
        if delta_k is None:
            delta_k = rng.normal(scale=1e6, size=3)
        return cls(n_atoms, HalfInt.of(F_a), HalfInt.of(F_b), positions, np.asarray(delta_k))
