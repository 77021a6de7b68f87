"""Explicit collective spin-excitation operators on small ensembles.

Each atom carries a local basis made of the ground sublevels |a, m> that some
requested operator acts on, the excited sublevels |b, m + 1 + alpha> those
operators create, and (when needed) one lumped state holding every other
|a, m> sublevel with their total population. The ensemble space keeps
configurations with at most ``max_excitations`` atoms in a b sublevel, and the
vacuum rho_a is the exact product mixture over the ground configurations.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from app.exceptions import OperatorError
from app.models.angular import HELICITIES, BranchingTable, HalfInt, LevelScheme
from app.models.quantum import EnsembleModel
from app.services.angular_momentum import branching_table

logger = logging.getLogger(__name__)

MAX_STATES = 500_000
MAX_ATOMS = 12
CONFIGURATION_SAMPLES = 20_000

Transition = Tuple[int, HalfInt]


@lru_cache(maxsize=32)
def _enumerate_states(n_atoms: int, ground: Tuple[int, ...], excited: Tuple[int, ...],
                      max_excitations: int) -> np.ndarray:
    """Level assignments (rows) with at most max_excitations excited atoms."""
    rows: List[Tuple[int, ...]] = []
    for k in range(max_excitations + 1):
        for positions in itertools.combinations(range(n_atoms), k):
            others = [mu for mu in range(n_atoms) if mu not in positions]
            for excited_levels in itertools.product(excited, repeat=k):
                for ground_levels in itertools.product(ground, repeat=len(others)):
                    row = [0] * n_atoms
                    for mu, level in zip(positions, excited_levels):
                        row[mu] = level
                    for mu, level in zip(others, ground_levels):
                        row[mu] = level
                    rows.append(tuple(row))
    levels = np.array(rows, dtype=np.int64).reshape(len(rows), n_atoms)
    levels.setflags(write=False)
    return levels


@dataclass(frozen=True, eq=False)
class LevelSpace:
    """Truncated ensemble Hilbert space for a fixed set of transitions."""
    model: EnsembleModel
    ground: Tuple[HalfInt, ...]
    excited: Tuple[HalfInt, ...]
    lumped_population: float
    max_excitations: int
    levels: np.ndarray
    codes: np.ndarray
    order: np.ndarray

    @classmethod
    def for_transitions(cls, model: EnsembleModel, transitions: Iterable[Transition],
                        max_excitations: int = 1) -> "LevelSpace":
        transitions = [(alpha, HalfInt.of(m)) for alpha, m in transitions]
        for alpha, m in transitions:
            _check_transition(model, alpha, m)
        ground = tuple(sorted({m for _, m in transitions}))
        excited = tuple(sorted({m + 1 + alpha for alpha, m in transitions}))
        multiplicity = model.ground_multiplicity
        lumped = (multiplicity - len(ground)) / multiplicity

        # local index 0 is the lumped state, then ground sublevels, then excited
        ground_idx = tuple(range(1, len(ground) + 1))
        excited_idx = tuple(range(len(ground) + 1, len(ground) + len(excited) + 1))
        allowed_ground = ((0,) if lumped > 0 else ()) + ground_idx

        size = _space_size(model.n_atoms, len(allowed_ground), len(excited), max_excitations)
        if size > MAX_STATES:
            raise OperatorError(
                f"truncated space for N={model.n_atoms} has {size} states (limit {MAX_STATES})"
            )
        levels = _enumerate_states(model.n_atoms, allowed_ground, excited_idx, max_excitations)
        base = len(ground) + len(excited) + 1
        codes = levels @ (base ** np.arange(model.n_atoms, dtype=np.int64))
        order = np.argsort(codes)
        logger.debug(f"level space N={model.n_atoms}, {len(codes)} states, local dim {base}")
        return cls(model, ground, excited, lumped, max_excitations, levels, codes, order)

    @property
    def dimension(self) -> int:
        return len(self.codes)

    @property
    def base(self) -> int:
        return len(self.ground) + len(self.excited) + 1

    def ground_index(self, m: HalfInt) -> int:
        return self.ground.index(m) + 1

    def excited_index(self, m_b: HalfInt) -> int:
        return len(self.ground) + 1 + self.excited.index(m_b)

    def excitation_numbers(self) -> np.ndarray:
        return (self.levels > len(self.ground)).sum(axis=1)

    def lookup(self, codes: np.ndarray) -> np.ndarray:
        sorted_codes = self.codes[self.order]
        return self.order[np.searchsorted(sorted_codes, codes)]

    def vacuum_weights(self) -> np.ndarray:
        """Diagonal of rho_a over the space; zero outside the ground configurations."""
        multiplicity = self.model.ground_multiplicity
        local = np.zeros(self.base)
        local[0] = self.lumped_population
        local[1:len(self.ground) + 1] = 1.0 / multiplicity
        weights = np.prod(local[self.levels], axis=1)
        weights[self.excitation_numbers() > 0] = 0.0
        return weights

    def covers(self, alpha: int, m: HalfInt) -> bool:
        return m in self.ground and (m + 1 + alpha) in self.excited


def _space_size(n_atoms: int, n_ground: int, n_excited: int, max_excitations: int) -> int:
    return sum(
        math.comb(n_atoms, k) * n_excited ** k * n_ground ** (n_atoms - k)
        for k in range(min(max_excitations, n_atoms) + 1)
    )


def _check_transition(model: EnsembleModel, alpha: int, m: HalfInt) -> None:
    if alpha not in HELICITIES:
        raise OperatorError(f"helicity must be -1 or +1, got {alpha}")
    if not model.F_a.contains(m):
        raise OperatorError(f"m={m} is not a projection of F_a={model.F_a}")
    if not model.F_b.contains(m + 1 + alpha):
        raise OperatorError(f"b projection {m + 1 + alpha} is outside F_b={model.F_b}")


def build_collective_operator(model: EnsembleModel, alpha: int, m, space: Optional[LevelSpace] = None
                              ) -> Tuple[sparse.csr_matrix, LevelSpace]:
    """Matrix of s_dagger_alpha(m) = sqrt((2F_a+1)/N) sum_mu exp(-i dk.r_mu) |b,m+1+alpha><a,m|_mu."""
    m = HalfInt.of(m)
    _check_transition(model, alpha, m)
    if space is None:
        space = LevelSpace.for_transitions(model, [(alpha, m)])
    elif not space.covers(alpha, m):
        raise OperatorError(f"level space does not include the transition alpha={alpha}, m={m}")

    g = space.ground_index(m)
    e = space.excited_index(m + 1 + alpha)
    scale = math.sqrt(model.ground_multiplicity / model.n_atoms)
    phases = model.phases()
    below_cap = space.excitation_numbers() < space.max_excitations
    rows, cols, values = [], [], []
    for mu in range(model.n_atoms):
        source = np.nonzero((space.levels[:, mu] == g) & below_cap)[0]
        if len(source) == 0:
            continue
        target = space.lookup(space.codes[source] + (e - g) * space.base ** mu)
        rows.append(target)
        cols.append(source)
        values.append(np.full(len(source), scale * phases[mu]))
    if rows:
        rows_arr, cols_arr, values_arr = np.concatenate(rows), np.concatenate(cols), np.concatenate(values)
    else:
        rows_arr = cols_arr = np.zeros(0, dtype=np.int64)
        values_arr = np.zeros(0, dtype=complex)
    matrix = sparse.csr_matrix((values_arr, (rows_arr, cols_arr)), shape=(space.dimension, space.dimension))
    return matrix, space


def mode_weights(table: BranchingTable, alpha: int) -> Dict[HalfInt, float]:
    """X_m(alpha) / sqrt(sum_m X_m(alpha)^2) over the nonzero entries."""
    norm_sq = table.weight_sum(alpha)
    if norm_sq == 0:
        raise OperatorError(f"no allowed transitions for alpha={alpha}")
    norm = math.sqrt(norm_sq)
    return {m: x / norm for m, x in table.amplitudes(alpha).items() if x != 0.0}


def mode_space(model: EnsembleModel, table: BranchingTable, alphas: Sequence[int] = HELICITIES,
               max_excitations: int = 1) -> LevelSpace:
    transitions = [(alpha, m) for alpha in alphas for m in mode_weights(table, alpha)]
    return LevelSpace.for_transitions(model, transitions, max_excitations=max_excitations)


def normalized_mode_operator(model: EnsembleModel, table: BranchingTable, alpha: int,
                             space: Optional[LevelSpace] = None) -> Tuple[sparse.csr_matrix, LevelSpace]:
    """s_dagger_alpha = sum_m X_m(alpha)/sqrt(sum X^2) s_dagger_alpha(m)."""
    if table.scheme.F_a != model.F_a or table.scheme.F_b != model.F_b:
        raise OperatorError("branching table and ensemble disagree on F_a / F_b")
    weights = mode_weights(table, alpha)
    if space is None:
        space = mode_space(model, table)
    total = sparse.csr_matrix((space.dimension, space.dimension), dtype=complex)
    for m, weight in weights.items():
        matrix, _ = build_collective_operator(model, alpha, m, space)
        total = total + weight * matrix
    return total, space


def vacuum_expectation(space: LevelSpace, operator: sparse.spmatrix) -> complex:
    """Tr[rho_a A] for an operator on the level space."""
    weights = space.vacuum_weights()
    support = np.nonzero(weights)[0]
    diagonal = operator.diagonal()[support]
    return complex(np.dot(weights[support], diagonal))


def pair_expectation(space: LevelSpace, creator_a: sparse.spmatrix, creator_b: sparse.spmatrix) -> complex:
    """<s_a s_dagger_b> in the vacuum, from the two creation operators."""
    return vacuum_expectation(space, creator_a.conj().T @ creator_b)


class ConfigurationAverage(NamedTuple):
    value: complex
    stderr: float
    n_configurations: int
    exact: bool


def single_transition_weights(alpha: int, m) -> Dict[Transition, float]:
    return {(alpha, HalfInt.of(m)): 1.0}


def mode_transition_weights(table: BranchingTable, alpha: int) -> Dict[Transition, float]:
    return {(alpha, m): w for m, w in mode_weights(table, alpha).items()}


def ground_configurations(model: EnsembleModel, n_samples: int = CONFIGURATION_SAMPLES,
                          seed: int = 0) -> Tuple[np.ndarray, bool]:
    """Ground sublevel indices per atom: every configuration if they fit in n_samples, else a uniform sample."""
    multiplicity = model.ground_multiplicity
    if multiplicity ** model.n_atoms <= n_samples:
        grid = np.array(list(itertools.product(range(multiplicity), repeat=model.n_atoms)), dtype=np.int64)
        return grid.reshape(-1, model.n_atoms), True
    rng = np.random.default_rng(seed)
    return rng.integers(0, multiplicity, size=(n_samples, model.n_atoms)), False


def configuration_pair_expectation(model: EnsembleModel, weights_a: Dict[Transition, float],
                                   weights_b: Dict[Transition, float],
                                   n_samples: int = CONFIGURATION_SAMPLES, seed: int = 0) -> ConfigurationAverage:
    """<s_a s_dagger_b> averaged over ground configurations of rho_a, no Fock space needed.

    Each creator maps a configuration to one-excitation states labelled by the excited
    atom and its b sublevel; the expectation is the overlap of the two images.
    """
    for alpha, m in itertools.chain(weights_a, weights_b):
        _check_transition(model, alpha, m)
    multiplicity = model.ground_multiplicity
    sublevels = model.F_a.projections()

    def local_images(weights):
        # per ground sublevel: {b sublevel: amplitude}
        images = [dict() for _ in sublevels]
        for (alpha, m), w in weights.items():
            k = sublevels.index(m)
            m_b = m + 1 + alpha
            images[k][m_b] = images[k].get(m_b, 0.0) + w
        return images

    images_a, images_b = local_images(weights_a), local_images(weights_b)
    overlap = np.array([
        sum(np.conj(amp) * images_b[k].get(m_b, 0.0) for m_b, amp in images_a[k].items())
        for k in range(multiplicity)
    ], dtype=complex)

    configurations, exact = ground_configurations(model, n_samples, seed)
    scale = model.ground_multiplicity / model.n_atoms
    # phases exp(-i dk.r) cancel atom by atom
    values = scale * overlap[configurations].sum(axis=1)
    stderr = 0.0 if exact else float(np.std(values, ddof=1) / math.sqrt(len(values)))
    return ConfigurationAverage(complex(values.mean()), stderr, len(values), exact)


def mode_pair_expectation(model: EnsembleModel, table: BranchingTable, alpha: int, alpha_prime: int,
                          n_samples: int = CONFIGURATION_SAMPLES, seed: int = 0) -> ConfigurationAverage:
    """<s_alpha s_dagger_alpha'> for the normalized mode operators at any N <= MAX_ATOMS."""
    if table.scheme.F_a != model.F_a or table.scheme.F_b != model.F_b:
        raise OperatorError("branching table and ensemble disagree on F_a / F_b")
    return configuration_pair_expectation(model, mode_transition_weights(table, alpha),
                                          mode_transition_weights(table, alpha_prime), n_samples, seed)


def commutator_deviation(space: LevelSpace, creator: sparse.spmatrix) -> float:
    """|<[s, s_dagger]> - 1| in the normalized one-excitation state s_dagger rho_a s."""
    if space.max_excitations < 2:
        raise OperatorError("commutator in the excited sector needs max_excitations >= 2")
    annihilator = creator.conj().T
    commutator = annihilator @ creator - creator @ annihilator
    numerator = vacuum_expectation(space, annihilator @ commutator @ creator)
    norm = vacuum_expectation(space, annihilator @ creator)
    return abs(numerator / norm - 1.0)


def check_operators(n_max: int, seed: int = 0, F_a=3, F_b=2, F_c=3, alpha: int = -1, m=0) -> Dict:
    """Vacuum norms, cross terms and excited-sector commutator deviation for N = 1..n_max.

    The single-transition columns come from the truncated Fock space; the mode columns
    use the configuration average, which covers every N up to MAX_ATOMS.
    """
    if not 1 <= n_max <= MAX_ATOMS:
        raise OperatorError(f"N must lie in [1, {MAX_ATOMS}], got {n_max}")
    m = HalfInt.of(m)
    table = branching_table(LevelScheme.of(F_a, F_b, F_c))
    rows = []
    for n in range(1, n_max + 1):
        model = EnsembleModel.random(n, F_a, F_b, seed=seed + n)
        other = -alpha
        transitions = [(alpha, m)]
        if model.F_b.contains(m + 1 + other):
            transitions.append((other, m))
        space = LevelSpace.for_transitions(model, transitions, max_excitations=1)
        creator, _ = build_collective_operator(model, alpha, m, space)
        norm = pair_expectation(space, creator, creator)
        cross = 0.0
        if len(transitions) == 2:
            other_creator, _ = build_collective_operator(model, other, m, space)
            cross = abs(pair_expectation(space, creator, other_creator))

        sector = LevelSpace.for_transitions(model, [(alpha, m)], max_excitations=2)
        single, _ = build_collective_operator(model, alpha, m, sector)
        deviation = commutator_deviation(sector, single)
        mode_norm = mode_pair_expectation(model, table, alpha, alpha, seed=seed + n)
        mode_cross = mode_pair_expectation(model, table, alpha, -alpha, seed=seed + n)
        rows.append({
            "N": n,
            "vacuum_norm": norm.real,
            "cross_term": cross,
            "mode_norm": mode_norm.value.real,
            "mode_norm_stderr": mode_norm.stderr,
            "mode_cross_term": abs(mode_cross.value),
            "commutator_deviation": deviation,
            "predicted_deviation": (model.ground_multiplicity + 1) / n,
        })
        logger.info(f"N={n}: vacuum norm {norm.real:.12f}, commutator deviation {deviation:.6f}")

    exponent = None
    fit_rows = [r for r in rows if r["N"] >= 2 and r["commutator_deviation"] > 0]
    if len(fit_rows) >= 2:
        slope, _ = np.polyfit(np.log([r["N"] for r in fit_rows]),
                              np.log([r["commutator_deviation"] for r in fit_rows]), 1)
        exponent = float(slope)
    return {"rows": rows, "scaling_exponent": exponent}
