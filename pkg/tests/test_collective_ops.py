import numpy as np
import pytest
from scipy import sparse

from app.exceptions import OperatorError
from app.models.angular import HalfInt, LevelScheme
from app.models.quantum import EnsembleModel
from app.services.angular_momentum import branching_table
from app.services.collective_ops import (
    LevelSpace,
    build_collective_operator,
    check_operators,
    CONFIGURATION_SAMPLES,
    commutator_deviation,
    configuration_pair_expectation,
    ground_configurations,
    mode_pair_expectation,
    mode_weights,
    normalized_mode_operator,
    pair_expectation,
    single_transition_weights,
    vacuum_expectation,
)


@pytest.fixture
def rubidium_table():
    return branching_table(LevelScheme.of(3, 2, 3))


def test_vacuum_is_normalized():
    model = EnsembleModel.random(5, seed=3)
    space = LevelSpace.for_transitions(model, [(-1, HalfInt.of(0))])
    assert space.vacuum_weights().sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n_atoms", [1, 2, 4, 6])
def test_single_transition_norm(n_atoms):
    model = EnsembleModel.random(n_atoms, seed=n_atoms)
    creator, space = build_collective_operator(model, -1, 0)
    assert pair_expectation(space, creator, creator).real == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n_atoms", [2, 4])
def test_normalized_modes_are_orthonormal(n_atoms, rubidium_table):
    model = EnsembleModel.random(n_atoms, seed=11)
    minus, space = normalized_mode_operator(model, rubidium_table, -1)
    plus, _ = normalized_mode_operator(model, rubidium_table, 1, space)
    assert pair_expectation(space, minus, minus).real == pytest.approx(1.0, abs=1e-10)
    assert pair_expectation(space, plus, plus).real == pytest.approx(1.0, abs=1e-10)
    assert abs(pair_expectation(space, minus, plus)) < 1e-10


def test_mode_weights_are_unit_vectors(rubidium_table):
    for alpha in (-1, 1):
        weights = mode_weights(rubidium_table, alpha)
        assert sum(w * w for w in weights.values()) == pytest.approx(1.0, abs=1e-12)


def test_vacuum_expectation_of_identity():
    model = EnsembleModel.random(3, seed=0)
    space = LevelSpace.for_transitions(model, [(1, HalfInt.of(-1))])
    assert vacuum_expectation(space, sparse.identity(space.dimension, format="csr")) == pytest.approx(1.0)


@pytest.mark.parametrize("n_atoms", [2, 3, 5, 8])
def test_commutator_deviation_closed_form(n_atoms):
    model = EnsembleModel.random(n_atoms, seed=n_atoms)
    space = LevelSpace.for_transitions(model, [(-1, HalfInt.of(0))], max_excitations=2)
    creator, _ = build_collective_operator(model, -1, 0, space)
    assert commutator_deviation(space, creator) == pytest.approx(8 / n_atoms, rel=1e-9)


def test_commutator_needs_two_excitations():
    model = EnsembleModel.random(3, seed=0)
    creator, space = build_collective_operator(model, -1, 0)
    with pytest.raises(OperatorError):
        commutator_deviation(space, creator)


def test_invalid_transitions():
    model = EnsembleModel.random(2, seed=0)
    with pytest.raises(OperatorError):
        build_collective_operator(model, 0, 0)
    with pytest.raises(OperatorError):
        build_collective_operator(model, -1, 4)
    with pytest.raises(OperatorError):
        # b projection 3 lies outside F_b = 2
        build_collective_operator(model, 1, 1)


def test_space_must_cover_transition():
    model = EnsembleModel.random(2, seed=0)
    space = LevelSpace.for_transitions(model, [(-1, HalfInt.of(0))])
    with pytest.raises(OperatorError):
        build_collective_operator(model, 1, 0, space)


def test_check_operators_scaling():
    result = check_operators(12, seed=1)
    rows = result["rows"]
    assert [r["N"] for r in rows] == list(range(1, 13))
    assert rows[0]["vacuum_norm"] == pytest.approx(1.0, abs=1e-12)
    for row in rows[3:]:
        assert row["vacuum_norm"] == pytest.approx(1.0, abs=1e-10)
        assert row["cross_term"] < 1e-10
        assert row["commutator_deviation"] == pytest.approx(row["predicted_deviation"], rel=1e-9)
    assert result["scaling_exponent"] == pytest.approx(-1.0, abs=0.15)


@pytest.mark.parametrize("n_max", [0, 13])
def test_check_operators_range(n_max):
    with pytest.raises(OperatorError):
        check_operators(n_max)


def test_ensemble_rejects_mismatched_positions():
    with pytest.raises(OperatorError):
        EnsembleModel(3, 3, 2, positions=np.zeros((2, 3)))


@pytest.mark.parametrize("n_atoms", range(1, 13))
def test_mode_norm_up_to_twelve_atoms(n_atoms, rubidium_table):
    model = EnsembleModel.random(n_atoms, seed=n_atoms)
    for alpha in (-1, 1):
        norm = mode_pair_expectation(model, rubidium_table, alpha, alpha, seed=n_atoms)
        if norm.exact:
            assert norm.value.real == pytest.approx(1.0, abs=1e-12)
        else:
            assert norm.n_configurations == CONFIGURATION_SAMPLES
            assert abs(norm.value.real - 1.0) < 5 * norm.stderr
        cross = mode_pair_expectation(model, rubidium_table, alpha, -alpha, seed=n_atoms)
        assert abs(cross.value) < 1e-12


def test_configurations_exact_while_they_fit():
    configurations, exact = ground_configurations(EnsembleModel.random(5, seed=0))
    assert exact and configurations.shape == (7 ** 5, 5)
    configurations, exact = ground_configurations(EnsembleModel.random(6, seed=0), n_samples=10_000)
    assert not exact and configurations.shape == (10_000, 6)
    assert configurations.min() >= 0 and configurations.max() <= 6


@pytest.mark.parametrize("n_atoms", [3, 9])
def test_different_sublevels_do_not_overlap(n_atoms):
    model = EnsembleModel.random(n_atoms, seed=2)
    for m, m_prime in [(0, 1), (-2, 0), (1, -1)]:
        overlap = configuration_pair_expectation(
            model, single_transition_weights(-1, m), single_transition_weights(-1, m_prime))
        assert abs(overlap.value) < 1e-12


def test_different_sublevels_do_not_overlap_in_fock_space():
    model = EnsembleModel.random(3, seed=2)
    space = LevelSpace.for_transitions(model, [(-1, HalfInt.of(0)), (-1, HalfInt.of(1))])
    first, _ = build_collective_operator(model, -1, 0, space)
    second, _ = build_collective_operator(model, -1, 1, space)
    assert abs(pair_expectation(space, first, second)) < 1e-12


def test_configuration_average_matches_fock_space(rubidium_table):
    model = EnsembleModel.random(3, seed=5)
    minus, space = normalized_mode_operator(model, rubidium_table, -1)
    plus, _ = normalized_mode_operator(model, rubidium_table, 1, space)
    for a, b, alpha, alpha_prime in [(minus, minus, -1, -1), (plus, plus, 1, 1), (minus, plus, -1, 1)]:
        averaged = mode_pair_expectation(model, rubidium_table, alpha, alpha_prime)
        assert averaged.exact
        assert averaged.value == pytest.approx(pair_expectation(space, a, b), abs=1e-12)


def test_check_operators_mode_columns():
    rows = check_operators(8, seed=3)["rows"]
    for row in rows:
        assert abs(row["mode_norm"] - 1.0) <= 5 * row["mode_norm_stderr"] + 1e-12
        assert row["mode_cross_term"] < 1e-12
