import math

import numpy as np
import pytest

from app.models.experiment import Channel, ExperimentConfig, GateConfig
from app.models.measurement import CHSHAngles, MeasurementSetting
from app.services.analysis import compute_g_si, detection_efficiency, gate_and_count
from app.services.simulator import (
    SimulationService,
    decoherence_visibility,
    expected_g_si,
    trial_probabilities,
)

BUSY = ExperimentConfig(excitation_prob=0.05, det_eff_s=0.5, det_eff_i=0.5, retrieval_eff=1.0,
                        bg_prob_s=0.01, bg_prob_i=0.01)


@pytest.fixture
def service():
    return SimulationService(workers=1, block_trials=4096)


class TestDecoherence:
    def test_values(self):
        assert decoherence_visibility(0, 3700, 0.95) == pytest.approx(0.95)
        assert decoherence_visibility(3700, 3700, 1.0) == pytest.approx(math.exp(-1))

    @pytest.mark.parametrize("args", [(100, 0, 1.0), (100, -5, 1.0), (-1, 100, 1.0), (0, 100, 1.5)])
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ValueError):
            decoherence_visibility(*args)


class TestTrialProbabilities:
    def test_independent_channels(self):
        config = ExperimentConfig(excitation_prob=0.0, bg_prob_s=0.01, bg_prob_i=0.02)
        probs = trial_probabilities(config)
        assert probs.p_si == pytest.approx(probs.p_s * probs.p_i)
        assert expected_g_si(config) == pytest.approx(1.0)

    def test_ideal_detection_follows_born_rule(self):
        config = ExperimentConfig(excitation_prob=1.0, det_eff_s=1.0, det_eff_i=1.0, retrieval_eff=1.0,
                                  bg_prob_s=0.0, bg_prob_i=0.0, visibility=1.0, memory_tau_ns=1e12)
        setting = MeasurementSetting.from_degrees(-22.5, 0)
        c, s = math.cos(config.eta), math.sin(config.eta)
        born = (c * math.cos(setting.theta_s)) ** 2
        assert trial_probabilities(config, setting).p_si == pytest.approx(born, rel=1e-9)

    def test_calibrated_efficiencies(self, default_config):
        probs = trial_probabilities(default_config)
        assert probs.p_si / probs.p_i == pytest.approx(0.02, rel=0.1)
        assert probs.p_si / probs.p_s == pytest.approx(0.02, rel=0.1)

    def test_g_si_decays_with_storage(self, default_config):
        values = [expected_g_si(default_config, dt) for dt in (200, 1000, 4000, 7000)]
        assert values == sorted(values, reverse=True)
        assert values[-1] > 1.0


class TestRunTrials:
    def test_deterministic_per_seed(self, service):
        settings = CHSHAngles.canonical().all_settings()
        first = service.run_trials(BUSY, settings, 500, seed=7)
        again = service.run_trials(BUSY, settings, 500, seed=7)
        other = service.run_trials(BUSY, settings, 500, seed=8)
        assert first == again
        assert first != other

    def test_independent_of_worker_count(self):
        settings = CHSHAngles.canonical().all_settings()
        serial = SimulationService(workers=1, block_trials=2048).run_trials(BUSY, settings, 700, seed=3)
        threaded = SimulationService(workers=4, block_trials=2048).run_trials(BUSY, settings, 700, seed=3)
        assert serial == threaded

    def test_independent_of_block_size(self):
        settings = CHSHAngles.canonical().settings()
        runs = [SimulationService(workers=2, block_trials=size).simulate(BUSY, settings, 1500, seed=9)
                for size in (1000, 4096, 333)]
        for run in runs[1:]:
            assert run.log == runs[0].log
            assert run.tally == runs[0].tally

    def test_trial_outcome_depends_only_on_index(self, service, no_polarizer):
        short = service.run_trials(BUSY, no_polarizer, 5000, seed=11)
        long = service.run_trials(BUSY, no_polarizer, 9000, seed=11)
        prefix = long.trial < 5000
        assert np.array_equal(short.trial, long.trial[prefix])
        assert np.array_equal(short.t_ns, long.t_ns[prefix])
        assert np.array_equal(short.channel, long.channel[prefix])

    def test_events_sorted_quantized_and_gated(self, service):
        settings = CHSHAngles.canonical().settings()
        log = service.run_trials(BUSY, settings, 3000, seed=1)
        assert log.n_events > 0
        keys = list(zip(log.trial.tolist(), log.t_ns.tolist(), log.channel.tolist()))
        assert keys == sorted(keys)
        assert np.all(log.t_ns % 2 == 0)
        assert np.array_equal(log.setting_id, log.trial // 3000)
        gates = GateConfig.from_experiment(BUSY)
        d1 = log.channel == Channel.D1.code
        assert np.all(gates.inside(Channel.D1, log.t_ns[d1]))
        assert np.all(gates.inside(Channel.D2, log.t_ns[~d1]))

    def test_tally_matches_gate_and_count(self, service):
        settings = CHSHAngles.canonical().all_settings()
        run = service.simulate(BUSY, settings, 2000, seed=5)
        assert gate_and_count(run.log) == run.tally

    @pytest.mark.parametrize("settings,n", [([], 10), ([MeasurementSetting()], 0)])
    def test_rejects_empty_runs(self, service, settings, n):
        with pytest.raises(ValueError):
            service.run_trials(BUSY, settings, n, seed=0)


class TestStatistics:
    def test_g_si_agrees_with_model(self, service, no_polarizer):
        run = service.simulate(BUSY, no_polarizer, 200_000, seed=21)
        g, sigma = compute_g_si(run.tally)
        assert g == pytest.approx(expected_g_si(BUSY), abs=4 * sigma)

    def test_independent_channels_give_unity(self, service, no_polarizer):
        config = ExperimentConfig(excitation_prob=0.0, bg_prob_s=0.01, bg_prob_i=0.01)
        run = service.simulate(config, no_polarizer, 1_000_000, seed=2)
        g, sigma = compute_g_si(run.tally)
        assert g == pytest.approx(1.0, abs=3 * sigma)

    def test_per_setting_rates_match_model(self, service):
        settings = CHSHAngles.canonical().settings()
        n = 200_000
        run = service.simulate(BUSY, settings, n, seed=13)
        for k, setting in enumerate(settings):
            counts = run.tally.counts[k]
            probs = trial_probabilities(BUSY, setting)
            for observed, p in [(counts.n_s, probs.p_s), (counts.n_i, probs.p_i), (counts.n_si, probs.p_si)]:
                assert observed == pytest.approx(n * p, abs=4 * math.sqrt(n * p * (1 - p)))

    @pytest.mark.parametrize("excitation_prob,delta_t_ns", [
        (0.01, 200.0), (0.02, 200.0), (0.05, 500.0), (0.1, 200.0), (0.05, 3000.0)])
    def test_g_si_over_configurations(self, service, no_polarizer, excitation_prob, delta_t_ns):
        config = ExperimentConfig(**{**BUSY.model_dump(), "excitation_prob": excitation_prob,
                                     "delta_t_ns": delta_t_ns})
        run = service.simulate(config, no_polarizer, 200_000, seed=31)
        g, sigma = compute_g_si(run.tally)
        assert g == pytest.approx(expected_g_si(config), abs=4 * sigma)

    @pytest.mark.slow
    def test_detection_efficiency_at_defaults(self, default_config, no_polarizer):
        run = SimulationService(workers=4).simulate(default_config, no_polarizer, 80_000_000, seed=4)
        counts = run.tally.total()
        alpha_s, alpha_i = detection_efficiency(run.tally)
        probs = trial_probabilities(default_config)
        assert alpha_s == pytest.approx(probs.p_si / probs.p_i,
                                        abs=4 * alpha_s * math.sqrt(1 / counts.n_si + 1 / counts.n_i))
        assert alpha_i == pytest.approx(probs.p_si / probs.p_s,
                                        abs=4 * alpha_i * math.sqrt(1 / counts.n_si + 1 / counts.n_s))
        assert alpha_s == pytest.approx(0.02, rel=0.10)
