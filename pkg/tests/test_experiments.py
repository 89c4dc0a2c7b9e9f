import math
import os

import numpy as np
import pytest

from experiments import (
    EXPERIMENTS,
    draw_test_states,
    experiment_config,
    format_report,
    run_comparison,
)
from hankel import min_data_length

SMALL_RUN = {"episodes_e": 3, "batch_q": 20, "test_states": 50}


def test_experiment_lengths_match_minimum_records():
    dims = {"reactor_state": (4, 2), "reactor_partial": (4, 2), "voltage_state": (32, 32),
            "voltage_partial": (32, 20)}
    for name, exp in EXPERIMENTS.items():
        n, m = dims[name]
        assert exp.length == min_data_length(n, m, exp.depth)
        if exp.t0 is not None:
            assert exp.depth == exp.horizon_k + exp.t0 - 1


def test_experiment_config_defaults():
    config = experiment_config("voltage_partial")
    assert config["horizon_k"] == 20
    assert config["batch_q"] == 1000
    assert config["t0"] == 3
    assert config["decentralized"] is True
    assert config["cost_weight"] == 0.3
    assert experiment_config("reactor_state", {"episodes_e": 7})["episodes_e"] == 7


def test_test_states_are_deterministic():
    a = draw_test_states(4, 10, 1.0, seed=3)
    b = draw_test_states(4, 10, 1.0, seed=3)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (10, 4)
    assert np.all(np.abs(a) <= 1.0)
    assert not np.array_equal(a, draw_test_states(4, 10, 1.0, seed=4))


def test_small_comparison_charges_samples_per_arm(tmp_path):
    report = run_comparison("reactor_state", overrides=SMALL_RUN, q_list=[10], out_dir=str(tmp_path))
    assert [arm.method for arm in report.arms] == ["PG-TrajectoryGen", "PG-Sample-10"]
    generate = report.arm("PG-TrajectoryGen")
    sample = report.arm("PG-Sample-10")
    assert generate.status == sample.status == "ok"
    assert generate.physical_samples == 93
    assert generate.generated_samples == 3 * 20 * 30
    assert sample.physical_samples == 3 * 10 * 30
    assert sample.generated_samples == 0
    assert math.isfinite(generate.final_test_cost)
    for name in ("comparison.csv", "log_PG-TrajectoryGen.csv", "log_PG-Sample-10.csv", "loss_curves.dat"):
        assert os.path.isfile(tmp_path / name)
    assert "PG-Sample-10" in format_report(report)


def test_full_batch_baseline_label():
    report = run_comparison("reactor_state", overrides=dict(SMALL_RUN, episodes_e=1), q_list=[None],
                            write=False)
    assert report.arms[1].method == "PG-Sample-full"
    assert report.arms[1].batch_q == 20


def test_diverged_arm_is_reported_not_raised(tmp_path):
    report = run_comparison("reactor_state", overrides=dict(SMALL_RUN, cost_ceiling=1e-9), q_list=[10],
                            out_dir=str(tmp_path))
    assert {arm.status for arm in report.arms} == {"diverged"}
    assert "exceeded ceiling" in report.arms[0].error


def test_unknown_experiment():
    with pytest.raises(ValueError, match="unknown experiment"):
        run_comparison("no_such_case", write=False)


@pytest.mark.slow
def test_generate_and_sample_modes_reach_the_same_cost():
    report = run_comparison("reactor_state", overrides={"batch_q": 100}, q_list=[100],
                            jobs=2, write=False)
    generate = report.arm("PG-TrajectoryGen")
    sample = report.arm("PG-Sample-100")
    assert generate.status == sample.status == "ok"
    gen_costs = np.array(generate.log.mean_costs)
    sample_costs = np.array(sample.log.mean_costs)
    assert gen_costs.shape == sample_costs.shape == (400,)
    assert np.max(np.abs(gen_costs - sample_costs) / np.abs(sample_costs)) <= 0.01
    assert abs(generate.final_test_cost - sample.final_test_cost) <= 0.05 * sample.final_test_cost


@pytest.mark.slow
@pytest.mark.parametrize("experiment", ["voltage_state", "voltage_partial"])
def test_voltage_modes_reach_the_same_cost(experiment):
    report = run_comparison(experiment, overrides={"episodes_e": 60, "batch_q": 100}, q_list=[100],
                            jobs=2, write=False)
    generate = report.arm("PG-TrajectoryGen")
    sample = report.arm("PG-Sample-100")
    assert generate.status == sample.status == "ok"
    gen_costs = np.array(generate.log.mean_costs)
    sample_costs = np.array(sample.log.mean_costs)
    assert gen_costs.shape == sample_costs.shape == (60,)
    assert np.max(np.abs(gen_costs - sample_costs) / np.abs(sample_costs)) <= 0.05
    assert abs(generate.final_test_cost - sample.final_test_cost) <= 0.05 * sample.final_test_cost
    assert generate.physical_samples == EXPERIMENTS[experiment].length
