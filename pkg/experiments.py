"""Trajectory-generation versus plant-sampling comparisons on the builtin plants."""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

import storage
from config import get_default_config, merge_config, output_dir
from hankel import collect_certified_data, historic_states, historic_windows
from policy_gradient import (
    HankelSource,
    PlantSource,
    TrainingConfig,
    TrainingDivergedError,
    evaluate_policy,
    train,
)
from sample_counter import SampleCounter
from sampling import make_sampler
from systems import load_system

logger = logging.getLogger(__name__)

MAX_ARM_WORKERS = 4

# Seed-sequence tag for the test-state draw, kept apart from training streams.
TEST_STATE_STREAM = 7919


@dataclass(frozen=True)
class Experiment:
    """Fixed settings of one case study.

    ``t0`` is None for state feedback. ``depth`` is the Hankel depth T and
    ``length`` the record length L = (m+1)T - 1 + n.
    """

    name: str
    system: str
    horizon_k: int
    depth: int
    t0: int
    length: int
    episodes_e: int
    generate_batch: int
    cost_weight: float
    init_sampler: str = "historic"
    decentralized: bool = False
    baseline_qs: tuple = (10, 100, None)


EXPERIMENTS = {
    "reactor_state": Experiment(
        "reactor_state", "reactor_state", horizon_k=30, depth=30, t0=None, length=93,
        episodes_e=400, generate_batch=1200, cost_weight=0.1, init_sampler="historic_unit",
    ),
    "reactor_partial": Experiment(
        "reactor_partial", "reactor_partial", horizon_k=30, depth=31, t0=2, length=96,
        episodes_e=400, generate_batch=1200, cost_weight=0.1, init_sampler="historic_unit",
    ),
    "voltage_state": Experiment(
        "voltage_state", "voltage_state", horizon_k=20, depth=20, t0=None, length=691,
        episodes_e=500, generate_batch=1000, cost_weight=0.3, decentralized=True,
    ),
    "voltage_partial": Experiment(
        "voltage_partial", "voltage_partial", horizon_k=20, depth=22, t0=3, length=493,
        episodes_e=500, generate_batch=1000, cost_weight=0.3, decentralized=True,
    ),
}


@dataclass
class ArmResult:
    method: str
    mode: str
    batch_q: int
    status: str = "ok"
    final_train_cost: float = float("nan")
    final_test_cost: float = float("nan")
    physical_samples: int = 0
    generated_samples: int = 0
    wall_s: float = 0.0
    log: object = None
    error: str = ""


@dataclass
class ComparisonReport:
    """Per-arm results of one comparison, plus the shared evaluation setup."""

    experiment: str
    seed: int
    test_state_count: int
    data_length: int
    arms: list = field(default_factory=list)

    def arm(self, method):
        for arm in self.arms:
            if arm.method == method:
                return arm
        raise KeyError(method)


def experiment_config(experiment, overrides=None):
    """Default config for an experiment with ``overrides`` (flat config keys) applied."""
    exp = EXPERIMENTS[experiment]
    config = merge_config(get_default_config(), {
        "system": exp.system,
        "mode": "generate",
        "horizon_k": exp.horizon_k,
        "episodes_e": exp.episodes_e,
        "batch_q": exp.generate_batch,
        "cost_weight": exp.cost_weight,
        "init_sampler": exp.init_sampler,
        "decentralized": exp.decentralized,
        "max_grad_norm": 1.0,
        "t0": exp.t0 or 0,
    })
    return merge_config(config, overrides or {})


def draw_test_states(n, count, scale, seed):
    """Fixed evaluation states, uniform in [-scale, scale]^n, identical for every arm."""
    rng = np.random.default_rng([int(seed), TEST_STATE_STREAM])
    return rng.uniform(-scale, scale, size=(count, n))


def initial_pool(data, t0):
    """Historic states (state feedback) or historic extended windows (output feedback)."""
    return historic_states(data) if t0 is None else historic_windows(data, t0)


def _arm_methods(exp, q_list, full_batch):
    arms = [("PG-TrajectoryGen", "generate", full_batch)]
    for q in q_list:
        batch = full_batch if q is None else int(q)
        label = "full" if q is None else str(batch)
        arms.append((f"PG-Sample-{label}", "sample", batch))
    return arms


def _run_arm(method, mode, batch_q, sys, exp, config, data, h, tests, jobs):
    counter = SampleCounter()
    started = time.perf_counter()
    result = ArmResult(method, mode, batch_q)
    sampler = make_sampler(config["init_sampler"], initial_pool(data, exp.t0), config["init_scale"])
    if mode == "generate":
        # The arm owns the data it trains on.
        counter.add_physical(data.sample_count)
        source = HankelSource(h, sampler, t0=exp.t0, counter=counter,
                              rtol=config["rank_rtol"] or None, eig_rtol=config["eig_rtol"] or None)
    else:
        source = PlantSource(sys, sampler, exp.horizon_k, t0=exp.t0, counter=counter, jobs=jobs)
    cfg = TrainingConfig.from_config(merge_config(config, {"mode": mode, "batch_q": batch_q}))
    logger.info(f"[{exp.name}] {method}: starting {cfg.episodes_e} episodes with Q={batch_q}")
    try:
        log = train(cfg, source)
        result.log = log
        result.final_train_cost = log.mean_costs[-1] if log.episodes else float("nan")
        result.final_test_cost = evaluate_policy(sys, log.final_theta, tests, exp.horizon_k, cfg.cost_weight)
    except TrainingDivergedError as e:
        logger.warning(f"[{exp.name}] {method}: {e}")
        result.status = "diverged"
        result.error = str(e)
        result.log = e.log
        if e.log is not None and e.log.episodes:
            result.final_train_cost = e.log.mean_costs[-1]
    result.physical_samples, result.generated_samples = counter.get_counts()
    result.wall_s = time.perf_counter() - started
    logger.info(
        f"[{exp.name}] {method}: {result.status}, train cost {result.final_train_cost:.4f}, "
        f"test cost {result.final_test_cost:.4f}, physical samples {result.physical_samples}"
    )
    return result


def run_comparison(experiment, overrides=None, q_list=None, jobs=1, out_dir=None, write=True):
    """Train every arm of an experiment and evaluate them on a shared test set.

    The Hankel data is collected once; its historic states double as the
    initial-state distribution of every arm, so all arms solve the same
    problem. Only the generate arm is charged for the record.

    Args:
        experiment: Key of ``EXPERIMENTS``.
        overrides: Flat config keys applied on top of the experiment defaults.
        q_list: Batch sizes of the sampling baselines; ``None`` entries mean
            the full generate-mode batch. Defaults to the experiment's list.
        jobs: Worker cap for arms (and for rollouts inside sample arms).
        out_dir: Directory for CSVs; defaults to ``<OUTPUT_DIR>/<experiment>``.
        write: Write the report, per-arm logs and the gnuplot loss file.

    Returns:
        ComparisonReport
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    exp = EXPERIMENTS[experiment]
    config = experiment_config(experiment, overrides)
    sys = load_system(exp.system, control_gain_dt=config["control_gain_dt"],
                      relaxation=config["voltage_relaxation"])

    data, h = collect_certified_data(
        sys, exp.depth, length=exp.length, input_scale=config["input_scale"], seed=config["data_seed"],
        retries=config["rank_retries"], rtol=config["rank_rtol"] or None, counter=SampleCounter(),
    )
    tests = draw_test_states(sys.n, config["test_states"], config["test_scale"], config["seed"])
    report = ComparisonReport(experiment, config["seed"], tests.shape[0], data.sample_count)

    arms = _arm_methods(exp, exp.baseline_qs if q_list is None else q_list, config["batch_q"])
    workers = max(1, min(int(jobs), MAX_ARM_WORKERS, len(arms)))
    rollout_jobs = int(jobs) if workers == 1 else 1
    results = {}
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {
            executor.submit(_run_arm, method, mode, batch_q, sys, exp, config, data, h, tests, rollout_jobs): method
            for method, mode, batch_q in arms
        }
        for future in as_completed(futures):
            method = futures[future]
            try:
                results[method] = future.result()
            except Exception as e:
                logger.error(f"[{experiment}] arm {method} failed: {e}")
                mode, batch_q = next((md, q) for name, md, q in arms if name == method)
                results[method] = ArmResult(method, mode, batch_q, status="failed", error=str(e))
    report.arms = [results[method] for method, _, _ in arms]

    if write:
        write_report_files(report, out_dir or os.path.join(output_dir(), experiment))
    return report


def write_report_files(report, directory):
    """comparison.csv, one training-log CSV per arm, and loss_curves.dat."""
    os.makedirs(directory, exist_ok=True)
    storage.write_comparison_report(report, os.path.join(directory, "comparison.csv"))
    curves = {}
    for arm in report.arms:
        if arm.log is None:
            continue
        storage.write_training_log(arm.log, os.path.join(directory, f"log_{arm.method}.csv"))
        curves[arm.method] = arm.log.mean_costs
    storage.write_loss_curves(curves, os.path.join(directory, "loss_curves.dat"))
    logger.info(f"Wrote comparison for {report.experiment} to {directory}")


def format_report(report):
    """Fixed-width summary table for the terminal."""
    lines = [
        f"{report.experiment}: L={report.data_length}, {report.test_state_count} test states, seed {report.seed}",
        f"{'method':<20} {'status':<9} {'train cost':>12} {'test cost':>12} {'physical':>10} {'wall s':>8}",
    ]
    for arm in report.arms:
        lines.append(
            f"{arm.method:<20} {arm.status:<9} {arm.final_train_cost:>12.4f} {arm.final_test_cost:>12.4f} "
            f"{arm.physical_samples:>10d} {arm.wall_s:>8.2f}"
        )
    return "\n".join(lines)
