"""Command-line entry point.

Subcommands: collect, certify, generate, verify, train, compare. Exit codes are
0 on success, 1 on verification or training failure, 2 on usage and config errors.
"""

import argparse
import logging
import os
import sys

import numpy as np

import storage
from config import (
    CONFIG_EXAMPLE_PATH,
    ConfigError,
    load_config,
    load_overrides,
    output_dir,
    save_config,
    validate_config,
)
from experiments import EXPERIMENTS, format_report, initial_pool, run_comparison
from hankel import (
    ExcitationError,
    build_hankel,
    collect_certified_data,
    collect_excitation_data,
    min_data_length,
    rank_certificate,
)
from lti import UnobservableSystemError, compute_lag, rollout, state_from_extended
from policy_gradient import HankelSource, PlantSource, TrainingConfig, TrainingDivergedError, train
from sample_counter import SampleCounter, collection_seconds
from sampling import GaussianPerturbation, draw_condition, make_sampler, trajectory_rng
from systems import BUILTIN_SYSTEMS, load_system
from trajgen_output import (
    InfeasibleInitialStateError,
    build_g_theta_output,
    generate_batch_output,
    generate_trajectory_output,
)
from trajgen_state import RankDeficiencyError, build_g_theta_state, generate_batch_state, generate_trajectory_state

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

VERIFY_TOLERANCE = 1e-6

# Seed-sequence tag for random gains, kept apart from trajectory streams.
THETA_STREAM = 4099


class CommandFailed(Exception):
    """A command ran but its check failed (exit 1)."""


def setup_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def _load_theta(spec, m, q, seed, scale=0.1):
    """Gain from a CSV file, ``zero``, or ``random`` (entries N(0, scale²), seeded)."""
    if spec == "zero":
        return np.zeros((m, q))
    if spec == "random":
        return scale * np.random.default_rng([int(seed), THETA_STREAM]).standard_normal((m, q))
    theta = storage.read_matrix(spec)
    if theta.shape != (m, q):
        raise ValueError(f"gain in {spec} has shape {theta.shape}, expected {(m, q)}")
    return theta


def _resolve_t0(plant, t0):
    """None for state feedback; otherwise the window length (the lag when 0).

    Without a plant and without ``t0`` the recorded outputs are taken as the full state.
    """
    if t0:
        return int(t0)
    if plant is None or plant.full_state:
        return None
    return compute_lag(plant)


def _out_path(args, name):
    directory = output_dir(getattr(args, "out_dir", None))
    return os.path.join(directory, name)


def cmd_collect(args):
    plant = load_system(args.system)
    counter = SampleCounter()
    if args.depth:
        length = args.length if args.length is not None else min_data_length(plant.n, plant.m, args.depth)
        data, h = collect_certified_data(plant, args.depth, length=length, input_scale=args.scale,
                                         seed=args.seed, retries=args.retries, counter=counter)
    else:
        if args.length is None:
            raise ValueError("--length is required unless --depth is given")
        data = collect_excitation_data(plant, input_scale=args.scale, length=args.length,
                                       rng_seed=[args.seed, 0], counter=counter)
    out = args.out or _out_path(args, "data.csv")
    storage.write_data_record(data, out)
    seconds = collection_seconds(counter.physical, plant.sampling_period)
    print(f"{plant.name}: {data.sample_count} samples written to {out}")
    print(f"physical_samples={counter.physical} collection_time={seconds:.1f}s")
    return EXIT_OK


def cmd_certify(args):
    data = storage.read_data_record(args.data)
    n = load_system(args.system).n if args.system else args.n
    if not n:
        raise ValueError("certify needs --system or --n")
    h = build_hankel(data, args.depth, n_hint=n)
    ok, rank, sub_rank = rank_certificate(h, n, args.rtol or None)
    needed = n + args.depth * data.m
    print(f"rank(H)={rank} required={needed} columns={h.columns}")
    if sub_rank is not None:
        print(f"rank([H_u; H_x0])={sub_rank} required={needed}")
    if not ok:
        raise CommandFailed(f"rank certificate failed: {rank} < {needed}; collect a longer or richer record")
    print("CERTIFIED")
    return EXIT_OK


def _hankel_context(args):
    plant = load_system(args.system) if args.system else None
    data = storage.read_data_record(args.data)
    t0 = _resolve_t0(plant, args.t0)
    depth = args.depth
    n_hint = plant.n if plant else (data.q if t0 is None else 0)
    h = build_hankel(data, depth, n_hint=n_hint)
    sampler = make_sampler(args.init_sampler, initial_pool(data, t0), args.init_scale)
    return plant, data, h, t0, sampler


def _read_start(path, h, t0):
    """Initial condition from an extended-state file; state feedback takes t0=1 files."""
    chi, file_t0, m, q = storage.read_extended_state(path)
    expected = 1 if t0 is None else t0
    if (file_t0, m, q) != (expected, h.m, h.q):
        raise ValueError(f"{path} holds t0={file_t0}, m={m}, q={q}; this run needs t0={expected}, m={h.m}, q={h.q}")
    return chi


def cmd_generate(args):
    plant, data, h, t0, sampler = _hankel_context(args)
    theta = _load_theta(args.theta, h.m, h.q, args.seed)
    noise = GaussianPerturbation(args.sigma)
    if args.start:
        start = _read_start(args.start, h, t0)
        horizon = h.depth if t0 is None else h.depth - t0 + 1
        w = noise.sample(trajectory_rng(args.seed, 0, 0), horizon, h.m)
        if t0 is None:
            traj = generate_trajectory_state(h, build_g_theta_state(h, theta), start, w)
        else:
            traj = generate_trajectory_output(h, build_g_theta_output(h, theta, t0), start, w)
        out = args.out or _out_path(args, "trajectory.csv")
        storage.write_trajectory(traj, out)
        print(f"1 trajectory of {traj.t_len} steps from {args.start} written to {out} (physical_samples=0)")
        return EXIT_OK
    if t0 is None:
        trajs = generate_batch_state(h, theta, noise, args.batch, sampler, seed=args.seed)
    else:
        trajs = generate_batch_output(h, theta, noise, args.batch, sampler, t0, seed=args.seed)
    out = args.out or _out_path(args, "trajectories.csv")
    storage.write_trajectory_batch(trajs, out)
    print(f"{len(trajs)} trajectories of {trajs[0].t_len} steps written to {out} (physical_samples=0)")
    return EXIT_OK


def _relative_error(generated, oracle):
    diff = np.concatenate([(generated.u_seq - oracle.u_seq).ravel(), (generated.y_seq - oracle.y_seq).ravel()])
    ref = np.concatenate([oracle.u_seq.ravel(), oracle.y_seq.ravel()])
    return float(np.linalg.norm(diff) / max(np.linalg.norm(ref), np.finfo(float).tiny))


def run_verification(plant, h, t0, theta, sampler, trials, sigma, seed):
    """Generate ``trials`` seeded trajectories and roll each out on the plant.

    Returns:
        tuple: ``(max_relative_error, worst)`` where ``worst`` is
        ``(index, start, generated, oracle)`` or None when ``trials`` is 0.
    """
    noise = GaussianPerturbation(sigma)
    if t0 is None:
        gen = build_g_theta_state(h, theta)
        horizon = h.depth
    else:
        gen = build_g_theta_output(h, theta, t0)
        horizon = h.depth - t0 + 1
    max_err, worst = 0.0, None
    for i in range(trials):
        start, w = draw_condition(seed, 0, i, sampler, noise, horizon, h.m)
        if t0 is None:
            generated = generate_trajectory_state(h, gen, start, w)
            oracle = rollout(plant, start, theta, w)
        else:
            generated = generate_trajectory_output(h, gen, start, w)
            oracle = rollout(plant, state_from_extended(plant, start, t0), theta, w)
        err = _relative_error(generated, oracle)
        logger.debug(f"trial {i}: relative error {err:.3e}")
        if worst is None or err > max_err:
            max_err, worst = err, (i, start, generated, oracle)
    return max_err, worst


def cmd_verify(args):
    if not args.system:
        raise ValueError("verify needs --system for the oracle rollout")
    plant, data, h, t0, sampler = _hankel_context(args)
    theta = _load_theta(args.theta, plant.m, plant.q, args.seed)
    mode = "state feedback" if t0 is None else f"output feedback, t0={t0}"
    max_err, worst = run_verification(plant, h, t0, theta, sampler, args.trials, args.sigma, args.seed)
    print(f"{plant.name} ({mode}): {args.trials} trials, max relative error {max_err:.3e}")
    if max_err <= args.tol:
        print("PASS")
        return EXIT_OK
    index, start, generated, oracle = worst
    out = _out_path(args, "verify_worst.csv")
    storage.write_offender(generated, oracle, out)
    storage.write_extended_state(start, t0 or 1, h.m, h.q, _out_path(args, "verify_worst_start.csv"))
    abs_err = np.abs(np.concatenate([generated.y_seq - oracle.y_seq, generated.u_seq - oracle.u_seq], axis=1))
    k_worst = int(np.argmax(abs_err.max(axis=1)))
    raise CommandFailed(
        f"FAIL: trial {index} deviates by {max_err:.3e} (> {args.tol:g}), largest at step {k_worst}; "
        f"details in {out}"
    )


def _config_overrides(args, keys):
    return {key: getattr(args, attr) for key, attr in keys.items() if getattr(args, attr, None) is not None}


TRAIN_FLAGS = {
    "system": "system",
    "mode": "mode",
    "horizon_k": "horizon",
    "batch_q": "batch",
    "episodes_e": "episodes",
    "learning_rate": "lr",
    "seed": "seed",
    "jobs": "jobs",
    "t0": "t0",
    "init_sampler": "init_sampler",
    "keep_thetas": "keep_thetas",
}


def cmd_train(args):
    config = load_config(args.config, _config_overrides(args, TRAIN_FLAGS))
    validate_config(config)
    plant = load_system(config["system"], control_gain_dt=config["control_gain_dt"],
                        relaxation=config["voltage_relaxation"])
    t0 = _resolve_t0(plant, config["t0"])
    horizon = config["horizon_k"]
    depth = horizon if t0 is None else horizon + t0 - 1

    counter = SampleCounter()
    data_counter = counter if config["mode"] == "generate" else SampleCounter()
    data, h = collect_certified_data(
        plant, depth, input_scale=config["input_scale"], seed=config["data_seed"],
        retries=config["rank_retries"], rtol=config["rank_rtol"] or None, counter=data_counter,
    )
    sampler = make_sampler(config["init_sampler"], initial_pool(data, t0), config["init_scale"])
    if config["mode"] == "generate":
        source = HankelSource(h, sampler, t0=t0, counter=counter,
                              rtol=config["rank_rtol"] or None, eig_rtol=config["eig_rtol"] or None)
    else:
        source = PlantSource(plant, sampler, horizon, t0=t0, counter=counter, jobs=config["jobs"])

    out_dir = output_dir(args.out_dir)
    save_config(config, os.path.join(out_dir, "run.cfg"))
    log = train(TrainingConfig.from_config(config), source)
    physical, generated = counter.get_counts()
    storage.write_training_log(log, os.path.join(out_dir, "training_log.csv"))
    storage.write_matrix(log.final_theta, os.path.join(out_dir, "theta.csv"))
    if log.thetas:
        storage.write_theta_history(log.thetas, os.path.join(out_dir, "thetas.csv"))
    final_cost = log.mean_costs[-1] if log.episodes else float("nan")
    print(f"{plant.name} [{config['mode']}]: {len(log.episodes)} episodes, final mean cost {final_cost:.6g}")
    print(f"theta=\n{np.array2string(log.final_theta, precision=6)}")
    print(f"physical_samples={physical} generated_samples={generated}")
    return EXIT_OK


COMPARE_FLAGS = {
    "episodes_e": "episodes",
    "batch_q": "batch",
    "seed": "seed",
    "learning_rate": "lr",
}


def _parse_q_list(text):
    if text is None:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append(None if part == "full" else int(part))
    return out


def cmd_compare(args):
    overrides = {}
    if args.config:
        overrides.update(load_overrides(args.config))
        overrides.pop("system", None)
        overrides.pop("mode", None)
    overrides.update(_config_overrides(args, COMPARE_FLAGS))
    out_dir = args.out_dir or os.path.join(output_dir(), args.experiment)
    report = run_comparison(args.experiment, overrides, q_list=_parse_q_list(args.q_list),
                            jobs=args.jobs, out_dir=out_dir)
    print(format_report(report))
    failed = [arm.method for arm in report.arms if arm.status != "ok"]
    if failed:
        raise CommandFailed(f"arms did not finish: {', '.join(failed)}")
    return EXIT_OK


def build_parser():
    systems_help = f"builtin ({', '.join(BUILTIN_SYSTEMS)}) or a matrix/feeder file"
    parser = argparse.ArgumentParser(prog="trajgen", description="Hankel-based trajectory generation for policy gradient")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="excite the plant and record (u, y)")
    p.add_argument("--system", required=True, help=systems_help)
    p.add_argument("--length", type=int, help="record length L (default: minimum for --depth)")
    p.add_argument("--depth", type=int, help="certify rank(H) = n + T*m at this depth, re-collecting if needed")
    p.add_argument("--scale", type=float, default=1.0, help="inputs uniform in [-scale, scale]")
    p.add_argument("--retries", type=int, default=5, help="re-collections allowed by --depth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output CSV (default: <output dir>/data.csv)")
    p.add_argument("--out-dir", help="output directory (default: $TRAJGEN_OUTPUT_DIR)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("certify", help="check the Hankel rank condition of a record")
    p.add_argument("--data", required=True, help="DataRecord CSV")
    p.add_argument("--depth", type=int, required=True, help="Hankel depth T")
    p.add_argument("--system", help=f"{systems_help}, for the state dimension")
    p.add_argument("--n", type=int, help="state dimension when --system is not given")
    p.add_argument("--rtol", type=float, default=0.0, help="relative rank tolerance (0 = default)")
    p.set_defaults(func=cmd_certify)

    for name, func, helptext in (("generate", cmd_generate, "generate closed-loop trajectories from data"),
                                 ("verify", cmd_verify, "compare generated trajectories with plant rollouts")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="DataRecord CSV")
        p.add_argument("--depth", type=int, required=True, help="Hankel depth T")
        p.add_argument("--system", required=(name == "verify"), help=systems_help)
        p.add_argument("--theta", default="random", help="gain CSV, 'random' or 'zero'")
        p.add_argument("--t0", type=int, default=0, help="extended-state window (default: lag when C != I)")
        p.add_argument("--sigma", type=float, default=0.5, help="perturbation std-dev")
        p.add_argument("--init-sampler", default="historic", choices=("historic", "historic_unit", "box"))
        p.add_argument("--init-scale", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", help="output directory (default: $TRAJGEN_OUTPUT_DIR)")
        if name == "generate":
            p.add_argument("--batch", type=int, default=10, help="number of trajectories")
            p.add_argument("--out", help="output CSV (default: <output dir>/trajectories.csv, or trajectory.csv with --start)")
            p.add_argument("--start", help="extended-state file with the initial condition of a single trajectory")
        else:
            p.add_argument("--trials", type=int, default=50, help="number of seeded draws")
            p.add_argument("--tol", type=float, default=VERIFY_TOLERANCE, help="max relative error for PASS")
        p.set_defaults(func=func)

    p = sub.add_parser("train", help="REINFORCE training in sample or generate mode")
    p.add_argument("--config", help=f"key=value config file (see {CONFIG_EXAMPLE_PATH})")
    p.add_argument("--system", help=systems_help)
    p.add_argument("--mode", choices=("sample", "generate"))
    p.add_argument("--horizon", type=int, help="cost horizon K")
    p.add_argument("--batch", type=int, help="trajectories per episode Q")
    p.add_argument("--episodes", type=int, help="episodes E")
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--t0", type=int, help="extended-state window for output feedback")
    p.add_argument("--init-sampler", choices=("historic", "historic_unit", "box"))
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="rollout workers in sample mode")
    p.add_argument("--keep-thetas", action="store_true", default=None, help="write every intermediate gain to thetas.csv")
    p.add_argument("--out-dir", help="output directory (default: $TRAJGEN_OUTPUT_DIR)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="trajectory generation versus plant sampling")
    p.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    p.add_argument("--config", help="key=value overrides of the experiment defaults")
    p.add_argument("--q-list", help="comma-separated sample-mode batch sizes, 'full' for the generate batch")
    p.add_argument("--episodes", type=int)
    p.add_argument("--batch", type=int, help="generate-mode (and 'full') batch size")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="parallel arms")
    p.add_argument("--out-dir", help="output directory (default: $TRAJGEN_OUTPUT_DIR/<experiment>)")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except (CommandFailed, ExcitationError, TrainingDivergedError, RankDeficiencyError,
            InfeasibleInitialStateError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigError, UnobservableSystemError, ValueError, OSError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
