"""REINFORCE training of a linear feedback gain.

The same loop runs in two modes: ``sample`` rolls trajectories out on the plant,
``generate`` synthesises them from the Hankel matrix. Both draw each
trajectory's randomness from the stream keyed by (seed, episode, index), so a
seed-matched pair of runs sees the same trajectories up to round-off.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from lti import extended_state_map, rollout
from sample_counter import sample_counter
from sampling import GaussianPerturbation, draw_condition
from trajgen_output import build_g_theta_output, generate_batch_output
from trajgen_state import build_g_theta_state, generate_batch_state

logger = logging.getLogger(__name__)

MODES = ("sample", "generate")


class TrainingDivergedError(RuntimeError):
    """Raised when the mean batch cost exceeds the configured ceiling."""

    def __init__(self, message, episode, cost, log=None):
        super().__init__(message)
        self.episode = episode
        self.cost = cost
        self.log = log


@dataclass
class PolicyParams:
    """Gaussian linear policy u = θ y + w, w ~ N(0, σ² I)."""

    theta: np.ndarray
    sigma: float


@dataclass(frozen=True)
class SigmaSchedule:
    sigma0: float = 0.5
    decay: float = 0.99
    sigma_min: float = 0.01


@dataclass
class TrainingConfig:
    """Hyper-parameters of one training run."""

    horizon_k: int = 30
    batch_q: int = 100
    episodes_e: int = 400
    learning_rate: float = 0.005
    cost_weight: float = 0.1
    sigma_schedule: SigmaSchedule = field(default_factory=SigmaSchedule)
    mode: str = "generate"
    seed: int = 0
    baseline: bool = False
    decentralized: bool = False
    max_grad_norm: float = 0.0
    cost_ceiling: float = 1e12
    log_every: int = 50
    keep_thetas: bool = False

    def __post_init__(self):
        if self.horizon_k < 1 or self.batch_q < 1 or self.episodes_e < 0:
            raise ValueError("horizon_k and batch_q must be >= 1 and episodes_e >= 0")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def from_config(cls, config):
        """Build from a flat configuration dictionary (see ``config.py``)."""
        return cls(
            horizon_k=config["horizon_k"],
            batch_q=config["batch_q"],
            episodes_e=config["episodes_e"],
            learning_rate=config["learning_rate"],
            cost_weight=config["cost_weight"],
            sigma_schedule=SigmaSchedule(config["sigma0"], config["sigma_decay"], config["sigma_min"]),
            mode=config["mode"],
            seed=config["seed"],
            baseline=config["baseline"],
            decentralized=config["decentralized"],
            max_grad_norm=config["max_grad_norm"],
            cost_ceiling=config["cost_ceiling"],
            log_every=config["log_every"],
            keep_thetas=config["keep_thetas"],
        )


@dataclass
class EpisodeRecord:
    episode: int
    mean_cost: float
    sigma: float
    physical_samples: int
    generated_samples: int
    wall_ms: float


@dataclass
class TrainingLog:
    """Per-episode costs and sample counters of a run."""

    episodes: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    gradients: list = field(default_factory=list)
    initial_theta: np.ndarray = None
    final_theta: np.ndarray = None
    seed: int = 0

    @property
    def mean_costs(self):
        return [rec.mean_cost for rec in self.episodes]

    @property
    def physical_samples(self):
        return self.episodes[-1].physical_samples if self.episodes else 0

    @property
    def generated_samples(self):
        return self.episodes[-1].generated_samples if self.episodes else 0


def cost_l1(traj, cost_weight):
    """Σ_k ‖y(k)‖₁ + λ ‖u(k)‖₁ over the trajectory."""
    return float(np.abs(traj.y_seq).sum() + cost_weight * np.abs(traj.u_seq).sum())


def log_prob(policy, y, u):
    """log N(u; θ y, σ² I)."""
    theta = np.asarray(policy.theta, dtype=float)
    resid = np.asarray(u, dtype=float) - theta @ np.asarray(y, dtype=float)
    m = resid.shape[0]
    var = policy.sigma ** 2
    return float(-0.5 * resid @ resid / var - 0.5 * m * np.log(2.0 * np.pi * var))


def log_prob_grad(policy, y, u):
    """∇_θ log N(u; θ y, σ² I) = σ⁻² (u - θ y) yᵀ."""
    if policy.sigma <= 0:
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=float)
    resid = np.asarray(u, dtype=float) - np.asarray(policy.theta, dtype=float) @ y
    return np.outer(resid, y) / policy.sigma ** 2


def _score(traj, policy):
    """Σ_k ∇_θ log π(u(k) | y(k)) over every step where an action was taken."""
    resid = traj.u_seq - traj.y_seq @ np.asarray(policy.theta, dtype=float).T
    return resid.T @ traj.y_seq / policy.sigma ** 2


def reinforce_gradient(batch, policy, cost_fn, baseline=False):
    """(1/Q) Σ_i c(τ_i) Σ_k ∇_θ log π(u_i(k) | y_i(k)).

    Args:
        batch: Non-empty list of Trajectory.
        policy: PolicyParams the batch was drawn under.
        cost_fn: Callable ``traj -> float``.
        baseline: Subtract the batch-mean cost before weighting.

    Returns:
        ndarray: Gradient estimate, same shape as θ.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    costs = np.array([cost_fn(traj) for traj in batch])
    if baseline:
        costs = costs - costs.mean()
    grad = np.zeros_like(np.asarray(policy.theta, dtype=float))
    for c, traj in zip(costs, batch):
        grad += c * _score(traj, policy)
    return grad / len(batch)


def sigma_schedule_step(schedule, episode):
    """σ(e) = max(σ_min, σ₀ · decay^e)."""
    if episode < 0:
        raise ValueError(f"episode must be >= 0, got {episode}")
    return max(schedule.sigma_min, schedule.sigma0 * schedule.decay ** episode)


def evaluate_policy(sys, theta, test_states, horizon, cost_weight):
    """Mean deterministic (σ = 0) cost of θ over a fixed set of plant initial states.

    Test rollouts are an evaluation protocol, not training data, so no
    sample counter is charged.
    """
    zeros = np.zeros((horizon, sys.m))
    costs = [cost_l1(rollout(sys, x0, theta, zeros), cost_weight) for x0 in test_states]
    return float(np.mean(costs))


class PlantSource:
    """Sample-mode trajectory source: closed-loop rollouts on the plant.

    For output feedback (``t0`` set) the sampler yields extended windows and the
    rollout starts from the plant state consistent with the window.
    """

    mode = "sample"

    def __init__(self, sys, init_sampler, horizon, t0=None, counter=None, jobs=1):
        self.sys = sys
        self.init_sampler = init_sampler
        self.horizon = horizon
        self.t0 = t0
        self.counter = counter or sample_counter
        self.jobs = max(1, int(jobs))
        self._window_map = None if t0 is None else extended_state_map(sys, t0)

    @property
    def m(self):
        return self.sys.m

    @property
    def q(self):
        return self.sys.q

    def _one(self, theta, noise, seed, episode, index):
        start, w = draw_condition(seed, episode, index, self.init_sampler, noise, self.horizon, self.sys.m)
        x0 = start if self._window_map is None else self._window_map @ start
        return rollout(self.sys, x0, theta, w)

    def batch(self, theta, sigma, batch_q, seed, episode):
        noise = GaussianPerturbation(sigma)
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as executor:
                trajs = list(executor.map(
                    lambda i: self._one(theta, noise, seed, episode, i), range(batch_q)))
        else:
            trajs = [self._one(theta, noise, seed, episode, i) for i in range(batch_q)]
        self.counter.add_physical(batch_q * self.horizon)
        return trajs


class HankelSource:
    """Generate-mode trajectory source: trajectories synthesised from 𝓗.

    ``t0 = None`` selects state-feedback generation (horizon T = depth);
    otherwise output-feedback generation over the window T0-1..T-1.
    """

    mode = "generate"

    def __init__(self, h, init_sampler, t0=None, counter=None, rtol=None, eig_rtol=None):
        self.h = h
        self.init_sampler = init_sampler
        self.t0 = t0
        self.counter = counter or sample_counter
        self.rtol = rtol
        self.eig_rtol = eig_rtol

    @property
    def m(self):
        return self.h.m

    @property
    def q(self):
        return self.h.q

    @property
    def horizon(self):
        return self.h.depth if self.t0 is None else self.h.depth - self.t0 + 1

    def batch(self, theta, sigma, batch_q, seed, episode):
        noise = GaussianPerturbation(sigma)
        if self.t0 is None:
            gen = build_g_theta_state(self.h, theta, self.rtol)
            trajs = generate_batch_state(self.h, theta, noise, batch_q, self.init_sampler,
                                         seed=seed, episode=episode, gen=gen)
        else:
            gen = build_g_theta_output(self.h, theta, self.t0, self.eig_rtol)
            trajs = generate_batch_output(self.h, theta, noise, batch_q, self.init_sampler, self.t0,
                                          seed=seed, episode=episode, gen=gen)
        self.counter.add_generated(batch_q * self.horizon)
        return trajs


def _gain_mask(cfg, m, q):
    if not cfg.decentralized:
        return None
    if m != q:
        raise ValueError(f"decentralized gain needs m == q, got m={m}, q={q}")
    return np.eye(m)


def train(cfg, source, initial_theta=None):
    """Run E episodes of REINFORCE against a trajectory source.

    Per episode: σ from the schedule, Q trajectories from the source, gradient,
    θ ← θ - α ∇J. Deterministic given ``cfg.seed``.

    Args:
        cfg: TrainingConfig.
        source: PlantSource or HankelSource; its ``mode`` should match ``cfg.mode``.
        initial_theta: Starting gain; zero by default.

    Returns:
        TrainingLog

    Raises:
        TrainingDivergedError: If a mean batch cost exceeds ``cfg.cost_ceiling``
            or is not finite. The partial log is attached.
    """
    if source.mode != cfg.mode:
        raise ValueError(f"config mode {cfg.mode!r} does not match source mode {source.mode!r}")
    if source.horizon != cfg.horizon_k:
        raise ValueError(f"source yields {source.horizon}-step trajectories, config horizon_k is {cfg.horizon_k}")
    m, q = source.m, source.q
    theta = np.zeros((m, q)) if initial_theta is None else np.array(initial_theta, dtype=float)
    if theta.shape != (m, q):
        raise ValueError(f"initial theta must be {(m, q)}, got {theta.shape}")
    mask = _gain_mask(cfg, m, q)
    if mask is not None:
        theta = theta * mask

    log = TrainingLog(initial_theta=theta.copy(), seed=cfg.seed)

    def cost_fn(traj):
        return cost_l1(traj, cfg.cost_weight)

    for episode in range(cfg.episodes_e):
        started = time.perf_counter()
        sigma = sigma_schedule_step(cfg.sigma_schedule, episode)
        policy = PolicyParams(theta, sigma)
        batch = source.batch(theta, sigma, cfg.batch_q, cfg.seed, episode)
        mean_cost = float(np.mean([cost_fn(traj) for traj in batch]))
        if not np.isfinite(mean_cost) or mean_cost > cfg.cost_ceiling:
            log.final_theta = theta.copy()
            raise TrainingDivergedError(
                f"mean batch cost {mean_cost:.3e} exceeded ceiling {cfg.cost_ceiling:.3e} at episode {episode}",
                episode, mean_cost, log,
            )
        grad = reinforce_gradient(batch, policy, cost_fn, cfg.baseline)
        if mask is not None:
            grad = grad * mask
        if cfg.max_grad_norm > 0:
            norm = np.linalg.norm(grad)
            if norm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm)
        theta = theta - cfg.learning_rate * grad

        physical, generated = source.counter.get_counts()
        log.episodes.append(EpisodeRecord(
            episode=episode,
            mean_cost=mean_cost,
            sigma=sigma,
            physical_samples=physical,
            generated_samples=generated,
            wall_ms=(time.perf_counter() - started) * 1000.0,
        ))
        log.gradients.append(grad)
        if cfg.keep_thetas:
            log.thetas.append(theta.copy())
        if cfg.log_every and (episode % cfg.log_every == 0 or episode == cfg.episodes_e - 1):
            logger.info(
                f"[{cfg.mode}] episode {episode}: mean cost {mean_cost:.4f}, sigma {sigma:.4f}, "
                f"physical samples {physical}"
            )

    log.final_theta = theta
    return log
