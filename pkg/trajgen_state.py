"""State-feedback trajectory generation from a Hankel matrix.

Trajectories under u(k) = θ x(k) + w(k) are produced as 𝓗 g*, where g* is
the minimum-norm solution of G_θ g = [w(0); ...; w(T-1); x(0)]. No plant
matrices are involved.

With 𝓗 = U S (see :class:`hankel.HankelBasis`), G_θ = K_θ S where K_θ applies
the rows of G_θ to U instead of 𝓗. The solve runs on K_θ, whose conditioning
does not depend on how fast the recorded data grows; the trajectory is U v
and g* = S⁺ v.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from lti import Trajectory, numerical_rank
from sampling import draw_condition

logger = logging.getLogger(__name__)


class RankDeficiencyError(ValueError):
    """Raised when G_θ is numerically rank deficient."""


@dataclass(frozen=True, eq=False)
class GeneratorState:
    """G_θ, its reduction K_θ onto the Hankel basis, and the QR factors of K_θᵀ.

    ``rank`` is the numerical rank of K_θ, which equals rank(G_θ) because S has
    full row rank.
    """

    g_theta: np.ndarray
    reduced: np.ndarray
    q_factor: np.ndarray
    r_factor: np.ndarray
    basis: object
    theta_snapshot: np.ndarray
    rank: int

    @property
    def rows(self):
        return self.g_theta.shape[0]

    @property
    def full_row_rank(self):
        return self.rank == self.rows


def feedback_residual_rows(h_u, h_y, theta, depth):
    """Per-block H_u^k - θ H_y^k stacked over all blocks of the given matrices.

    The block-diagonal gain is applied block by block; I ⊗ θ is never formed.
    """
    m, q = theta.shape
    cols = h_u.shape[1]
    h_y_blocks = h_y.reshape(depth, q, cols)
    fed_back = np.einsum("ij,tjc->tic", theta, h_y_blocks).reshape(depth * m, cols)
    return h_u - fed_back


def _state_rows(h, theta):
    top = feedback_residual_rows(h.h_u, h.h_y, theta, h.depth)
    return np.vstack([top, h.h_y[:h.q]])


def build_g_theta_state(h, theta, rtol=None, basis=None):
    """Stack G_θ = [𝓗_u - (I_T ⊗ θ) 𝓗_x; 𝓗_x^0] and factorize its reduction.

    Args:
        h: HankelMatrix whose output channel is the full state.
        theta: Gain (m, n).
        rtol: Optional rank tolerance.
        basis: HankelBasis of ``h``; ``h.basis`` when omitted.

    Returns:
        GeneratorState
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (h.m, h.q):
        raise ValueError(f"theta must be {(h.m, h.q)} for this Hankel matrix, got {theta.shape}")
    if h.n_hint and h.n_hint != h.q:
        raise ValueError(f"state-feedback generation needs q = n, got q={h.q}, n={h.n_hint}")
    if basis is None:
        basis = h.basis
    g_theta = _state_rows(h, theta)
    reduced = _state_rows(basis.span, theta)
    q_factor, r_factor = scipy.linalg.qr(reduced.T, mode="economic")
    rank = numerical_rank(reduced, rtol)
    theta_snapshot = theta.copy()
    theta_snapshot.setflags(write=False)
    logger.debug(f"Built G_theta {g_theta.shape} with rank {rank}")
    return GeneratorState(g_theta, reduced, q_factor, r_factor, basis, theta_snapshot, rank)


def _rhs(w_seq, x0, m, n):
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    if w_seq.shape[1] != m:
        raise ValueError(f"w_seq must have {m} columns, got {w_seq.shape}")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != n:
        raise ValueError(f"x0 must have length {n}, got {x0.shape[0]}")
    return np.concatenate([w_seq.reshape(-1), x0])


def solve_min_norm(gen, rhs):
    """Basis coordinates v with K_θ v = rhs, for one (rows,) or many (rows, Q) right-hand sides.

    Raises:
        RankDeficiencyError: If G_θ is not of full row rank.
    """
    if not gen.full_row_rank:
        raise RankDeficiencyError(
            f"G_theta has numerical rank {gen.rank}, needs full row rank {gen.rows}; "
            f"certify rank(H) = n + T*m first"
        )
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != gen.rows:
        raise ValueError(f"right-hand side must have {gen.rows} rows, got {rhs.shape}")
    # K = Rᵀ Qᵀ, so v = Q R⁻ᵀ rhs solves K v = rhs and lies in the row space of K.
    z = scipy.linalg.solve_triangular(gen.r_factor, rhs, trans="T")
    return gen.q_factor @ z


def min_norm_coefficient(gen, w_seq, x0):
    """g* = G_θᵀ (G_θ G_θᵀ)⁻¹ [w(0); ...; w(T-1); x0], computed as S⁺ K_θ⁻¹ rhs.

    Args:
        gen: GeneratorState.
        w_seq: Perturbations, shape (T, m).
        x0: Initial state (n,).

    Returns:
        ndarray: g*, shape (L-T+1,).
    """
    m, n = gen.theta_snapshot.shape
    rhs = _rhs(w_seq, x0, m, n)
    return gen.basis.coefficient(solve_min_norm(gen, rhs))


def generate_trajectory_state(h, gen, x0, w_seq):
    """Generate the length-T closed-loop trajectory started at x0.

    Returns:
        Trajectory: (ũ(0..T-1), x̃(0..T-1)) with ``w_seq`` attached.
    """
    m, n = gen.theta_snapshot.shape
    v = solve_min_norm(gen, _rhs(w_seq, x0, m, n))
    span = gen.basis.span
    return Trajectory((span.h_u @ v).reshape(h.depth, h.m), (span.h_y @ v).reshape(h.depth, h.q), w_seq)


def generate_batch_state(h, theta, noise, batch, init_sampler, seed=0, episode=0, gen=None):
    """Generate Q trajectories for one gain.

    G_θ is built once; each trajectory draws x0 and w from its own stream keyed
    by (seed, episode, index), and the Q solves run as one matrix solve.
    No plant samples are consumed.

    Args:
        h: HankelMatrix with full-state outputs.
        theta: Gain (m, n).
        noise: Perturbation distribution with ``sample(rng, horizon, m)``.
        batch: Number of trajectories Q (>= 1).
        init_sampler: Callable ``rng -> x0``.
        seed: Base seed.
        episode: Episode index, part of the stream key.
        gen: Optional prebuilt GeneratorState for ``theta``.

    Returns:
        list[Trajectory]
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    if gen is None:
        gen = build_g_theta_state(h, theta)
    draws = [
        draw_condition(seed, episode, i, init_sampler, noise, h.depth, h.m)
        for i in range(batch)
    ]
    rhs = np.column_stack([_rhs(w, x0, h.m, h.q) for x0, w in draws])
    coords = solve_min_norm(gen, rhs)
    span = gen.basis.span
    u_all = (span.h_u @ coords).T.reshape(batch, h.depth, h.m)
    y_all = (span.h_y @ coords).T.reshape(batch, h.depth, h.q)
    return [Trajectory(u_all[i], y_all[i], draws[i][1]) for i in range(batch)]
