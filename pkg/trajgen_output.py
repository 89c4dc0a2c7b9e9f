"""Output-feedback trajectory generation over extended states.

With only y = C x measured, the initial condition is the extended state
𝒳(T0-1) = [y(0..T0-1); u(0..T0-2)]. G_θ may then lose row rank, so g* is
computed from the nonzero eigenpairs only. As for state feedback, the solve
runs on the reduction K_θ of G_θ onto the Hankel basis (G_θ = K_θ S); K_θ and
G_θ share their column space, so the projector P_θ P_θᵀ and the feasibility
test are the same for both.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from hankel import INPUT, OUTPUT, block_rows
from lti import Trajectory
from sampling import draw_condition
from trajgen_state import feedback_residual_rows

logger = logging.getLogger(__name__)

FEASIBILITY_RTOL = 1e-6


class InfeasibleInitialStateError(ValueError):
    """Raised when the right-hand side lies outside the range of G_θ."""


@dataclass(frozen=True, eq=False)
class ExtendedState:
    """Window of T0 outputs and T0-1 inputs ending at the current sample."""

    y_window: np.ndarray
    u_window: np.ndarray

    @property
    def t0(self):
        return self.y_window.shape[0]

    @property
    def dim(self):
        return self.y_window.size + self.u_window.size

    def flat(self):
        """[y(k-T0); ...; y(k-1); u(k-T0); ...; u(k-2)] as one vector."""
        return np.concatenate([self.y_window.reshape(-1), self.u_window.reshape(-1)])

    @classmethod
    def from_flat(cls, vec, t0, m, q):
        vec = np.asarray(vec, dtype=float).reshape(-1)
        expected = t0 * q + (t0 - 1) * m
        if vec.shape[0] != expected:
            raise ValueError(f"extended state for t0={t0}, m={m}, q={q} has length {expected}, got {vec.shape[0]}")
        return cls(vec[:t0 * q].reshape(t0, q), vec[t0 * q:].reshape(t0 - 1, m))


def extended_state_from_window(y_window, u_window):
    """Build an ExtendedState from T0 outputs and T0-1 inputs.

    Raises:
        ValueError: If the window lengths do not differ by exactly one.
    """
    y_window = np.atleast_2d(np.asarray(y_window, dtype=float))
    u_window = np.asarray(u_window, dtype=float)
    t0 = y_window.shape[0]
    if u_window.size == 0:
        u_window = u_window.reshape(0, u_window.shape[-1] if u_window.ndim == 2 else 0)
    else:
        u_window = np.atleast_2d(u_window)
    if t0 < 1 or u_window.shape[0] != t0 - 1:
        raise ValueError(f"need T0 outputs and T0-1 inputs, got {t0} and {u_window.shape[0]}")
    return ExtendedState(y_window, u_window)


@dataclass(frozen=True, eq=False)
class OutputGeneratorState:
    """G_θ with the retained eigenpairs of its reduction K_θ K_θᵀ.

    ``eigvecs`` holds P_θ (one column per retained eigenvalue) and ``eigvals``
    the eigenvalues λ_i > 0. ``right_vecs`` and ``singular_values`` are the
    matching SVD factors, with K_θᵀ P_θ = right_vecs · diag(singular_values).
    """

    g_theta: np.ndarray
    reduced: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    singular_values: np.ndarray
    right_vecs: np.ndarray
    basis: object
    t0: int
    t: int
    theta_snapshot: np.ndarray

    @property
    def rank(self):
        return self.eigvals.shape[0]


def default_eig_rtol(shape):
    """Eigenvalue cutoff matching the singular-value rank tolerance, squared."""
    return (max(shape) * np.finfo(float).eps) ** 2


def _output_rows(h, theta, t0):
    depth = h.depth
    future_u = block_rows(h, INPUT, t0 - 1, depth - 1)
    future_y = block_rows(h, OUTPUT, t0 - 1, depth - 1)
    groups = [
        feedback_residual_rows(future_u, future_y, theta, depth - t0 + 1),
        block_rows(h, OUTPUT, 0, t0 - 1),
    ]
    if t0 > 1:
        groups.append(block_rows(h, INPUT, 0, t0 - 2))
    return np.vstack(groups)


def build_g_theta_output(h, theta, t0, eig_rtol=None, basis=None):
    """Stack G_θ for output feedback and eigendecompose its reduction.

    Row groups: 𝓗_u^{T0-1:T-1} - blockdiag(θ) 𝓗_y^{T0-1:T-1} with T-T0+1
    diagonal blocks, then 𝓗_y^{0:T0-1}, then 𝓗_u^{0:T0-2}.

    Args:
        h: HankelMatrix of depth T.
        theta: Gain (m, q).
        t0: Extended-state window length, 1 <= t0 < T.
        eig_rtol: Keep eigenvalues λ >= eig_rtol * λ_max; defaults to
            :func:`default_eig_rtol`.
        basis: HankelBasis of ``h``; ``h.basis`` when omitted.

    Returns:
        OutputGeneratorState
    """
    depth = h.depth
    if not 1 <= t0 < depth:
        raise ValueError(f"t0 must satisfy 1 <= t0 < T={depth}, got {t0}")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (h.m, h.q):
        raise ValueError(f"theta must be {(h.m, h.q)}, got {theta.shape}")
    if basis is None:
        basis = h.basis
    g_theta = _output_rows(h, theta, t0)
    reduced = _output_rows(basis.span, theta, t0)

    # SVD of K_θ gives the eigenpairs of K_θ K_θᵀ without squaring the condition number.
    left, svals, right_t = scipy.linalg.svd(reduced, full_matrices=False)
    eigvals = svals ** 2
    if eig_rtol is None or eig_rtol <= 0:
        eig_rtol = default_eig_rtol(reduced.shape)
    keep = eigvals >= eig_rtol * eigvals[0] if eigvals.size and eigvals[0] > 0 else np.zeros(eigvals.shape, bool)
    theta_snapshot = theta.copy()
    theta_snapshot.setflags(write=False)
    logger.debug(f"Built output G_theta {g_theta.shape}, retained {int(keep.sum())} eigenpairs")
    return OutputGeneratorState(
        g_theta=g_theta,
        reduced=reduced,
        eigvals=eigvals[keep],
        eigvecs=left[:, keep],
        singular_values=svals[keep],
        right_vecs=right_t[keep].T,
        basis=basis,
        t0=t0,
        t=depth,
        theta_snapshot=theta_snapshot,
    )


def _as_flat_chi(chi0):
    if isinstance(chi0, ExtendedState):
        return chi0.flat()
    return np.asarray(chi0, dtype=float).reshape(-1)


def output_rhs(gen, w_seq, chi0):
    """R = [w(T0-1); ...; w(T-1); 𝒳(T0-1)]."""
    m, q = gen.theta_snapshot.shape
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    steps = gen.t - gen.t0 + 1
    if w_seq.shape != (steps, m):
        raise ValueError(f"w_seq must have shape {(steps, m)}, got {w_seq.shape}")
    chi = _as_flat_chi(chi0)
    expected = gen.t0 * q + (gen.t0 - 1) * m
    if chi.shape[0] != expected:
        raise ValueError(f"extended state must have length {expected}, got {chi.shape[0]}")
    return np.concatenate([w_seq.reshape(-1), chi])


def solve_eig(gen, rhs, rtol=FEASIBILITY_RTOL):
    """Basis coordinates v = K_θᵀ P_θ Λ⁻¹ P_θᵀ R for one (rows,) or many (rows, Q) right-hand sides.

    G_θ g* = K_θ v, so the residual is checked on K_θ.

    Raises:
        InfeasibleInitialStateError: If ‖K_θ v - R‖ > rtol ‖R‖ for any column.
    """
    rhs = np.asarray(rhs, dtype=float)
    # K_θᵀ P_θ Λ⁻¹ = V Σ Σ⁻² = V Σ⁻¹
    v = gen.right_vecs @ ((gen.eigvecs.T @ rhs) / _column(gen.singular_values, rhs))
    residual = np.linalg.norm(gen.reduced @ v - rhs, axis=0)
    scale = np.linalg.norm(rhs, axis=0)
    bad = residual > rtol * np.maximum(scale, np.finfo(float).tiny)
    bad &= residual > 0
    if np.any(bad):
        worst = float(np.max(residual / np.maximum(scale, np.finfo(float).tiny)))
        raise InfeasibleInitialStateError(
            f"RHS outside range of G_theta (relative residual {worst:.3e}); "
            f"the extended initial state is not a reachable window of the plant"
        )
    return v


def _column(values, rhs):
    return values if rhs.ndim == 1 else values[:, None]


def eig_solve_coefficient(gen, w_seq, chi0, rtol=FEASIBILITY_RTOL):
    """Coefficient g* = G_θᵀ P_θ Λ⁻¹ P_θᵀ R for one extended initial state.

    Computed as S⁺ v, which is G_θ⁺ R since S has full row rank and K_θ keeps
    the rank of G_θ.

    Args:
        gen: OutputGeneratorState.
        w_seq: Perturbations w(T0-1..T-1), shape (T-T0+1, m).
        chi0: ExtendedState or flat vector for 𝒳(T0-1).
        rtol: Relative residual accepted before the RHS is declared infeasible.

    Returns:
        ndarray: g*, shape (L-T+1,).
    """
    return gen.basis.coefficient(solve_eig(gen, output_rhs(gen, w_seq, chi0), rtol))


def _window(gen, v):
    span = gen.basis.span
    u = block_rows(span, INPUT, gen.t0 - 1, gen.t - 1) @ v
    y = block_rows(span, OUTPUT, gen.t0 - 1, gen.t - 1) @ v
    return u, y


def generate_trajectory_output(h, gen, chi0, w_seq):
    """Generate the training window u, y over steps T0-1..T-1.

    Returns:
        Trajectory: Length T-T0+1, with ``w_seq`` attached.
    """
    v = solve_eig(gen, output_rhs(gen, w_seq, chi0))
    u, y = _window(gen, v)
    steps = h.depth - gen.t0 + 1
    return Trajectory(u.reshape(steps, h.m), y.reshape(steps, h.q), w_seq)


def generate_batch_output(h, theta, noise, batch, chi_sampler, t0, seed=0, episode=0, gen=None):
    """Generate Q output-feedback trajectories for one gain.

    Each trajectory draws 𝒳(T0-1) from ``chi_sampler`` and then its
    perturbations from the stream keyed by (seed, episode, index). No plant
    samples are consumed.

    Returns:
        list[Trajectory]: Each of length K = T-T0+1.
    """
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    if gen is None:
        gen = build_g_theta_output(h, theta, t0)
    steps = h.depth - t0 + 1
    draws = [
        draw_condition(seed, episode, i, chi_sampler, noise, steps, h.m)
        for i in range(batch)
    ]
    rhs = np.column_stack([output_rhs(gen, w, chi) for chi, w in draws])
    coords = solve_eig(gen, rhs)
    u_all, y_all = _window(gen, coords)
    u_all = u_all.T.reshape(batch, steps, h.m)
    y_all = y_all.T.reshape(batch, steps, h.q)
    return [Trajectory(u_all[i], y_all[i], draws[i][1]) for i in range(batch)]
