"""Ground-truth discrete-time LTI plant and its structural matrices.

Everything in this module reads (A, B, C). It exists to collect data and to
certify generated trajectories; the Hankel-based generators never import it
for anything but the shared ``Trajectory`` type and the rank helper.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

logger = logging.getLogger(__name__)


class UnobservableSystemError(ValueError):
    """Raised when (A, C) is not observable within the requested window."""


def numerical_rank(matrix, rtol=None):
    """Numerical rank from singular values.

    The threshold is ``max(shape) * eps * sigma_max`` unless ``rtol`` (relative
    to ``sigma_max``) is given.

    Args:
        matrix: 2-D array.
        rtol: Optional relative tolerance overriding the default.

    Returns:
        int: Number of singular values above the threshold.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0
    s = scipy.linalg.svdvals(matrix)
    if s[0] == 0.0:
        return 0
    if not rtol:
        rtol = max(matrix.shape) * np.finfo(float).eps
    return int(np.sum(s > rtol * s[0]))


def _frozen(array, shape_name):
    arr = np.array(array, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{shape_name} must be a 2-D matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """Plant x(k+1) = A x(k) + B u(k), y(k) = C x(k).

    Arrays are copied and made read-only, so instances can be shared across
    threads.
    """

    a_matrix: np.ndarray
    b_matrix: np.ndarray
    c_matrix: np.ndarray
    name: str = "plant"
    sampling_period: float = 1.0

    def __post_init__(self):
        a = _frozen(self.a_matrix, "A")
        b = _frozen(self.b_matrix, "B")
        c = _frozen(self.c_matrix, "C")
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"A must be square, got {a.shape}")
        if b.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {b.shape}")
        if c.shape[1] != n:
            raise ValueError(f"C must have {n} columns, got {c.shape}")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "c_matrix", c)
        # Raises when the observability rank never reaches n.
        compute_lag(self)

    @property
    def n(self):
        return self.a_matrix.shape[0]

    @property
    def m(self):
        return self.b_matrix.shape[1]

    @property
    def q(self):
        return self.c_matrix.shape[0]

    @property
    def full_state(self):
        """True when C is the n×n identity (state feedback)."""
        return self.q == self.n and np.array_equal(self.c_matrix, np.eye(self.n))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A length-T sequence of (u, y) pairs, stored as (T, m) and (T, q) arrays."""

    u_seq: np.ndarray
    y_seq: np.ndarray
    w_seq: np.ndarray = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u_seq, dtype=float))
        y = np.atleast_2d(np.asarray(self.y_seq, dtype=float))
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u_seq and y_seq lengths differ: {u.shape[0]} vs {y.shape[0]}")
        if u.shape[0] < 1:
            raise ValueError("trajectory must contain at least one step")
        object.__setattr__(self, "u_seq", u)
        object.__setattr__(self, "y_seq", y)
        if self.w_seq is not None:
            object.__setattr__(self, "w_seq", np.atleast_2d(np.asarray(self.w_seq, dtype=float)))

    @property
    def t_len(self):
        return self.u_seq.shape[0]

    @property
    def m(self):
        return self.u_seq.shape[1]

    @property
    def q(self):
        return self.y_seq.shape[1]


def _check_vector(vec, size, label):
    arr = np.asarray(vec, dtype=float).reshape(-1)
    if arr.shape[0] != size:
        raise ValueError(f"{label} must have length {size}, got {arr.shape[0]}")
    return arr


def step(sys, x, u):
    """Advance the plant one sample.

    Args:
        sys: The plant.
        x: Current state (n,).
        u: Applied input (m,).

    Returns:
        tuple: ``(x_next, y)`` where ``y = C x`` is the output of the current
        (pre-step) state.
    """
    x = _check_vector(x, sys.n, "x")
    u = _check_vector(u, sys.m, "u")
    return sys.a_matrix @ x + sys.b_matrix @ u, sys.c_matrix @ x


def rollout(sys, x0, theta, w_seq):
    """Closed-loop simulation under u(k) = θ y(k) + w(k).

    This is the oracle generated trajectories are checked against.

    Args:
        sys: The plant.
        x0: Initial state (n,).
        theta: Gain (m, q).
        w_seq: Perturbations, shape (T, m).

    Returns:
        Trajectory: The (u, y) sequence of length T, with ``w_seq`` attached.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (sys.m, sys.q):
        raise ValueError(f"theta must be {(sys.m, sys.q)}, got {theta.shape}")
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    if w_seq.shape[1] != sys.m:
        raise ValueError(f"w_seq must have {sys.m} columns, got {w_seq.shape}")
    x = _check_vector(x0, sys.n, "x0")
    horizon = w_seq.shape[0]
    u_seq = np.empty((horizon, sys.m))
    y_seq = np.empty((horizon, sys.q))
    for k in range(horizon):
        y = sys.c_matrix @ x
        u = theta @ y + w_seq[k]
        u_seq[k] = u
        y_seq[k] = y
        x = sys.a_matrix @ x + sys.b_matrix @ u
    return Trajectory(u_seq, y_seq, w_seq)


def open_loop(sys, x0, u_seq):
    """Simulate an open-loop input sequence.

    Returns:
        tuple: ``(y_seq, x_seq)`` with shapes (T, q) and (T + 1, n); ``x_seq``
        includes the final state.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    x = _check_vector(x0, sys.n, "x0")
    horizon = u_seq.shape[0] if u_seq.size else 0
    x_seq = np.empty((horizon + 1, sys.n))
    y_seq = np.empty((horizon, sys.q))
    x_seq[0] = x
    for k in range(horizon):
        y_seq[k] = sys.c_matrix @ x
        x = sys.a_matrix @ x + sys.b_matrix @ u_seq[k]
        x_seq[k + 1] = x
    return y_seq, x_seq


def observability_matrix(sys, order, c_matrix=None):
    """Stacked rows C, CA, ..., CA^{order-1}.

    Args:
        sys: The plant.
        order: Number of block rows (>= 1).
        c_matrix: Optional output map replacing ``sys.c_matrix`` (the state
            variant passes the identity).

    Returns:
        ndarray: Shape (order*q, n).
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    c = sys.c_matrix if c_matrix is None else np.asarray(c_matrix, dtype=float)
    blocks = []
    block = c
    for _ in range(order):
        blocks.append(block)
        block = block @ sys.a_matrix
    return np.vstack(blocks)


def compute_lag(sys, rtol=None):
    """Smallest window length whose observability matrix has rank n.

    Raises:
        UnobservableSystemError: If the rank is still below n at order n.
    """
    n = sys.a_matrix.shape[0]
    for order in range(1, n + 1):
        if numerical_rank(observability_matrix(sys, order), rtol) == n:
            return order
    raise UnobservableSystemError(f"(A, C) is not observable: rank stays below n={n} up to order {n}")


def toeplitz_matrix(sys, order, state=False):
    """Lower block-triangular impulse-response matrix of the given order.

    Block (i, j) is C A^{i-j-1} B for i > j and zero otherwise, so the first
    block row is zero. ``state=True`` uses C = I (state response).

    Returns:
        ndarray: Shape (order*q, order*m), or (order*n, order*m) for the state variant.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    c = np.eye(sys.n) if state else sys.c_matrix
    rows, m = c.shape[0], sys.m
    markov = []
    block = sys.b_matrix
    for _ in range(order - 1):
        markov.append(c @ block)
        block = sys.a_matrix @ block
    out = np.zeros((order * rows, order * m))
    for i in range(1, order):
        for j in range(i):
            out[i * rows:(i + 1) * rows, j * m:(j + 1) * m] = markov[i - j - 1]
    return out


def stacked_response(sys, x0, u_seq, state=False):
    """Return 𝒪 x0 + 𝒯 u for an open-loop input sequence, flattened time-major."""
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    order = u_seq.shape[0]
    c = np.eye(sys.n) if state else None
    obs = observability_matrix(sys, order, c_matrix=c)
    return obs @ _check_vector(x0, sys.n, "x0") + toeplitz_matrix(sys, order, state=state) @ u_seq.reshape(-1)


def _observability_pinv(sys, t0, rtol=None):
    obs = observability_matrix(sys, t0)
    if numerical_rank(obs, rtol) < sys.n:
        raise UnobservableSystemError(
            f"window t0={t0} is below the lag {compute_lag(sys, rtol)}: observability matrix is rank deficient"
        )
    # Least-squares factorization instead of forming (OᵀO)⁻¹.
    pinv, _, _, _ = scipy.linalg.lstsq(obs, np.eye(obs.shape[0]))
    return obs, pinv


def extended_transition_matrices(sys, t0, rtol=None):
    """Transition matrices of the extended state 𝒳(k).

    The extended state stacks y(k-t0+1..k) and u(k-t0+1..k-1); it evolves as
    𝒳(k+1) = Ã 𝒳(k) + B̃ u(k).

    Args:
        sys: The plant.
        t0: Window length, at least the lag.
        rtol: Optional rank tolerance.

    Returns:
        tuple: ``(a_tilde, b_tilde)`` of shapes (D, D) and (D, m) with
        D = t0*q + (t0-1)*m.

    Raises:
        UnobservableSystemError: If ``t0`` is below the lag.
    """
    n, m, q = sys.n, sys.m, sys.q
    _, obs_pinv = _observability_pinv(sys, t0, rtol)
    y_dim = t0 * q
    dim = y_dim + (t0 - 1) * m
    a_tilde = np.zeros((dim, dim))
    b_tilde = np.zeros((dim, m))

    # Shift blocks of the output window.
    for i in range(t0 - 1):
        a_tilde[i * q:(i + 1) * q, (i + 1) * q:(i + 2) * q] = np.eye(q)

    # Newest output: y(t0) = C A^{t0} x(0) + sum_j C A^{t0-1-j} B u(j).
    ca_t0 = sys.c_matrix @ np.linalg.matrix_power(sys.a_matrix, t0)
    state_map = ca_t0 @ obs_pinv
    toeplitz_past = toeplitz_matrix(sys, t0)[:, :(t0 - 1) * m]
    last_row = np.hstack([
        sys.c_matrix @ np.linalg.matrix_power(sys.a_matrix, t0 - 1 - j) @ sys.b_matrix
        for j in range(t0)
    ])
    row = slice((t0 - 1) * q, y_dim)
    a_tilde[row, :y_dim] = state_map
    if t0 > 1:
        a_tilde[row, y_dim:] = last_row[:, :(t0 - 1) * m] - state_map @ toeplitz_past
    b_tilde[row] = last_row[:, (t0 - 1) * m:]

    # Shift blocks of the input window; the newest input enters through B̃.
    for i in range(t0 - 2):
        r = y_dim + i * m
        a_tilde[r:r + m, r + m:r + 2 * m] = np.eye(m)
    if t0 > 1:
        b_tilde[dim - m:] = np.eye(m)
    logger.debug(f"Extended transition for t0={t0}: dimension {dim} (n={n}, m={m}, q={q})")
    return a_tilde, b_tilde


def state_from_extended(sys, chi, t0, rtol=None):
    """Reconstruct the plant state at the newest sample of an extended window.

    Args:
        sys: The plant.
        chi: Flattened extended state [y(0..t0-1); u(0..t0-2)].
        t0: Window length.

    Returns:
        ndarray: x(t0-1), shape (n,).
    """
    m, q = sys.m, sys.q
    chi = _check_vector(chi, t0 * q + (t0 - 1) * m, "chi")
    _, obs_pinv = _observability_pinv(sys, t0, rtol)
    y_window = chi[:t0 * q]
    u_window = chi[t0 * q:].reshape(t0 - 1, m) if t0 > 1 else np.zeros((0, m))
    toeplitz_past = toeplitz_matrix(sys, t0)[:, :(t0 - 1) * m]
    x = obs_pinv @ (y_window - toeplitz_past @ u_window.reshape(-1))
    for u in u_window:
        x = sys.a_matrix @ x + sys.b_matrix @ u
    return x


def random_system(n, m, q, rng, spectral_radius=1.05, max_tries=20):
    """Random observable test plant with A rescaled to the given spectral radius.

    Args:
        n, m, q: Dimensions.
        rng: ``numpy.random.Generator``.
        spectral_radius: Target max |eigenvalue| of A.
        max_tries: Redraws allowed for the measure-zero unobservable case.

    Returns:
        LtiSystem
    """
    for _ in range(max_tries):
        a = rng.standard_normal((n, n))
        radius = np.max(np.abs(np.linalg.eigvals(a)))
        a *= spectral_radius / radius
        b = rng.standard_normal((n, m))
        c = rng.standard_normal((q, n))
        try:
            return LtiSystem(a, b, c, name=f"random_{n}x{m}x{q}")
        except UnobservableSystemError:
            continue
    raise UnobservableSystemError(f"could not draw an observable ({n}, {m}, {q}) system")


def extended_state_map(sys, t0, rtol=None):
    """Matrix M with x(t0-1) = M 𝒳, the linear form of :func:`state_from_extended`."""
    dim = t0 * sys.q + (t0 - 1) * sys.m
    basis = np.eye(dim)
    return np.column_stack([state_from_extended(sys, basis[i], t0, rtol) for i in range(dim)])
