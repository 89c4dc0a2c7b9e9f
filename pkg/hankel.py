"""Historical excitation data and its block-Hankel stacking."""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from lti import numerical_rank, open_loop
from sample_counter import collection_seconds, sample_counter

logger = logging.getLogger(__name__)

INPUT = "input"
OUTPUT = "output"

DEFAULT_RANK_RETRIES = 5


class ExcitationError(RuntimeError):
    """Raised when collected data never reaches the required Hankel rank."""


@dataclass(frozen=True, eq=False)
class DataRecord:
    """A length-L input/output record, stored as (L, m) and (L, q) arrays."""

    u_d: np.ndarray
    y_d: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_d, dtype=float)
        y = np.asarray(self.y_d, dtype=float)
        if u.ndim != 2 or y.ndim != 2:
            raise ValueError(f"u_d and y_d must be 2-D, got {u.shape} and {y.shape}")
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"u_d and y_d lengths differ: {u.shape[0]} vs {y.shape[0]}")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "u_d", u)
        object.__setattr__(self, "y_d", y)

    @property
    def sample_count(self):
        return self.u_d.shape[0]

    @property
    def m(self):
        return self.u_d.shape[1]

    @property
    def q(self):
        return self.y_d.shape[1]


@dataclass(frozen=True, eq=False)
class HankelMatrix:
    """Depth-T block-Hankel matrices of a record.

    ``h_u`` has shape (T*m, L-T+1) and ``h_y`` shape (T*q, L-T+1); block row
    k, column j holds sample k + j.
    """

    h_u: np.ndarray
    h_y: np.ndarray
    depth: int
    n_hint: int = 0

    @property
    def m(self):
        return self.h_u.shape[0] // self.depth

    @property
    def q(self):
        return self.h_y.shape[0] // self.depth

    @property
    def columns(self):
        return self.h_u.shape[1]

    @property
    def dims(self):
        return self.n_hint, self.m, self.q

    def stacked(self):
        """Return [h_u; h_y]."""
        return np.vstack([self.h_u, self.h_y])

    @cached_property
    def basis(self):
        """Column-space basis at the default rank tolerance, computed once."""
        return hankel_basis(self)


@dataclass(frozen=True, eq=False)
class HankelBasis:
    """Factorization 𝓗 = U S with orthonormal U and full-row-rank S.

    ``span`` holds U in the block layout of 𝓗 (r columns, r = numerical rank),
    so :func:`block_rows` slices it like the Hankel matrix itself. ``coords``
    is S, shape (r, L-T+1). Every column of 𝓗 is ``span`` times a column of
    ``coords``, so a trajectory is fixed by its r coordinates.
    """

    span: HankelMatrix
    coords: np.ndarray

    @property
    def rank(self):
        return self.coords.shape[0]

    def coefficient(self, coords):
        """Minimum-norm g with S g = coords, for one (r,) or many (r, Q) columns."""
        return scipy.linalg.lstsq(self.coords, coords)[0]


def min_data_length(n, m, t):
    """Shortest record whose depth-t Hankel matrix can reach rank n + t*m."""
    if min(n, m, t) < 1:
        raise ValueError(f"n, m, t must be >= 1, got {(n, m, t)}")
    return (m + 1) * t - 1 + n


def collect_excitation_data(sys, x0=None, input_scale=1.0, length=0, rng_seed=None, counter=None):
    """Excite the plant open-loop with i.i.d. uniform inputs and record (u, y).

    Args:
        sys: The plant (read only here, on the data-collection side).
        x0: Initial state; defaults to a random unit-norm vector.
        input_scale: Inputs are uniform in [-input_scale, input_scale].
        length: Number of samples L.
        rng_seed: Seed (int or sequence) for reproducible collection.
        counter: ``SampleCounter`` charged with L physical samples; the global
            singleton when omitted.

    Returns:
        DataRecord
    """
    rng = np.random.default_rng(rng_seed)
    if x0 is None:
        x0 = rng.standard_normal(sys.n)
        x0 /= np.linalg.norm(x0)
    u_d = rng.uniform(-input_scale, input_scale, size=(length, sys.m))
    if length:
        y_d, _ = open_loop(sys, x0, u_d)
    else:
        y_d = np.zeros((0, sys.q))
    (counter or sample_counter).add_physical(length)
    logger.info(
        f"Collected {length} samples from {sys.name} "
        f"({collection_seconds(length, sys.sampling_period):.1f}s at {sys.sampling_period}s/sample)"
    )
    return DataRecord(u_d, y_d)


def build_hankel(data, depth, n_hint=0):
    """Stack a record into depth-T block-Hankel matrices.

    Args:
        data: DataRecord of length L.
        depth: Hankel depth T (1 <= T <= L).
        n_hint: Declared state dimension, kept for rank checks.

    Returns:
        HankelMatrix

    Raises:
        ValueError: If the record is shorter than ``depth``.
    """
    length = data.sample_count
    if depth < 1 or length < depth:
        raise ValueError(f"record of length {length} is too short for Hankel depth {depth}")
    cols = length - depth + 1

    def _stack(signal):
        width = signal.shape[1]
        out = np.empty((depth * width, cols))
        for k in range(depth):
            out[k * width:(k + 1) * width] = signal[k:k + cols].T
        out.setflags(write=False)
        return out

    return HankelMatrix(_stack(data.u_d), _stack(data.y_d), depth, n_hint)


def hankel_basis(h, rtol=None):
    """Orthonormal basis of the column space of [h_u; h_y].

    Householder QR with column pivoting. The rank is the SVD rank used by
    :func:`rank_certificate`.

    Returns:
        HankelBasis
    """
    stacked = h.stacked()
    rank = numerical_rank(stacked, rtol)
    q_factor, r_factor, perm = scipy.linalg.qr(stacked, mode="economic", pivoting=True)
    coords = np.empty((rank, h.columns))
    coords[:, perm] = r_factor[:rank]
    span = q_factor[:, :rank]
    rows_u = h.depth * h.m
    logger.debug(f"Hankel basis: rank {rank} of {stacked.shape}")
    return HankelBasis(HankelMatrix(span[:rows_u], span[rows_u:], h.depth, h.n_hint), coords)


def rank_certificate(h, n, rtol=None):
    """Check the persistency-of-excitation rank condition rank([h_u; h_y]) = n + T*m.

    Args:
        h: HankelMatrix.
        n: State dimension.
        rtol: Optional relative rank tolerance.

    Returns:
        tuple: ``(ok, numerical_rank, sub_rank)`` where ``sub_rank`` is the
        rank of [h_u; first output block row] (the input/initial-state matrix
        when the output is the full state) or ``None`` when q != n.
    """
    rank = numerical_rank(h.stacked(), rtol)
    sub_rank = None
    if h.q == n:
        sub_rank = numerical_rank(np.vstack([h.h_u, h.h_y[:h.q]]), rtol)
    return rank == n + h.depth * h.m, rank, sub_rank


def block_rows(h, channel, k1, k2):
    """Rows of block indices k1..k2 (inclusive) of one channel.

    Args:
        h: HankelMatrix.
        channel: ``"input"`` or ``"output"``.
        k1, k2: Block indices with 0 <= k1 <= k2 <= T-1.

    Returns:
        ndarray: Shape ((k2-k1+1)*width, L-T+1).
    """
    if not 0 <= k1 <= k2 <= h.depth - 1:
        raise ValueError(f"block range {k1}..{k2} outside 0..{h.depth - 1}")
    if channel == INPUT:
        matrix, width = h.h_u, h.m
    elif channel == OUTPUT:
        matrix, width = h.h_y, h.q
    else:
        raise ValueError(f"unknown channel {channel!r}")
    return matrix[k1 * width:(k2 + 1) * width]


def collect_certified_data(sys, depth, length=None, input_scale=1.0, seed=0,
                           retries=DEFAULT_RANK_RETRIES, rtol=None, counter=None):
    """Collect data until the depth-T Hankel matrix passes the rank certificate.

    Each attempt uses the seed sequence ``(seed, attempt)``. Every attempt
    is charged to the counter, since each one runs on the plant.

    Args:
        sys: The plant.
        depth: Hankel depth T.
        length: Record length; defaults to ``min_data_length(n, m, T)``.
        input_scale: Excitation amplitude.
        seed: Base seed.
        retries: Attempts allowed after the first.
        rtol: Optional rank tolerance.
        counter: Sample counter.

    Returns:
        tuple: ``(DataRecord, HankelMatrix)``.

    Raises:
        ExcitationError: If no attempt reaches rank n + T*m.
    """
    if length is None:
        length = min_data_length(sys.n, sys.m, depth)
    rank = 0
    for attempt in range(retries + 1):
        data = collect_excitation_data(sys, input_scale=input_scale, length=length,
                                       rng_seed=[seed, attempt], counter=counter)
        h = build_hankel(data, depth, n_hint=sys.n)
        ok, rank, _ = rank_certificate(h, sys.n, rtol)
        if ok:
            logger.info(f"Hankel depth {depth}: rank {rank} = n + T*m certified (attempt {attempt + 1})")
            return data, h
        logger.warning(
            f"Hankel depth {depth}: rank {rank} < {sys.n + depth * sys.m} on attempt {attempt + 1}, re-collecting"
        )
    raise ExcitationError(
        f"rank certificate failed after {retries + 1} attempts (last rank {rank}, "
        f"need {sys.n + depth * sys.m})"
    )


def historic_states(data):
    """Recorded outputs y_d(0..L-1), the initial-state set for state feedback."""
    return np.array(data.y_d)


def historic_windows(data, t0):
    """All extended windows [y(j..j+t0-1); u(j..j+t0-2)] of the record.

    Returns:
        ndarray: Shape (L-t0+1, t0*q + (t0-1)*m), one flattened window per row.
    """
    length = data.sample_count
    if length < t0:
        return np.zeros((0, t0 * data.q + (t0 - 1) * data.m))
    count = length - t0 + 1
    rows = []
    for j in range(count):
        y_part = data.y_d[j:j + t0].reshape(-1)
        u_part = data.u_d[j:j + t0 - 1].reshape(-1)
        rows.append(np.concatenate([y_part, u_part]))
    return np.array(rows)
