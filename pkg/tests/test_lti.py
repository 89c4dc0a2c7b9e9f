import numpy as np
import pytest

from lti import (
    LtiSystem,
    Trajectory,
    UnobservableSystemError,
    compute_lag,
    extended_state_map,
    extended_transition_matrices,
    numerical_rank,
    observability_matrix,
    open_loop,
    random_system,
    rollout,
    stacked_response,
    state_from_extended,
    step,
    toeplitz_matrix,
)


def _windows(y_seq, u_seq, t0, k):
    """Flattened extended state ending at sample k."""
    y_part = y_seq[k - t0 + 1:k + 1].reshape(-1)
    u_part = u_seq[k - t0 + 1:k].reshape(-1)
    return np.concatenate([y_part, u_part])


def test_step_returns_next_state_and_current_output():
    sys = LtiSystem(np.array([[0.5, 1.0], [0.0, 0.5]]), np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]]))
    x_next, y = step(sys, np.array([1.0, 2.0]), np.array([3.0]))
    np.testing.assert_allclose(x_next, [2.5, 4.0])
    np.testing.assert_allclose(y, [1.0])


def test_step_rejects_wrong_dimensions(reactor):
    with pytest.raises(ValueError):
        step(reactor, np.zeros(3), np.zeros(2))


def test_rollout_from_rest_without_perturbation_stays_at_zero(reactor):
    traj = rollout(reactor, np.zeros(4), np.ones((2, 4)), np.zeros((10, 2)))
    assert traj.t_len == 10
    assert not traj.u_seq.any()
    assert not traj.y_seq.any()


def test_open_loop_rollout_matches_stacked_response(reactor_partial, rng):
    x0 = rng.standard_normal(4)
    u_seq = rng.standard_normal((8, 2))
    traj = rollout(reactor_partial, x0, np.zeros((2, 2)), u_seq)
    np.testing.assert_allclose(traj.y_seq.reshape(-1), stacked_response(reactor_partial, x0, u_seq), rtol=1e-12)
    y_seq, x_seq = open_loop(reactor_partial, x0, u_seq)
    np.testing.assert_allclose(y_seq, traj.y_seq)
    assert x_seq.shape == (9, 4)


def test_rollout_applies_feedback_on_outputs(reactor_partial, rng):
    theta = 0.1 * rng.standard_normal((2, 2))
    w_seq = rng.standard_normal((5, 2))
    traj = rollout(reactor_partial, rng.standard_normal(4), theta, w_seq)
    np.testing.assert_allclose(traj.u_seq, traj.y_seq @ theta.T + w_seq, atol=1e-12)


def test_toeplitz_first_block_row_is_zero(reactor):
    t = toeplitz_matrix(reactor, 3)
    assert t.shape == (12, 6)
    assert not t[:4].any()
    np.testing.assert_allclose(t[4:8, 0:2], reactor.b_matrix)
    np.testing.assert_allclose(t[8:12, 0:2], reactor.a_matrix @ reactor.b_matrix)


def test_lags_of_reactor_variants(reactor, reactor_partial):
    assert compute_lag(reactor) == 1
    assert compute_lag(reactor_partial) == 2


def test_unobservable_pair_is_rejected():
    with pytest.raises(UnobservableSystemError):
        LtiSystem(np.eye(2), np.eye(2), np.array([[1.0, 0.0]]))


def test_dimension_mismatch_is_rejected():
    with pytest.raises(ValueError):
        LtiSystem(np.eye(2), np.ones((3, 1)), np.eye(2))


def test_system_matrices_are_read_only(reactor):
    with pytest.raises(ValueError):
        reactor.a_matrix[0, 0] = 0.0


def test_trajectory_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 1)), np.zeros((4, 2)))


def test_numerical_rank():
    assert numerical_rank(np.zeros((3, 3))) == 0
    assert numerical_rank(np.diag([1.0, 1e-3, 0.0])) == 2
    assert numerical_rank(np.diag([1.0, 1e-3, 0.0]), rtol=1e-2) == 1


def test_extended_transition_reduces_to_plant_for_full_state(reactor):
    a_tilde, b_tilde = extended_transition_matrices(reactor, 1)
    np.testing.assert_allclose(a_tilde, reactor.a_matrix, atol=1e-12)
    np.testing.assert_allclose(b_tilde, reactor.b_matrix, atol=1e-12)


def test_extended_transition_below_lag_raises(reactor_partial):
    with pytest.raises(UnobservableSystemError):
        extended_transition_matrices(reactor_partial, 1)


def test_extended_state_evolves_as_markov_chain():
    rng = np.random.default_rng(7)
    for trial in range(20):
        sys = random_system(4, 2, 2, rng)
        t0 = compute_lag(sys)
        a_tilde, b_tilde = extended_transition_matrices(sys, t0)
        u_seq = rng.standard_normal((t0 + 10, 2))
        y_seq, _ = open_loop(sys, rng.standard_normal(4), u_seq)
        for k in range(t0 - 1, t0 + 9):
            chi = _windows(y_seq, u_seq, t0, k)
            predicted = a_tilde @ chi + b_tilde @ u_seq[k]
            actual = _windows(y_seq, u_seq, t0, k + 1)
            scale = max(np.linalg.norm(actual), 1.0)
            assert np.linalg.norm(predicted - actual) <= 1e-8 * scale, f"system {trial}, step {k}"


def test_state_from_extended_recovers_window_end_state(reactor_partial, rng):
    u_seq = rng.standard_normal((4, 2))
    y_seq, x_seq = open_loop(reactor_partial, rng.standard_normal(4), u_seq)
    for t0 in (2, 3):
        chi = _windows(y_seq, u_seq, t0, t0 - 1)
        np.testing.assert_allclose(state_from_extended(reactor_partial, chi, t0), x_seq[t0 - 1], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(extended_state_map(reactor_partial, t0) @ chi, x_seq[t0 - 1], rtol=1e-8, atol=1e-10)


def test_observability_matrix_shape(reactor_partial):
    assert observability_matrix(reactor_partial, 3).shape == (6, 4)
    with pytest.raises(ValueError):
        observability_matrix(reactor_partial, 0)


def test_random_system_has_requested_spectral_radius():
    sys = random_system(5, 2, 3, np.random.default_rng(0), spectral_radius=0.8)
    assert (sys.n, sys.m, sys.q) == (5, 2, 3)
    assert np.max(np.abs(np.linalg.eigvals(sys.a_matrix))) == pytest.approx(0.8)
