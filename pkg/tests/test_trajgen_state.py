import numpy as np
import pytest
import scipy.linalg

from hankel import build_hankel, collect_certified_data, collect_excitation_data, historic_states
from lti import rollout
from sample_counter import SampleCounter
from sampling import GaussianPerturbation, draw_condition, make_sampler
from trajgen_state import (
    RankDeficiencyError,
    build_g_theta_state,
    generate_batch_state,
    generate_trajectory_state,
    min_norm_coefficient,
)


def _rel_err(traj, ref):
    diff = np.concatenate([(traj.u_seq - ref.u_seq).ravel(), (traj.y_seq - ref.y_seq).ravel()])
    scale = np.linalg.norm(np.concatenate([ref.u_seq.ravel(), ref.y_seq.ravel()]))
    return np.linalg.norm(diff) / scale


def test_generated_trajectories_match_plant_rollouts(reactor, reactor_data):
    data, h = reactor_data
    sampler = make_sampler("historic_unit", historic_states(data))
    noise = GaussianPerturbation(0.5)
    rng = np.random.default_rng(100)
    worst = 0.0
    for i in range(50):
        theta = 0.1 * rng.standard_normal((2, 4))
        gen = build_g_theta_state(h, theta)
        x0, w = draw_condition(0, 0, i, sampler, noise, 30, 2)
        generated = generate_trajectory_state(h, gen, x0, w)
        worst = max(worst, _rel_err(generated, rollout(reactor, x0, theta, w)))
    assert worst <= 1e-6


def test_g_theta_has_full_row_rank_for_random_gains(reactor_data):
    _, h = reactor_data
    rng = np.random.default_rng(5)
    for _ in range(20):
        gen = build_g_theta_state(h, rng.standard_normal((2, 4)))
        assert gen.rank == 4 + 30 * 2
        assert gen.full_row_rank


def test_null_spaces_of_hankel_and_g_theta_coincide(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    null_h = scipy.linalg.null_space(h.stacked())
    rng = np.random.default_rng(9)
    for _ in range(20):
        gen = build_g_theta_state(h, rng.standard_normal((2, 3)))
        null_g = scipy.linalg.null_space(gen.g_theta)
        assert null_g.shape == null_h.shape
        assert np.linalg.norm(null_g - null_h @ (null_h.T @ null_g)) <= 1e-8
        assert np.linalg.norm(null_h - null_g @ (null_g.T @ null_h)) <= 1e-8


def test_min_norm_coefficient_matches_pseudo_inverse(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    rng = np.random.default_rng(1)
    theta = 0.2 * rng.standard_normal((2, 3))
    gen = build_g_theta_state(h, theta)
    w = rng.standard_normal((8, 2))
    x0 = rng.standard_normal(3)
    g = min_norm_coefficient(gen, w, x0)
    expected = np.linalg.pinv(gen.g_theta) @ np.concatenate([w.ravel(), x0])
    np.testing.assert_allclose(g, expected, rtol=1e-7, atol=1e-9)


def test_min_norm_solution_is_unique_trajectory(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    rng = np.random.default_rng(3)
    theta = 0.2 * rng.standard_normal((2, 3))
    gen = build_g_theta_state(h, theta)
    x0 = rng.standard_normal(3)
    w = rng.standard_normal((8, 2))
    generated = generate_trajectory_state(h, gen, x0, w)
    assert generated.u_seq.shape == (8, 2)
    assert generated.y_seq.shape == (8, 3)
    assert _rel_err(generated, rollout(stable_system, x0, theta, w)) <= 1e-8


def test_zero_gain_zero_noise_reproduces_open_loop_free_response(reactor, reactor_data):
    _, h = reactor_data
    gen = build_g_theta_state(h, np.zeros((2, 4)))
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    generated = generate_trajectory_state(h, gen, x0, np.zeros((30, 2)))
    expected = rollout(reactor, x0, np.zeros((2, 4)), np.zeros((30, 2)))
    assert _rel_err(generated, expected) <= 1e-6


def test_rank_deficient_hankel_raises(reactor):
    data = collect_excitation_data(reactor, length=80, rng_seed=1, counter=SampleCounter())
    h = build_hankel(data, 30, n_hint=4)
    gen = build_g_theta_state(h, np.zeros((2, 4)))
    assert not gen.full_row_rank
    with pytest.raises(RankDeficiencyError, match="rank"):
        min_norm_coefficient(gen, np.zeros((30, 2)), np.ones(4))


def test_theta_shape_is_checked(reactor_data):
    _, h = reactor_data
    with pytest.raises(ValueError):
        build_g_theta_state(h, np.zeros((4, 2)))


def test_batch_generation_matches_single_solves(reactor_data):
    data, h = reactor_data
    sampler = make_sampler("historic_unit", historic_states(data))
    noise = GaussianPerturbation(0.3)
    theta = np.full((2, 4), 0.05)
    gen = build_g_theta_state(h, theta)
    batch = generate_batch_state(h, theta, noise, 6, sampler, seed=4, episode=2, gen=gen)
    assert len(batch) == 6
    for i, traj in enumerate(batch):
        x0, w = draw_condition(4, 2, i, sampler, noise, 30, 2)
        single = generate_trajectory_state(h, gen, x0, w)
        assert _rel_err(traj, single) <= 1e-7
        np.testing.assert_array_equal(traj.w_seq, w)


def test_box_sampler_draws_inside_box(reactor_data):
    data, _ = reactor_data
    sampler = make_sampler("box", historic_states(data), scale=0.5)
    x0 = sampler(np.random.default_rng(0))
    assert x0.shape == (4,)
    assert np.all(np.abs(x0) <= 0.5)


def test_batch_must_be_positive(reactor_data):
    data, h = reactor_data
    sampler = make_sampler("historic", historic_states(data))
    with pytest.raises(ValueError):
        generate_batch_state(h, np.zeros((2, 4)), GaussianPerturbation(0.1), 0, sampler)


def test_certified_collection_charges_every_attempt(reactor):
    counter = SampleCounter()
    collect_certified_data(reactor, 30, seed=1, counter=counter)
    assert counter.physical % 93 == 0


def test_recorded_states_as_drawn_match_plant_rollouts(reactor, reactor_data):
    data, h = reactor_data
    sampler = make_sampler("historic", historic_states(data))
    assert np.max(np.abs(sampler.pool)) > 1e6
    noise = GaussianPerturbation(0.5)
    rng = np.random.default_rng(100)
    worst = 0.0
    for i in range(50):
        theta = 0.1 * rng.standard_normal((2, 4))
        gen = build_g_theta_state(h, theta)
        x0, w = draw_condition(0, 0, i, sampler, noise, 30, 2)
        worst = max(worst, _rel_err(generate_trajectory_state(h, gen, x0, w), rollout(reactor, x0, theta, w)))
    assert worst <= 1e-6


def test_reactor_null_space_is_the_hankel_null_space(reactor):
    _, h = collect_certified_data(reactor, 30, length=120, seed=2, counter=SampleCounter())
    null_h = scipy.linalg.null_space(h.stacked())
    assert null_h.shape[1] == h.columns - (4 + 30 * 2)
    rng = np.random.default_rng(6)
    for _ in range(20):
        gen = build_g_theta_state(h, rng.standard_normal((2, 4)))
        assert gen.rank == 4 + 30 * 2
        assert np.linalg.norm(gen.g_theta @ null_h, 2) <= 1e-8 * np.linalg.norm(gen.g_theta, 2)


def test_null_space_shift_leaves_trajectory_unchanged(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    rng = np.random.default_rng(7)
    gen = build_g_theta_state(h, 0.2 * rng.standard_normal((2, 3)))
    w = rng.standard_normal((8, 2))
    x0 = rng.standard_normal(3)
    g = min_norm_coefficient(gen, w, x0)
    null_h = scipy.linalg.null_space(h.stacked())
    assert np.linalg.norm(null_h.T @ g) <= 1e-8 * np.linalg.norm(g)
    stacked = h.stacked()
    base = stacked @ g
    for _ in range(5):
        shifted = g + null_h @ rng.standard_normal(null_h.shape[1])
        assert np.linalg.norm(stacked @ shifted - base) <= 1e-8 * np.linalg.norm(base)


def test_zero_rhs_gives_zero_coefficient(reactor_data):
    _, h = reactor_data
    gen = build_g_theta_state(h, np.full((2, 4), 0.1))
    g = min_norm_coefficient(gen, np.zeros((30, 2)), np.zeros(4))
    assert not np.any(g)
