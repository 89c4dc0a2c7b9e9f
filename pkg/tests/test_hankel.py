import numpy as np
import pytest

from hankel import (
    INPUT,
    OUTPUT,
    DataRecord,
    ExcitationError,
    block_rows,
    build_hankel,
    collect_certified_data,
    collect_excitation_data,
    historic_states,
    hankel_basis,
    historic_windows,
    min_data_length,
    rank_certificate,
)
from sample_counter import SampleCounter, collection_seconds


def _record(length, m=1, q=1):
    u = np.arange(1, length * m + 1, dtype=float).reshape(length, m)
    y = -np.arange(1, length * q + 1, dtype=float).reshape(length, q)
    return DataRecord(u, y)


def test_build_hankel_stacks_shifted_windows():
    h = build_hankel(_record(4), 2)
    np.testing.assert_array_equal(h.h_u, [[1, 2, 3], [2, 3, 4]])
    np.testing.assert_array_equal(h.h_y, [[-1, -2, -3], [-2, -3, -4]])
    assert h.columns == 3
    assert (h.m, h.q) == (1, 1)


def test_build_hankel_depth_one_is_transposed_record():
    data = _record(5, m=2, q=3)
    h = build_hankel(data, 1)
    np.testing.assert_array_equal(h.h_u, data.u_d.T)
    np.testing.assert_array_equal(h.h_y, data.y_d.T)


def test_build_hankel_too_short_raises():
    with pytest.raises(ValueError):
        build_hankel(_record(3), 4)


def test_hankel_is_read_only():
    h = build_hankel(_record(4), 2)
    with pytest.raises(ValueError):
        h.h_u[0, 0] = 0.0


def test_min_data_length():
    assert min_data_length(4, 2, 30) == 93
    assert min_data_length(4, 2, 31) == 96
    assert min_data_length(32, 20, 22) == 493
    assert min_data_length(32, 32, 20) == 691


def test_collect_excitation_data_counts_physical_samples(reactor):
    counter = SampleCounter()
    data = collect_excitation_data(reactor, length=93, rng_seed=3, counter=counter)
    assert data.sample_count == 93
    assert (data.m, data.q) == (2, 4)
    assert counter.get_counts() == (93, 0)
    assert np.all(np.abs(data.u_d) <= 1.0)


def test_collect_excitation_data_is_seed_deterministic(reactor):
    a = collect_excitation_data(reactor, length=20, rng_seed=[5, 0], counter=SampleCounter())
    b = collect_excitation_data(reactor, length=20, rng_seed=[5, 0], counter=SampleCounter())
    np.testing.assert_array_equal(a.u_d, b.u_d)
    np.testing.assert_array_equal(a.y_d, b.y_d)


def test_collect_zero_length(reactor):
    data = collect_excitation_data(reactor, length=0, counter=SampleCounter())
    assert data.sample_count == 0
    assert data.y_d.shape == (0, 4)


def test_reactor_record_of_minimum_length_is_certified(reactor, reactor_data):
    data, h = reactor_data
    assert data.sample_count == 93
    ok, rank, sub_rank = rank_certificate(h, reactor.n)
    assert ok
    assert rank == 4 + 30 * 2
    assert sub_rank == rank


def test_short_record_fails_certificate(reactor):
    data = collect_excitation_data(reactor, length=80, rng_seed=1, counter=SampleCounter())
    ok, rank, _ = rank_certificate(build_hankel(data, 30), reactor.n)
    assert not ok
    assert rank <= 51


def test_certified_collection_gives_up_after_retries(reactor):
    counter = SampleCounter()
    with pytest.raises(ExcitationError):
        collect_certified_data(reactor, 30, length=80, retries=2, counter=counter)
    assert counter.physical == 3 * 80


def test_block_rows(reactor_data):
    _, h = reactor_data
    assert block_rows(h, INPUT, 0, 0).shape == (2, h.columns)
    assert block_rows(h, OUTPUT, 3, 5).shape == (12, h.columns)
    np.testing.assert_array_equal(block_rows(h, OUTPUT, 0, 29), h.h_y)
    with pytest.raises(ValueError):
        block_rows(h, INPUT, 2, 30)
    with pytest.raises(ValueError):
        block_rows(h, "state", 0, 1)


def test_historic_windows_layout():
    data = _record(5, m=1, q=2)
    windows = historic_windows(data, 2)
    assert windows.shape == (4, 2 * 2 + 1)
    np.testing.assert_array_equal(windows[1], np.concatenate([data.y_d[1:3].ravel(), data.u_d[1:2].ravel()]))
    np.testing.assert_array_equal(historic_states(data), data.y_d)


def test_collection_seconds():
    assert collection_seconds(93, 0.1) == pytest.approx(9.3)
    assert collection_seconds(493, 1.0) == 493


def test_data_record_rejects_length_mismatch():
    with pytest.raises(ValueError):
        DataRecord(np.zeros((3, 1)), np.zeros((4, 1)))


def test_basis_factors_the_hankel_matrix(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    basis = hankel_basis(h)
    assert basis.rank == 3 + 8 * 2
    span = basis.span.stacked()
    np.testing.assert_allclose(span.T @ span, np.eye(basis.rank), atol=1e-12)
    np.testing.assert_allclose(span @ basis.coords, h.stacked(), rtol=1e-10, atol=1e-10)
    assert (basis.span.m, basis.span.q, basis.span.depth) == (2, 3, 8)


def test_basis_is_cached_on_the_hankel_matrix(reactor_data):
    _, h = reactor_data
    assert h.basis is h.basis
    assert h.basis.rank == 64


def test_basis_coefficient_is_minimum_norm(stable_system):
    data = collect_excitation_data(stable_system, length=60, rng_seed=4, counter=SampleCounter())
    h = build_hankel(data, 8, n_hint=3)
    basis = h.basis
    g = np.random.default_rng(2).standard_normal(h.columns)
    coeff = basis.coefficient(basis.coords @ g)
    np.testing.assert_allclose(h.stacked() @ coeff, h.stacked() @ g, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(coeff, np.linalg.pinv(h.stacked()) @ (h.stacked() @ g), rtol=1e-7, atol=1e-9)


def test_reactor_record_spans_its_own_columns(reactor_partial_data):
    # Late samples of the unstable reactor are ~1e8; early windows must still lie in the span.
    _, h = reactor_partial_data
    span = h.basis.span.stacked()
    stacked = h.stacked()
    for j in (0, 5, h.columns - 1):
        col = stacked[:, j]
        residual = col - span @ (span.T @ col)
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(col)
