import io
import math

import numpy as np
import pytest

from mkvdro.model import FunctionFamily as F, InitialLaw, ModelSpec, sample_initial
from mkvdro.simulate import (
    FrozenFlow, NoiseGrid, SimulationError, extract_frozen_flow, load_dump,
    simulate_decoupled, simulate_system)

from helpers import norm_n, ou, random_bounded_spec, random_spec, tanh_vol


def _run(spec, xi, L=32, seed=0, replica=0):
    noise = NoiseGrid(seed, replica, len(xi), L, spec.horizon)
    return simulate_system(spec, np.asarray(xi, dtype=float), L, noise)


# noise -------------------------------------------------------------------------

def test_single_increment_matches_grid():
    grid = NoiseGrid(17, 3, 9, 11, 2.0)
    dB = grid.increments()
    for i, k in [(0, 0), (8, 10), (3, 7), (5, 0), (0, 10)]:
        assert grid.increment(i, k) == dB[k, i]


def test_increments_are_keyed_by_seed_and_replica():
    a = NoiseGrid(1, 0, 16, 8, 1.0).increments()
    np.testing.assert_array_equal(a, NoiseGrid(1, 0, 16, 8, 1.0).increments())
    assert not np.array_equal(a, NoiseGrid(1, 1, 16, 8, 1.0).increments())
    assert not np.array_equal(a, NoiseGrid(2, 0, 16, 8, 1.0).increments())


def test_increment_moments():
    grid = NoiseGrid(4, 0, 512, 256, 1.0)
    dB = grid.increments()
    h, n = grid.h, dB.size
    assert abs(dB.mean()) <= 4 * math.sqrt(h / n)
    # sample variance has sd h * sqrt(2 / n) for Gaussian increments
    assert abs(dB.var() - h) <= 4 * h * math.sqrt(2 / n)


def test_increment_out_of_range():
    with pytest.raises(IndexError):
        NoiseGrid(0, 0, 4, 4, 1.0).increment(4, 0)


# coupled simulation ------------------------------------------------------------

def test_frozen_dynamics():
    xi = np.array([-1.0, 0.5, 2.0])
    path = _run(ModelSpec.zero(), xi)
    np.testing.assert_array_equal(path.states, np.tile(xi, (33, 1)))


def test_ou_mean_moves_with_noise_mean_only():
    xi = sample_initial(InitialLaw("gaussian", (0.3, 0.5)), 256)
    path = _run(ou(), xi, L=64)
    means = path.states.mean(axis=1)
    np.testing.assert_allclose(np.diff(means), 0.2 * path.dB.mean(axis=1), rtol=0,
                               atol=1e-14)


def test_euler_recursion_replays_exactly():
    rng = np.random.default_rng(0)
    spec = random_spec(rng)
    xi = rng.normal(0, 0.5, 50)
    path = _run(spec, xi, L=20, seed=3)
    for k in range(path.n_steps):
        x = path.states[k]
        nxt = x + spec.drift_hat(x, path.m0[k]) * path.h + spec.diff_hat(x, path.m1[k]) * path.dB[k]
        np.testing.assert_array_equal(path.states[k + 1], nxt)
    for k in range(path.n_steps + 1):
        assert path.m0[k] == np.mean(spec.drift_g(path.states[k]))
        assert path.m1[k] == np.mean(spec.diff_g(path.states[k]))


def test_replay_is_bit_identical():
    rng = np.random.default_rng(1)
    spec = random_spec(rng)
    xi = rng.normal(0, 1, 100)
    a, b = _run(spec, xi, seed=9), _run(spec, xi, seed=9)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.m0, b.m0)


def test_bundle_is_read_only():
    path = _run(ou(), np.zeros(4))
    with pytest.raises(ValueError):
        path.states[0, 0] = 1.0


def test_ou_terminal_variance():
    # Var[X_T] = e^{-2aT} Var0 + sigma^2 (1 - e^{-2aT}) / (2a)
    expected = math.exp(-2) * 0.25 + 0.02 * (1 - math.exp(-2))
    assert expected == pytest.approx(0.05113, abs=1e-5)
    law = InitialLaw("gaussian", (0.0, 0.5), "iid")
    spec = ou()
    variances = []
    for seed in range(30):
        xi = sample_initial(law, 4096, seed)
        variances.append(np.var(_run(spec, xi, L=256, seed=seed).terminal))
    assert np.mean(variances) == pytest.approx(expected, rel=0.05)


def test_dimension_mismatch():
    spec = ou()
    with pytest.raises(ValueError):
        simulate_system(spec, np.zeros(5), 8, NoiseGrid(0, 0, 4, 8, 1.0))
    with pytest.raises(ValueError):
        simulate_system(spec, np.zeros(4), 8, NoiseGrid(0, 0, 4, 9, 1.0))
    with pytest.raises(ValueError):
        simulate_system(spec, np.zeros(4), 8, NoiseGrid(0, 0, 4, 8, 2.0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_state_reports_step():
    with pytest.raises(SimulationError) as err:
        _run(ou(), np.array([0.0, math.nan]))
    assert err.value.step == 0
    blowup = ModelSpec.mean_reversion(1.0, 1e308)
    with pytest.raises(SimulationError) as err:
        _run(blowup, np.zeros(8), L=4)
    assert err.value.step >= 1


def test_stability_in_initial_condition():
    rng = np.random.default_rng(5)
    for seed in range(30):
        spec = random_bounded_spec(rng)
        l_beta, l_sigma, l_g = spec.lipschitz_bounds()
        bound = math.exp((l_beta + l_g + l_sigma**2) * spec.horizon * 1.1)
        xi = rng.normal(0, 0.5, 128)
        xi2 = xi + 0.1 * rng.normal(size=128)
        a, b = _run(spec, xi, L=64, seed=seed), _run(spec, xi2, L=64, seed=seed)
        assert norm_n(a.terminal - b.terminal) <= bound * norm_n(xi - xi2)


def test_dump_round_trip():
    path = _run(ou(), np.linspace(-1, 1, 6), L=5, seed=42)
    buf = io.BytesIO()
    path.dump(buf)
    assert len(buf.getvalue()) == 32 + 6 * 6 * 8
    buf.seek(0)
    n, L, T, seed, states = load_dump(buf)
    assert (n, L, T, seed) == (6, 5, 1.0, 42)
    np.testing.assert_array_equal(states, path.states.T)


# frozen flow -------------------------------------------------------------------

def test_frozen_flow_of_static_system():
    path = _run(ModelSpec.zero(), [1.0, 3.0], L=10)
    flow = extract_frozen_flow(path)
    np.testing.assert_array_equal(flow.m0, 2.0)
    assert flow.n_steps == 10


def test_frozen_flow_matches_recomputed_means():
    rng = np.random.default_rng(2)
    spec = random_spec(rng)
    path = _run(spec, rng.normal(0, 1, 40), L=16)
    flow = extract_frozen_flow(path)
    recomputed = np.array([np.mean(spec.drift_g(x)) for x in path.states])
    np.testing.assert_array_equal(flow.m0, recomputed)


def test_frozen_flow_mean_drift_is_martingale_sized():
    n = 4096
    xi = sample_initial(InitialLaw("gaussian", (0.2, 0.5)), n)
    flow = extract_frozen_flow(_run(ou(), xi, L=128, seed=8))
    assert abs(flow.m0[-1] - xi.mean()) <= 4 * 0.2 / math.sqrt(n)


def test_frozen_flow_rejects_bad_input():
    with pytest.raises(ValueError):
        FrozenFlow(np.array([0.0, math.nan]), np.zeros(2), 1.0)


# decoupled ---------------------------------------------------------------------

def test_decoupled_static():
    flow = extract_frozen_flow(_run(ModelSpec.zero(), [0.0, 1.0], L=6))
    out = simulate_decoupled(ModelSpec.zero(), flow, 0.7, np.zeros(6))
    np.testing.assert_array_equal(out, 0.7)


@pytest.mark.parametrize("maker", [ou, tanh_vol])
def test_decoupled_reproduces_coupled_rows(maker):
    spec = maker()
    xi = sample_initial(InitialLaw("gaussian", (0.0, 0.5)), 64)
    path = _run(spec, xi, L=40, seed=4)
    flow = extract_frozen_flow(path)
    stacked = simulate_decoupled(spec, flow, xi, path.dB)
    np.testing.assert_array_equal(stacked, path.states)
    for i in (0, 17, 63):
        row = simulate_decoupled(spec, flow, xi[i], path.dB[:, i])
        np.testing.assert_array_equal(row, path.states[:, i])


def test_decoupled_random_spec_rows():
    rng = np.random.default_rng(12)
    spec = random_spec(rng)
    xi = rng.normal(0, 1, 30)
    path = _run(spec, xi, L=25)
    flow = extract_frozen_flow(path)
    for i in range(30):
        np.testing.assert_array_equal(
            simulate_decoupled(spec, flow, xi[i], path.dB[:, i]), path.states[:, i])


def test_decoupled_conditional_mean_ou():
    a, L, n = 1.0, 128, 4096
    spec = ou(a=a)
    xi = sample_initial(InitialLaw("gaussian", (0.1, 0.5)), n)
    flow = extract_frozen_flow(_run(spec, xi, L=L, seed=1))
    x0, paths = 0.8, 10_000
    fresh = NoiseGrid(1, 12345, paths, L, 1.0).increments()
    terminal = simulate_decoupled(spec, flow, np.full(paths, x0), fresh)[-1]
    sd = float(np.std(terminal))
    # expectation of the linear recursion given the flow
    h, m = 1.0 / L, x0
    for k in range(L):
        m = m + a * (flow.m0[k] - m) * h
    assert abs(terminal.mean() - m) <= 4 * sd / math.sqrt(paths)
    mbar = xi.mean()
    closed = mbar + (x0 - mbar) * math.exp(-a)
    assert abs(terminal.mean() - closed) <= 4 * sd / math.sqrt(paths) + 4 * 0.2 / math.sqrt(n)


def test_decoupled_length_mismatch():
    flow = extract_frozen_flow(_run(ModelSpec.zero(), [0.0, 1.0], L=6))
    with pytest.raises(ValueError):
        simulate_decoupled(ModelSpec.zero(), flow, 0.0, np.zeros(5))


def test_noise_grid_keep_memoizes():
    grid = NoiseGrid(0, 0, 8, 8, 1.0, keep=True)
    assert grid.increments() is grid.increments()
    assert NoiseGrid(0, 0, 8, 8, 1.0).increments() is not NoiseGrid(0, 0, 8, 8, 1.0).increments()
