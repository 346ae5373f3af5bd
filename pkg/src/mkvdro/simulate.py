"""Euler-Maruyama particle simulation of the coupled system and its frozen-flow twin."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .rng import philox_normals


class SimulationError(ArithmeticError):
    """A non-finite state appeared; ``step`` is the offending grid index."""

    def __init__(self, step, msg=None):
        self.step = step
        super().__init__(msg or f"non-finite state at step {step}")


@dataclass(frozen=True)
class NoiseGrid:
    """Brownian increments of one replica, keyed by ``(seed, replica)``.

    Increment ``(i, k)`` (particle ``i``, step ``k``) is word ``k * N + i`` of
    the replica's Philox stream, scaled by ``sqrt(h)``.  With ``keep=True`` the
    materialized grid is memoized (``N * L * 8`` bytes).
    """

    seed: int
    replica: int
    n_particles: int
    n_steps: int
    horizon: float
    keep: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.n_particles < 1 or self.n_steps < 1:
            raise ValueError("noise grid needs n_particles >= 1 and n_steps >= 1")
        if not self.horizon > 0:
            raise ValueError("noise grid horizon must be positive")

    @property
    def h(self):
        return self.horizon / self.n_steps

    def increments(self):
        """All increments as an ``(L, N)`` read-only array."""
        cached = self.__dict__.get("_dB")
        if cached is not None:
            return cached
        n, steps = self.n_particles, self.n_steps
        z = philox_normals(self.seed, self.replica, 0, n * steps).reshape(steps, n)
        dB = math.sqrt(self.h) * z
        dB.flags.writeable = False
        if self.keep:
            self.__dict__["_dB"] = dB
        return dB

    def increment(self, i, k):
        """Single increment without materializing the grid."""
        if not (0 <= i < self.n_particles and 0 <= k < self.n_steps):
            raise IndexError(f"increment ({i}, {k}) outside the grid")
        z = philox_normals(self.seed, self.replica, k * self.n_particles + i, 1)[0]
        return math.sqrt(self.h) * z


def _frozen(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PathBundle:
    """One replica's trajectory.

    ``states[k, i]`` is particle ``i`` at time ``k * h``; ``m0[k]``, ``m1[k]``
    are the interaction means entering the drift and diffusion at step ``k``;
    ``dB[k, i]`` is the increment used from step ``k`` to ``k + 1``.
    """

    states: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    dB: np.ndarray
    noise: NoiseGrid
    horizon: float

    @property
    def n_particles(self):
        return self.states.shape[1]

    @property
    def n_steps(self):
        return self.states.shape[0] - 1

    @property
    def h(self):
        return self.horizon / self.n_steps

    @property
    def terminal(self):
        return self.states[-1]

    def dump(self, fh):
        """Binary dump: header ``N, L`` (int64), ``T`` (float64), ``seed`` (int64),
        then the ``N x (L+1)`` state matrix, row-major per particle, little-endian
        float64."""
        header = np.array([self.n_particles, self.n_steps], dtype="<i8").tobytes()
        header += np.array([self.horizon], dtype="<f8").tobytes()
        header += np.array([self.noise.seed], dtype="<i8").tobytes()
        fh.write(header)
        fh.write(np.ascontiguousarray(self.states.T, dtype="<f8").tobytes())


def load_dump(fh):
    """Inverse of :meth:`PathBundle.dump`: returns ``(N, L, T, seed, states)``
    with ``states`` shaped ``(N, L + 1)``."""
    raw = fh.read()
    n, steps = np.frombuffer(raw[:16], dtype="<i8")
    horizon = float(np.frombuffer(raw[16:24], dtype="<f8")[0])
    seed = int(np.frombuffer(raw[24:32], dtype="<i8")[0])
    states = np.frombuffer(raw[32:], dtype="<f8").reshape(int(n), int(steps) + 1)
    return int(n), int(steps), horizon, seed, states


def simulate_system(spec, xi, n_steps, noise):
    """Propagate the N-particle system from ``xi`` with the increments of ``noise``."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1:
        raise ValueError("xi must be a 1-D atom vector")
    n = xi.shape[0]
    if noise.n_particles != n or noise.n_steps != n_steps:
        raise ValueError(
            f"noise grid is {noise.n_particles}x{noise.n_steps}, "
            f"system is {n}x{n_steps}")
    if not math.isclose(noise.horizon, spec.horizon, rel_tol=0, abs_tol=0):
        raise ValueError("noise horizon and model horizon differ")
    if not np.all(np.isfinite(xi)):
        raise SimulationError(0, "non-finite initial atoms")

    h = spec.horizon / n_steps
    dB = noise.increments()
    states = np.empty((n_steps + 1, n))
    m0 = np.empty(n_steps + 1)
    m1 = np.empty(n_steps + 1)
    drift, diff = spec.drift_hat, spec.diff_hat
    g0, g1 = spec.drift_g, spec.diff_g
    states[0] = xi
    for k in range(n_steps):
        x = states[k]
        m0[k] = np.mean(g0(x))
        m1[k] = np.mean(g1(x))
        nxt = x + drift(x, m0[k]) * h + diff(x, m1[k]) * dB[k]
        if not np.all(np.isfinite(nxt)):
            raise SimulationError(k + 1)
        states[k + 1] = nxt
    m0[-1] = np.mean(g0(states[-1]))
    m1[-1] = np.mean(g1(states[-1]))
    return PathBundle(_frozen(states), _frozen(m0), _frozen(m1), dB, noise, spec.horizon)


@dataclass(frozen=True, eq=False)
class FrozenFlow:
    """Interaction means ``(m0_k, m1_k)``, ``k = 0..L``, taken from a coupled run."""

    m0: np.ndarray
    m1: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.m0.shape != self.m1.shape or self.m0.ndim != 1 or self.m0.size < 2:
            raise ValueError("frozen flow needs two equal 1-D mean sequences of length L+1")
        if not (np.all(np.isfinite(self.m0)) and np.all(np.isfinite(self.m1))):
            raise ValueError("frozen flow has non-finite entries")

    @property
    def n_steps(self):
        return self.m0.size - 1


def extract_frozen_flow(path):
    return FrozenFlow(_frozen(path.m0.copy()), _frozen(path.m1.copy()), path.horizon)


def simulate_decoupled(spec, flow, x0, noise_path):
    """Single-particle dynamics with the law replaced by the frozen flow.

    ``x0`` may be a scalar with ``noise_path`` of length ``L``, or a vector of
    ``M`` starting points with ``noise_path`` of shape ``(L, M)``; the result
    is ``(L + 1,)`` or ``(L + 1, M)``.
    """
    noise_path = np.asarray(noise_path, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    steps = flow.n_steps
    if noise_path.shape[0] != steps or noise_path.shape[1:] != x0.shape:
        raise ValueError(
            f"noise path shape {noise_path.shape} does not match L={steps}, x0 {x0.shape}")
    h = spec.horizon / steps
    out = np.empty((steps + 1,) + x0.shape)
    out[0] = x0
    drift, diff = spec.drift_hat, spec.diff_hat
    for k in range(steps):
        x = out[k]
        nxt = x + drift(x, flow.m0[k]) * h + diff(x, flow.m1[k]) * noise_path[k]
        if not np.all(np.isfinite(nxt)):
            raise SimulationError(k + 1)
        out[k + 1] = nxt
    return out


def map_ordered(fn, items, workers=1):
    """``[fn(x) for x in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
