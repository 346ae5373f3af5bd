"""Forward tangent and reverse adjoint sweeps along a stored particle path.

One Euler step linearizes to a diagonal-plus-rank-2 map

    v_{k+1} = D_k * v_k + a_k * <gamma0_k, v_k>_N + c_k * <gamma1_k, v_k>_N

where ``<u, v>_N = mean(u * v)``.  ``D`` carries the state derivatives of the
coefficients, ``a`` and ``c`` the derivatives in the interaction means and
``gamma0``, ``gamma1`` the derivatives of the interaction functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import NoiseGrid, extract_frozen_flow, simulate_decoupled, simulate_system

DENSE_GUARD = 512


@dataclass(frozen=True, eq=False)
class StepLinearization:
    """Per-step factors of the tangent map, all shaped ``(L, N)``.

    ``a``/``gamma0`` (``c``/``gamma1``) are ``None`` when the drift
    (diffusion) does not depend on the law.
    """

    D: np.ndarray
    a: np.ndarray | None
    c: np.ndarray | None
    gamma0: np.ndarray | None
    gamma1: np.ndarray | None

    @property
    def n_steps(self):
        return self.D.shape[0]


def linearize(spec, path):
    """Recompute the step linearization from the stored states and noise."""
    x = path.states[:-1]
    m0 = path.m0[:-1, None]
    m1 = path.m1[:-1, None]
    h, dB = path.h, path.dB
    drift, diff = spec.drift_hat, spec.diff_hat
    D = 1.0 + drift.d_x(x, m0) * h + diff.d_x(x, m1) * dB
    a = gamma0 = c = gamma1 = None
    if not drift.q.is_zero and not spec.drift_g.has_zero_derivative:
        a = drift.d_m(x, m0) * h
        gamma0 = spec.drift_g.deriv(x)
    if not diff.q.is_zero and not spec.diff_g.has_zero_derivative:
        c = diff.d_m(x, m1) * dB
        gamma1 = spec.diff_g.deriv(x)
    return StepLinearization(D, a, c, gamma0, gamma1)


def _check_len(path, v, what):
    v = np.array(v, dtype=float)
    if v.ndim not in (1, 2) or v.shape[0] != path.n_particles:
        raise ValueError(f"{what} has shape {v.shape}, expected ({path.n_particles}, ...)")
    return v


def _col(u, matrix):
    return u[:, None] if matrix else u


def push_tangent(spec, path, eta, lin=None):
    """Particle realization of ``D_xi X_T eta`` on this path.

    ``eta`` is an ``(N,)`` direction or an ``(N, M)`` stack of directions.
    """
    v = _check_len(path, eta, "eta")
    lin = lin or linearize(spec, path)
    mat = v.ndim == 2
    for k in range(lin.n_steps):
        nv = _col(lin.D[k], mat) * v
        if lin.a is not None:
            nv += _col(lin.a[k], mat) * np.mean(_col(lin.gamma0[k], mat) * v, axis=0)
        if lin.c is not None:
            nv += _col(lin.c[k], mat) * np.mean(_col(lin.gamma1[k], mat) * v, axis=0)
        v = nv
    return v


def pull_adjoint(spec, path, w, lin=None):
    """Transpose sweep: maps a terminal covector to a time-0 covector.

    Satisfies ``<push_tangent(eta), w>_N == <eta, pull_adjoint(w)>_N``.
    """
    u = _check_len(path, w, "w")
    lin = lin or linearize(spec, path)
    mat = u.ndim == 2
    for k in range(lin.n_steps - 1, -1, -1):
        nu = _col(lin.D[k], mat) * u
        if lin.a is not None:
            nu += _col(lin.gamma0[k], mat) * np.mean(_col(lin.a[k], mat) * u, axis=0)
        if lin.c is not None:
            nu += _col(lin.gamma1[k], mat) * np.mean(_col(lin.c[k], mat) * u, axis=0)
        u = nu
    return u


def dense_jacobian(spec, path):
    """``J[i, j] = d X_T[i] / d xi[j]``; column ``j`` is the push of ``e_j``."""
    n = path.n_particles
    if n > DENSE_GUARD:
        raise ValueError(f"dense Jacobian limited to N <= {DENSE_GUARD}, got {n}")
    return push_tangent(spec, path, np.eye(n))


def tangent_frozen(spec, flow, decoupled_path, noise_path):
    """Derivative of a frozen-flow path in its starting point.

    Product of ``1 + d_x b0 h + d_x b1 dB`` along ``decoupled_path``; accepts
    the single or stacked layouts of :func:`simulate_decoupled`.
    """
    x = np.asarray(decoupled_path, dtype=float)
    dB = np.asarray(noise_path, dtype=float)
    steps = flow.n_steps
    if x.shape[0] != steps + 1 or dB.shape != (steps,) + x.shape[1:]:
        raise ValueError("decoupled path, noise path and flow lengths disagree")
    h = spec.horizon / steps
    m0 = flow.m0[:-1].reshape((steps,) + (1,) * (x.ndim - 1))
    m1 = flow.m1[:-1].reshape(m0.shape)
    xs = x[:-1]
    factors = 1.0 + spec.drift_hat.d_x(xs, m0) * h + spec.diff_hat.d_x(xs, m1) * dB
    grad = np.ones(x.shape[1:])
    for k in range(steps):
        grad = factors[k] * grad
    return grad if grad.ndim else float(grad)


@dataclass(frozen=True, eq=False)
class DecompositionReport:
    """Coupled Jacobian against the frozen-flow tangent.

    ``diag_gap = max_i |J_ii - grad_frozen_i|`` is the self-interaction term of
    order ``1/N``; ``u_offdiag = N * J`` off the diagonal (diagonal NaN) is the
    particle estimate of the mean-field response of particle ``i`` to atom ``j``.
    """

    jacobian: np.ndarray
    grad_frozen: np.ndarray
    diag_gap: float
    u_offdiag: np.ndarray
    decoupled_exact: bool


def decomposition_check(spec, xi, n_steps, seed):
    xi = np.asarray(xi, dtype=float)
    n = xi.size
    if n > DENSE_GUARD:
        raise ValueError(f"decomposition check limited to N <= {DENSE_GUARD}, got {n}")
    noise = NoiseGrid(seed, 0, n, n_steps, spec.horizon)
    path = simulate_system(spec, xi, n_steps, noise)
    jac = dense_jacobian(spec, path)
    flow = extract_frozen_flow(path)
    dec = simulate_decoupled(spec, flow, xi, path.dB)
    grad = tangent_frozen(spec, flow, dec, path.dB)
    u = n * jac
    np.fill_diagonal(u, np.nan)
    return DecompositionReport(
        jacobian=jac,
        grad_frozen=grad,
        diag_gap=float(np.max(np.abs(np.diag(jac) - grad))),
        u_offdiag=u,
        decoupled_exact=bool(np.array_equal(dec, path.states)),
    )
