"""Adjoint of the terminal criterion gradient and the worst-case sensitivity.

The pathwise adjoint pull depends on the Brownian path, while the quantity of
interest lives on time-0 information.  Replicas share the initial atoms and
differ only in their noise, so averaging pulls atomwise estimates the
conditional expectation given the atoms.  The squared norm of that
conditional expectation is estimated without the ``1/R`` variance bias by
the off-diagonal cross-replica inner products.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import criterion_lgrad, criterion_value
from .simulate import NoiseGrid, map_ordered, simulate_system
from .tangent import pull_adjoint


class FlatCriterionError(ValueError):
    """The adjoint field is statistically indistinguishable from zero."""


def terminal_gradient(c, path):
    return criterion_lgrad(c, path.terminal)


def noise_set(seed, replicas, n_particles, n_steps, horizon, keep=False):
    """The ``replicas`` noise grids used by one estimation or validation run."""
    return [NoiseGrid(seed, r, n_particles, n_steps, horizon, keep=keep)
            for r in range(replicas)]


def _replica_pull(spec, c, xi, n_steps, noise):
    path = simulate_system(spec, xi, n_steps, noise)
    w = terminal_gradient(c, path)
    return pull_adjoint(spec, path, w), criterion_value(c, path.terminal)


@dataclass(frozen=True, eq=False)
class AdjointField:
    """Adjoint pulls ``zetas[r]`` of every replica, with the shared atoms ``xi``.

    ``phi_values[r]`` is the criterion at replica ``r``'s terminal atoms.
    """

    zetas: np.ndarray
    xi: np.ndarray
    phi_values: np.ndarray
    seed: int
    n_steps: int

    @property
    def replicas(self):
        return self.zetas.shape[0]

    @property
    def zeta_bar(self):
        return np.mean(self.zetas, axis=0)

    @property
    def phi_hat(self):
        return float(np.mean(self.phi_values))


def estimate_zeta(spec, c, xi, n_steps, replicas, seed, workers=1, noise=None):
    """Run ``replicas`` coupled simulations from ``xi`` and pull the criterion
    gradient back along each."""
    if replicas < 2:
        raise ValueError(f"need at least 2 replicas, got {replicas}")
    xi = np.asarray(xi, dtype=float)
    grids = noise or noise_set(seed, replicas, xi.size, n_steps, spec.horizon)
    if len(grids) != replicas:
        raise ValueError("noise set size differs from the replica count")
    out = map_ordered(lambda g: _replica_pull(spec, c, xi, n_steps, g), grids, workers)
    zetas = np.stack([z for z, _ in out])
    phis = np.array([p for _, p in out])
    return AdjointField(zetas, xi.copy(), phis, seed, n_steps)


@dataclass
class SensitivityReport:
    """Worst-case sensitivity estimate and diagnostics.

    ``s_stderr`` is the standard error of ``s_debiased`` (delta method);
    ``s2_stderr`` that of the squared norm.  ``direction`` is ``None`` when the
    field is not resolved from zero.
    """

    s_debiased: float
    s_naive: float
    s_stderr: float
    s2_debiased: float
    s2_stderr: float
    replica_norms: np.ndarray
    direction: np.ndarray | None
    n: int
    l: int
    r_replicas: int
    seed: int
    model_echo: dict = field(default_factory=dict)

    def to_dict(self):
        """Flat JSON-ready mapping with the published field names."""
        return {
            "s_debiased": self.s_debiased,
            "s_naive": self.s_naive,
            "s_stderr": self.s_stderr,
            "direction": None if self.direction is None else [float(v) for v in self.direction],
            "n": self.n,
            "l": self.l,
            "r_replicas": self.r_replicas,
            "seed": self.seed,
            "model_echo": self.model_echo,
        }


def _norm_n(v):
    return math.sqrt(float(np.mean(v * v)))


def _debiased_square(zetas):
    """``(1 / (R (R-1))) sum_{r != r'} <zeta_r, zeta_r'>_N``.

    Written as ``sum_i [(sum_r z_ri)^2 - sum_r z_ri^2]`` with exactly rounded
    sums, so the value does not depend on the replica order.
    """
    R, n = zetas.shape
    cols = zetas.T
    total = math.fsum(
        math.fsum(col) ** 2 - math.fsum(col * col) for col in cols)
    return total / (R * (R - 1) * n)


def sensitivity_norm(field_, model_echo=None):
    """Naive and debiased ``||E[zeta | xi]||_N`` with a standard error."""
    zetas = field_.zetas
    R, n = zetas.shape
    if R < 2:
        raise ValueError(f"need at least 2 replicas, got {R}")
    zbar = field_.zeta_bar
    s_naive = _norm_n(zbar)
    s2 = _debiased_square(zetas)

    gram = (zetas @ zetas.T) / n
    off = gram[~np.eye(R, dtype=bool)].reshape(R, R - 1)
    h1 = off.mean(axis=1)
    # Hoeffding projection: Var(U) ~ 4 Var(h1) / R
    s2_se = math.sqrt(4.0 * float(np.var(h1, ddof=1)) / R)

    if s2 < 0:
        warnings.warn(f"debiased squared norm {s2:.3e} < 0 clipped to 0", RuntimeWarning)
        s2 = 0.0
    s_deb = math.sqrt(s2)
    if s_deb > 0:
        s_se = s2_se / (2.0 * s_deb)
    else:
        s_se = math.sqrt(s2_se) if math.isfinite(s2_se) else math.nan

    try:
        direction = _direction(zbar, s_naive, s_se)
    except FlatCriterionError:
        direction = None
    return SensitivityReport(
        s_debiased=s_deb,
        s_naive=s_naive,
        s_stderr=s_se,
        s2_debiased=s2,
        s2_stderr=s2_se,
        replica_norms=np.sqrt(np.mean(zetas * zetas, axis=1)),
        direction=direction,
        n=n,
        l=field_.n_steps,
        r_replicas=R,
        seed=field_.seed,
        model_echo=dict(model_echo or {}),
    )


def _direction(zbar, norm, stderr):
    resolved = norm > 0 and (not math.isfinite(stderr) or norm > 10.0 * stderr)
    if not resolved:
        raise FlatCriterionError(
            f"flat criterion: adjoint norm {norm:.3e} not resolved "
            f"against standard error {stderr:.3e}")
    return zbar / norm


def worst_case_direction(field_):
    """Unit-norm ``E[zeta | xi] / ||E[zeta | xi]||_N``; raises on a flat criterion."""
    rep = sensitivity_norm(field_)
    return _direction(field_.zeta_bar, rep.s_naive, rep.s_stderr)
