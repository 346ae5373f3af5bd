"""Coefficient families, criteria and initial laws.

Every function that enters the dynamics or the criterion is drawn from a
small closed family so that values and derivatives are available in closed
form.  Measure dependence of the coefficients is separable,
``b(x, mu) = p(x) + q(x) * <g, mu>``, which makes the derivative of ``b``
with respect to a particle atom ``q(x) * g'(x_j) / N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .rng import philox_uniforms

FAMILY_KINDS = ("constant", "affine", "tanh_saturated", "square", "identity")
# families whose first derivative is bounded and Lipschitz
SMOOTH_KINDS = ("constant", "affine", "tanh_saturated")
_N_PARAMS = {"constant": 1, "affine": 2, "tanh_saturated": 3, "square": 0, "identity": 0}

# Philox key word reserved for initial-law sampling (noise replicas use 0..2**63)
INITIAL_LAW_STREAM = 2**64 - 1


class DomainError(ValueError):
    """Raised on non-finite inputs or inadmissible model ingredients."""


@dataclass(frozen=True)
class FunctionFamily:
    """A scalar function of one real variable with closed-form derivative.

    ``constant``: ``c``; ``affine``: ``alpha + beta * x``;
    ``tanh_saturated``: ``c0 + c1 * tanh(s * x)``; ``square``: ``x**2``;
    ``identity``: ``x``.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise DomainError(f"unknown function family {self.kind!r}")
        params = tuple(float(p) for p in self.params)
        if len(params) != _N_PARAMS[self.kind]:
            raise DomainError(
                f"{self.kind} takes {_N_PARAMS[self.kind]} parameters, got {len(params)}")
        if not all(math.isfinite(p) for p in params):
            raise DomainError(f"non-finite parameter in {self.kind}{params}")
        object.__setattr__(self, "params", params)

    @classmethod
    def constant(cls, c):
        return cls("constant", (c,))

    @classmethod
    def affine(cls, alpha, beta):
        return cls("affine", (alpha, beta))

    @classmethod
    def tanh_saturated(cls, c0, c1, s):
        return cls("tanh_saturated", (c0, c1, s))

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def square(cls):
        return cls("square")

    @property
    def is_zero(self):
        return self.kind == "constant" and self.params[0] == 0.0

    @property
    def has_zero_derivative(self):
        k, p = self.kind, self.params
        return k == "constant" or (k == "affine" and p[1] == 0.0) or (
            k == "tanh_saturated" and (p[1] == 0.0 or p[2] == 0.0))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "constant":
            return np.full_like(x, p[0])
        if k == "affine":
            return p[0] + p[1] * x
        if k == "tanh_saturated":
            return p[0] + p[1] * np.tanh(p[2] * x)
        if k == "square":
            return x * x
        return x.copy()

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        k, p = self.kind, self.params
        if k == "constant":
            return np.zeros_like(x)
        if k == "affine":
            return np.full_like(x, p[1])
        if k == "tanh_saturated":
            t = np.tanh(p[2] * x)
            return p[1] * p[2] * (1.0 - t * t)
        if k == "square":
            return 2.0 * x
        return np.ones_like(x)

    def sup_abs(self):
        """Supremum of ``|f|`` over the real line (``inf`` if unbounded)."""
        k, p = self.kind, self.params
        if k == "constant":
            return abs(p[0])
        if k == "tanh_saturated":
            return abs(p[0]) + abs(p[1])
        if k == "affine" and p[1] == 0.0:
            return abs(p[0])
        return math.inf

    def sup_abs_deriv(self):
        """Supremum of ``|f'|`` over the real line (``inf`` if unbounded)."""
        k, p = self.kind, self.params
        if k == "constant":
            return 0.0
        if k == "affine":
            return abs(p[1])
        if k == "tanh_saturated":
            return abs(p[1] * p[2])
        if k == "identity":
            return 1.0
        return math.inf

    def describe(self):
        if not self.params:
            return self.kind
        return " ".join([self.kind, *(repr(v) for v in self.params)])


@dataclass(frozen=True)
class Additive:
    """Bivariate map ``(x, m) -> p(x) + q(x) * m``."""

    p: FunctionFamily
    q: FunctionFamily = field(default_factory=lambda: FunctionFamily.constant(0.0))

    def __call__(self, x, m):
        if self.q.is_zero:
            return self.p(x)
        return self.p(x) + self.q(x) * m

    def d_x(self, x, m):
        if self.q.has_zero_derivative:
            return self.p.deriv(x)
        return self.p.deriv(x) + self.q.deriv(x) * m

    def d_m(self, x, m):
        return self.q(x)


@dataclass(frozen=True)
class ModelSpec:
    """Separable McKean-Vlasov coefficients on ``[0, horizon]``.

    Drift ``b0(x, mu) = drift_hat(x, <drift_g, mu>)`` and diffusion
    ``b1(x, mu) = diff_hat(x, <diff_g, mu>)``.
    """

    drift_hat: Additive
    drift_g: FunctionFamily
    diff_hat: Additive
    diff_g: FunctionFamily
    horizon: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        slots = {
            "drift_hat.p": self.drift_hat.p, "drift_hat.q": self.drift_hat.q,
            "diff_hat.p": self.diff_hat.p, "diff_hat.q": self.diff_hat.q,
        }
        for name, fam in slots.items():
            if fam.kind not in SMOOTH_KINDS:
                raise DomainError(
                    f"{name}: family {fam.kind!r} has unbounded derivative; "
                    f"use one of {SMOOTH_KINDS}")
        for name, fam in (("drift_g", self.drift_g), ("diff_g", self.diff_g)):
            if fam.kind == "square":
                raise DomainError(f"{name}: square is only admitted in criteria")

    @property
    def interacts(self):
        """True if either coefficient depends on the law."""
        return not (self.drift_hat.q.is_zero and self.diff_hat.q.is_zero)

    def lipschitz_bounds(self):
        """Derivative bounds ``(L_beta, L_sigma, L_g)`` used by the stability checks.

        ``L_beta`` bounds ``|d_x b0|``, ``L_sigma`` bounds ``|d_x b1|`` plus its
        mean-field part, ``L_g`` bounds the drift mean-field part.  Entries are
        ``inf`` when ``q`` has a nonzero slope (then ``d_x b`` depends on ``m``).
        """
        def dx_bound(hat):
            if hat.q.has_zero_derivative:
                return hat.p.sup_abs_deriv()
            return math.inf

        def dm_bound(hat, g):
            if hat.q.is_zero:
                return 0.0
            return hat.q.sup_abs() * g.sup_abs_deriv()

        l_beta = dx_bound(self.drift_hat)
        l_sigma = dx_bound(self.diff_hat) + dm_bound(self.diff_hat, self.diff_g)
        l_g = dm_bound(self.drift_hat, self.drift_g)
        return l_beta, l_sigma, l_g

    def describe(self):
        return {
            "drift_p": self.drift_hat.p.describe(),
            "drift_q": self.drift_hat.q.describe(),
            "drift_g": self.drift_g.describe(),
            "diffusion_p": self.diff_hat.p.describe(),
            "diffusion_q": self.diff_hat.q.describe(),
            "diffusion_g": self.diff_g.describe(),
            "horizon": self.horizon,
        }

    # presets -----------------------------------------------------------

    @classmethod
    def mean_reversion(cls, a, diffusion, horizon=1.0):
        """Systemic-risk dynamics ``dX = a (E[X] - X) dt + sigma(X) dB``.

        ``diffusion`` is a float (constant volatility) or a FunctionFamily.
        """
        if not isinstance(diffusion, FunctionFamily):
            diffusion = FunctionFamily.constant(diffusion)
        return cls(
            drift_hat=Additive(FunctionFamily.affine(0.0, -a), FunctionFamily.constant(a)),
            drift_g=FunctionFamily.identity(),
            diff_hat=Additive(diffusion),
            diff_g=FunctionFamily.identity(),
            horizon=horizon,
        )

    @classmethod
    def zero(cls, horizon=1.0):
        return cls.driftless(0.0, horizon)

    @classmethod
    def driftless(cls, sigma, horizon=1.0):
        """``dX = sigma dB``."""
        zero = FunctionFamily.constant(0.0)
        return cls(
            drift_hat=Additive(zero),
            drift_g=FunctionFamily.identity(),
            diff_hat=Additive(FunctionFamily.constant(sigma)),
            diff_g=FunctionFamily.identity(),
            horizon=horizon,
        )


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise DomainError("non-finite input to coefficient evaluation")


def eval_coefficients(spec, x, m0, m1):
    """Drift, diffusion and their partials at ``(x, m0, m1)``.

    Returns ``(b0, b1, dx_b0, dm_b0, dx_b1, dm_b1)``; each entry has the
    broadcast shape of the inputs.
    """
    x = np.asarray(x, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    _check_finite(x, m0, m1)
    shape = np.broadcast_shapes(x.shape, m0.shape, m1.shape)
    x = np.broadcast_to(x, shape)
    out = (
        spec.drift_hat(x, m0),
        spec.diff_hat(x, m1),
        spec.drift_hat.d_x(x, m0),
        spec.drift_hat.d_m(x, m0),
        spec.diff_hat.d_x(x, m1),
        spec.diff_hat.d_m(x, m1),
    )
    return tuple(np.broadcast_to(np.asarray(v, dtype=float), shape).copy() for v in out)


# criteria ---------------------------------------------------------------

CRITERION_KINDS = ("linear_mean", "composed", "variance")


@dataclass(frozen=True)
class Criterion:
    """Terminal-law functional ``phi`` and its L-derivative.

    ``linear_mean``: ``<f, mu>``; ``composed``: ``psi(<f, mu>)``;
    ``variance``: ``<x^2, mu> - <x, mu>^2``.  The value is multiplied by
    ``scale``.

    ``composed`` with ``psi = square`` has an unbounded ``psi'``; it is
    admitted for testing even though its L-derivative is not uniformly
    continuous in the measure.
    """

    kind: str
    f: FunctionFamily = field(default_factory=FunctionFamily.identity)
    psi: FunctionFamily = field(default_factory=FunctionFamily.identity)
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in CRITERION_KINDS:
            raise DomainError(f"unknown criterion kind {self.kind!r}")
        if not math.isfinite(self.scale):
            raise DomainError("criterion scale must be finite")

    @classmethod
    def variance(cls, scale=1.0):
        return cls("variance", scale=scale)

    @classmethod
    def linear_mean(cls, f, scale=1.0):
        return cls("linear_mean", f=f, scale=scale)

    @classmethod
    def composed(cls, psi, f, scale=1.0):
        return cls("composed", f=f, psi=psi, scale=scale)

    def describe(self):
        out = {"kind": self.kind, "scale": self.scale}
        if self.kind in ("linear_mean", "composed"):
            out["f"] = self.f.describe()
        if self.kind == "composed":
            out["psi"] = self.psi.describe()
        return out


def _atoms(atoms):
    atoms = np.asarray(atoms, dtype=float)
    if atoms.ndim != 1 or atoms.size == 0:
        raise DomainError("criterion needs a non-empty 1-D atom vector")
    return atoms


def criterion_value(c, atoms):
    """``phi`` of the uniform measure on ``atoms``."""
    x = _atoms(atoms)
    if c.kind == "variance":
        dev = x - np.mean(x)
        val = np.mean(dev * dev)
    elif c.kind == "linear_mean":
        val = np.mean(c.f(x))
    else:
        val = c.psi(np.mean(c.f(x)))
    return c.scale * float(val)


def criterion_lgrad(c, atoms):
    """L-derivative ``x_i -> d_x delta_mu phi(mu^N, x_i)`` at every atom.

    Equal to ``N`` times the gradient of :func:`criterion_value` in the atoms.
    """
    x = _atoms(atoms)
    if c.kind == "variance":
        out = 2.0 * (x - np.mean(x))
    elif c.kind == "linear_mean":
        out = c.f.deriv(x)
    else:
        out = c.psi.deriv(np.mean(c.f(x))) * c.f.deriv(x)
    return c.scale * out


# initial laws -------------------------------------------------------------

LAW_KINDS = ("gaussian", "uniform", "two_point")
SAMPLING_MODES = ("iid", "quantile_stratified")


@dataclass(frozen=True)
class InitialLaw:
    """``gaussian(mean, std)``, ``uniform(lo, hi)`` or ``two_point(x1, x2, p)``.

    For ``two_point``, ``p`` is the mass of ``x1``.
    """

    kind: str
    params: tuple
    sampling_mode: str = "quantile_stratified"

    def __post_init__(self):
        if self.kind not in LAW_KINDS:
            raise DomainError(f"unknown initial law {self.kind!r}")
        if self.sampling_mode not in SAMPLING_MODES:
            raise DomainError(f"unknown sampling mode {self.sampling_mode!r}")
        params = tuple(float(v) for v in self.params)
        nparams = {"gaussian": 2, "uniform": 2, "two_point": 3}[self.kind]
        if len(params) != nparams or not all(math.isfinite(v) for v in params):
            raise DomainError(f"{self.kind} needs {nparams} finite parameters")
        if self.kind == "gaussian" and params[1] <= 0:
            raise DomainError("gaussian std must be positive")
        if self.kind == "uniform" and params[1] <= params[0]:
            raise DomainError("uniform needs lo < hi")
        if self.kind == "two_point" and not 0.0 < params[2] < 1.0:
            raise DomainError("two_point mass must lie in (0, 1)")
        object.__setattr__(self, "params", params)

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        p = self.params
        if self.kind == "gaussian":
            return p[0] + p[1] * ndtri(u)
        if self.kind == "uniform":
            return p[0] + (p[1] - p[0]) * u
        return np.where(u <= p[2], p[0], p[1])

    def mean(self):
        p = self.params
        if self.kind in ("gaussian",):
            return p[0]
        if self.kind == "uniform":
            return 0.5 * (p[0] + p[1])
        return p[2] * p[0] + (1 - p[2]) * p[1]

    def variance(self):
        p = self.params
        if self.kind == "gaussian":
            return p[1] ** 2
        if self.kind == "uniform":
            return (p[1] - p[0]) ** 2 / 12.0
        return p[2] * (1 - p[2]) * (p[1] - p[0]) ** 2

    def second_moment(self):
        return self.variance() + self.mean() ** 2

    def describe(self):
        return " ".join([self.kind, *(repr(v) for v in self.params)])


def sample_initial(law, n, seed=0):
    """Draw ``n`` initial atoms.

    ``quantile_stratified`` puts atom ``i`` at the ``(i - 0.5) / n`` quantile
    (sorted, seed-independent); ``iid`` inverts Philox uniforms keyed by seed.
    """
    n = int(n)
    if n < 2:
        raise DomainError(f"need at least 2 particles, got {n}")
    if law.sampling_mode == "quantile_stratified":
        u = (np.arange(1, n + 1) - 0.5) / n
    else:
        u = philox_uniforms(seed, INITIAL_LAW_STREAM, 0, n)
    return np.asarray(law.quantile(u), dtype=float)
