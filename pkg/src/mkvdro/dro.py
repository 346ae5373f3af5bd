"""Brute-force estimates of the worst-case criterion over small 2-Wasserstein balls.

Perturbed initial laws are realized on the same atoms, ``xi' = xi + eta``,
so ``W2(law(xi'), law(xi)) <= ||eta||_N`` and the ball becomes the
empirical-norm ball.  Every evaluation reuses one fixed noise set (common
random numbers), so slopes ``(phi(r) - phi(0)) / r`` are differences of
strongly correlated quantities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import criterion_value
from .sensitivity import terminal_gradient
from .simulate import map_ordered, simulate_system
from .tangent import pull_adjoint


def _norm_n(v):
    return math.sqrt(float(np.mean(v * v)))


def phi_replicas(spec, c, xi_prime, n_steps, noise, workers=1):
    """Criterion at the terminal atoms of every replica in ``noise``."""
    def one(grid):
        return criterion_value(c, simulate_system(spec, xi_prime, n_steps, grid).terminal)
    return np.array(map_ordered(one, noise, workers))


def phi_hat(spec, c, xi_prime, n_steps, noise, workers=1):
    """Replica average of the terminal criterion, started from ``xi_prime``."""
    return float(np.mean(phi_replicas(spec, c, xi_prime, n_steps, noise, workers)))


def _value_and_gradient(spec, c, xi_prime, n_steps, noise, workers):
    def one(grid):
        path = simulate_system(spec, xi_prime, n_steps, grid)
        zeta = pull_adjoint(spec, path, terminal_gradient(c, path))
        return criterion_value(c, path.terminal), zeta
    out = map_ordered(one, noise, workers)
    phis = np.array([p for p, _ in out])
    grad = np.mean(np.stack([z for _, z in out]), axis=0)
    return phis, grad


@dataclass
class DroCurve:
    """Worst-case values over a descending radius grid.

    ``stderr[k]`` is the replica standard error of ``slope_pga[k]`` (of
    ``slope_push[k]`` when no ascent was run).
    """

    radii: np.ndarray
    phi_at_zero: float
    phi_push: np.ndarray
    slope_push: np.ndarray
    stderr: np.ndarray
    phi_pga: np.ndarray | None = None
    slope_pga: np.ndarray | None = None
    pga_logs: list = field(default_factory=list)

    def rows(self):
        nan = np.full(len(self.radii), np.nan)
        pga = nan if self.phi_pga is None else self.phi_pga
        spga = nan if self.slope_pga is None else self.slope_pga
        for k, r in enumerate(self.radii):
            yield (float(r), float(self.phi_push[k]), float(pga[k]),
                   float(self.slope_push[k]), float(spga[k]), float(self.stderr[k]))

    def write_csv(self, fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["r", "phi_push", "phi_pga", "slope_push", "slope_pga", "stderr"])
        for row in self.rows():
            writer.writerow([repr(v) for v in row])


def _slope_stats(phis_r, phis_0, r):
    slopes = (phis_r - phis_0) / r
    se = float(np.std(slopes, ddof=1) / math.sqrt(slopes.size)) if slopes.size > 1 else 0.0
    return float(np.mean(phis_r)), (float(np.mean(phis_r)) - float(np.mean(phis_0))) / r, se


def push_curve(spec, c, xi, eta_star, radii, n_steps, noise, workers=1):
    """Criterion along ``xi + r * eta_star`` for each radius; lower-bound slopes."""
    xi = np.asarray(xi, dtype=float)
    eta_star = np.asarray(eta_star, dtype=float)
    norm = _norm_n(eta_star)
    if norm > 0 and not math.isclose(norm, 1.0, rel_tol=1e-9):
        raise ValueError(f"eta_star must have unit empirical norm, got {norm}")
    radii = np.asarray(radii, dtype=float)
    base = phi_replicas(spec, c, xi, n_steps, noise, workers)
    vals, slopes, ses = [], [], []
    for r in radii:
        phis = phi_replicas(spec, c, xi + r * eta_star, n_steps, noise, workers)
        v, s, se = _slope_stats(phis, base, r)
        vals.append(v)
        slopes.append(s)
        ses.append(se)
    return DroCurve(radii, float(np.mean(base)), np.array(vals), np.array(slopes), np.array(ses))


@dataclass
class PgaResult:
    eta: np.ndarray
    phi: float
    phi_replicas: np.ndarray
    log: list


def _project(v, r):
    norm = _norm_n(v)
    return v if norm <= r else v * (r / norm)


def pga_maximize(spec, c, xi, r, n_steps, noise, iters=40, step0=None, workers=1):
    """Projected gradient ascent of the CRN objective over ``||eta||_N <= r``.

    Steps move ``step`` along the normalized gradient; a step that does not
    improve the objective is rejected and ``step`` is halved.  The best
    iterate is returned together with a per-iteration log.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    if iters < 1:
        raise ValueError("pga needs at least one iteration")
    xi = np.asarray(xi, dtype=float)
    step = r / 4.0 if step0 is None else float(step0)
    eta = np.zeros_like(xi)
    phis, grad = _value_and_gradient(spec, c, xi, n_steps, noise, workers)
    cur = float(np.mean(phis))
    log = []
    for it in range(iters):
        gnorm = _norm_n(grad)
        if gnorm == 0.0 or step < r * 2.0**-12:
            break
        cand = _project(eta + step * grad / gnorm, r)
        cphis, cgrad = _value_and_gradient(spec, c, xi + cand, n_steps, noise, workers)
        val = float(np.mean(cphis))
        accepted = val > cur
        log.append({"iter": it, "step": step, "phi": val, "accepted": accepted})
        if accepted:
            eta, cur, phis, grad = cand, val, cphis, cgrad
        else:
            step /= 2.0
    return PgaResult(eta, cur, phis, log)


def validate_curve(spec, c, xi, eta_star, radii, n_steps, noise, iters=40, step0=None,
                   workers=1):
    """Push curve plus projected-gradient ascent at every radius."""
    curve = push_curve(spec, c, xi, eta_star, radii, n_steps, noise, workers)
    base = phi_replicas(spec, c, xi, n_steps, noise, workers)
    vals, slopes, ses = [], [], []
    for r in curve.radii:
        res = pga_maximize(spec, c, xi, r, n_steps, noise, iters, step0, workers)
        v, s, se = _slope_stats(res.phi_replicas, base, r)
        vals.append(v)
        slopes.append(s)
        ses.append(se)
        curve.pga_logs.append(res.log)
    curve.phi_pga = np.array(vals)
    curve.slope_pga = np.array(slopes)
    curve.stderr = np.array(ses)
    return curve


@dataclass(frozen=True)
class OuOracle:
    """Mean-reverting model with constant volatility and variance criterion."""

    a: float
    sigma: float
    T: float
    var0: float

    def __post_init__(self):
        if min(self.a, self.sigma, self.T) < 0 or not self.var0 > 0:
            raise ValueError("OU oracle needs a, sigma, T >= 0 and var0 > 0")


def ou_oracle(o):
    """Closed-form ``(Var[X_T], dPhi/dr at 0)``.

    ``X_T - E xi = e^{-aT} (xi - E xi) + martingale``, the tangent map is
    ``eta -> e^{-aT} (eta - E eta) + E eta`` and its adjoint maps the terminal
    gradient ``2 (X_T - E xi)`` to ``2 e^{-2aT} (xi - E xi)``.
    """
    decay = math.exp(-2.0 * o.a * o.T)
    # (1 - e^{-2aT}) / (2a), continuous at a = 0
    ramp = o.T if o.a == 0 else -math.expm1(-2.0 * o.a * o.T) / (2.0 * o.a)
    var_T = decay * o.var0 + o.sigma**2 * ramp
    s_star = 2.0 * decay * math.sqrt(o.var0)
    return var_T, s_star
