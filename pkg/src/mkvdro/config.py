"""Flat ``section.key = value`` run configuration.

Grammar, one entry per line::

    # comment
    section.key = value

Blank lines and ``#`` comments are ignored; keys must be unique.  Function
families are written as ``kind p1 p2 ...`` (``constant 0.2``,
``affine 0 -1``, ``tanh_saturated 0.2 0.05 1``, ``identity``, ``square``).
Lists are comma separated.  See ``DEFAULTS`` for every key and its default;
``model.drift``, ``model.diffusion`` and ``criterion.kind`` are required.

``model.drift`` is ``mean_reversion A`` (``A (E[X] - X)``), ``additive``
(uses ``model.drift_p``, ``model.drift_q``, ``model.drift_g``:
``p(x) + q(x) <g, mu>``) or a family expression in ``x``.  ``model.diffusion``
is ``additive`` (``model.diffusion_*`` keys) or a family expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import (
    Additive, Criterion, DomainError, FunctionFamily, InitialLaw, ModelSpec)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, msg):
        self.key = key
        super().__init__(f"{key}: {msg}")


REQUIRED = ("model.drift", "model.diffusion", "criterion.kind")

DEFAULTS = {
    "model.drift_p": "constant 0",
    "model.drift_q": "constant 0",
    "model.drift_g": "identity",
    "model.diffusion_p": "constant 0",
    "model.diffusion_q": "constant 0",
    "model.diffusion_g": "identity",
    "criterion.f": "identity",
    "criterion.psi": "identity",
    "criterion.scale": "1.0",
    "law.kind": "gaussian 0 0.5",
    "law.sampling": "quantile_stratified",
    "numerics.n_particles": "4096",
    "numerics.n_steps": "256",
    "numerics.horizon": "1.0",
    "numerics.replicas": "64",
    "numerics.seed": "0",
    "validate.radii": "0.2, 0.1, 0.05, 0.02",
    "validate.pga_iters": "40",
    "validate.pga_step0": "auto",
    "validate.tolerance": "0.05",
    "output.directory": ".",
    "output.formats": "json, csv",
}

KNOWN = set(REQUIRED) | set(DEFAULTS)
_ADDITIVE_ONLY = {
    "model.drift": ("model.drift_p", "model.drift_q", "model.drift_g"),
    "model.diffusion": ("model.diffusion_p", "model.diffusion_q", "model.diffusion_g"),
}
FORMATS = ("json", "csv", "bin")


def parse_family(text, key):
    parts = text.split()
    if not parts:
        raise ConfigError(key, "empty function family")
    try:
        return FunctionFamily(parts[0], tuple(float(v) for v in parts[1:]))
    except (DomainError, ValueError) as exc:
        raise ConfigError(key, str(exc)) from None


def _int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(key, f"expected an integer, got {raw!r}") from None


def _float(raw, key):
    try:
        val = float(raw)
    except ValueError:
        raise ConfigError(key, f"expected a number, got {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(key, "must be finite")
    return val


def _list(raw):
    return [item.strip() for item in raw.split(",") if item.strip()]


@dataclass(frozen=True)
class RunConfig:
    spec: ModelSpec
    criterion: Criterion
    law: InitialLaw
    n_particles: int
    n_steps: int
    replicas: int
    seed: int
    radii: tuple
    pga_iters: int
    pga_step0: float | None
    tolerance: float
    out_dir: str
    formats: tuple
    entries: dict  # resolved section.key -> value text

    def echo(self, **overrides):
        """The resolved configuration as a flat mapping, for artifact embedding."""
        out = dict(self.entries)
        out.update({k: str(v) for k, v in overrides.items()})
        return dict(sorted(out.items()))

    def with_overrides(self, seed=None, out_dir=None):
        entries = dict(self.entries)
        if seed is not None:
            entries["numerics.seed"] = str(int(seed))
        if out_dir is not None:
            entries["output.directory"] = str(out_dir)
        return _build(entries)


def parse_config(text):
    """Parse and validate a configuration document."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'section.key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(key, "keys must have the form section.key")
        if key not in KNOWN:
            raise ConfigError(key, "unknown key")
        if key in entries:
            raise ConfigError(key, "duplicate key")
        entries[key] = value
    for key in REQUIRED:
        if key not in entries:
            raise ConfigError(key, "required key missing")
    for head, extras in _ADDITIVE_ONLY.items():
        if entries[head].split()[0] != "additive":
            for key in extras:
                if key in entries:
                    raise ConfigError(key, f"only valid with {head} = additive")
    kind = entries["criterion.kind"]
    if "criterion.f" in entries and kind == "variance":
        raise ConfigError("criterion.f", "not used by the variance criterion")
    if "criterion.psi" in entries and kind != "composed":
        raise ConfigError("criterion.psi", "only used by the composed criterion")
    resolved = dict(DEFAULTS)
    resolved.update(entries)
    return _build(resolved)


def _drift(entries):
    raw = entries["model.drift"]
    parts = raw.split()
    if parts[0] == "mean_reversion":
        if len(parts) != 2:
            raise ConfigError("model.drift", "mean_reversion takes the rate a")
        a = _float(parts[1], "model.drift")
        return (Additive(FunctionFamily.affine(0.0, -a), FunctionFamily.constant(a)),
                FunctionFamily.identity())
    if parts[0] == "additive":
        return (Additive(parse_family(entries["model.drift_p"], "model.drift_p"),
                         parse_family(entries["model.drift_q"], "model.drift_q")),
                parse_family(entries["model.drift_g"], "model.drift_g"))
    return Additive(parse_family(raw, "model.drift")), FunctionFamily.identity()


def _diffusion(entries):
    raw = entries["model.diffusion"]
    if raw.split()[0] == "additive":
        return (Additive(parse_family(entries["model.diffusion_p"], "model.diffusion_p"),
                         parse_family(entries["model.diffusion_q"], "model.diffusion_q")),
                parse_family(entries["model.diffusion_g"], "model.diffusion_g"))
    return Additive(parse_family(raw, "model.diffusion")), FunctionFamily.identity()


def _build(entries):
    horizon = _float(entries["numerics.horizon"], "numerics.horizon")
    if horizon <= 0:
        raise ConfigError("numerics.horizon", "must be > 0")
    drift, drift_g = _drift(entries)
    diff, diff_g = _diffusion(entries)
    try:
        spec = ModelSpec(drift, drift_g, diff, diff_g, horizon)
    except DomainError as exc:
        raise ConfigError("model.drift" if "drift" in str(exc) else "model.diffusion",
                          str(exc)) from None

    try:
        criterion = Criterion(
            entries["criterion.kind"],
            f=parse_family(entries["criterion.f"], "criterion.f"),
            psi=parse_family(entries["criterion.psi"], "criterion.psi"),
            scale=_float(entries["criterion.scale"], "criterion.scale"),
        )
    except DomainError as exc:
        raise ConfigError("criterion.kind", str(exc)) from None

    law_parts = entries["law.kind"].split()
    try:
        law = InitialLaw(law_parts[0], tuple(_float(v, "law.kind") for v in law_parts[1:]),
                         entries["law.sampling"])
    except DomainError as exc:
        key = "law.sampling" if "sampling" in str(exc) else "law.kind"
        raise ConfigError(key, str(exc)) from None

    n = _int(entries["numerics.n_particles"], "numerics.n_particles")
    if n < 2:
        raise ConfigError("numerics.n_particles", "must be >= 2")
    steps = _int(entries["numerics.n_steps"], "numerics.n_steps")
    if steps < 1:
        raise ConfigError("numerics.n_steps", "must be >= 1")
    replicas = _int(entries["numerics.replicas"], "numerics.replicas")
    if replicas < 2:
        raise ConfigError("numerics.replicas", "must be >= 2")
    seed = _int(entries["numerics.seed"], "numerics.seed")
    if seed < 0:
        raise ConfigError("numerics.seed", "must be >= 0")

    radii = tuple(_float(v, "validate.radii") for v in _list(entries["validate.radii"]))
    if not radii or any(r <= 0 for r in radii):
        raise ConfigError("validate.radii", "needs one or more positive radii")
    radii = tuple(sorted(radii, reverse=True))
    iters = _int(entries["validate.pga_iters"], "validate.pga_iters")
    if iters < 1:
        raise ConfigError("validate.pga_iters", "must be >= 1")
    step0_raw = entries["validate.pga_step0"]
    step0 = None if step0_raw == "auto" else _float(step0_raw, "validate.pga_step0")
    if step0 is not None and step0 <= 0:
        raise ConfigError("validate.pga_step0", "must be > 0 or auto")
    tol = _float(entries["validate.tolerance"], "validate.tolerance")
    if tol <= 0:
        raise ConfigError("validate.tolerance", "must be > 0")

    formats = tuple(_list(entries["output.formats"]))
    for fmt in formats:
        if fmt not in FORMATS:
            raise ConfigError("output.formats", f"unknown format {fmt!r}")

    return RunConfig(
        spec=spec, criterion=criterion, law=law, n_particles=n, n_steps=steps,
        replicas=replicas, seed=seed, radii=radii, pga_iters=iters, pga_step0=step0,
        tolerance=tol, out_dir=entries["output.directory"], formats=formats,
        entries=dict(entries),
    )
