"""Command line front end: ``mkvdro {simulate,sensitivity,validate,oracle}``.

Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
failure, 4 statistical failure, 5 flat criterion.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, parse_config
from .dro import OuOracle, ou_oracle, validate_curve
from .model import FunctionFamily, criterion_value, sample_initial
from .sensitivity import (
    FlatCriterionError, estimate_zeta, noise_set, sensitivity_norm)
from .simulate import NoiseGrid, SimulationError, simulate_system

log = logging.getLogger("mkvdro")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STAT, EXIT_FLAT = 0, 1, 2, 3, 4, 5
COMMANDS = ("simulate", "sensitivity", "validate", "oracle")


class NoClosedFormError(ValueError):
    pass


def _echo(cfg):
    echo = cfg.echo()
    echo.pop("output.directory", None)
    return echo


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _artifact(cfg, command, ext):
    return os.path.join(cfg.out_dir, f"{command}-{cfg.seed}.{ext}")


def _initial_atoms(cfg):
    return sample_initial(cfg.law, cfg.n_particles, cfg.seed)


def _sensitivity(cfg, workers):
    xi = _initial_atoms(cfg)
    field_ = estimate_zeta(cfg.spec, cfg.criterion, xi, cfg.n_steps, cfg.replicas,
                           cfg.seed, workers=workers)
    return sensitivity_norm(field_, model_echo=_echo(cfg)), field_


def cmd_simulate(cfg, args):
    xi = _initial_atoms(cfg)
    noise = NoiseGrid(cfg.seed, 0, cfg.n_particles, cfg.n_steps, cfg.spec.horizon)
    path = simulate_system(cfg.spec, xi, cfg.n_steps, noise)
    xT = path.terminal
    summary = {
        "n": cfg.n_particles, "l": cfg.n_steps, "seed": cfg.seed,
        "terminal_mean": float(np.mean(xT)),
        "terminal_variance": float(np.var(xT)),
        "terminal_min": float(np.min(xT)),
        "terminal_max": float(np.max(xT)),
        "phi": criterion_value(cfg.criterion, xT),
        "config": _echo(cfg),
    }
    if "json" in cfg.formats:
        _write_json(_artifact(cfg, "simulate", "json"), summary)
    if "bin" in cfg.formats:
        with open(_artifact(cfg, "simulate", "bin"), "wb") as fh:
            path.dump(fh)
    print(f"terminal mean {summary['terminal_mean']:.6g}  "
          f"variance {summary['terminal_variance']:.6g}  phi {summary['phi']:.6g}")
    return EXIT_OK


def cmd_sensitivity(cfg, args):
    report, _ = _sensitivity(cfg, args.workers)
    _write_json(_artifact(cfg, "sensitivity", "json"), report.to_dict())
    print(f"s_debiased {report.s_debiased:.6g}  s_naive {report.s_naive:.6g}  "
          f"stderr {report.s_stderr:.3g}")
    if report.direction is None:
        log.warning("adjoint field not resolved from zero; no worst-case direction")
    return EXIT_OK


def _load_prior(path, cfg):
    with open(path) as fh:
        prior = json.load(fh)
    if prior.get("n") != cfg.n_particles:
        raise ConfigError("--sensitivity", "prior report has a different particle count")
    direction = prior.get("direction")
    return prior["s_debiased"], None if direction is None else np.asarray(direction)


def cmd_validate(cfg, args):
    if args.sensitivity:
        s_deb, direction = _load_prior(args.sensitivity, cfg)
    else:
        report, _ = _sensitivity(cfg, args.workers)
        s_deb, direction = report.s_debiased, report.direction
    if direction is None:
        raise FlatCriterionError("flat criterion: no resolved worst-case direction")
    xi = _initial_atoms(cfg)
    noise = noise_set(cfg.seed, cfg.replicas, cfg.n_particles, cfg.n_steps,
                      cfg.spec.horizon)
    curve = validate_curve(cfg.spec, cfg.criterion, xi, direction, cfg.radii, cfg.n_steps,
                           noise, cfg.pga_iters, cfg.pga_step0, args.workers)
    if "csv" in cfg.formats:
        with open(_artifact(cfg, "validate", "csv"), "w", newline="") as fh:
            curve.write_csv(fh)
    slope = float(curve.slope_pga[-1])
    rel = abs(slope - s_deb) / s_deb
    passed = rel <= cfg.tolerance
    _write_json(_artifact(cfg, "validate", "json"), {
        "s_debiased": s_deb,
        "radius": float(curve.radii[-1]),
        "slope_pga": slope,
        "slope_push": float(curve.slope_push[-1]),
        "relative_error": rel,
        "tolerance": cfg.tolerance,
        "passed": passed,
        "config": _echo(cfg),
    })
    print(f"slope_pga(r={curve.radii[-1]:g}) {slope:.6g} vs s_debiased {s_deb:.6g}: "
          f"rel {rel:.3%} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_STAT


def ou_parameters(cfg):
    """``(a, sigma)`` if the configuration is the constant-volatility OU model."""
    spec, c = cfg.spec, cfg.criterion
    p, q = spec.drift_hat.p, spec.drift_hat.q
    g_ok = spec.drift_g in (FunctionFamily.identity(), FunctionFamily.affine(0.0, 1.0))
    ou_drift = (p.kind == "affine" and p.params[0] == 0.0 and q.kind == "constant"
                and q.params[0] == -p.params[1] and q.params[0] >= 0 and g_ok)
    const_vol = spec.diff_hat.p.kind == "constant" and spec.diff_hat.q.is_zero
    if not (ou_drift and const_vol and c.kind == "variance"):
        raise NoClosedFormError(
            "no closed form: the oracle needs mean_reversion drift, constant diffusion "
            "and the variance criterion")
    return q.params[0], abs(spec.diff_hat.p.params[0])


def cmd_oracle(cfg, args):
    a, sigma = ou_parameters(cfg)
    var_T, s_star = ou_oracle(OuOracle(a, sigma, cfg.spec.horizon, cfg.law.variance()))
    var_T *= cfg.criterion.scale
    s_star *= abs(cfg.criterion.scale)
    report, field_ = _sensitivity(cfg, args.workers)
    phi = field_.phi_hat
    rel_s = abs(report.s_debiased - s_star) / s_star
    rel_v = abs(phi - var_T) / var_T
    passed = rel_s <= 0.03 and rel_v <= 0.05
    _write_json(_artifact(cfg, "oracle", "json"), {
        "var_T": var_T, "s_star": s_star,
        "phi_hat": phi, "s_debiased": report.s_debiased,
        "relative_error_s": rel_s, "relative_error_var": rel_v,
        "passed": passed, "config": _echo(cfg),
    })
    print(f"var_T {var_T:.7g}  s_star {s_star:.7g}")
    print(f"phi_hat {phi:.7g} (rel {rel_v:.3%})  s_debiased {report.s_debiased:.7g} "
          f"(rel {rel_s:.3%})")
    return EXIT_OK if passed else EXIT_STAT


HANDLERS = {"simulate": cmd_simulate, "sensitivity": cmd_sensitivity,
            "validate": cmd_validate, "oracle": cmd_oracle}


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return val


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mkvdro",
        description="Wasserstein sensitivity of McKean-Vlasov terminal criteria.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="flat section.key = value file")
    parser.add_argument("--seed", type=int, help="overrides numerics.seed")
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--workers", type=_positive_int, default=1,
                        help="thread cap for replica loops; results do not depend on it")
    parser.add_argument("--sensitivity", help="prior sensitivity JSON for validate")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
        cfg = cfg.with_overrides(seed=args.seed, out_dir=args.out)
        os.makedirs(cfg.out_dir, exist_ok=True)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, NoClosedFormError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except SimulationError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except FlatCriterionError as exc:
        log.error("%s", exc)
        return EXIT_FLAT
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
