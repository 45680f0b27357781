"""Command-line front end: config parsing, dispatch, stable output.

Subcommands: check, simulate, pde, spectral, qsd, converge.  Runs are
configured by a sectioned key=value file ([model], [numerics], [run]),
identified by its SHA-256 hash in every output, and emit JSON with a
fixed key order and 17-significant-digit decimal floats so reruns with
the same config and seed are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import os
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import lyapunov, pde, qsd, spectral
from .errors import ConfigError, CriterionViolated, GrowfragError
from .model import (DoeblinDeclaration, FragmentationKernel, GrowthSpec,
                    ModelSpec, constant_weight, mitosis_ratio, power_ratio,
                    uniform_ratio)
from .pdmp import TiltedJumpLaw, simulate_path

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_CONFIG = 2

_KNOWN_KEYS = {
    "model": {"growth", "growth_c0", "growth_exponent", "kernel",
              "kernel_theta", "rate", "rate_k0", "rate_exponent",
              "mass_conserving", "irreducible"},
    "numerics": {"grid_n", "x_min", "x_max", "dt", "quad_tol", "method"},
    "run": {"seed", "n_paths", "n_particles", "t_end", "checkpoints", "x0",
            "f", "regime", "alpha", "beta", "t_probe", "burn_in",
            "lambda0_estimate", "spectral_json", "eta_paths"},
}


# -- stable JSON ----------------------------------------------------------

def dumps_stable(obj, indent=0) -> str:
    """JSON with insertion key order and %.17g floats; rejects NaN/inf."""
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  "{k}": {dumps_stable(v, indent + 1)}'
            for k, v in obj.items())
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(dumps_stable(v, indent) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        val = float(obj)
        if not np.isfinite(val):
            raise ConfigError(f"non-finite value {val} in JSON output")
        return format(val, ".17g")
    if isinstance(obj, str):
        return '"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"'
    raise ConfigError(f"unserializable value of type {type(obj).__name__}")


# -- configuration --------------------------------------------------------

@dataclass
class RunConfig:
    """Validated run configuration plus the raw-file hash."""

    model: ModelSpec
    kernel_name: str
    sha256: str
    grid_n: int
    x_min: float
    x_max: float
    dt: Optional[float]
    quad_tol: float
    method: str
    seed: int
    n_paths: int
    n_particles: int
    t_end: float
    checkpoints: list
    x0: float
    f_name: str
    regime: str
    alpha: float
    beta: float
    t_probe: float
    burn_in: Optional[float]
    lambda0_estimate: float
    spectral_json: Optional[str]
    eta_paths: int

    def functional(self):
        name = self.f_name
        if name == "one":
            return lambda x: 1.0
        if name == "id":
            return lambda x: x
        if name.startswith("indicator:"):
            try:
                a, b = (float(v) for v in name.split(":")[1:])
            except ValueError:
                raise ConfigError(f"bad indicator spec {name!r}", key="f")
            return lambda x: 1.0 if a <= x <= b else 0.0
        raise ConfigError(f"unknown functional {name!r}", key="f")


def _get(parser, section, key, cast, default=None, positive=False):
    if not parser.has_option(section, key):
        if default is None and cast is not bool:
            return None
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            val = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            val = cast(raw)
    except ValueError:
        raise ConfigError(
            f"cannot parse [{section}] {key} = {raw!r}", key=key)
    if positive and not (isinstance(val, bool)) and val is not None \
            and val <= 0:
        raise ConfigError(f"[{section}] {key} must be positive, got {val}",
                          key=key)
    return val


def _build_growth(parser) -> GrowthSpec:
    kind = _get(parser, "model", "growth", str, "constant").strip()
    c0 = _get(parser, "model", "growth_c0", float, 1.0, positive=True)
    if kind == "constant":
        return GrowthSpec.from_speed(lambda x: c0)
    if kind == "linear":
        return GrowthSpec.from_speed(lambda x: c0 * x)
    if kind == "power":
        expo = _get(parser, "model", "growth_exponent", float, 1.0)
        return GrowthSpec.from_speed(lambda x: c0 * x ** expo)
    raise ConfigError(f"unknown growth kind {kind!r}", key="growth")


def _build_kernel(parser) -> FragmentationKernel:
    kind = _get(parser, "model", "kernel", str, "uniform").strip()
    if kind == "uniform":
        ratio = uniform_ratio()
    elif kind == "mitosis":
        ratio = mitosis_ratio()
    elif kind == "power":
        theta = _get(parser, "model", "kernel_theta", float, 1.0)
        ratio = power_ratio(theta)
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}", key="kernel")
    rate_kind = _get(parser, "model", "rate", str, "constant").strip()
    k0 = _get(parser, "model", "rate_k0", float, 1.0, positive=True)
    if rate_kind == "constant":
        rate = lambda x: k0
    elif rate_kind == "linear":
        rate = lambda x: k0 * x
    elif rate_kind == "power":
        expo = _get(parser, "model", "rate_exponent", float, 1.0)
        rate = lambda x: k0 * x ** expo
    else:
        raise ConfigError(f"unknown rate kind {rate_kind!r}", key="rate")
    conserving = _get(parser, "model", "mass_conserving", bool, False)
    return FragmentationKernel.relative(rate, ratio,
                                        mass_conserving=conserving)


def load_config(path: str, seed_override: Optional[int] = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    sha = hashlib.sha256(raw).hexdigest()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(raw.decode("utf-8"))
    except (UnicodeDecodeError, configparser.Error) as exc:
        raise ConfigError(f"unparseable config: {exc}")
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown section [{section}]", key=section)
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key [{section}] {key}", key=key)

    x_min = _get(parser, "numerics", "x_min", float, 1e-3, positive=True)
    x_max = _get(parser, "numerics", "x_max", float, 1e3, positive=True)
    if not x_min < 1.0 < x_max:
        raise ConfigError(
            f"domain must satisfy x_min < 1 < x_max, got ({x_min}, {x_max})",
            key="x_min")
    quad_tol = _get(parser, "numerics", "quad_tol", float, 1e-8,
                    positive=True)
    grid_n = _get(parser, "numerics", "grid_n", int, 256, positive=True)
    dt = _get(parser, "numerics", "dt", float, None, positive=True)
    method = _get(parser, "numerics", "method", str, "euler").strip()

    doeblin = DoeblinDeclaration()
    doeblin.irreducible = _get(parser, "model", "irreducible", bool, True)
    model = ModelSpec(growth=_build_growth(parser),
                      frag=_build_kernel(parser),
                      domain_hint=(x_min, x_max), doeblin=doeblin)

    seed = _get(parser, "run", "seed", int, 0)
    if seed_override is not None:
        seed = seed_override
    checkpoints = []
    raw_cp = _get(parser, "run", "checkpoints", str, "")
    if raw_cp:
        try:
            checkpoints = [float(v) for v in raw_cp.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad checkpoint list {raw_cp!r}",
                              key="checkpoints")
    return RunConfig(
        model=model,
        kernel_name=_get(parser, "model", "kernel", str, "uniform").strip(),
        sha256=sha, grid_n=grid_n, x_min=x_min, x_max=x_max,
        dt=dt, quad_tol=quad_tol, method=method, seed=seed,
        n_paths=_get(parser, "run", "n_paths", int, 1000, positive=True),
        n_particles=_get(parser, "run", "n_particles", int, 200,
                         positive=True),
        t_end=_get(parser, "run", "t_end", float, 1.0, positive=True),
        checkpoints=checkpoints,
        x0=_get(parser, "run", "x0", float, 1.0, positive=True),
        f_name=_get(parser, "run", "f", str, "one").strip(),
        regime=_get(parser, "run", "regime", str, "pseudo-entrance").strip(),
        alpha=_get(parser, "run", "alpha", float, 2.0),
        beta=_get(parser, "run", "beta", float, 0.0),
        t_probe=_get(parser, "run", "t_probe", float, 1.0, positive=True),
        burn_in=_get(parser, "run", "burn_in", float, None, positive=True),
        lambda0_estimate=_get(parser, "run", "lambda0_estimate", float, 0.0),
        spectral_json=_get(parser, "run", "spectral_json", str, None),
        eta_paths=_get(parser, "run", "eta_paths", int, 400, positive=True),
    )


def _build_weight(cfg: RunConfig):
    """Tilting weight h and its rate bound b for the configured regime."""
    if cfg.regime == "pseudo-entrance":
        h = lyapunov.build_h_pseudo_entrance(cfg.model, cfg.alpha)
    elif cfg.regime == "powerlaw":
        h = lyapunov.build_h_powerlaw(cfg.model, cfg.alpha, cfg.beta)
    elif cfg.regime == "constant":
        h = constant_weight(1.0)
    else:
        raise ConfigError(f"no weight construction for regime "
                          f"{cfg.regime!r}", key="regime")
    report = lyapunov.verify_assumption1(cfg.model, h)
    return h, report


def _grid(cfg: RunConfig) -> pde.SizeGrid:
    return pde.SizeGrid.log_uniform(cfg.x_min, cfg.x_max, cfg.grid_n)


# -- subcommands ----------------------------------------------------------

def cmd_check(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    checks = []
    thresholds = {}
    if cfg.kernel_name == "uniform":
        thr, arg = lyapunov.criterion_uniform_kernel()
        thresholds["uniform_kernel"] = {"threshold": thr, "argmin": arg}
    elif cfg.kernel_name == "mitosis":
        thr, arg = lyapunov.criterion_mitosis_kernel()
        thresholds["mitosis_kernel"] = {"threshold": thr, "argmin": arg}

    if cfg.regime == "lnx":
        low, high = lyapunov.criterion_lnx(cfg.model.frag)
        thresholds["lnx"] = {"low": low, "high": high}
        probes = cfg.model.probe_grid()
        k_vals = np.array([cfg.model.frag.loss_rate(x) for x in probes])
        tail = max(4, len(probes) // 8)
        k_at_zero = float(np.max(k_vals[:tail]))
        k_at_inf = float(np.min(k_vals[-tail:]))
        checks.append({"name": "rate-below-low-threshold-at-zero",
                       "margin": low - k_at_zero,
                       "pass": k_at_zero < low})
        checks.append({"name": "rate-above-high-threshold-at-infinity",
                       "margin": k_at_inf - high,
                       "pass": k_at_inf > high})
        report_json = None
    elif cfg.regime == "K-constant":
        report = lyapunov.criterion_K_constant(cfg.model)
        report_json = report.to_json()
        checks.extend(report_json["checks"])
    elif cfg.regime == "entrance":
        report = lyapunov.criterion_entrance(cfg.model, cfg.lambda0_estimate)
        report_json = report.to_json()
        checks.extend(report_json["checks"])
    else:
        _, report = _build_weight(cfg)
        report_json = report.to_json()
        checks.extend(report_json["checks"])

    passed = all(c["pass"] for c in checks)
    return {
        "command": "check",
        "regime": cfg.regime,
        "passed": passed,
        "checks": checks,
        "thresholds": thresholds,
        "report": report_json,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def cmd_simulate(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    h, report = _build_weight(cfg)
    law = TiltedJumpLaw(cfg.model, h, b=report.b)
    f = cfg.functional()

    def one_path(i):
        trace = simulate_path(cfg.model, law, cfg.x0, cfg.t_end,
                              seed=cfg.seed, stream_id=i)
        if trace.alive:
            y = trace.endpoint
            return f(y) / h(y)
        return 0.0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            vals = np.fromiter(pool.map(one_path, range(cfg.n_paths)),
                               dtype=float, count=cfg.n_paths)
    else:
        vals = np.fromiter(map(one_path, range(cfg.n_paths)),
                           dtype=float, count=cfg.n_paths)
    scale = float(np.exp(report.b * cfg.t_end)) * h(cfg.x0)
    from .pdmp import _jackknife_se
    estimate = scale * float(vals.mean())
    std_error = scale * _jackknife_se(vals)
    trace = simulate_path(cfg.model, law, cfg.x0, cfg.t_end,
                          seed=cfg.seed, stream_id=0)
    trace.to_csv(os.path.join(out_dir, "path.csv"))
    return {
        "command": "simulate",
        "estimate": estimate,
        "std_error": std_error,
        "n_paths": cfg.n_paths,
        "t_end": cfg.t_end,
        "x0": cfg.x0,
        "f": cfg.f_name,
        "b": report.b,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def cmd_pde(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    grid = _grid(cfg)
    traj = pde.solve(cfg.model, grid, cfg.x0, cfg.t_end, dt=cfg.dt,
                     method=cfg.method, checkpoints=cfg.checkpoints or None)
    traj.to_csv(os.path.join(out_dir, "density.csv"))
    return {
        "command": "pde",
        "summary": traj.summary(),
        "below_domain_mass": traj.below_domain_mass,
        "grid_n": cfg.grid_n,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def _spectral_triple(cfg: RunConfig):
    grid = _grid(cfg)
    op = pde.build_discrete_operator(cfg.model, grid)
    triple = spectral.principal_eigen(op, constant_weight(1.0))
    return grid, op, triple


def cmd_spectral(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    _, _, triple = _spectral_triple(cfg)
    triple.to_csv(os.path.join(out_dir, "triple.csv"))
    return {
        "command": "spectral",
        "lambda0": triple.lambda0,
        "residuals": {"right": triple.residuals[0],
                      "left": triple.residuals[1]},
        "grid_n": cfg.grid_n,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def cmd_qsd(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    h, report = _build_weight(cfg)
    law = TiltedJumpLaw(cfg.model, h, b=report.b)
    res = qsd.fv_run(cfg.model, law, cfg.n_particles, cfg.t_end,
                     burn_in=cfg.burn_in, x0=cfg.x0, seed=cfg.seed)
    res.snapshots[-1].to_csv(os.path.join(out_dir, "ensemble.csv"))
    return {
        "command": "qsd",
        "lambda0X": res.lambda0X,
        "ci": [res.ci[0], res.ci[1]],
        "N": res.n_particles,
        "burn_in": res.burn_in,
        "kills": res.kills,
        "b": report.b,
        "lambda0": res.lambda0X - report.b,
        "supported": res.supported,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


def cmd_converge(cfg: RunConfig, out_dir: str, threads: int) -> dict:
    lambda0 = None
    if cfg.spectral_json:
        import json as _json
        try:
            with open(cfg.spectral_json) as fh:
                prior = _json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read spectral summary: {exc}",
                              key="spectral_json")
        if prior.get("config_sha256") != cfg.sha256:
            raise ConfigError(
                "spectral summary was produced under a different config "
                f"(hash {prior.get('config_sha256')} != {cfg.sha256})",
                key="spectral_json")
        lambda0 = prior["lambda0"]
    grid, op, triple = _spectral_triple(cfg)
    if lambda0 is not None:
        triple.lambda0 = float(lambda0)
    horizon = cfg.t_end
    marks = cfg.checkpoints or list(np.linspace(
        0.25 * horizon, horizon, 12))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", pde.BoundaryLeak)
        traj = pde.solve(cfg.model, grid, cfg.x0, horizon, dt=cfg.dt,
                         method=cfg.method, checkpoints=marks, operator=op)
    f = cfg.functional()
    rate_positive = False
    gamma = r_squared = None
    try:
        gamma, r_squared = spectral.fit_gap_rate(
            traj.states, triple, f, constant_weight(1.0))
    except spectral.RatePositive:
        rate_positive = True
    return {
        "command": "converge",
        "lambda0": triple.lambda0,
        "gamma": gamma,
        "r_squared": r_squared,
        "rate_positive": rate_positive,
        "config_sha256": cfg.sha256,
        "seed": cfg.seed,
    }


_COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "pde": cmd_pde,
    "spectral": cmd_spectral,
    "qsd": cmd_qsd,
    "converge": cmd_converge,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="growfrag",
        description="Growth-fragmentation semigroups: checks, simulation, "
                    "densities, spectra and quasi-stationary estimates.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=".")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("GFSPEC_THREADS", "1") or "1")
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        os.makedirs(args.out, exist_ok=True)
        result = _COMMANDS[args.command](cfg, args.out, max(threads, 1))
    except ConfigError as exc:
        sys.stderr.write(dumps_stable(
            {"error": "config", "message": str(exc),
             "key": getattr(exc, "key", None)}) + "\n")
        return EXIT_CONFIG
    except CriterionViolated as exc:
        sys.stderr.write(dumps_stable(
            {"error": "criterion", "message": str(exc)}) + "\n")
        return EXIT_FAILED_CHECK
    except GrowfragError as exc:
        sys.stderr.write(dumps_stable(
            {"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return EXIT_FAILED_CHECK
    text = dumps_stable(result) + "\n"
    sys.stdout.write(text)
    with open(os.path.join(args.out, f"{args.command}.json"), "w") as fh:
        fh.write(text)
    if args.command == "check" and not result["passed"]:
        return EXIT_FAILED_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
