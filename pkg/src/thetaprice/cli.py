"""Batch front-end: price strike x maturity lattices from a TOML config.

Usage::

    thetaprice [run] --config run.toml [--method semi|fd|both] [--no-psi] [--threads N] [--out DIR]
    thetaprice compare a.csv b.csv [--out errors.csv]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.

Config schema (``version = 1``)::

    [model]
    family = "exponential"        # or "piecewise", "sampled"
    r0 = 0.02                     # exponential family
    q0 = 0.01
    sigma0 = 45.0                 # absolute (normal) volatility, or
    # sigma0_lognormal = 0.5      #   lognormal proxy ...
    # sigma_reference = 90.0      #   ... times a reference level
    r_k = 0.1
    sigma_k = 0.2
    horizon = 1.0                 # defaults to the largest maturity
    # knots/times, r, q, sigma (or sigma_lognormal + sigma_reference) for
    # the piecewise and sampled families

    [product]
    type = "UpOutCall"            # DownOutCall, AmericanCall, EuropeanCall
    S0 = 50.0
    H = 90.0                      # barrier products
    strikes = [50, 55, 60]
    maturities = [0.5, 1.0]

    [numerics]                    # all optional
    n_p = 12
    n_tau = 32
    n_z = 401
    lambda = "auto"               # or a number
    operator = "identity"         # or "difference"
    no_psi = false
    fd_N = 201
    fd_dt = 0.001
    rannacher_steps = 4
    american_n_tau = 10
    american_n_p = 16

    [output]
    directory = "out"
    deterministic = true          # leave runtime_ms blank in the CSVs
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, LatticeMismatch, PricingError
from .fd import fd_surface
from .pricer import (PriceSurface, Product, american_surface, barrier_surface, do_call_surface,
                     vanilla_surface)
from .termstructure import ExponentialCurve, PiecewiseConstantCurve, SampledCurve

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["RunConfig", "load_config", "build_curve", "run", "compare", "main"]

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERIC_DEFAULTS = dict(n_p=12, n_tau=32, n_z=401, lam="auto", operator="identity", no_psi=False,
                        fd_N=201, fd_dt=0.001, rannacher_steps=4, american_n_tau=10, american_n_p=16)


@dataclass
class RunConfig:
    model: dict
    product: dict
    numerics: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @property
    def strikes(self):
        return np.asarray(self.product["strikes"], dtype=float)

    @property
    def maturities(self):
        return np.asarray(self.product["maturities"], dtype=float)

    @property
    def product_type(self):
        return Product(self.product.get("type", "UpOutCall"))


def _number_list(section, key, where):
    vals = section.get(key)
    if not isinstance(vals, list) or not vals:
        raise ConfigError(f"[{where}] {key} must be a non-empty array")
    try:
        arr = np.asarray(vals, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}] {key} must contain numbers") from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"[{where}] {key} must be finite")
    return arr


def _require(section, key, where):
    if key not in section:
        raise ConfigError(f"[{where}] missing key {key!r}")
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"[{where}] {key} must be a number")
    return float(val)


def validate(raw: dict) -> RunConfig:
    """Check a parsed config and fill defaults."""
    if raw.get("version") != SCHEMA_VERSION:
        raise ConfigError(f"version must be {SCHEMA_VERSION}, got {raw.get('version')!r}")
    for sec in ("model", "product"):
        if not isinstance(raw.get(sec), dict):
            raise ConfigError(f"missing section [{sec}]")
    product = dict(raw["product"])
    try:
        ptype = Product(product.get("type", "UpOutCall"))
    except ValueError:
        raise ConfigError(f"[product] unknown type {product.get('type')!r}") from None
    strikes = _number_list(product, "strikes", "product")
    maturities = _number_list(product, "maturities", "product")
    S0 = _require(product, "S0", "product")
    if S0 <= 0 or np.any(strikes <= 0) or np.any(maturities <= 0):
        raise ConfigError("[product] S0, strikes and maturities must be positive")
    if ptype in (Product.UP_OUT_CALL, Product.DOWN_OUT_CALL):
        H = _require(product, "H", "product")
        if not S0 < H:
            raise ConfigError("[product] S0 must lie below the barrier H")
        if ptype is Product.UP_OUT_CALL and np.any(strikes >= H):
            raise ConfigError("[product] strikes must lie below the barrier H")
    numerics = dict(NUMERIC_DEFAULTS)
    given = dict(raw.get("numerics", {}))
    if "lambda" in given:
        given["lam"] = given.pop("lambda")
    unknown = set(given) - set(numerics)
    if unknown:
        raise ConfigError(f"[numerics] unknown keys {sorted(unknown)}")
    numerics.update(given)
    lam = numerics["lam"]
    if not (lam == "auto" or (isinstance(lam, (int, float)) and not isinstance(lam, bool) and lam >= 0)):
        raise ConfigError("[numerics] lambda must be 'auto' or a non-negative number")
    if numerics["operator"] not in ("identity", "difference"):
        raise ConfigError("[numerics] operator must be 'identity' or 'difference'")
    for key in ("n_p", "n_tau", "n_z", "fd_N", "american_n_tau", "american_n_p"):
        if not isinstance(numerics[key], int) or numerics[key] < 2:
            raise ConfigError(f"[numerics] {key} must be an integer >= 2")
    if numerics["fd_N"] < 51:
        raise ConfigError("[numerics] fd_N must be at least 51")
    output = {"directory": "out", "deterministic": True}
    output.update(raw.get("output", {}))
    cfg = RunConfig(model=dict(raw["model"]), product=product, numerics=numerics, output=output)
    build_curve(cfg)  # model section errors surface before any pricing
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return validate(raw)


def _sigma_values(model, plain, scalar):
    """Absolute volatility from either ``plain`` or lognormal proxy x reference level."""
    if plain in model:
        return model[plain]
    proxy = plain + "_lognormal"
    if proxy in model and "sigma_reference" in model:
        ref = float(model["sigma_reference"])
        vals = model[proxy]
        return vals * ref if scalar else [v * ref for v in vals]
    raise ConfigError(f"[model] give {plain} or {proxy} with sigma_reference")


def build_curve(cfg: RunConfig):
    m = cfg.model
    horizon = float(m.get("horizon", float(np.max(cfg.maturities))))
    if horizon < float(np.max(cfg.maturities)):
        raise ConfigError("[model] horizon is shorter than the largest maturity")
    family = m.get("family", "exponential")
    try:
        if family == "exponential":
            sigma0 = float(_sigma_values(m, "sigma0", True))
            return ExponentialCurve(_require(m, "r0", "model"), _require(m, "q0", "model"), sigma0,
                                    float(m.get("r_k", 0.0)), float(m.get("sigma_k", 0.0)), horizon)
        if family == "piecewise":
            sig = _sigma_values(m, "sigma", False)
            return PiecewiseConstantCurve(m["knots"], m["r"], m["q"], sig, horizon)
        if family == "sampled":
            sig = _sigma_values(m, "sigma", False)
            return SampledCurve(m["times"], m["r"], m["q"], sig, horizon)
    except KeyError as exc:
        raise ConfigError(f"[model] missing key {exc.args[0]!r}") from None
    except (PricingError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[model] {exc}") from None
    raise ConfigError(f"[model] unknown family {family!r}")


def _semi_surface(cfg, curve, no_psi, threads, timings):
    p, n = cfg.product, cfg.numerics
    kind = cfg.product_type
    common = dict(n_z=n["n_z"], n_tau=n["n_tau"], n_p=n["n_p"], lam=n["lam"], operator=n["operator"],
                  no_psi=no_psi, timings=timings, threads=threads)
    if kind is Product.UP_OUT_CALL:
        return barrier_surface(curve, p["S0"], p["H"], cfg.strikes, cfg.maturities, **common)
    if kind is Product.DOWN_OUT_CALL:
        return do_call_surface(curve, p["S0"], p["H"], cfg.strikes, cfg.maturities, **common)
    if kind is Product.EUROPEAN_CALL:
        return vanilla_surface(curve, p["S0"], cfg.strikes, cfg.maturities, timings=timings, threads=threads)
    return american_surface(curve, p["S0"], cfg.strikes, cfg.maturities, n_tau=n["american_n_tau"],
                            n_p=n["american_n_p"], n_z=n["n_z"], timings=timings, threads=threads)


def _write_surface(surface: PriceSurface, path, deterministic):
    if deterministic:
        surface = PriceSurface(surface.strikes, surface.maturities, surface.prices, surface.method,
                               surface.psi_share, np.full(surface.prices.shape, np.nan))
    surface.to_csv(path)


def error_table(a: PriceSurface, b: PriceSurface):
    """Per-cell relative error of ``a`` against the reference ``b``."""
    if a.prices.shape != b.prices.shape or not (np.allclose(a.strikes, b.strikes)
                                                and np.allclose(a.maturities, b.maturities)):
        raise LatticeMismatch("surfaces are on different strike x maturity lattices")
    diff = np.abs(a.prices - b.prices)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(b.prices != 0, diff / np.abs(b.prices), diff)
    return rel, diff


def _write_errors(a, b, path):
    rel, diff = error_table(a, b)
    with open(path, "w") as fh:
        fh.write(f"K,T,{a.method},{b.method},rel_error,abs_error\n")
        for j, T in enumerate(a.maturities):
            for i, K in enumerate(a.strikes):
                vals = (K, T, a.prices[i, j], b.prices[i, j], rel[i, j], diff[i, j])
                fh.write(",".join(repr(float(v)) for v in vals) + "\n")
    return rel


def run(cfg: RunConfig, method="both", no_psi=None, threads=1, out=None) -> dict:
    """Price the configured lattice and write CSV surfaces, errors and timings."""
    out = Path(out or cfg.output["directory"])
    out.mkdir(parents=True, exist_ok=True)
    no_psi = bool(cfg.numerics["no_psi"] if no_psi is None else no_psi)
    deterministic = bool(cfg.output.get("deterministic", True))
    curve = build_curve(cfg)
    timings = {"transform": 0.0, "fredholm": 0.0, "pricing": 0.0, "fd": 0.0}
    wall0 = time.perf_counter()
    surfaces = {}
    if method in ("semi", "both"):
        surfaces["semi"] = _semi_surface(cfg, curve, no_psi, threads, timings)
    if method in ("fd", "both"):
        n = cfg.numerics
        surfaces["fd"] = fd_surface(curve, cfg.product["S0"], cfg.strikes, cfg.maturities,
                                    product=cfg.product_type.value, H=cfg.product.get("H"),
                                    N=n["fd_N"], dt=n["fd_dt"], rannacher_steps=n["rannacher_steps"],
                                    threads=threads, timings=timings)
    wall = time.perf_counter() - wall0
    files = {}
    for name, surf in surfaces.items():
        path = out / f"surface_{name}.csv"
        _write_surface(surf, path, deterministic)
        files[name] = str(path)
    summary = {}
    if len(surfaces) == 2:
        path = out / "errors.csv"
        rel = _write_errors(surfaces["semi"], surfaces["fd"], path)
        files["errors"] = str(path)
        summary = {"max_rel_error": float(np.max(rel)), "mean_rel_error": float(np.mean(rel))}
    stages = {k: round(v, 6) for k, v in timings.items()}
    report = {
        "stages": stages,
        "total": round(sum(timings.values()), 6),
        "wall": round(wall, 6),
        "fredholm_skipped": no_psi or cfg.product_type is Product.EUROPEAN_CALL,
        "threads": threads,
        "cells_ms": {name: [[float(K), float(T), float(ms)] for K, T, _, _, _, ms in s.rows()]
                     for name, s in surfaces.items()},
        **summary,
    }
    with open(out / "timing.json", "w") as fh:
        json.dump(report, fh, indent=2)
    files["timing"] = str(out / "timing.json")
    return {"files": files, "timing": report, "surfaces": surfaces}


def compare(file_a, file_b, out=None):
    """Relative error table of surface ``file_a`` against reference ``file_b``."""
    a = PriceSurface.from_csv(file_a)
    b = PriceSurface.from_csv(file_b)
    rel, _ = error_table(a, b)
    if out:
        _write_errors(a, b, out)
    return rel


def _error_report(out, exc, code):
    info = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    cell = getattr(exc, "cell", None)
    if cell is not None:
        info["cell"] = cell
    print(json.dumps(info), file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            with open(Path(out) / "error.json", "w") as fh:
                json.dump(info, fh, indent=2)
        except OSError:
            pass


def _parser():
    ap = argparse.ArgumentParser(prog="thetaprice", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command")
    r = sub.add_parser("run", help="price a lattice from a config file")
    r.add_argument("--config", required=True, help="TOML config path")
    r.add_argument("--method", choices=("semi", "fd", "both"), default="both")
    r.add_argument("--no-psi", action="store_true", help="drop the boundary-flux term")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--out", default=None, help="output directory (overrides [output] directory)")
    c = sub.add_parser("compare", help="relative error between two surface CSVs")
    c.add_argument("file_a")
    c.add_argument("file_b")
    c.add_argument("--out", default=None, help="write the per-cell table to this CSV")
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in ("run", "compare", "-h", "--help"):
        argv.insert(0, "run")
    args = _parser().parse_args(argv)
    if args.command is None:
        _parser().print_help()
        return EXIT_CONFIG
    if args.command == "compare":
        try:
            rel = compare(args.file_a, args.file_b, args.out)
        except (LatticeMismatch, OSError) as exc:
            _error_report(None, exc, EXIT_CONFIG)
            return EXIT_CONFIG
        print(f"max_rel_error={np.max(rel):.6e} mean_rel_error={np.mean(rel):.6e}")
        return EXIT_OK
    out = args.out
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config)
        out = out or cfg.output["directory"]
        result = run(cfg, method=args.method, no_psi=True if args.no_psi else None,
                     threads=args.threads, out=out)
    except ConfigError as exc:
        _error_report(out, exc, EXIT_CONFIG)
        return EXIT_CONFIG
    except (PricingError, ArithmeticError, np.linalg.LinAlgError) as exc:
        _error_report(out, exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    except Exception as exc:  # anything else is reported as a numeric failure
        traceback.print_exc()
        _error_report(out, exc, EXIT_NUMERIC)
        return EXIT_NUMERIC
    t = result["timing"]
    line = f"wrote {', '.join(result['files'].values())}; total {t['total']:.3f}s"
    if "max_rel_error" in t:
        line += f"; max rel error {t['max_rel_error']:.3e}"
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
