"""Command-line entry point.

``trijastrow {verify,integrals,energy,oracle,sweep} [--config PATH]
[--seed U64] [--threads K] [--out DIR]``

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 counterexample found by a property check.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import tempfile
import warnings

from . import __version__
from .config import SUBCOMMANDS, ConfigError, RunConfig, config_from_dict
from .lemma import lemma_suite
from .mc import LowAcceptanceError, McParams, default_burn_in, run_chains, tune_step
from .metric import BoxGeometry, metric_self_check
from .model import (InadmissibleConfiguration, build_configuration, configuration_to_json,
                    load_positions_text, positions_from_json, sandwich_suite)
from .observables import (THEOREM_CONSTANT, HALF_B_M, analyse_sweep, constant_ratio_report,
                          energy_from_chains, leading_order_reference, run_sweep_point)
from .oracle import OracleError, qmc_oracle
from .scattering import (S5_SETTINGS, QuadratureError, ScatteringProfile,
                         energy_integral_limit, quad_energy_integral, quad_u_integral,
                         v_integral)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_COUNTEREXAMPLE = 0, 2, 3, 4
DEFAULT_ELL_OVER_A = 10.0


class NumericalFailure(RuntimeError):
    pass


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def write_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta(cfg: RunConfig, sub: str) -> dict:
    return {"subcommand": sub, "config_hash": cfg.config_hash(), "seed": cfg.seed,
            "version": __version__}


def _profile(cfg: RunConfig, profile: str | None = None) -> ScatteringProfile:
    ell = cfg.ell_value
    if ell is None:
        ell = DEFAULT_ELL_OVER_A * cfg.a if cfg.a > 0 else DEFAULT_ELL_OVER_A
    return ScatteringProfile(cfg.a, ell, profile or cfg.profile)


# ---------------------------------------------------------------- subcommands

def cmd_verify(cfg: RunConfig, threads: int):
    s = cfg.verify
    lemma = {name: lemma_suite(_profile(cfg, name), s.samples, seed=cfg.seed)
             for name in ("smooth", "quintic")}
    metric = metric_self_check(seed=cfg.seed)
    sandwich = sandwich_suite(_profile(cfg), s.configurations, s.max_n, seed=cfg.seed)
    passed = all(r["passed"] for r in lemma.values()) and metric["passed"] and sandwich["passed"]
    report = {"meta": _meta(cfg, "verify"), "lemma": lemma, "metric": metric,
              "sandwich": sandwich, "passed": passed}
    return {"verify.json": _json(report)}, (EXIT_OK if passed else EXIT_COUNTEREXAMPLE)


def integrals_table(cfg: RunConfig) -> list[dict]:
    p = _profile(cfg)
    rows = []
    for s5 in S5_SETTINGS:
        energy = quad_energy_integral(p, cfg.quadrature, s5)
        limit = energy_integral_limit(p.a, s5)
        u = quad_u_integral(p, cfg.quadrature, s5)
        a4 = p.a ** 4 if p.a > 0 else None
        rows.append({
            "s5": s5,
            "s5_value": S5_SETTINGS[s5],
            "a": p.a,
            "ell": p.ell,
            "profile": p.profile,
            "energy_integral": energy.value,
            "energy_integral_error": energy.error,
            "energy_integral_limit": limit,
            "u_integral": u.value,
            "v_integral": v_integral(p),
            "quad_constant": None if a4 is None else limit / (3.0 * a4),
            "theorem_constant": THEOREM_CONSTANT,
            "half_b_M": HALF_B_M,
            "quad_constant_over_theorem": None if a4 is None else
            limit / (3.0 * a4) / THEOREM_CONSTANT,
            "quad_constant_over_half_b_M": None if a4 is None else
            limit / (3.0 * a4) / HALF_B_M,
        })
    return rows


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def cmd_integrals(cfg: RunConfig, threads: int):
    rows = integrals_table(cfg)
    return {"integrals.json": _json({"meta": _meta(cfg, "integrals"), "rows": rows}),
            "integrals.csv": _rows_csv(rows)}, EXIT_OK


def _mc_setup(cfg: RunConfig, c0):
    step = cfg.step
    if step is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            step = tune_step(c0, McParams(2, 0, 1.0, seed=cfg.seed)).step
    burn = cfg.burn_in
    if burn is None:
        burn = min(default_burn_in(c0, step, cfg.seed), cfg.sweeps // 2)
    return step, burn


def _initial(cfg: RunConfig, box: BoxGeometry, p: ScatteringProfile):
    path = cfg.initial_positions
    if path is None:
        return build_configuration(cfg.N, box, p)
    try:
        if path.endswith(".json"):
            with open(path, encoding="utf-8") as fh:
                pos, _ = positions_from_json(fh.read())
        else:
            pos = load_positions_text(path)
    except OSError as exc:
        raise ConfigError("initial_positions", str(exc)) from None
    if pos.shape[0] != cfg.N:
        raise ConfigError("initial_positions", f"file has {pos.shape[0]} particles, N={cfg.N}")
    try:
        return build_configuration(cfg.N, box, p, init=pos)
    except InadmissibleConfiguration:
        raise
    except ValueError as exc:
        raise ConfigError("initial_positions", str(exc)) from None


def cmd_energy(cfg: RunConfig, threads: int):
    p = _profile(cfg)
    box = BoxGeometry(cfg.length, cfg.periodic)
    c0 = _initial(cfg, box, p)
    step, burn = _mc_setup(cfg, c0)
    mc = McParams(cfg.sweeps, burn, step, seed=cfg.seed, chains=cfg.chains, thin=cfg.thin)
    acc = run_chains(c0, mc, threads=threads)
    est = energy_from_chains(acc, cfg.N, box, p, cfg.estimator)
    ref = leading_order_reference(p, cfg.N / box.volume, cfg.quadrature, cfg.s5)
    report = {
        "meta": _meta(cfg, "energy"),
        "step": step,
        "burn_in": burn,
        "estimate": est.to_dict(),
        "e_ref": ref,
        "e1_over_ref": est.e1 / ref if ref else None,
        "constants": constant_ratio_report(est, p, cfg.quadrature),
    }
    buf = io.StringIO()
    acc.to_csv(buf)
    return {"energy.json": _json(report), "samples.csv": buf.getvalue(),
            "initial_configuration.json": configuration_to_json(c0) + "\n"}, EXIT_OK


def cmd_oracle(cfg: RunConfig, threads: int):
    p = _profile(cfg)
    L = cfg.oracle.box_over_ell_tilde * p.ell_tilde
    box = BoxGeometry(L, cfg.periodic)
    res = qmc_oracle(cfg.N, box, p, cfg.oracle.points, seed=cfg.seed,
                     randomizations=cfg.oracle.randomizations)
    c0 = _initial(cfg, box, p)
    step, burn = (cfg.step or L / 2), (cfg.burn_in or 100)
    sweeps = cfg.sweeps or cfg.oracle.mc_sweeps
    mc = McParams(sweeps, min(burn, sweeps - 1), step, seed=cfg.seed, chains=cfg.chains)
    est = energy_from_chains(run_chains(c0, mc, threads=threads), cfg.N, box, p, cfg.estimator)
    sigma = math.hypot(res.stderr, est.stderr)
    z = float(abs(res.energy_per_particle - est.e) / sigma) if sigma > 0 else 0.0
    agree = bool(z <= 3.0)
    report = {"meta": _meta(cfg, "oracle"), "L": L, "oracle": res._asdict(),
              "metropolis": est.to_dict(), "z_score": z, "agree": agree}
    return {"oracle.json": _json(report)}, (EXIT_OK if agree else EXIT_COUNTEREXAMPLE)


def _sweep_job(args):
    cfg, rho = args
    return run_sweep_point(rho, cfg.a, cfg.N, cfg.sweeps, cfg.burn_in or 100, cfg.seed,
                           chains=cfg.chains, periodic=cfg.periodic, profile=cfg.profile,
                           step=cfg.step, q=cfg.quadrature, estimator=cfg.estimator)


def cmd_sweep(cfg: RunConfig, threads: int):
    jobs = [(cfg, r) for r in cfg.sweep.rho_a3]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=threads) as ex:
            points = list(ex.map(_sweep_job, jobs))
    else:
        points = [_sweep_job(j) for j in jobs]
    res = analyse_sweep(points, seed=cfg.seed)
    doc = {"meta": _meta(cfg, "sweep"), **res.to_dict()}
    return {"sweep.json": _json(doc), "sweep.csv": res.to_csv()}, EXIT_OK


COMMANDS = {"verify": cmd_verify, "integrals": cmd_integrals, "energy": cmd_energy,
            "oracle": cmd_oracle, "sweep": cmd_sweep}


# ---------------------------------------------------------------- driver

def build_parser():
    ap = argparse.ArgumentParser(prog="trijastrow", description=__doc__.splitlines()[0])
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", metavar="PATH", help="JSON run configuration")
    ap.add_argument("--seed", type=int, metavar="U64", help="override the configured seed")
    ap.add_argument("--threads", type=int, default=1, metavar="K",
                    help="worker processes for chains and sweep points")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    return ap


def resolve_config(ns) -> RunConfig:
    raw = {}
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {ns.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"malformed JSON: {exc}") from None
    cfg = config_from_dict(raw)
    if ns.seed is not None:
        cfg = dataclasses.replace(cfg, seed=ns.seed)
    if ns.out is not None:
        cfg = dataclasses.replace(cfg, out=ns.out)
    if ns.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    return cfg.validate(ns.subcommand)


def run(cfg: RunConfig, subcommand: str, threads: int = 1) -> int:
    """Execute one subcommand; outputs are written only if it completes."""
    try:
        files, code = COMMANDS[subcommand](cfg, threads)
    except (ConfigError, InadmissibleConfiguration) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, OracleError, LowAcceptanceError, NumericalFailure,
            FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for name, text in files.items():
        write_atomic(os.path.join(cfg.out, name), text)
    return code


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(ns)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, ns.subcommand, ns.threads)


if __name__ == "__main__":
    sys.exit(main())
