"""Batch experiment runner: ``lab run <config>`` and ``lab list``.

A config is an INI file. The optional ``[lab]`` section holds ``output``
(directory, default ``.``) and ``seed``; every other section is one
experiment, selected by its ``experiment`` key. Each experiment writes
``<section>.csv`` and ``<section>.meta`` (JSON provenance) into the output
directory.

Exit codes: 0 success, 2 invalid config, 3 failed check or numerical
domain error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import metadata
from typing import Callable

import numpy as np

from kreinlab.asymptotics import (
    dirichlet_weyl,
    svalues_iterates,
    svalues_robin_pair,
    svalues_vs_dirichlet,
    weyl_fit,
)
from kreinlab.errors import ConfigError, DomainError
from kreinlab.extension import BoundarySymbol, Realization, diagram_check, krein_apply_fiber, pole_scan
from kreinlab.fiber import (
    Discretization1D,
    Geometry,
    ModelOperator,
    Robin,
    fiber_eigenvalues,
    oracle_solve,
)
from kreinlab.lattice import Lattice
from kreinlab.lower_bounds import birman_check, garding_check, q_mu_scan

EXIT_OK, EXIT_CONFIG, EXIT_FAILED = 0, 2, 3


# ---------------------------------------------------------------------------
# value parsers


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    return value


def _complex(text: str) -> complex:
    value = complex(text.replace(" ", ""))
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ValueError("must be finite")
    return value


def _int(text: str) -> int:
    return int(text)


def _list(parse):
    def inner(text: str):
        items = [t.strip() for t in text.split(",") if t.strip()]
        if not items:
            raise ValueError("empty list")
        return [parse(t) for t in items]

    return inner


def _choice(*options):
    def inner(text: str):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return inner


def _symbols(text: str):
    """``kind:c0,c1`` entries separated by ``;``; kind ``l`` gives L, ``c`` gives C."""
    out = []
    for entry in (e.strip() for e in text.split(";")):
        if not entry:
            continue
        kind, _, coeffs = entry.partition(":")
        kind = kind.strip()
        if kind not in ("l", "c"):
            raise ValueError(f"symbol kind must be 'l' or 'c', got {kind!r}")
        values = _list(_float)(coeffs)
        if len(values) > 2:
            raise ValueError("symbols have order <= 1 (at most two coefficients)")
        out.append((kind, values))
    if not out:
        raise ValueError("no symbols")
    return out


def _echo(value):
    if isinstance(value, complex):
        return repr(value)
    if isinstance(value, list):
        return [_echo(v) for v in value]
    if isinstance(value, tuple):
        return [_echo(v) for v in value]
    return value


# ---------------------------------------------------------------------------
# experiment table

GEOMETRY_KEYS = {
    "geometry": (_choice("slab", "half-cylinder"), "slab"),
    "n": (_int, 2),
    "ell": (_float, 1.0),
    "msq": (_float, 1.0),
}


@dataclass
class Experiment:
    name: str
    tag: str
    keys: dict
    runner: Callable


def _setup(cfg):
    geom = Geometry(cfg["geometry"], cfg["n"], cfg["ell"])
    return geom, ModelOperator(cfg["msq"])


def _test_datum(x):
    return (1.0 + x) * np.exp(-x)


def run_krein_check(cfg, rng):
    geom, op = _setup(cfg)
    real = Realization.robin(cfg["b"])
    disc = Discretization1D(cfg["N"])
    lam = cfg["lam"]
    rows = []
    worst = 0.0
    for xi in Lattice(geom, op, cfg["R"]).xi:
        mode = op.mode(xi)
        u = krein_apply_fiber(real, lam, mode, _test_datum, geom, op, disc)
        ref = oracle_solve(mode, lam, Robin(cfg["b"]), _test_datum, disc, geom, richardson=True)
        h = u.h
        err = math.sqrt(h * np.sum(np.abs(u.values - ref.values) ** 2) / (h * np.sum(np.abs(ref.values) ** 2)))
        worst = max(worst, err)
        rows.append(list(int(v) for v in xi) + [err])
    header = [f"xi{k + 1}" for k in range(geom.boundary_dim)] + ["rel_l2_error"]
    summary = {"max_rel_l2_error": worst, "tolerance": cfg["tol"]}
    return header, rows, summary, worst <= cfg["tol"]


def run_mfunction_scan(cfg, rng):
    geom, op = _setup(cfg)
    if not geom.is_slab:
        raise DomainError("mfunction-scan compares with the slab fiber spectrum")
    real = Realization.robin(cfg["b"])
    disc = Discretization1D(cfg["N"])
    lo, hi = cfg["lam_min"], cfg["lam_max"]
    rows = []
    ok = True
    for xi in Lattice(geom, op, cfg["R"]).xi:
        mode = op.mode(xi)
        poles = pole_scan(real, mode, geom, op, lo, hi, cfg["samples"])
        eig = fiber_eigenvalues(mode, Robin(cfg["b"]), disc, geom, count=cfg["eig_count"], refine=True)
        eig = [float(e) for e in eig if lo < e < hi]
        ok = ok and len(eig) == len(poles)
        for k in range(max(len(eig), len(poles))):
            p = poles[k] if k < len(poles) else math.nan
            e = eig[k] if k < len(eig) else math.nan
            diff = abs(p - e)
            ok = ok and diff <= cfg["tol"]
            rows.append(list(int(v) for v in xi) + [k, p, e, diff])
    header = [f"xi{k + 1}" for k in range(geom.boundary_dim)] + ["index", "pole", "fd_eigenvalue", "abs_diff"]
    return header, rows, {"tolerance": cfg["tol"], "matched": ok}, ok


def _series_table(series, decay):
    fit = weyl_fit(series, expected_decay=decay)
    j = series.j
    rows = [[int(a), float(s), float(s * a**decay)] for a, s in zip(j, series.values)]
    summary = {
        "exponent": fit.exponent,
        "expected_exponent": -decay,
        "constant": fit.constant,
        "plateau": fit.plateau,
        "window": list(fit.window),
        "residual": fit.residual,
    }
    return ["j", "s_j", "s_j_scaled"], rows, summary


def run_weyl_robin_dirichlet(cfg, rng):
    geom, op = _setup(cfg)
    series = svalues_vs_dirichlet(Realization.robin(cfg["b"]), cfg["lam"], cfg["R"], geom, op)
    header, rows, summary = _series_table(series, 2.0 / (geom.n - 1))
    return header, rows, summary, None


def run_weyl_robin_pair(cfg, rng):
    geom, op = _setup(cfg)
    series = svalues_robin_pair(cfg["b1"], cfg["b2"], cfg["lam"], cfg["R"], geom, op)
    header, rows, summary = _series_table(series, 3.0 / (geom.n - 1))
    return header, rows, summary, None


def run_weyl_iterates(cfg, rng):
    geom, op = _setup(cfg)
    series = svalues_iterates(
        Realization.robin(cfg["b"]), cfg["power"], cfg["R"], geom, op, Discretization1D(cfg["N"]), cfg["lam"]
    )
    header, rows, summary = _series_table(series, 2.0 * cfg["power"] / (geom.n - 1))
    return header, rows, summary, None


def run_dirichlet_weyl(cfg, rng):
    geom, op = _setup(cfg)
    table = dirichlet_weyl(cfg["R"], cfg["k_max"], geom, op, cfg["t"])
    rows = [[float(t), int(c), float(r)] for t, c, r in zip(table.t, table.counts, table.ratio)]
    return ["t", "count", "ratio"], rows, {"c_A": table.c_A}, None


def run_lowerbound_scan(cfg, rng):
    geom, op = _setup(cfg)
    mus = sorted(cfg["mu"], reverse=True)
    points = q_mu_scan(mus, geom, op, cfg["R"])
    rows = [[p.mu, p.bound, p.g_bound] + list(p.minimizer) for p in points]
    bounds = [p.bound for p in points]
    monotone = all(b2 > b1 for b1, b2 in zip(bounds, bounds[1:]))
    header = ["mu", "bound", "g_bound"] + [f"min_xi{k + 1}" for k in range(geom.boundary_dim)]
    return header, rows, {"strictly_increasing": monotone}, monotone


def run_birman_check(cfg, rng):
    geom, op = _setup(cfg)
    bs = np.sort(rng.uniform(cfg["b_min"], cfg["b_max"], cfg["count"]))
    disc = Discretization1D(cfg["N"])
    rows = []
    ok = True
    for b in bs:
        rep = birman_check(Realization.robin(float(b)), geom, op, cfg["R"], disc)
        ok = ok and rep.holds is not False
        rows.append(
            [
                float(b),
                rep.m_A_gamma,
                rep.m_T,
                rep.m_L_minushalf,
                rep.m_realization,
                rep.birman_bound,
                rep.margin,
                rep.discretization_error,
                int(bool(rep.hypothesis_holds)),
                -1 if rep.holds is None else int(rep.holds),
            ]
        )
    header = ["b", "m_A_gamma", "m_T", "m_L_minushalf", "m_realization", "bound", "margin", "disc_error",
              "hypothesis", "holds"]
    return header, rows, {"violations": sum(1 for r in rows if r[-1] == 0)}, ok


def run_garding_check(cfg, rng):
    geom, op = _setup(cfg)
    rows = []
    ok = True
    for idx, (kind, coeffs) in enumerate(cfg["symbols"]):
        sym = BoundarySymbol.polynomial(coeffs)
        res = garding_check(sym, geom, op, cfg["R"], as_l=(kind == "l"), form_R=cfg["form_R"])
        agree = res.symbol_elliptic == res.form_holds
        ok = ok and agree and (res.holds or res.witness is not None)
        witness = res.witness[0] if res.witness is not None else 0
        padded = list(coeffs) + [0.0] * (2 - len(coeffs))
        rows.append(
            [idx, kind, *padded, int(res.symbol_elliptic), int(res.form_holds),
             res.c_prime, res.k_prime, res.c, res.k, witness]
        )
    header = ["index", "kind", "coef0", "coef1", "symbol_elliptic", "form_holds",
              "c_prime", "k_prime", "c", "k", "witness_xi1"]
    return header, rows, {"agree": ok}, ok


def run_diagram_check(cfg, rng):
    geom, op = _setup(cfg)
    real = Realization.robin(cfg["b"])
    disc = Discretization1D(cfg["N"])
    xi_all = Lattice(geom, op, cfg["R"]).xi
    rows = []
    ok = True
    for _ in range(cfg["count"]):
        xi = xi_all[rng.integers(len(xi_all))]
        lam = complex(rng.uniform(cfg["lam_min"], cfg["lam_max"]), rng.uniform(-cfg["imag_max"], cfg["imag_max"]))
        res = diagram_check(real, lam, op.mode(xi), geom, op, disc)
        ok = ok and res.residual <= cfg["tol"] and res.inversion_residual <= cfg["inversion_tol"]
        rows.append(list(int(v) for v in xi) + [lam.real, lam.imag, res.null_residual, res.form_residual,
                                                 res.inversion_residual])
    header = [f"xi{k + 1}" for k in range(geom.boundary_dim)] + [
        "lam_re", "lam_im", "null_residual", "form_residual", "inversion_residual"]
    return header, rows, {"tolerance": cfg["tol"], "inversion_tolerance": cfg["inversion_tol"]}, ok


EXPERIMENTS = {
    e.name: e
    for e in [
        Experiment("krein-check", "Krein resolvent formula vs FD oracle",
                   {"b": (_float, 2.0), "lam": (_complex, -5.0), "R": (_float, 50.0), "N": (_int, 10_000),
                    "tol": (_float, 1e-6)}, run_krein_check),
        Experiment("mfunction-scan", "M-function poles vs realization eigenvalues",
                   {"b": (_float, -3.0), "lam_min": (_float, -50.0), "lam_max": (_float, 1.0), "R": (_float, 3.0),
                    "N": (_int, 2000), "samples": (_int, 4000), "eig_count": (_int, 5), "tol": (_float, 1e-4)},
                   run_mfunction_scan),
        Experiment("weyl-robin-dirichlet", "s-numbers of Robin minus Dirichlet resolvent, order -2",
                   {"b": (_float, 2.0), "lam": (_float, 0.0), "R": (_float, 2000.0)}, run_weyl_robin_dirichlet),
        Experiment("weyl-robin-pair", "s-numbers of two Robin resolvents, order -3",
                   {"b1": (_float, 1.0), "b2": (_float, 2.0), "lam": (_float, 0.0), "R": (_float, 2000.0)},
                   run_weyl_robin_pair),
        Experiment("weyl-iterates", "s-numbers of resolvent power differences, order -2N",
                   {"b": (_float, 2.0), "power": (_int, 2), "lam": (_float, 0.0), "R": (_float, 300.0),
                    "N": (_int, 800)}, run_weyl_iterates),
        Experiment("dirichlet-weyl", "Dirichlet counting function, area term",
                   {"R": (_float, 110.0), "k_max": (_int, 40), "t": (_list(_float), [1e4])}, run_dirichlet_weyl),
        Experiment("lowerbound-scan", "lower bound of P^0 - P^mu as mu -> -inf",
                   {"mu": (_list(_float), [-1e1, -1e2, -1e3, -1e4, -1e5, -1e6]), "R": (_float, 200.0)},
                   run_lowerbound_scan),
        Experiment("birman-check", "Birman lower bound for realizations",
                   {"b_min": (_float, 0.0), "b_max": (_float, 10.0), "count": (_int, 50), "R": (_float, 30.0),
                    "N": (_int, 2000)}, run_birman_check),
        Experiment("garding-check", "strong ellipticity of L vs Garding inequality",
                   {"symbols": (_symbols, [("c", [2.0]), ("l", [0.0, 1.0]), ("l", [0.0, -1.0])]),
                    "R": (_float, 1000.0), "form_R": (_float, 400.0)}, run_garding_check),
        Experiment("diagram-check", "abstract diagram E/F maps and T + G^lam",
                   {"b": (_float, 2.0), "count": (_int, 50), "R": (_float, 20.0), "N": (_int, 4000),
                    "lam_min": (_float, -50.0), "lam_max": (_float, 5.0), "imag_max": (_float, 5.0),
                    "tol": (_float, 1e-6), "inversion_tol": (_float, 1e-8)}, run_diagram_check),
    ]
}


def list_experiments() -> str:
    """Table of experiment names, what each exercises and its config keys."""
    lines = [f"{'experiment':<22} {'exercises':<56} keys"]
    for e in EXPERIMENTS.values():
        keys = ",".join(sorted(set(GEOMETRY_KEYS) | set(e.keys)))
        lines.append(f"{e.name:<22} {e.tag:<56} {keys}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# config handling


def _line_numbers(text: str) -> dict:
    """(section, key) -> 1-based line of the definition, for diagnostics."""
    out = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            out[(section, None)] = no
        elif section and ("=" in s or ":" in s) and not s.startswith(("#", ";")):
            key = s.split("=", 1)[0].split(":", 1)[0].strip()
            out.setdefault((section, key), no)
    return out


@dataclass
class Job:
    section: str
    experiment: Experiment
    config: dict
    seed: int


def load_config(path: str):
    """Parse and validate a config file; returns ``(output_dir, jobs)``.

    Raises
    ------
    ConfigError
        With the offending line and field in the message.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (R, N)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    lines = _line_numbers(text)

    def where(section, key=None):
        return f"{path}:{lines.get((section, key), lines.get((section, None), 0))}: [{section}]"

    output, base_seed = ".", 0
    if parser.has_section("lab"):
        for key, raw in parser.items("lab"):
            if key == "output":
                output = raw
            elif key == "seed":
                try:
                    base_seed = int(raw)
                except ValueError:
                    raise ConfigError(f"{where('lab', key)} seed: not an integer: {raw!r}") from None
            else:
                raise ConfigError(f"{where('lab', key)} unknown key {key!r}")

    jobs = []
    for section in parser.sections():
        if section == "lab":
            continue
        items = dict(parser.items(section))
        name = items.pop("experiment", None)
        if name is None:
            raise ConfigError(f"{where(section)} missing key 'experiment'")
        if name not in EXPERIMENTS:
            raise ConfigError(f"{where(section, 'experiment')} unknown experiment {name!r}")
        exp = EXPERIMENTS[name]
        schema = {**GEOMETRY_KEYS, **exp.keys, "seed": (_int, base_seed)}
        cfg = {}
        for key, raw in items.items():
            if key not in schema:
                raise ConfigError(f"{where(section, key)} unknown key {key!r} for {name}")
            try:
                cfg[key] = schema[key][0](raw.strip())
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"{where(section, key)} {key}: {exc}") from None
        for key, (_, default) in schema.items():
            cfg.setdefault(key, default)
        try:
            Geometry(cfg["geometry"], cfg["n"], cfg["ell"])
            ModelOperator(cfg["msq"])
        except ValueError as exc:
            raise ConfigError(f"{where(section)} {exc}") from None
        for key in ("R", "N", "count"):
            if key in cfg and cfg[key] <= 0:
                raise ConfigError(f"{where(section, key)} {key} must be positive")
        jobs.append(Job(section, exp, cfg, cfg.pop("seed")))
    if not jobs:
        raise ConfigError(f"{path}: no experiments defined")
    return output, jobs


# ---------------------------------------------------------------------------
# output


def _format(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.16e" % float(value)
    return str(value)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def run_job(job: Job, output: str) -> int:
    rng = np.random.default_rng(job.seed)
    try:
        header, rows, summary, passed = job.experiment.runner(job.config, rng)
    except DomainError as exc:
        print(f"[{job.section}] domain error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ValueError as exc:
        print(f"[{job.section}] {job.experiment.name} cannot run: {exc}", file=sys.stderr)
        return EXIT_FAILED
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format(v) for v in row])
    meta = {
        "section": job.section,
        "experiment": job.experiment.name,
        "exercises": job.experiment.tag,
        "artifact_version": _version(),
        "seed": job.seed,
        "config": {k: _echo(v) for k, v in sorted(job.config.items())},
        "columns": header,
        "rows": len(rows),
        "summary": {k: _echo(v) for k, v in summary.items()},
        "passed": passed,
    }
    base = os.path.join(output, job.section)
    _atomic_write(base + ".csv", buf.getvalue())
    _atomic_write(base + ".meta", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    status = {True: "passed", False: "FAILED", None: "done"}[passed]
    print(f"[{job.section}] {job.experiment.name}: {status} {json.dumps(meta['summary'], sort_keys=True)}")
    if passed is False:
        print(f"[{job.section}] check failed, see {base}.csv", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def run(config_path: str) -> int:
    try:
        output, jobs = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(output, exist_ok=True)
    try:
        threads = max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        print("config error: LAB_THREADS must be an integer", file=sys.stderr)
        return EXIT_CONFIG
    if threads == 1 or len(jobs) == 1:
        codes = [run_job(job, output) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            codes = list(pool.map(lambda j: run_job(j, output), jobs))
    return max(codes)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lab", description="Run model-problem experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiments of a config file")
    p_run.add_argument("config")
    sub.add_parser("list", help="list available experiments")
    args = parser.parse_args(argv)
    if args.command == "list":
        print(list_experiments())
        return EXIT_OK
    return run(args.config)


if __name__ == "__main__":
    sys.exit(main())
