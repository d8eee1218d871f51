"""Command-line interface.

Subcommands: ``spectrum``, ``solve``, ``sweep``, ``thresholds``, ``verify``
and ``graph check``.  Every CSV starts with a ``# manifest=<hash>`` line; the
hash covers the inputs that determine the numbers (never timestamps or
output paths), so repeated runs produce byte-identical CSVs.

Exit codes: 0 success, 2 unreadable or malformed input, 3 input that
violates a modelling assumption, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .energy import EnergyParams, estimate_gns_constants, thresholds as make_thresholds
from .errors import ConvergenceError, ParseError, RegimeError, ValidationError
from .field import build_grid, make_potentials, read_potential_file, write_snapshot, read_snapshot
from .graph import COMPACT_CORE, WHOLE_GRAPH, Region, parse_graph, read_graph
from .operator import assemble, eigenpairs, hermiticity_defect
from .solver import (MASS_STAGNATED, BranchCollapse, SolverConfig, evaluate_point, multi_branch,
                     r_continuation)
from .verify import (audit_diamagnetic, audit_energy_levels, audit_multiplier_ranges, audit_nonexistence,
                     cycle_rank, write_audit_csv)

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 2, 3, 4


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def manifest_hash(manifest: dict) -> str:
    body = {k: v for k, v in manifest.items() if k != "timestamp"}
    blob = json.dumps(_json_safe(body), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(out: Path, manifest: dict, name: str = "manifest.json") -> str:
    h = manifest_hash(manifest)
    doc = dict(_json_safe(manifest), manifest_hash=h, timestamp=time.strftime("%Y-%m-%dT%H:%M:%S"))
    (out / name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return h


def write_csv(path: Path, mhash: str, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={mhash}\n")
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# shared setup
# ---------------------------------------------------------------------------

def _potential_source(text):
    if text is None:
        return None
    if os.path.isfile(text):
        return read_potential_file(text)
    return text


def _parse_r_schedule(text):
    if text is None:
        return None
    try:
        if ":" in text:
            lo, hi = (float(t) for t in text.split(":"))
            vals, r = [], lo
            while r <= hi * (1 + 1e-12):
                vals.append(r)
                r *= 2
            return tuple(vals)
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise ParseError(f"cannot parse r-schedule {text!r}") from None


def _region(g, name):
    if name is None:
        return g
    if name == "whole":
        return g.with_region(Region(WHOLE_GRAPH))
    if name == "core":
        return g.with_region(Region(COMPACT_CORE))
    raise ValidationError(f"unknown region {name!r}")


class Setup:
    """Graph, grid, potentials and assembled system from CLI-style inputs."""

    def __init__(self, graph_text: str, A="0", V="1", h=1e-2, L_trunc=None, region=None):
        self.graph_text = graph_text
        self.g = _region(parse_graph(graph_text), region)
        self.grid = build_grid(self.g, h, L_trunc)
        self.A, self.V = A, V
        self.pots = make_potentials(self.grid, _potential_source(A), _potential_source(V))
        self.sys = assemble(self.grid, self.pots)
        self.region = region

    def describe(self) -> dict:
        return {"graph": self.g.digest(), "h": self.grid.target_h, "L_trunc": self.grid.L_trunc,
                "ndof": self.grid.ndof, "potentials": self.pots.descriptor, "region": self.region}


def _setup_from_args(args) -> Setup:
    text = Path(args.graph).read_text()
    return Setup(text, args.A, args.V, args.h, args.L_trunc, getattr(args, "region", None))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

def _flux_grid(text):
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError:
        raise ParseError(f"flux sweep must be start:stop:count, got {text!r}") from None


def cmd_spectrum(args) -> int:
    st = _setup_from_args(args)
    out = _out_dir(args)
    manifest = {"command": "spectrum", "version": __version__, **st.describe(), "k": args.k}
    if args.flux_sweep:
        manifest["flux_sweep"] = args.flux_sweep
    mh = write_manifest(out, manifest)
    spec = eigenpairs(st.sys, args.k)
    rows = [(j + 1, lam, res, cid) for j, (lam, res, cid) in
            enumerate(zip(spec.eigenvalues, spec.residuals, spec.clusters))]
    write_csv(out / "spectrum.csv", mh, ["j", "lambda", "residual", "cluster_id"], rows)
    if args.eigvecs:
        for j in range(spec.k):
            write_snapshot(out / f"eigvec_{j + 1}.snap", st.grid, spec.vectors[:, j],
                           {"manifest": mh, "lambda": spec.eigenvalues[j]})
    if args.flux_sweep:
        total = st.g.total_length()
        frows = []
        for phi in _flux_grid(args.flux_sweep):
            pots = make_potentials(st.grid, float(phi) / total, _potential_source(st.V))
            lam = eigenpairs(assemble(st.grid, pots), args.k).eigenvalues
            frows.append((phi, *lam))
        write_csv(out / "flux.csv", mh, ["flux"] + [f"lambda_{j + 1}" for j in range(args.k)], frows)
    for lam in spec.eigenvalues:
        print(_fmt(lam))
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve and bundles
# ---------------------------------------------------------------------------

SOLVE_HEADER = ["branch", "seeded_from", "lambda", "energy", "mass", "weak_residual", "strong_residual",
                "vertex_residual", "dichotomy", "r_final", "shift"]


def solve_points(st: Setup, p: float, mu: float, k: int, cfg: SolverConfig, shift: float = 0.0):
    """Run the multi-branch search; returns (points, spectrum, notes)."""
    params = EnergyParams(p, mu)
    nev = min(st.grid.ndof, k + 1)
    spec = eigenpairs(st.sys, nev)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BranchCollapse)
        points = multi_branch(st.sys, spec, params, k, cfg, shift=shift)
    notes = [str(w.message) for w in caught if issubclass(w.category, BranchCollapse)]
    if p < 6 and shift == 0:
        # a stagnated branch is retried in a frame where every level is shifted up
        for i, cp in enumerate(points):
            if cp.dichotomy != MASS_STAGNATED:
                continue
            s = -max(1.0, float(spec.eigenvalues[0]))
            j = int(cp.branch.rsplit("_", 1)[-1]) if cp.branch.rsplit("_", 1)[-1].isdigit() else 1
            try:
                retry = r_continuation(st.sys, spec.vectors[:, j - 1] * math.sqrt(0.9 * mu), params, cfg,
                                       shift=s, branch=cp.branch)
            except ConvergenceError as exc:
                notes.append(f"{cp.branch}: shifted retry failed ({exc})")
                continue
            if retry.dichotomy != MASS_STAGNATED:
                points[i] = retry
                notes.append(f"{cp.branch}: stagnated, recovered with shift {s:g}")
        points.sort(key=lambda c: c.energy)
    return points, spec, notes


def write_bundle(path: Path, st: Setup, cp, mh: str) -> None:
    path.mkdir(parents=True, exist_ok=True)
    write_snapshot(path / "field.snap", st.grid, cp.values, {"manifest": mh})
    doc = cp.summary()
    doc.update({"graph_text": st.graph_text, "h": st.grid.target_h, "L_trunc": st.grid.L_trunc,
                "A": st.A if isinstance(st.A, str) else repr(st.A),
                "V": st.V if isinstance(st.V, str) else repr(st.V),
                "region": st.region, "manifest": mh})
    (path / "manifest.json").write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")


def read_bundles(paths):
    """Load bundles into (setup, points); all bundles must share one problem."""
    st, points, params = None, [], None
    for path in paths:
        path = Path(path)
        try:
            doc = json.loads((path / "manifest.json").read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: bad manifest ({exc})") from None
        if st is None:
            st = Setup(doc["graph_text"], doc["A"], doc["V"], doc["h"], float(doc["L_trunc"]), doc["region"])
            params = EnergyParams(doc["p"], doc["mu"])
        elif doc["graph_text"] != st.graph_text or doc["mu"] != params.mu or doc["p"] != params.p:
            raise ValidationError(f"{path}: bundle belongs to a different problem")
        _, u = read_snapshot(path / "field.snap", st.grid)
        r_final = doc.get("r_final")
        cp = evaluate_point(st.sys, u, params, lam=float(doc["lambda"]), branch=doc["branch"],
                            dichotomy=doc["dichotomy_flag"], shift=float(doc.get("shift", 0.0)),
                            r_final=None if r_final is None else float(r_final))
        points.append(cp)
    return st, points, params


def bundle_audits(st: Setup, points, params, probes: int = 1000, seed: int = 0, c=None):
    """The standard audit pass over loaded bundles."""
    k = max([int(cp.branch.rsplit("_", 1)[-1]) for cp in points if cp.branch.rsplit("_", 1)[-1].isdigit()]
            + [1])
    spec = eigenpairs(st.sys, min(st.grid.ndof, k + 1))
    reports = [audit_diamagnetic(cp.u, st.pots, st.grid) for cp in points]
    gns = estimate_gns_constants(st.sys, params.p, probes, seed=seed, spectrum=spec)
    thr = make_thresholds(spec, gns)
    reports.append(audit_multiplier_ranges(points, spec, params, small_mu=thr.mu_0()))
    reports.append(audit_energy_levels(points, spec, params, thr))
    reports.append(audit_nonexistence(points, thr, thr.lambda_1 / 2 if c is None else c))
    return reports


def _config_from_args(args) -> SolverConfig:
    kw = {"seed": args.seed}
    r = _parse_r_schedule(args.r_schedule)
    if r is not None:
        kw["r_schedule"] = r
    return SolverConfig(**kw)


def cmd_solve(args) -> int:
    st = _setup_from_args(args)
    params = EnergyParams(args.p, args.mu)
    cfg = _config_from_args(args)
    out = _out_dir(args)
    manifest = {"command": "solve", "version": __version__, **st.describe(), "p": params.p, "mu": params.mu,
                "branches": args.branches, "r_schedule": list(cfg.r_schedule), "seed": cfg.seed,
                "shift": args.shift, "probes": args.probes}
    mh = write_manifest(out, manifest)
    points, spec, notes = solve_points(st, params.p, params.mu, args.branches, cfg, args.shift)
    for msg in notes:
        print(f"note: {msg}", file=sys.stderr)
    if not points:
        print("error: no branch converged", file=sys.stderr)
        return EXIT_CONVERGENCE
    rows, dirs = [], []
    for j, cp in enumerate(points, 1):
        d = out / f"branch_{j}"
        write_bundle(d, st, cp, mh)
        dirs.append(d)
        rows.append((j, cp.branch, cp.multiplier, cp.energy, cp.mass, cp.weak_residual, cp.strong_residual,
                     max(cp.vertex_residuals.values(), default=0.0), cp.dichotomy, cp.r_final, cp.shift))
    write_csv(out / "solve.csv", mh, SOLVE_HEADER, rows)
    st2, loaded, lparams = read_bundles(dirs)
    reports = bundle_audits(st2, loaded, lparams, args.probes, args.seed)
    write_audit_csv(out / "audits.csv", reports, mh)
    for r in rows:
        print(",".join(_fmt(v) for v in r))
    failed = [r.check for r in reports if not r.passed]
    print("audits: " + ("all passed" if not failed else "FAILED " + " ".join(failed)))
    return EXIT_OK


def cmd_verify(args) -> int:
    dirs = []
    for b in args.bundle:
        b = Path(b)
        if (b / "manifest.json").exists() and (b / "field.snap").exists():
            dirs.append(b)
        else:
            dirs += sorted(d for d in b.glob("branch_*") if d.is_dir())
    if not dirs:
        raise ValidationError("no bundles found")
    st, points, params = read_bundles(dirs)
    reports = bundle_audits(st, points, params, args.probes, args.seed, args.c)
    out = _out_dir(args)
    mh = manifest_hash({"command": "verify", "bundles": [json.loads((d / "manifest.json").read_text())["manifest"]
                                                         for d in dirs], "probes": args.probes,
                        "seed": args.seed, "c": args.c})
    write_audit_csv(out / "audits.csv", reports, mh)
    for r in reports:
        print(f"{r.check}: {'pass' if r.passed else 'FAIL'} measured={_fmt(r.measured)} tol={_fmt(r.tol)}")
    return EXIT_OK if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

def cmd_thresholds(args) -> int:
    st = _setup_from_args(args)
    EnergyParams(args.p, 1.0)
    out = _out_dir(args)
    manifest = {"command": "thresholds", "version": __version__, **st.describe(), "p": args.p, "k": args.k,
                "probes": args.probes, "seed": args.seed, "c": args.c, "lambda": args.lam}
    mh = write_manifest(out, manifest)
    spec = eigenpairs(st.sys, min(st.grid.ndof, args.k + 1))
    gns = estimate_gns_constants(st.sys, args.p, args.probes, seed=args.seed, spectrum=spec)
    thr = make_thresholds(spec, gns)
    rows = list(thr.table(args.k))
    for c in args.c or []:
        rows.append((f"mu_cp[c={_fmt(c)}]", thr.mu_cp(c)))
    for lam in args.lam or []:
        rows.append((f"mu_star_lambda[lambda={_fmt(lam)}]", thr.mu_star(lam)))
    rows.append(("gm_count", float(thr.gm_count())))
    h = thr.inputs_hash()
    write_csv(out / "thresholds.csv", mh, ["name", "value", "inputs_hash", "constant_provenance"],
              [(n, v, h, thr.provenance) for n, v in rows])
    for n, v in rows:
        print(f"{n},{_fmt(v)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

SWEEP_HEADER = ["cell", "mu", "p", "flux", "converged", "lambda", "energy", "mass", "dichotomy",
                "audit_pass", "audit_failed", "error"]


def _sweep_cells(cfg: dict):
    mus = cfg.get("mu", [])
    ps = cfg.get("p", [])
    fluxes = cfg.get("flux", [None])
    return [{"mu": float(mu), "p": float(p), "flux": None if fl is None else float(fl)}
            for p, fl, mu in itertools.product(ps, fluxes, mus)]


def _run_cell(job):
    """One sweep cell; never raises, failures become rows."""
    cfg, cell = job
    row = {"mu": cell["mu"], "p": cell["p"], "flux": cell["flux"], "converged": False, "lambda": None,
           "energy": None, "mass": None, "dichotomy": "", "audit_pass": None, "audit_failed": "", "error": ""}
    try:
        g = parse_graph(cfg["graph_text"])
        A = cfg.get("A", "0")
        if cell["flux"] is not None:
            A = repr(cell["flux"] / g.total_length())
        st = Setup(cfg["graph_text"], A, cfg.get("V", "1"), cfg.get("h", 1e-2), cfg.get("L_trunc"),
                   cfg.get("region"))
        scfg = SolverConfig(seed=int(cfg.get("seed", 0)),
                            **({"r_schedule": tuple(cfg["r_schedule"])} if cfg.get("r_schedule") else {}))
        params = EnergyParams(cell["p"], cell["mu"])
        k = int(cfg.get("branches", 1))
        points, spec, _ = solve_points(st, params.p, params.mu, k, scfg)
        if not points:
            row["error"] = "no branch converged"
            return row
        cp = points[0]
        reports = [audit_diamagnetic(c.u, st.pots, st.grid) for c in points]
        reports.append(audit_multiplier_ranges(points, spec, params))
        reports.append(audit_energy_levels(points, spec, params))
        row.update(converged=True, **{"lambda": cp.multiplier}, energy=cp.energy, mass=cp.mass,
                   dichotomy=cp.dichotomy, audit_pass=all(r.passed for r in reports),
                   audit_failed=" ".join(r.check for r in reports if not r.passed))
    except (ConvergenceError, ValidationError, ParseError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MAGNOGRAPH_THREADS", "1")))
    except ValueError:
        raise ValidationError("MAGNOGRAPH_THREADS must be an integer") from None


def cmd_sweep(args) -> int:
    cfg_path = Path(args.config)
    try:
        cfg = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{cfg_path}: {exc}") from None
    if "graph" not in cfg:
        raise ValidationError("sweep config needs a 'graph' entry")
    gpath = Path(cfg["graph"])
    if not gpath.is_absolute():
        gpath = cfg_path.parent / gpath
    cfg = dict(cfg, graph_text=gpath.read_text())
    parse_graph(cfg["graph_text"])
    for key in ("mu", "p", "flux"):
        if key in cfg and not isinstance(cfg[key], list):
            raise ValidationError(f"sweep entry {key!r} must be a list")
    cells = _sweep_cells(cfg)
    out = _out_dir(args)
    body = {k: v for k, v in cfg.items() if k != "graph"}
    manifest = {"command": "sweep", "version": __version__, "config": body, "cells": len(cells)}
    mh = write_manifest(out, manifest)
    cell_dir = out / "cells"
    cell_dir.mkdir(exist_ok=True)
    rows: list = [None] * len(cells)
    todo = []
    for i, cell in enumerate(cells):
        key = manifest_hash({"sweep": mh, "cell": cell})
        f = cell_dir / f"cell_{i:05d}.json"
        if f.exists():
            try:
                doc = json.loads(f.read_text())
                if doc.get("key") == key:
                    rows[i] = doc["row"]
                    continue
            except json.JSONDecodeError:
                pass
        todo.append((i, key, cell))

    def store(i, key, row):
        rows[i] = row
        f = cell_dir / f"cell_{i:05d}.json"
        tmp = f.with_suffix(".tmp")
        tmp.write_text(json.dumps({"key": key, "row": _json_safe(row)}, sort_keys=True))
        tmp.replace(f)

    workers = _threads()
    jobs = [(cfg, cell) for _, _, cell in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for (i, key, _), row in zip(todo, pool.map(_run_cell, jobs)):
                store(i, key, row)
    else:
        for (i, key, _), job in zip(todo, jobs):
            store(i, key, _run_cell(job))
    table = []
    for i, row in enumerate(rows):
        table.append([i] + [row[h] for h in SWEEP_HEADER[1:]])
    write_csv(out / "sweep.csv", mh, SWEEP_HEADER, table)
    print(f"sweep: {len(cells)} cells, {sum(1 for r in rows if r['converged'])} converged")
    return EXIT_OK


# ---------------------------------------------------------------------------
# graph check
# ---------------------------------------------------------------------------

def cmd_graph_check(args) -> int:
    g = read_graph(args.graph)
    print(f"vertices {len(g.vertices)}")
    print(f"bounded_edges {len(g.bounded_edges)}")
    print(f"half_lines {len(g.half_lines)}")
    print(f"cycle_rank {cycle_rank(g)}")
    print(f"region {g.region.kind} {' '.join(sorted(g.region_edges()))}")
    print(f"total_length {_fmt(g.total_length())}")
    print(f"digest {g.digest()}")
    if args.h:
        grid = build_grid(g, args.h, args.L_trunc)
        sysm = assemble(grid, make_potentials(grid, _potential_source(args.A), _potential_source(args.V)))
        print(f"ndof {grid.ndof}")
        print(f"hermiticity_defect {_fmt(hermiticity_defect(sysm.S))}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _common(p, graph=True):
    if graph:
        p.add_argument("--graph", required=True, help="graph file")
    p.add_argument("--A", default="0", help="magnetic potential: expression in x or potential file")
    p.add_argument("--V", default="1", help="electric potential (>= 1): expression in x or potential file")
    p.add_argument("--h", type=float, default=1e-2, help="target mesh width")
    p.add_argument("--L-trunc", dest="L_trunc", type=float, default=None, help="half-line truncation length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".", help="directory for CSVs and bundles")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magnograph", description="Magnetic Schroedinger operators and "
                                 "normalized NLS solutions on metric graphs.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="lowest eigenpairs")
    _common(p)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--flux-sweep", default=None, metavar="START:STOP:COUNT",
                   help="constant A = flux / total length for each flux value")
    p.add_argument("--eigvecs", action="store_true", help="write eigenvector snapshots")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("solve", help="normalized solutions with audits")
    _common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--branches", type=int, default=1)
    p.add_argument("--r-schedule", dest="r_schedule", default=None, help="'2,4,8' or '2:1024' (doubling)")
    p.add_argument("--shift", type=float, default=0.0, help="solve with Q - shift (.,.)_2")
    p.add_argument("--region", choices=["whole", "core"], default=None)
    p.add_argument("--probes", type=int, default=1000, help="probe count for the GNS constants")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep from a JSON config")
    p.add_argument("config")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("thresholds", help="critical masses with empirical constants")
    _common(p)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--probes", type=int, default=1000)
    p.add_argument("--c", type=float, action="append", help="extra mu_{c,p} rows")
    p.add_argument("--lambda", dest="lam", type=float, action="append", help="extra mu*_lambda rows")
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("verify", help="audit solution bundles")
    p.add_argument("--bundle", nargs="+", required=True, help="bundle directories or a solve output dir")
    p.add_argument("--probes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c", type=float, default=None, help="level c of the nonexistence audit")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("graph", help="graph utilities")
    gsub = p.add_subparsers(dest="graph_command", required=True)
    q = gsub.add_parser("check", help="parse and validate a graph file")
    _common(q)
    q.set_defaults(func=cmd_graph_check)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, UnicodeDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, RegimeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
