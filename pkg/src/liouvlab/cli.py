"""Command-line driver: run specs, pipelines and report emission.

Run specs are JSON documents::

    {
      "problem": {"punctures": [{"kind": "bulk", "x": [0, 1], "weight": -0.75},
                                {"kind": "boundary", "x": 0, "weight": -0.75}],
                  "Lambda": 2.0, "sigma": [1.0]},
      "mesh": {"h": 0.05, "depth": 12},
      "solver": {"tol": 1e-10, "max_iter": 60},
      "tasks": ["solve", "action", "accessory", "ward", "hem", "l2", "mc"],
      "mc": {"gamma": [0.5, 0.25, 0.1], "samples": 10000, "seed": 0,
             "h": 0.12, "depth": 6, "functional": "one"},
      "output": {"directory": "liouvlab-out", "formats": ["json", "csv", "svg"]}
    }

Every section and key is optional; missing ones take the defaults above
(the problem defaults to the reference configuration).

Exit codes: 0 success, 2 invalid spec, 3 solver failure, 4 partial completion.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .solver import ConvergenceError, ProblemSpec, SpecError, solve

log = logging.getLogger("liouvlab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
TASKS = ("solve", "action", "accessory", "ward", "hem", "l2", "mc")
FORMATS = ("json", "csv", "svg")
CSV_VERSION = 1
# prerequisites of each task (transitively closed)
REQUIRES = {"solve": (), "action": ("solve",), "accessory": ("solve",),
            "ward": ("solve", "accessory"), "hem": ("solve", "accessory"),
            "l2": ("solve", "accessory"), "mc": ()}

DEFAULTS = {
    "mesh": {"h": 0.05, "depth": 12},
    "solver": {"tol": 1e-10, "max_iter": 60},
    "mc": {"gamma": [0.5, 0.25, 0.1], "samples": 10_000, "seed": 0, "h": 0.12, "depth": 6,
           "functional": "one"},
    "output": {"directory": "liouvlab-out", "formats": list(FORMATS)},
}
TOP_KEYS = {"problem", "mesh", "solver", "tasks", "mc", "output"}
PROBLEM_KEYS = {"punctures", "Lambda", "sigma"}
PUNCTURE_KEYS = {"kind", "x", "weight"}


class RunSpecError(ValueError):
    def __init__(self, errors):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


@dataclass
class RunSpec:
    problem: ProblemSpec
    mesh: dict
    solver: dict
    tasks: list
    mc: dict
    output: dict
    source: str = "<defaults>"
    extra: dict = field(default_factory=dict)


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _anchor(text, key, msg):
    line = _line_of(text, key) if text else 0
    return f"line {line}: {msg}" if line else msg


def _parse_point(v):
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, float)) for t in v):
        return complex(v[0], v[1])
    raise ValueError(f"location {v!r} must be a number or [re, im]")


def runspec_from_dict(data: dict, text: str = "", source: str = "<dict>") -> RunSpec:
    """Validate a decoded run spec; raises :class:`RunSpecError` with all problems."""
    errs = []
    if not isinstance(data, dict):
        raise RunSpecError(["run spec must be a JSON object"])
    for k in data:
        if k not in TOP_KEYS:
            errs.append(_anchor(text, k, f"unknown key {k!r}"))
    sections = {}
    for name, dflt in DEFAULTS.items():
        sec = data.get(name, {})
        if not isinstance(sec, dict):
            errs.append(_anchor(text, name, f"section {name!r} must be an object"))
            sec = {}
        for k in sec:
            if k not in dflt:
                errs.append(_anchor(text, k, f"unknown key {k!r} in section {name!r}"))
        sections[name] = {**dflt, **{k: v for k, v in sec.items() if k in dflt}}

    prob = data.get("problem", {})
    problem = None
    if not isinstance(prob, dict):
        errs.append(_anchor(text, "problem", "section 'problem' must be an object"))
        prob = {}
    for k in prob:
        if k not in PROBLEM_KEYS:
            errs.append(_anchor(text, k, f"unknown key {k!r} in section 'problem'"))
    if "punctures" in prob:
        pts = []
        for i, p in enumerate(prob["punctures"]):
            bad = [k for k in p if k not in PUNCTURE_KEYS] if isinstance(p, dict) else ["?"]
            if bad:
                errs.append(_anchor(text, "punctures", f"puncture {i}: unknown keys {bad}"))
                continue
            try:
                kind = p.get("kind", "bulk")
                x = _parse_point(p["x"])
                w = float(p["weight"])
                pts.append(geo.bulk(x, w) if kind == "bulk" else
                           geo.boundary(x, w) if kind == "boundary" else
                           geo.Puncture(kind, x, w))
                if kind == "boundary" and x.imag != 0:
                    errs.append(_anchor(text, "punctures",
                                        f"puncture {i}: boundary puncture must be real"))
            except (KeyError, ValueError, TypeError) as exc:
                errs.append(_anchor(text, "punctures", f"puncture {i}: {exc}"))
        divisor = geo.Divisor(tuple(pts))
    else:
        divisor = geo.reference_divisor()
    Lam = prob.get("Lambda", 2.0)
    sigma = prob.get("sigma")
    if sigma is None:
        sigma = [1.0] * max(1, len(divisor.boundary))
    try:
        problem = ProblemSpec(divisor, float(Lam), tuple(float(s) for s in sigma))
        for e in problem.validate():
            key = "punctures" if e.startswith("punct") or "Euler" in e else \
                "Lambda" if "Lambda" in e else "sigma"
            errs.append(_anchor(text, key, e))
    except (TypeError, ValueError) as exc:
        errs.append(_anchor(text, "problem", str(exc)))

    tasks = data.get("tasks", list(TASKS))
    if not isinstance(tasks, list) or any(t not in TASKS for t in tasks):
        errs.append(_anchor(text, "tasks", f"tasks must be a subset of {list(TASKS)}"))
        tasks = []
    mesh, solver, mc, out = (sections[k] for k in ("mesh", "solver", "mc", "output"))
    if not (0 < float(mesh["h"]) <= 0.5):
        errs.append(_anchor(text, "h", "mesh h must lie in (0, 0.5]"))
    if int(mesh["depth"]) < 0:
        errs.append(_anchor(text, "depth", "grading depth must be >= 0"))
    if not float(solver["tol"]) > 0:
        errs.append(_anchor(text, "tol", "solver tolerance must be positive"))
    if any(not 0 < float(g) < 1 for g in mc["gamma"]):
        errs.append(_anchor(text, "gamma", "every gamma must lie in (0, 1)"))
    if int(mc["samples"]) < 2:
        errs.append(_anchor(text, "samples", "mc needs at least 2 samples"))
    if any(f not in FORMATS for f in out["formats"]):
        errs.append(_anchor(text, "formats", f"formats must be a subset of {list(FORMATS)}"))
    if errs:
        raise RunSpecError(errs)
    return RunSpec(problem, mesh, solver, expand_tasks(tasks), mc, out, source)


def expand_tasks(tasks) -> list:
    """Add prerequisites and return the tasks in dependency order."""
    need = set(tasks)
    for t in list(need):
        need.update(REQUIRES[t])
    return [t for t in TASKS if t in need]


def parse_runspec(path) -> RunSpec:
    path = Path(path)
    if not path.exists():
        raise RunSpecError([f"{path}: no such file"])
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RunSpecError([f"line {exc.lineno}: {exc.msg}"]) from None
    return runspec_from_dict(data, text, str(path))


# --------------------------------------------------------------------------
# pipeline


def _c(z):
    z = complex(z)
    return [z.real, z.imag]


def _default_probes(spec: ProblemSpec):
    """Bulk probes away from punctures and boundary probes inside each arc."""
    x = np.array([p.location for p in spec.divisor], complex)
    cand = np.array([0.5 + 0.5j, -0.6 + 0.8j, 1.7 + 1.1j, 0.3 + 2.2j, -1.5 + 0.4j])
    bulk = [z for z in cand if x.size == 0 or np.min(np.abs(x - z)) > 0.25]
    t = np.sort([p.location.real for p in spec.divisor.boundary])
    bnd = []
    if t.size:
        bnd += [t[0] - 1.0, t[-1] + 1.0]
        bnd += [0.5 * (a + b) for a, b in zip(t[:-1], t[1:]) if b - a > 0.2]
    else:
        bnd = [0.0, 2.0]
    return np.array(bulk), np.array(sorted(bnd))


def run(rs: RunSpec, threads: int | None = None) -> tuple[dict, int]:
    """Execute the tasks of a run spec; returns the report and an exit code."""
    from . import action, descendants as dsc, stochastic as st
    from ._kernels import BACKEND
    if threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(threads))
        if BACKEND == "numba":
            import numba
            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
    ctx = {"h": float(rs.mesh["h"]), "depth": int(rs.mesh["depth"]),
           "tol": float(rs.solver["tol"]), "seed": int(rs.mc["seed"])}
    report = {"context": dict(ctx), "tasks": list(rs.tasks), "results": {}, "errors": {},
              "tables": {}, "timings": {}}
    res, tables = report["results"], report["tables"]
    sol = eng = desc = None
    code = EXIT_OK
    for task in rs.tasks:
        if any(req in report["errors"] for req in REQUIRES[task]):
            report["errors"][task] = "skipped: a prerequisite failed"
            continue
        t0 = time.perf_counter()
        try:
            if task == "solve":
                sol = solve(rs.problem, h=ctx["h"], depth=ctx["depth"], tol=ctx["tol"],
                            max_iter=int(rs.solver["max_iter"]))
                gb = sol.gauss_bonnet()
                res["solve"] = {"ndof": int(sol.disc.space.ndof), "newton_iterations": sol.newton_iterations,
                                "gradient_norm": sol.gradient_norm, "energy": sol.energy,
                                "quadrature_error": sol.quadrature_error, "mean_c": sol.mean_c,
                                "gauss_bonnet_defect": gb[0], "chi": rs.problem.chi}
                ctx["quadrature_error"] = sol.quadrature_error
                tables["solver"] = [{**ctx, "ndof": res["solve"]["ndof"],
                                     "newton_iterations": sol.newton_iterations,
                                     "gradient_norm": sol.gradient_norm,
                                     "gauss_bonnet_defect": gb[0], "energy": sol.energy}]
            elif task == "action":
                rep = action.classical_action(sol)
                res["action"] = rep.as_dict()
                tables["action"] = [{**ctx, "S": rep.S_total, "S_flat": rep.S_flat,
                                     "I": rep.I_value, "G": rep.G_interaction,
                                     "action_quadrature_error": rep.quadrature_error}]
            elif task == "accessory":
                eng = dsc.DescendantEngine(sol)
                desc = dsc.accessory_parameters(sol, eng)
                res["accessory"] = desc.as_dict()
                res["accessory"]["meta"] = {str(k): list(v) for k, v in desc.meta.get("boundary_r", {}).items()}
                tables["accessory"] = [{**ctx, "entry": k, "puncture": e.index,
                                        "kind": "bulk" if e.bulk else "boundary",
                                        "x_re": e.x.real, "x_im": e.x.imag, "weight": e.weight,
                                        "c_re": e.accessory.real, "c_im": e.accessory.imag,
                                        "l1_error": e.l1_error}
                                       for k, e in enumerate(desc.entries)]
            elif task == "ward":
                r = dsc.global_ward_residuals(desc)
                res["ward"] = {"residuals": r.tolist()}
                tables["ward"] = [{**ctx, "n": n, "normalized_residual": float(r[n])} for n in range(3)]
            elif task == "hem":
                bp, tp = _default_probes(rs.problem)
                hem = dsc.hem_residuals(sol, desc, bp, tp, eng)
                model = dsc.stress_tensor(desc)
                trows = []
                for z in bp:
                    Tr = complex(model(np.array([z]))[0])
                    Td = complex(dsc.stress_tensor_direct(sol, z, eng))
                    trows.append({**ctx, "z_re": z.real, "z_im": z.imag, "T_rational_re": Tr.real,
                                  "T_rational_im": Tr.imag, "T_direct_re": Td.real,
                                  "T_direct_im": Td.imag, "relative": abs(Tr - Td) / max(abs(Td), 1e-300)})
                res["hem"] = hem.as_dict()
                res["stress_tensor"] = trows
                tables["stress_tensor"] = trows
                tables["hem"] = [{**ctx, **row} for row in hem.boundary]
            elif task == "l2":
                rows = []
                for k, e in enumerate(desc.entries):
                    if e.bulk and e.x.imag > 0:
                        lw = dsc.l2_ward(desc, k)
                        ld = dsc.l2_bulk_direct(sol, k, eng)
                        rows.append({**ctx, "entry": k, "l2_ward_re": lw.real, "l2_ward_im": lw.imag,
                                     "l2_direct_re": ld.real, "l2_direct_im": ld.imag,
                                     "difference": abs(lw - ld)})
                res["l2"] = rows
                tables["l2"] = rows
            elif task == "mc":
                mc = rs.mc
                lat = st.build_lattice(rs.problem, h=float(mc["h"]), depth=int(mc["depth"]))
                ens = st.gaussian_ensemble(lat, seed=int(mc["seed"]))
                rob = st.robin_build(lat)
                F = st.functional(mc["functional"], lat)
                out = st.semiclassical_mc(ens, rob, F, tuple(float(g) for g in mc["gamma"]),
                                          int(mc["samples"]), int(mc["seed"]))
                mctx = {**ctx, "h": float(mc["h"]), "depth": int(mc["depth"]),
                        "quadrature_error": max(e.quadrature["halving_change"] for e in out.estimates)}
                res["mc"] = {"functional": out.functional, "ndof": lat.ndof, "target": out.target.value,
                             "target_one": out.target.one,
                             "partition_determinant": out.target.partition.determinant,
                             "partition_cholesky": out.target.partition.cholesky,
                             "monotone": out.monotone, "brackets": out.brackets,
                             "final_z": out.final_z, "estimates": out.table()}
                tables["mc"] = [{**mctx, **row} for row in out.table()]
        except ConvergenceError as exc:
            report["errors"][task] = f"numerical failure: {exc}"
            code = EXIT_NUMERICAL if task == "solve" else EXIT_PARTIAL
        except Exception as exc:  # isolate task failures
            log.exception("task %s failed", task)
            report["errors"][task] = f"{type(exc).__name__}: {exc}"
            if code == EXIT_OK:
                code = EXIT_PARTIAL
        report["timings"][task] = time.perf_counter() - t0
    report["sol"] = sol
    return report, code


# --------------------------------------------------------------------------
# output


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items() if k != "sol"}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (complex, np.complexfloating)):
        return _c(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    return o


def write_csv(path: Path, rows: list):
    if not rows:
        return
    cols = ["csv_version"] + list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([CSV_VERSION] + [repr(float(r[c])) if isinstance(r[c], (float, np.floating))
                                        else r[c] for c in cols[1:]])


def _contour_segments(pts, tris, vals, level):
    segs = []
    for t in tris:
        v = vals[t]
        p = pts[t]
        cross = []
        for i, j in ((0, 1), (1, 2), (2, 0)):
            if (v[i] - level) * (v[j] - level) < 0:
                s = (level - v[i]) / (v[j] - v[i])
                cross.append(p[i] + s * (p[j] - p[i]))
        if len(cross) == 2:
            segs.append(cross)
    return segs


def svg_contours(sol, path: Path, nlevels: int = 12, size: int = 480):
    """Contours of ``log`` of the metric density ``e^{Phi}`` on the disk."""
    mesh = sol.disc.mesh
    pts, tris = mesh.vertices, mesh.triangles
    with np.errstate(all="ignore"):
        vals = (sol.phi_disk(pts) + sol.sing.value(pts)
                + 2 * geo.conformal_exponent(pts)).real
    fin = np.isfinite(vals)
    lo, hi = np.percentile(vals[fin], [2, 98])
    vals = np.where(fin, vals, hi)
    sc = 0.45 * size

    def xy(z):
        return 0.5 * size + sc * z.real, 0.5 * size - sc * z.imag

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             f'<circle cx="{size / 2}" cy="{size / 2}" r="{sc}" fill="none" stroke="black"/>']
    for k, lev in enumerate(np.linspace(lo, hi, nlevels)):
        shade = int(200 * k / max(1, nlevels - 1))
        for a, b in _contour_segments(pts, tris, vals, lev):
            (x1, y1), (x2, y2) = xy(a), xy(b)
            lines.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                         f'stroke="rgb({shade},0,{200 - shade})" stroke-width="0.8"/>')
    for w in sol.spec.divisor.disk_locations():
        x, y = xy(w)
        lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="black"/>')
    lines.append("</svg>")
    path.write_text("\n".join(lines))


def svg_trace(sol, path: Path, n: int = 400, width: int = 600, height: int = 300):
    """Line plot of the boundary trace of ``Phi`` on the unit circle."""
    th = np.linspace(-np.pi, np.pi, n)
    w = np.exp(1j * th) * (1 - 1e-12)
    with np.errstate(all="ignore"):
        v = (sol.phi_disk(w) + sol.sing.value(w) + 2 * geo.conformal_exponent(w)).real
    fin = np.isfinite(v)
    lo, hi = np.percentile(v[fin], [1, 99])
    v = np.clip(np.where(fin, v, hi), lo, hi)
    xs = 40 + (th + np.pi) / (2 * np.pi) * (width - 60)
    ys = height - 30 - (v - lo) / max(hi - lo, 1e-12) * (height - 60)
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    path.write_text(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<polyline points="{pts}" fill="none" stroke="navy"/>\n'
        f'<text x="40" y="15" font-size="12">boundary trace, angle in [-pi, pi], '
        f'range [{lo:.3g}, {hi:.3g}]</text>\n</svg>')


def emit(report: dict, rs: RunSpec, out: Path) -> list:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    fmts = rs.output["formats"]
    if "json" in fmts:
        p = out / "report.json"
        p.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True))
        written.append(p)
    if "csv" in fmts:
        for name, rows in report["tables"].items():
            p = out / f"{name}.csv"
            write_csv(p, rows)
            written.append(p)
    sol = report.get("sol")
    if "svg" in fmts and sol is not None:
        svg_contours(sol, out / "metric_contours.svg")
        svg_trace(sol, out / "boundary_trace.svg")
        written += [out / "metric_contours.svg", out / "boundary_trace.svg"]
    return written


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liouvlab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "solve only and write solver outputs"),
                           ("report", "run every task listed in the run spec"),
                           ("mc", "semiclassical Monte Carlo only"),
                           ("check", "validate a run spec")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--spec", type=Path, help="run spec (JSON); default: reference config")
        if name == "check":
            continue
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, help="worker threads for compiled kernels")
        s.add_argument("--h", type=float, help="mesh size")
        s.add_argument("--depth", type=int, help="grading depth")
        s.add_argument("--gamma", type=str, help="comma-separated gamma schedule")
        s.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(rs: RunSpec, args) -> RunSpec:
    if getattr(args, "h", None) is not None:
        rs.mesh["h"] = args.h
    if getattr(args, "depth", None) is not None:
        rs.mesh["depth"] = args.depth
    if getattr(args, "seed", None) is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise RunSpecError(["--seed must be an unsigned 64-bit integer"])
        rs.mc["seed"] = args.seed
    if getattr(args, "gamma", None):
        try:
            g = [float(v) for v in args.gamma.split(",")]
        except ValueError:
            raise RunSpecError(["--gamma must be a comma-separated list of numbers"]) from None
        if any(not 0 < v < 1 for v in g):
            raise RunSpecError(["every gamma must lie in (0, 1)"])
        rs.mc["gamma"] = g
    if getattr(args, "samples", None) is not None:
        if args.samples < 2:
            raise RunSpecError(["--samples must be at least 2"])
        rs.mc["samples"] = args.samples
    if getattr(args, "out", None) is not None:
        rs.output["directory"] = str(args.out)
    if args.command == "solve":
        rs.tasks = ["solve"]
    elif args.command == "mc":
        rs.tasks = ["mc"]
    return rs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rs = parse_runspec(args.spec) if args.spec else runspec_from_dict({}, source="<reference>")
        if args.command == "check":
            print(f"{rs.source}: ok; tasks {', '.join(rs.tasks)}")
            return EXIT_OK
        rs = _apply_overrides(rs, args)
    except (RunSpecError, SpecError) as exc:
        for e in getattr(exc, "errors", [str(exc)]):
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    report, code = run(rs, threads=args.threads)
    written = emit(report, rs, Path(rs.output["directory"]))
    for task, err in report["errors"].items():
        print(f"{task}: {err}", file=sys.stderr)
    print(f"wrote {len(written)} files to {rs.output['directory']} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
