"""Command-line entry point: ``ensemble-ns <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .mesh import barycentric_refine, remove_step, structured_rect_mesh, write_vtk
from .stochastic import clenshaw_curtis_sparse_grid

log = logging.getLogger("ensemble_ns")

SUITES = {
    "converge-gamma": ("gamma_sweep", ex.gamma_sweep),
    "converge-space": ("spatial", ex.spatial_convergence),
    "converge-time": ("temporal", ex.temporal_convergence),
    "div-sweep": ("div_sweep", ex.divergence_sweep),
}


def load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _section(cfg: dict, name: str) -> dict:
    sec = dict(cfg.get(name, {}))
    if not isinstance(sec, dict):
        raise SystemExit(f"config section {name!r} must be an object")
    return sec


def _run_suite(args, cfg, out: Path):
    key, fn = SUITES[args.command]
    overrides = _section(cfg, args.command)
    if args.seed is not None:
        overrides["seed"] = args.seed
    table = fn(overrides, parallel=args.parallel)
    table.write_csv(out / "rates.csv")
    summary = {"command": args.command, "config": {**ex.MANUFACTURED_DEFAULTS[key], **overrides},
               **table.to_dict(), **({"extra": table.extra} if table.extra else {})}
    ex.write_summary(out / "summary.json", summary)
    header, body = table.rows()
    print(",".join(header))
    for row in body:
        print(",".join(row))


def _vtk_prefix(args, out, name):
    return str(out / name) if args.vtk_stride else None


def _run_tgv(args, cfg, out: Path):
    over = _section(cfg, "tgv")
    schemes = ["spp", "coupled"] if args.scheme == "both" else [args.scheme]
    p = {**ex.BENCHMARK_DEFAULTS["tgv"], **over}
    nu0 = p["scale"]
    summary = {"command": "tgv", "config": p, "runs": {}}
    for sch in schemes:
        q = ex.benchmark("tgv", sch, over, args.vtk_stride, _vtk_prefix(args, out, f"tgv_{sch}"))
        q.write_csv(out / f"energy_{sch}.csv")
        ex.write_log_csv(out / f"log_{sch}.csv", q.log_rows)
        exact = ex.tgv_exact_energy(q.times, nu0)
        summary["runs"][sch] = {
            "blowup_time": q.blowup_time,
            "final_expected_energy": float(q.expected_energy[-1]) if len(q.times) else None,
            "max_rel_dev_from_mean_viscosity_energy": float(np.max(np.abs(q.expected_energy / exact - 1)))
            if len(q.times) else None,
            "monotone_decreasing": bool(np.all(np.diff(q.expected_energy) < 0)),
        }
        print(f"tgv {sch}: E[energy](T) = {summary['runs'][sch]['final_expected_energy']}")
    ex.write_summary(out / "summary.json", summary)


def _run_step(args, cfg, out: Path):
    over = _section(cfg, "step")
    p = {**ex.BENCHMARK_DEFAULTS["step"], **over}
    q = ex.benchmark("step", args.scheme if args.scheme != "both" else "spp", over,
                     args.vtk_stride, _vtk_prefix(args, out, "step"))
    q.write_csv(out / "energy.csv")
    ex.write_log_csv(out / "log.csv", q.log_rows)
    rec = ex.recirculation_indicator(q.result)
    ex.write_summary(out / "summary.json", {
        "command": "step", "config": p, "blowup_time": q.blowup_time,
        "min_streamwise_velocity_behind_step": rec, "recirculation": bool(rec < 0),
    })
    print(f"step: min u_x behind step = {rec:.6g}")


def _run_rldc(args, cfg, out: Path):
    over = _section(cfg, "rldc")
    p = {**ex.BENCHMARK_DEFAULTS["rldc"], **over}
    sch = args.scheme if args.scheme != "both" else "spp"
    summary = {"command": "rldc", "config": p, "runs": {}}
    for mu in p["mus"]:
        q = ex.benchmark("rldc", sch, {**over, "mu": mu}, args.vtk_stride,
                         _vtk_prefix(args, out, f"rldc_mu{mu:g}"))
        q.write_csv(out / f"energy_mu{mu:g}.csv")
        ex.write_log_csv(out / f"log_mu{mu:g}.csv", q.log_rows)
        summary["runs"][f"{mu:g}"] = {
            "blowup_time": q.blowup_time,
            "final_expected_energy": float(q.expected_energy[-1]) if len(q.times) else None,
        }
        state = f"blow-up at t={q.blowup_time:g}" if q.blew_up else "stable"
        print(f"rldc mu={mu:g}: {state}")
    ex.write_summary(out / "summary.json", summary)


def _run_grid_dump(args, cfg, out: Path):
    """Sparse-grid points and weights as CSV; optionally a mesh as VTK."""
    sec = _section(cfg, "grid-dump")
    dim = int(sec.get("dim", args.dim))
    level = int(sec.get("level", args.level))
    rule = clenshaw_curtis_sparse_grid(dim, level)
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"y{i + 1}" for i in range(dim)] + ["weight"])
        for pt, wt in zip(rule.points, rule.weights):
            w.writerow([ex.fmt(v) for v in pt] + [ex.fmt(wt)])
    print(f"wrote {out / 'grid.csv'} ({rule.n_points} points)")
    kind = sec.get("mesh", args.mesh)
    if kind is None:
        return
    n = int(sec.get("n", args.n))
    if kind == "unit":
        mesh = structured_rect_mesh((0, 1), (0, 1), n, n)
    elif kind == "tgv":
        mesh = structured_rect_mesh((0, np.pi), (0, np.pi), n, n)
    elif kind == "rldc":
        mesh = structured_rect_mesh((-1, 1), (-1, 1), n, n)
    else:
        mesh = remove_step(structured_rect_mesh((0, 40), (0, 10), 4 * n, n), ((5.0, 6.0), (0.0, 1.0)))
    if sec.get("refine", args.refine):
        mesh = barycentric_refine(mesh)
    path = out / f"mesh_{kind}.vtk"
    write_vtk(path, mesh)
    print(f"wrote {path} ({mesh.n_vertices} vertices, {mesh.n_triangles} triangles)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ensemble-ns", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with one object per subcommand")
    common.add_argument("--seed", type=int, default=None, help="seed for viscosity samples")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--vtk-stride", type=int, default=0, help="write a VTK snapshot every N steps")
    common.add_argument("--parallel", action="store_true", help="run sweep points in parallel processes")
    common.add_argument("-v", "--verbose", action="store_true")
    for name in SUITES:
        sub.add_parser(name, parents=[common])
    for name in ("tgv", "step", "rldc"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("--scheme", choices=["spp", "coupled", "both"], default="both" if name == "tgv" else "spp")
    gd = sub.add_parser("grid-dump", parents=[common])
    gd.add_argument("--dim", type=int, default=5, help="number of random inputs")
    gd.add_argument("--level", type=int, default=1)
    gd.add_argument("--mesh", choices=["unit", "tgv", "step", "rldc"], default=None,
                    help="also write this mesh as legacy VTK (step needs n divisible by 10)")
    gd.add_argument("--n", type=int, default=10)
    gd.add_argument("--refine", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.command in SUITES:
        _run_suite(args, cfg, out)
    elif args.command == "tgv":
        _run_tgv(args, cfg, out)
    elif args.command == "step":
        _run_step(args, cfg, out)
    elif args.command == "rldc":
        _run_rldc(args, cfg, out)
    else:
        _run_grid_dump(args, cfg, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
