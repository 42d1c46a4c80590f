"""Command line front end: ``python -m heavylayer VERB [options]``."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import ConfigError, default_study_config, dump_config, load_config
from .forms import LoadError
from .geometry import MeshError, build_domain
from .materials import MaterialError
from .solvers import SolverError
from .study import (
    HypothesisError,
    StudyError,
    _limit_run,
    _physics,
    check_meshes,
    run_convergence_study,
    seed_fields,
    validate_hypotheses,
)

logger = logging.getLogger("heavylayer")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2
EXIT_SOLVER = 3

VERBS = ("build", "simulate-thin", "simulate-limit", "project", "converge", "validate", "selftest")


def _parser():
    ap = argparse.ArgumentParser(prog="heavylayer", description=__doc__)
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", help="JSON study configuration (default: built-in desk study)")
    ap.add_argument("--out", default=None, help="output directory (default: config output.directory)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for per-term runs")
    ap.add_argument("--deterministic", action="store_true", help="write wall_ms = 0 for reproducible files")
    ap.add_argument("--n", type=int, default=0, help="sequence index for simulate-thin")
    ap.add_argument("--no-refinement", action="store_true", help="skip the refined rerun in converge")
    ap.add_argument("--write-default-config", metavar="PATH", help="write the default configuration and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _out_dir(args, cfg):
    out = args.out or cfg.output.directory
    os.makedirs(out, exist_ok=True)
    return out


def _gate(cfg):
    report = validate_hypotheses(cfg.sequence, cfg.traction, cfg.domain)
    if not report.passed:
        raise HypothesisError(report)
    check_meshes(cfg)
    return report


def cmd_build(args, cfg):
    meshes = build_domain(cfg.domain)
    out = _out_dir(args, cfg)
    summary = {
        name: {"nodes": grid.n_nodes, "cells": grid.n_cells, "dofs": grid.n_dofs}
        for name, grid in (
            ("bulk", meshes.bulk),
            ("layer", meshes.layer),
            ("ref_layer", meshes.ref_layer),
            ("split_minus", meshes.split_minus),
            ("split_plus", meshes.split_plus),
            ("coupled", meshes.coupled),
        )
    }
    summary["normal_sheets"] = [float(z) for z in meshes.bulk.coords[-1]]
    with open(os.path.join(out, "meshes.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    for name, s in summary.items():
        if name != "normal_sheets":
            print(f"{name}: {s['nodes']} nodes, {s['cells']} cells")
    return EXIT_OK


def cmd_simulate_thin(args, cfg):
    from .thin import ThinModel, ThinState

    _gate(cfg)
    seq = cfg.sequence
    q = seq.params(args.n)
    meshes = build_domain(cfg.domain.with_eps(q.eps))
    model = ThinModel.build(q, meshes, _physics(cfg), cfg.traction, cfg.body_force)
    pattern, s0 = seed_fields(meshes.bulk, cfg.domain.extents)
    u = (cfg.initial.displacement_amplitude * s0[:, None] * pattern).ravel()
    u[model.forms.dirichlet] = 0.0
    x0 = ThinState(model.lift(0.0)[0] + u, (cfg.initial.velocity_amplitude * pattern).ravel())
    traj = model.simulate(x0, cfg.T, cfg.tau)
    out = _out_dir(args, cfg)
    traj.to_csv(os.path.join(out, f"thin_n{args.n}.csv"))
    _dump_final(cfg, out, f"thin_n{args.n}", meshes.bulk, traj)
    print(f"thin run n={args.n} eps={q.eps:g}: {len(traj) - 1} steps, final energy {traj.energy[-1]:.6g}")
    return EXIT_OK


def cmd_simulate_limit(args, cfg):
    _gate(cfg)
    lm, _, _, traj = _limit_run(cfg, cfg.domain)
    out = _out_dir(args, cfg)
    traj.to_csv(os.path.join(out, "limit.csv"))
    _dump_final(cfg, out, "limit", lm.forms.grid, traj)
    print(f"limit run: {len(traj) - 1} steps, final energy {traj.energy[-1]:.6g}")
    return EXIT_OK


def _dump_final(cfg, out, stem, grid, traj):
    if not cfg.output.field_format:
        return
    from .fieldio import write_field

    d = grid.dim
    vals = np.hstack([traj.u[-1].reshape(-1, d), traj.v[-1].reshape(-1, d)])
    write_field(os.path.join(out, f"{stem}_final{cfg.output.field_format}"), grid, vals, ("u", "v"))


def cmd_project(args, cfg):
    from .thin import ThinModel
    from .trotter import ProjectionContext, norm_consistency_probe

    _gate(cfg)
    lm, _, _, traj = _limit_run(cfg, cfg.domain)
    x = traj.state(0)
    seq = cfg.sequence
    ctxs = []
    for n in range(seq.count):
        q = seq.params(n)
        meshes = build_domain(cfg.domain.with_eps(q.eps))
        th = ThinModel.build(q, meshes, _physics(cfg), cfg.traction, cfg.body_force)
        ctxs.append(ProjectionContext(th.forms, lm.forms, q, seq.limit_params()))
    probe = norm_consistency_probe(ctxs, x, cfg.c_cap)
    out = _out_dir(args, cfg)
    with open(os.path.join(out, "projection.csv"), "w") as fh:
        fh.write("n,eps,projected_norm,limit_norm,gap\n")
        for r in probe.rows:
            fh.write(f"{r.n},{r.eps!r},{r.projected_norm!r},{r.limit_norm!r},{r.gap!r}\n")
    for flag in probe.flags:
        print(f"flag: {flag}")
    print(f"projection probe over {len(probe.rows)} terms written")
    return EXIT_OK


def cmd_converge(args, cfg):
    out = _out_dir(args, cfg)
    report = run_convergence_study(
        cfg,
        threads=args.threads,
        deterministic=args.deterministic,
        out_dir=out,
        refinement=not args.no_refinement,
    )
    for row in report.rows:
        print(f"n={row.n} eps={row.eps:g} sup_trotter={row.sup_trotter:.4g} sup_normgap={row.sup_normgap:.4g}")
    for name, ok in report.verdicts.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if report.refinement:
        c, f = report.refinement["coarse"], report.refinement["fine"]
        print(f"refinement at n={c['n']}: sup_trotter {c['sup_trotter']:.4g} (h={c['h_bulk']:g}) "
              f"vs {f['sup_trotter']:.4g} (h={f['h_bulk']:g})")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_validate(args, cfg):
    report = validate_hypotheses(cfg.sequence, cfg.traction, cfg.domain)
    print(report.to_text())
    if not report.passed:
        return EXIT_INVALID
    check_meshes(cfg)
    print("PASS meshes: every term fits inside the collar")
    return EXIT_OK


def cmd_selftest(args, cfg):
    from .selftest import selftest

    report = selftest()
    print(report.to_text())
    return EXIT_OK if report.passed else EXIT_FAIL


COMMANDS = {
    "build": cmd_build,
    "simulate-thin": cmd_simulate_thin,
    "simulate-limit": cmd_simulate_limit,
    "project": cmd_project,
    "converge": cmd_converge,
    "validate": cmd_validate,
    "selftest": cmd_selftest,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.write_default_config:
            dump_config(default_study_config(), args.write_default_config)
            return EXIT_OK
        cfg = load_config(args.config) if args.config else default_study_config()
        return COMMANDS[args.verb](args, cfg)
    except HypothesisError as exc:
        print(exc.report.to_text(), file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, MeshError, LoadError, MaterialError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StudyError as exc:
        print(f"solver failure: {exc} ({len(exc.rows)} rows written)", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
