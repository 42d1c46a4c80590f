"""Parameter-sequence checks and the thin-to-limit convergence study."""

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .forms import LoadError
from .geometry import MeshError, build_domain
from .limit import LimitModel, LimitState
from .solvers import SolverError
from .thin import Physics, ThinModel, ThinState
from .trotter import (
    ProjectionContext,
    build_initial_data,
    compare_trajectories,
    compatible_limit_data,
)

logger = logging.getLogger(__name__)

STUDY_COLUMNS = (
    "n",
    "eps",
    "lam_ratio",
    "mu_ratio",
    "b_ratio",
    "rho_eps",
    "sup_trotter",
    "sup_normgap",
    "wall_ms",
)
WIGGLE = 0.10
HALVING = 0.5


class HypothesisError(RuntimeError):
    """The declared sequence or loads violate a standing assumption."""

    def __init__(self, report):
        super().__init__("; ".join(f"{i.name}: {i.detail}" for i in report.failures))
        self.report = report


class StudyError(RuntimeError):
    """A sub-run of the study failed; ``rows`` holds the finished rows."""

    def __init__(self, message, rows, cause=None):
        super().__init__(message)
        self.rows = rows
        self.cause = cause


# --------------------------------------------------------------------------
# hypothesis gate
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class HypothesisItem:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class HypothesisReport:
    items: list

    @property
    def passed(self):
        return all(i.passed for i in self.items)

    @property
    def failures(self):
        return [i for i in self.items if not i.passed]

    def item(self, name):
        for i in self.items:
            if i.name == name:
                return i
        raise KeyError(name)

    def verdicts(self):
        return {i.name: i.passed for i in self.items}

    def to_text(self):
        lines = []
        for i in self.items:
            mark = "PASS" if i.passed else "FAIL"
            lines.append(f"{mark} {i.name}: {i.detail}")
        return "\n".join(lines)


def _same_limit(a, b):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-300)


def _fmt(x):
    return "inf" if math.isinf(x) else f"{x:.6g}"


def clamped_sides(domain):
    """Which bodies carry a Dirichlet patch: ``{"minus": bool, "plus": bool}``."""
    out = {"minus": False, "plus": False}
    for patch in domain.dirichlet_patches:
        for a, b in patch.normal_span(domain.extents):
            if a < 0:
                out["minus"] = True
            if b > 0:
                out["plus"] = True
    return out


def _touches_side(domain, patch, side):
    for a, b in patch.normal_span(domain.extents):
        if side == "minus" and a < 0:
            return True
        if side == "plus" and b > 0:
            return True
    return False


def validate_hypotheses(spec, traction, domain):
    """Check the parameter sequence and the load support.

    Limits are decided exactly from the power-law exponents; the declared
    targets must equal those limits. The numbered items follow the standing
    assumptions on the sequence; ``main_path`` restricts to finite
    ``lambda_bar`` and positive finite ``mu_bar``; ``support_collar`` and
    ``support_unclamped`` check the traction support.

    Parameters
    ----------
    spec : ParamSequenceSpec
    traction : TractionLoad or None
    domain : DomainConfig

    Returns
    -------
    HypothesisReport
    """
    items = []
    p = spec.p

    # well-posed generator and positive terms
    ok = spec.eps_init > 0 and 0 < spec.ratio < 1 and spec.count >= 1
    bad_terms = []
    if ok:
        for n in range(spec.count):
            q = spec.params(n)
            if not all(np.isfinite(x) and x > 0 for x in (q.eps, q.lam, q.mu, q.b, q.rho)):
                bad_terms.append(n)
    items.append(
        HypothesisItem(
            "sequence",
            ok and not bad_terms and 1.0 <= p <= 2.0,
            "eps_n decreasing to 0, all terms positive, p in [1, 2]"
            + (f"; nonpositive terms at n={bad_terms}" if bad_terms else ""),
        )
    )

    # (1) eps, lam, mu, b converge; lam and mu limits finite. The density
    # part of this item (rho_n -> inf) is implied by (6) and checked there.
    lam_inf = spec.lam.ratio_limit(0.0)
    mu_inf = spec.mu.ratio_limit(0.0)
    b_inf = spec.b.ratio_limit(0.0)
    items.append(
        HypothesisItem(
            "item1",
            ok and math.isfinite(lam_inf) and math.isfinite(mu_inf) and b_inf >= 0,
            f"lim lam_n = {_fmt(lam_inf)}, lim mu_n = {_fmt(mu_inf)}, lim b_n = {_fmt(b_inf)}",
        )
    )

    # (2) scaled Lame limits match the declared targets
    lam_bar = spec.lam.ratio_limit(1.0)
    mu_bar = spec.mu.ratio_limit(1.0)
    items.append(
        HypothesisItem(
            "item2",
            _same_limit(lam_bar, spec.lambda_bar) and _same_limit(mu_bar, spec.mu_bar),
            f"lam_n/eps_n -> {_fmt(lam_bar)} (declared {_fmt(spec.lambda_bar)}), "
            f"mu_n/eps_n -> {_fmt(mu_bar)} (declared {_fmt(spec.mu_bar)})",
        )
    )

    # (3) b_n eps_n -> 0 and b_n / eps_n^(p-1) -> b_bar
    b_eps = spec.b.ratio_limit(-1.0)
    b_bar = spec.b.ratio_limit(p - 1.0)
    items.append(
        HypothesisItem(
            "item3",
            b_eps == 0.0 and _same_limit(b_bar, spec.b_bar),
            f"b_n*eps_n -> {_fmt(b_eps)}, b_n/eps_n^(p-1) -> {_fmt(b_bar)} (declared {_fmt(spec.b_bar)})",
        )
    )

    # (4) an unclamped body needs a positive scaled shear limit
    sides = clamped_sides(domain)
    both = sides["minus"] and sides["plus"]
    items.append(
        HypothesisItem(
            "item4",
            both or mu_bar > 0,
            "both bodies clamped" if both else f"one body unclamped, mu_bar = {_fmt(mu_bar)}",
        )
    )

    # (5) eps_n^2 / mu_n bounded
    ratio5 = spec.mu.ratio_limit(2.0)
    bounded = spec.mu.coef > 0 and spec.mu.power <= 2.0
    items.append(
        HypothesisItem(
            "item5",
            bounded,
            f"mu_n/eps_n^2 -> {_fmt(ratio5)}",
        )
    )

    # (6) layer mass rho_n eps_n -> rho_bar in (0, inf)
    rho_bar = spec.rho.ratio_limit(-1.0)
    items.append(
        HypothesisItem(
            "item6",
            0 < rho_bar < math.inf and _same_limit(rho_bar, spec.rho_bar),
            f"rho_n*eps_n -> {_fmt(rho_bar)} (declared {_fmt(spec.rho_bar)})",
        )
    )

    items.append(
        HypothesisItem(
            "main_path",
            math.isfinite(lam_bar) and 0 < mu_bar < math.inf,
            f"(lam_bar, mu_bar) = ({_fmt(lam_bar)}, {_fmt(mu_bar)}) must lie in [0,inf) x (0,inf)",
        )
    )

    # traction support
    patches = () if traction is None else domain.neumann_patches
    inside = [p_ for p_ in patches if domain._touches_collar(p_)]
    items.append(
        HypothesisItem(
            "support_collar",
            not inside,
            "traction support clear of the closed collar"
            if not inside
            else f"{len(inside)} traction patch(es) reach |x_d| <= eps0",
        )
    )
    free = [s for s, c in sides.items() if not c]
    loaded = [s for s in free for p_ in patches if _touches_side(domain, p_, s)]
    items.append(
        HypothesisItem(
            "support_unclamped",
            not loaded,
            "no traction on an unclamped body" if not loaded else f"traction on unclamped {loaded[0]} body",
        )
    )
    return HypothesisReport(items)


def check_meshes(cfg):
    """Every term must fit inside the collar and produce a valid mesh."""
    seq = cfg.sequence
    for n in range(seq.count):
        cfg.domain.with_eps(seq.eps(n)).validate()


# --------------------------------------------------------------------------
# initial data
# --------------------------------------------------------------------------
def seed_fields(grid, extents):
    """Smooth reference pattern on the physical node coordinates of ``grid``.

    Lateral components ``sin(pi s_j) cos(pi z / 2)``; normal component
    ``0.5 s_0 (1 - z^2)``, with ``s_j`` the normalized lateral coordinates
    and ``z`` the normal coordinate scaled to ``[-1, 1]``.
    """
    x = grid.node_coords
    d = grid.dim
    lo, hi = extents[-1]
    z = x[:, -1] / max(-lo, hi)
    s = [(x[:, j] - extents[j][0]) / (extents[j][1] - extents[j][0]) for j in range(d - 1)]
    out = np.zeros((grid.n_nodes, d))
    for j in range(d - 1):
        out[:, j] = np.sin(np.pi * s[j]) * np.cos(0.5 * np.pi * z)
    out[:, -1] = 0.5 * s[0] * (1.0 - z**2)
    return out, s[0]


def seed_limit_state(cfg, forms):
    """Limit seed ``(B s_0 pattern, A pattern)`` with Dirichlet DOFs cleared."""
    pattern, s0 = seed_fields(forms.grid, cfg.domain.extents)
    u = (cfg.initial.displacement_amplitude * s0[:, None] * pattern).ravel()
    v = (cfg.initial.velocity_amplitude * pattern).ravel()
    u[forms.dirichlet] = 0.0
    return LimitState(u, v)


# --------------------------------------------------------------------------
# study
# --------------------------------------------------------------------------
@dataclass
class StudyRow:
    n: int
    eps: float
    lam_ratio: float
    mu_ratio: float
    b_ratio: float
    rho_eps: float
    sup_trotter: float
    sup_normgap: float
    wall_ms: float
    distance: np.ndarray = field(default=None, repr=False)
    norm_gap: np.ndarray = field(default=None, repr=False)

    def csv_values(self, deterministic=False):
        wall = 0 if deterministic else int(round(self.wall_ms))
        vals = [self.n] + [repr(float(getattr(self, c))) for c in STUDY_COLUMNS[1:-1]] + [wall]
        return [str(v) for v in vals]


def decays(values, wiggle=WIGGLE, factor=HALVING):
    """``(monotone up to wiggle, final <= factor * first)``."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return True, True
    mono = bool(np.all(vals[1:] <= (1.0 + wiggle) * vals[:-1]))
    halving = bool(vals[-1] <= factor * vals[0]) if vals[0] > 0 else bool(np.all(vals == 0))
    return mono, halving


@dataclass
class StudyReport:
    rows: list
    limit_energy: np.ndarray = None
    refinement: dict = None

    @property
    def verdicts(self):
        dm, dh = decays([r.sup_trotter for r in self.rows])
        gm, gh = decays([r.sup_normgap for r in self.rows])
        return {
            "trotter_monotone": dm,
            "trotter_halving": dh,
            "normgap_monotone": gm,
            "normgap_halving": gh,
        }

    @property
    def passed(self):
        return all(self.verdicts.values())

    def to_csv(self, deterministic=False):
        return rows_to_csv(self.rows, deterministic)


def rows_to_csv(rows, deterministic=False):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(STUDY_COLUMNS)
    for row in sorted(rows, key=lambda r: r.n):
        writer.writerow(row.csv_values(deterministic))
    return buf.getvalue()


def _physics(cfg):
    return Physics(cfg.law, cfg.density, cfg.dissipation, cfg.tol, cfg.linear_solver)


def _limit_run(cfg, domain):
    """Run the limit model from the compatible datum; returns ``(model, seed, lift state, trajectory)``."""
    seq = cfg.sequence
    meshes = build_domain(domain)
    lm = LimitModel.build(seq.limit_params(), meshes, _physics(cfg), cfg.traction, cfg.body_force)
    seed = seed_limit_state(cfg, lm.forms)
    xe0 = LimitState(lm.lift(0.0)[0], np.zeros(lm.forms.n_dofs))
    x0 = compatible_limit_data(seed, xe0, lm)
    traj = lm.simulate(x0, cfg.T, cfg.tau)
    return lm, seed, xe0, traj


def _thin_run(cfg, domain, n, lm, seed, xe0, limit_traj, out_dir=None):
    seq = cfg.sequence
    start = time.perf_counter()
    q = seq.params(n)
    meshes = build_domain(domain.with_eps(q.eps))
    th = ThinModel.build(q, meshes, _physics(cfg), cfg.traction, cfg.body_force)
    ctx = ProjectionContext(th.forms, lm.forms, q, seq.limit_params())
    xe0n = ThinState(th.lift(0.0)[0], np.zeros(th.forms.n_dofs))
    x0n = build_initial_data(ctx, seed, xe0, xe0n, th, lm)
    traj = th.simulate(x0n, cfg.T, cfg.tau)
    rep = compare_trajectories(ctx, limit_traj, traj)
    wall = 1e3 * (time.perf_counter() - start)
    ratios = seq.ratios(n)
    if out_dir is not None and cfg.output.trajectories:
        traj.to_csv(os.path.join(out_dir, f"thin_n{n}.csv"))
    if out_dir is not None and cfg.output.field_format:
        from .fieldio import write_field

        last = len(traj) - 1
        write_field(
            os.path.join(out_dir, f"thin_n{n}_final{cfg.output.field_format}"),
            meshes.bulk,
            np.hstack([traj.u[last].reshape(-1, meshes.bulk.dim), traj.v[last].reshape(-1, meshes.bulk.dim)]),
            ("u", "v"),
        )
    return StudyRow(
        n=n,
        eps=q.eps,
        wall_ms=wall,
        sup_trotter=rep.sup_distance,
        sup_normgap=rep.sup_norm_gap,
        distance=rep.distance,
        norm_gap=rep.norm_gap,
        **ratios,
    )


def run_convergence_study(cfg, threads=1, deterministic=False, out_dir=None, refinement=True):
    """Run the limit model once and every thin term of the sequence.

    Parameters
    ----------
    cfg : StudyConfig
    threads : int
        Worker threads for the per-term runs.
    deterministic : bool
        Write ``wall_ms = 0`` so repeated runs give identical files.
    out_dir : str, optional
        Where the study CSV and trajectory CSVs go.
    refinement : bool
        Also rerun the finest term with both grids refined once, as a check
        that the last distance is not dominated by discretization error.

    Raises
    ------
    HypothesisError
        Gate failure; nothing is run.
    StudyError
        A sub-run failed; the finished rows were written first.
    """
    cfg.validate()
    report = validate_hypotheses(cfg.sequence, cfg.traction, cfg.domain)
    if not report.passed:
        raise HypothesisError(report)
    check_meshes(cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    csv_path = None if out_dir is None else os.path.join(out_dir, cfg.output.study_csv)

    lm, seed, xe0, limit_traj = _limit_run(cfg, cfg.domain)
    if out_dir is not None and cfg.output.trajectories:
        limit_traj.to_csv(os.path.join(out_dir, "limit.csv"))
    logger.info("limit run done: %d steps", len(limit_traj) - 1)

    rows = []
    failure = None
    ns = list(range(cfg.sequence.count))
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        futures = [pool.submit(_thin_run, cfg, cfg.domain, n, lm, seed, xe0, limit_traj, out_dir) for n in ns]
        for n, fut in zip(ns, futures):
            try:
                row = fut.result()
            except (SolverError, MeshError, LoadError, ValueError, np.linalg.LinAlgError) as exc:
                failure = failure or (n, exc)
                continue
            rows.append(row)
            logger.info("n=%d eps=%.4g sup_trotter=%.4g sup_normgap=%.4g", n, row.eps, row.sup_trotter, row.sup_normgap)
    if csv_path is not None:
        with open(csv_path, "w") as fh:
            fh.write(rows_to_csv(rows, deterministic))
    if failure is not None:
        n, exc = failure
        raise StudyError(f"term n={n} failed: {exc}", rows, exc) from exc

    study = StudyReport(rows, limit_energy=limit_traj.energy)
    if refinement:
        study.refinement = refinement_check(cfg, rows[-1])
        if out_dir is not None:
            with open(os.path.join(out_dir, "refinement.csv"), "w") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["n", "h_bulk", "sup_trotter", "sup_normgap"])
                for key in ("coarse", "fine"):
                    r = study.refinement[key]
                    writer.writerow([r["n"], repr(r["h_bulk"]), repr(r["sup_trotter"]), repr(r["sup_normgap"])])
    return study


def refinement_check(cfg, finest):
    """Rerun the finest term with ``h_bulk`` halved and the layer cells doubled."""
    dom = cfg.domain
    fine = replace(dom, h_bulk=0.5 * dom.h_bulk, m_layer=2 * dom.m_layer, m_refbox=2 * dom.m_refbox)
    lm, seed, xe0, traj = _limit_run(cfg, fine)
    row = _thin_run(cfg, fine, finest.n, lm, seed, xe0, traj)
    return {
        "coarse": {"n": finest.n, "h_bulk": dom.h_bulk, "sup_trotter": finest.sup_trotter, "sup_normgap": finest.sup_normgap},
        "fine": {"n": finest.n, "h_bulk": fine.h_bulk, "sup_trotter": row.sup_trotter, "sup_normgap": row.sup_normgap},
    }
