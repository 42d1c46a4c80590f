"""Built-in invariant checks on tiny configurations."""

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .config import ParamSequenceSpec, PowerLaw, config_from_dict, config_to_dict, default_study_config
from .forms import LoadProfile, TractionLoad
from .geometry import DomainConfig, NodalField, build_domain, grid_strain, scale_to_reference, scaled_strain
from .limit import LimitModel, affine_certificate
from .materials import DissipationSpec, LimitParams, QuintupleParams, recession
from .study import validate_hypotheses
from .thin import Physics, ThinModel
from .trotter import ProjectionContext, project_state, trotter_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class SelftestReport:
    results: list

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def to_text(self):
        return "\n".join(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in self.results)


def tiny_domain(eps=0.125):
    return DomainConfig(eps=eps, h_bulk=0.25, m_layer=2, m_refbox=2)


def _traction():
    return TractionLoad((0.3, 1.0), LoadProfile("ramp", 1.0, t_ramp=0.25))


class _Fixture:
    def __init__(self, corrupt_symmetry=False):
        self.q = QuintupleParams(0.125, 0.125, 0.125, 0.125, 8.0)
        self.lp = LimitParams(1.0, 1.0, 1.0, 1.0)
        self.meshes = build_domain(tiny_domain())
        self.thin = ThinModel.build(self.q, self.meshes, Physics(), _traction())
        self.limit = LimitModel.build(self.lp, self.meshes, Physics(), _traction())
        if corrupt_symmetry:
            phi = self.thin.forms.phi.tolil()
            phi[2, 3] += 1e-3
            self.thin.forms = replace(self.thin.forms, phi=phi.tocsr())
        self.rng = np.random.default_rng(12345)


def _symmetry(fx):
    worst = 0.0
    for forms in (fx.thin.forms, fx.limit.forms):
        for mat in (forms.phi, forms.k):
            diff = mat - mat.T
            worst = max(worst, abs(diff).max() if diff.nnz else 0.0)
    return worst == 0.0, f"max |M - M^T| = {worst:.3g}"


def _positivity(fx):
    worst = math.inf
    for forms in (fx.thin.forms, fx.limit.forms):
        for _ in range(20):
            v = fx.rng.standard_normal(forms.n_dofs)
            v[forms.dirichlet] = 0.0
            worst = min(worst, forms.energy_sq(v, v))
    return worst > 0, f"min |X|^2 on random free vectors = {worst:.3g}"


def _kernel_backends(fx):
    g = fx.meshes.bulk.gradients
    w = fx.meshes.bulk.wdet
    lam = np.full(w.shape[0], 1.3)
    mu = np.full(w.shape[0], 0.7)
    a = _kernels.NUMPY_IMPL["elastic"](g, g, w, lam, mu)
    b = _kernels.JIT_IMPL["elastic"](g, g, w, lam, mu)
    err = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
    return err < 1e-13, f"relative difference {err:.2e}"


def _scaling_identity(fx):
    layer = fx.meshes.layer
    eps = fx.meshes.eps
    worst = 0.0
    for _ in range(10):
        vals = fx.rng.standard_normal((layer.n_nodes, layer.dim))
        lhs = np.einsum("zq,zqij,zqij->", layer.wdet, *(2 * [grid_strain(layer, vals)]))
        w = scale_to_reference(NodalField(layer.name, vals), eps, fx.meshes)
        es = scaled_strain(w, eps, fx.meshes)
        rhs = np.einsum("zq,zqij,zqij->", fx.meshes.ref_layer.wdet, es, es) / eps
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    return worst <= 1e-12, f"max relative error {worst:.2e}"


def _contraction(fx):
    worst = 0.0
    for model in (fx.thin, fx.limit):
        f = model.forms
        for _ in range(5):
            a = fx.rng.standard_normal((4, f.n_dofs))
            a[0][f.dirichlet] = 0.0
            a[2][f.dirichlet] = 0.0
            r1 = model.resolvent(a[0], a[1], 0.1)
            r2 = model.resolvent(a[2], a[3], 0.1)
            out = f.energy_norm(r1.u - r2.u, r1.v - r2.v)
            inp = f.energy_norm(a[0] - a[2], a[1] - a[3])
            worst = max(worst, out / inp)
    return worst <= 1 + 1e-8, f"max |R(a) - R(b)| / |a - b| = {worst:.6f}"


def _energy_decay(fx):
    worst = 0.0
    for cls, forms in ((ThinModel, fx.thin.forms), (LimitModel, fx.limit.forms)):
        model = cls(forms)
        u = fx.rng.standard_normal(forms.n_dofs)
        u[forms.dirichlet] = 0.0
        x0 = model.state_cls(u, fx.rng.standard_normal(forms.n_dofs))
        traj = model.simulate(x0, 16 / 64, 1 / 64)
        rise = np.max(np.diff(traj.energy)) / traj.energy[0]
        worst = max(worst, rise)
    return worst <= 1e-10, f"largest relative energy increase {worst:.2e}"


def _affine_lift(fx):
    defect, scale = affine_certificate(fx.meshes, fx.limit.lift_shape)
    return defect <= 1e-8 * scale, f"second difference {defect:.2e} (scale {scale:.2e})"


def _frozen_jump(fx):
    model = LimitModel.build(replace(fx.lp, b_bar=math.inf), fx.meshes, Physics(), _traction())
    n = model.forms.n_dofs
    u = model.lift(0.0)[0]
    v = fx.rng.standard_normal(n)
    traj = model.simulate(model.state_cls(u, v), 16 / 64, 1 / 64)
    drift = float(np.max(traj.jump_freeze))
    return drift <= 1e-10, f"max jump drift {drift:.2e}"


def _recession(fx):
    spec = DissipationSpec(p=1.5, c_D=2.0)
    worst = 0.0
    for _ in range(20):
        e = fx.rng.standard_normal((2, 2))
        e = 0.5 * (e + e.T)
        worst = max(worst, abs(recession(spec, e) - spec.value(e)))
    return worst == 0.0, f"max |recession - D| = {worst:.2e}"


def _projection(fx):
    ctx = ProjectionContext(fx.thin.forms, fx.limit.forms, fx.q, fx.lp)
    f = fx.limit.forms
    xs = []
    for _ in range(2):
        u = fx.rng.standard_normal(f.n_dofs)
        u[f.dirichlet] = 0.0
        xs.append(fx.limit.state_cls(u, fx.rng.standard_normal(f.n_dofs)))
    pa, pb = project_state(ctx, xs[0]), project_state(ctx, xs[1])
    pab = project_state(ctx, xs[0].scaled(2.0) + xs[1])
    lin = max(np.max(np.abs(pab.u - 2 * pa.u - pb.u)), np.max(np.abs(pab.v - 2 * pa.v - pb.v)))
    zero = trotter_distance(ctx, xs[0], pa)[0]
    ok = lin <= 1e-12 * max(1.0, np.max(np.abs(pab.u))) and zero == 0.0
    return ok, f"linearity defect {lin:.2e}, distance to own projection {zero:.1e}"


def _hypothesis_gate(fx):
    dom = DomainConfig()
    tr = _traction()
    good = ParamSequenceSpec()
    mass_free = replace(good, rho=PowerLaw(1.0, 0.0))
    soft = replace(good, mu=PowerLaw(1.0, 2.0), mu_bar=0.0)
    ok = (
        validate_hypotheses(good, tr, dom).passed
        and not validate_hypotheses(mass_free, tr, dom).item("item6").passed
        and not validate_hypotheses(soft, tr, dom).item("main_path").passed
    )
    return ok, "reference sequence passes; constant density and quadratic shear are rejected"


def _config_roundtrip(fx):
    cfg = default_study_config()
    again = config_from_dict(config_to_dict(cfg))
    thrice = config_from_dict(config_to_dict(again))
    return again == thrice, "parse -> serialize -> parse is the identity"


CHECKS = (
    ("form_symmetry", _symmetry),
    ("form_positivity", _positivity),
    ("kernel_backends", _kernel_backends),
    ("scaling_identity", _scaling_identity),
    ("resolvent_contraction", _contraction),
    ("energy_decay", _energy_decay),
    ("affine_lift", _affine_lift),
    ("frozen_jump", _frozen_jump),
    ("recession_homogeneous", _recession),
    ("projection", _projection),
    ("hypothesis_gate", _hypothesis_gate),
    ("config_roundtrip", _config_roundtrip),
)


def selftest(corrupt_symmetry=False, only=None):
    """Run the built-in checks.

    Parameters
    ----------
    corrupt_symmetry : bool
        Test hook: perturb one stiffness entry so the symmetry check fails.
    only : iterable of str, optional
        Restrict to these check names.
    """
    fx = _Fixture(corrupt_symmetry=corrupt_symmetry)
    results = []
    for name, check in CHECKS:
        if only is not None and name not in only:
            continue
        try:
            ok, detail = check(fx)
        except Exception as exc:  # a crash is a failed check, not a crashed run
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        logger.info("%s %s", name, "ok" if ok else "FAILED")
        results.append(CheckResult(name, bool(ok), detail))
    return SelftestReport(results)
