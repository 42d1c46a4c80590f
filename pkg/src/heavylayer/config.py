"""JSON experiment configuration with unit annotations.

Every physical scalar or vector is written as ``{"value": ..., "unit": "..."}``.
Units are checked against a per-category allow-list and must be used
consistently within a category; they are never converted, so the numbers
are taken to be in one coherent system.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field

from .forms import BodyForce, LoadProfile, TractionLoad
from .geometry import BoundaryPatch, DomainConfig
from .materials import BulkDensity, DissipationSpec, ElasticLaw, LimitParams, QuintupleParams

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Malformed configuration or inconsistent units."""


UNIT_CATEGORIES = {
    "length": {"m", "cm", "mm", "um", "km", "1"},
    "stress": {"Pa", "kPa", "MPa", "GPa", "N/m^2", "1"},
    "density": {"kg/m^3", "g/cm^3", "1"},
    "time": {"s", "ms", "us", "1"},
    "frequency": {"1/s", "rad/s", "Hz", "1"},
    "velocity": {"m/s", "mm/s", "1"},
    "force_density": {"N/m^3", "1"},
    # units of these depend on the exponent p or the scaling law; any label
    # is accepted but it must be present
    "dissipation": None,
    "derived": None,
}


# --------------------------------------------------------------------------
# parameter sequence
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class PowerLaw:
    """``value(eps) = coef * eps**power``."""

    coef: float
    power: float

    def __call__(self, eps):
        return self.coef * eps**self.power

    def ratio_limit(self, shift):
        """Limit of ``value(eps) / eps**shift`` as ``eps -> 0``."""
        if self.coef == 0:
            return 0.0
        expo = self.power - shift
        if expo > 0:
            return 0.0
        if expo < 0:
            return math.inf
        return self.coef


@dataclass(frozen=True)
class ParamSequenceSpec:
    """Geometric thickness sequence and power-law layer coefficients.

    ``eps_n = eps_init * ratio**n`` for ``n < count``; each layer
    coefficient is ``coef * eps_n**power``.
    """

    eps_init: float = 0.25
    ratio: float = 0.5
    count: int = 5
    lam: PowerLaw = PowerLaw(1.0, 1.0)
    mu: PowerLaw = PowerLaw(1.0, 1.0)
    b: PowerLaw = PowerLaw(1.0, 1.0)
    rho: PowerLaw = PowerLaw(1.0, -1.0)
    lambda_bar: float = 1.0
    mu_bar: float = 1.0
    b_bar: float = 1.0
    rho_bar: float = 1.0
    p: float = 2.0
    kind: str = "geometric"

    def eps(self, n):
        return self.eps_init * self.ratio**n

    def params(self, n):
        e = self.eps(n)
        return QuintupleParams(e, self.lam(e), self.mu(e), self.b(e), self.rho(e))

    def ratios(self, n):
        """The four scaled ratios reported per term."""
        q = self.params(n)
        return {
            "lam_ratio": q.lam / q.eps,
            "mu_ratio": q.mu / q.eps,
            "b_ratio": q.b / q.eps ** (self.p - 1.0),
            "rho_eps": q.rho * q.eps,
        }

    def limit_params(self):
        return LimitParams(self.lambda_bar, self.mu_bar, self.b_bar, self.rho_bar, self.p)


# --------------------------------------------------------------------------
# initial data
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class InitialSpec:
    """Smooth seed for the limit initial state.

    The seed fields are products of sines and cosines of the physical
    coordinates; layer nodes sit on the interface, so the layer part of the
    seed is constant along fibers.
    """

    displacement_amplitude: float = 0.0
    velocity_amplitude: float = 1.0


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    study_csv: str = "study.csv"
    trajectories: bool = True
    field_format: str = ""  # "", ".csv" or ".bin"


@dataclass(frozen=True)
class StudyConfig:
    domain: DomainConfig = field(default_factory=lambda: DomainConfig(eps=0.25))
    law: ElasticLaw = field(default_factory=ElasticLaw)
    density: BulkDensity = field(default_factory=BulkDensity)
    dissipation: DissipationSpec = field(default_factory=DissipationSpec)
    sequence: ParamSequenceSpec = field(default_factory=ParamSequenceSpec)
    traction: TractionLoad = field(
        default_factory=lambda: TractionLoad((0.3, 1.0), LoadProfile("ramp", 1.0, t_ramp=0.25))
    )
    body_force: BodyForce = field(default_factory=BodyForce)
    initial: InitialSpec = field(default_factory=InitialSpec)
    T: float = 0.5
    tau: float = 1.0 / 64.0
    tol: float = 1e-10
    linear_solver: str = "cg"
    c_cap: float = 10.0
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0
    units: tuple = ()

    def validate(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.T < self.tau:
            raise ConfigError("T must be at least tau")
        steps = self.T / self.tau
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigError("T must be an integer multiple of tau")
        if self.linear_solver not in ("cg", "direct"):
            raise ConfigError("linear_solver must be 'cg' or 'direct'")
        if self.sequence.p != self.dissipation.p:
            raise ConfigError("sequence exponent p differs from the dissipation exponent")
        if self.output.field_format not in ("", ".csv", ".bin"):
            raise ConfigError("field_format must be '', '.csv' or '.bin'")
        check_units(dict(self.units))

    def unit(self, path, default="1"):
        return dict(self.units).get(path, default)


def default_study_config():
    return StudyConfig()


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------
class _Reader:
    def __init__(self):
        self.units = {}
        self.categories = {}

    def quantity(self, data, key, path, category, default=None):
        if key not in data:
            if default is None:
                raise ConfigError(f"missing field {path}")
            return default
        item = data[key]
        if not isinstance(item, dict) or "value" not in item or "unit" not in item:
            raise ConfigError(f"{path} needs a {{'value', 'unit'}} annotation")
        unit = item["unit"]
        if not isinstance(unit, str) or not unit:
            raise ConfigError(f"{path}: unit must be a nonempty string")
        self.units[path] = unit
        self.categories[path] = category
        return item["value"]


def _unit_category(path):
    return _PATH_CATEGORY.get(path.split("[")[0])


def check_units(units):
    """Check allow-lists and per-category consistency of unit labels."""
    seen = {}
    for path, unit in units.items():
        cat = _unit_category(path)
        if cat is None:
            continue
        allowed = UNIT_CATEGORIES[cat]
        if allowed is not None and unit not in allowed:
            raise ConfigError(f"{path}: unit {unit!r} not allowed for {cat}")
        if allowed is None:
            continue
        prev = seen.setdefault(cat, (unit, path))
        if prev[0] != unit:
            raise ConfigError(
                f"inconsistent {cat} units: {prev[1]} uses {prev[0]!r}, {path} uses {unit!r}"
            )


_PATH_CATEGORY = {
    "domain.extents": "length",
    "domain.eps0": "length",
    "domain.eps": "length",
    "domain.h_bulk": "length",
    "domain.dirichlet_patches": "length",
    "domain.neumann_patches": "length",
    "elastic.lam_minus": "stress",
    "elastic.mu_minus": "stress",
    "elastic.lam_plus": "stress",
    "elastic.mu_plus": "stress",
    "density.minus": "density",
    "density.plus": "density",
    "dissipation.c_D": "dissipation",
    "dissipation.eta": "frequency",
    "dissipation.terms": "dissipation",
    "sequence.eps_init": "length",
    "sequence.lam": "derived",
    "sequence.mu": "derived",
    "sequence.b": "derived",
    "sequence.rho": "derived",
    "sequence.lambda_bar": "derived",
    "sequence.mu_bar": "derived",
    "sequence.b_bar": "derived",
    "sequence.rho_bar": "derived",
    "loads.traction.vector": "stress",
    "loads.traction.profile.omega": "frequency",
    "loads.traction.profile.t_ramp": "time",
    "loads.body_force": "time",
    "loads.body_force.vector": "force_density",
    "initial.displacement_amplitude": "length",
    "initial.velocity_amplitude": "velocity",
    "time.T": "time",
    "time.tau": "time",
}


def _patches(reader, items, path):
    out = []
    for i, item in enumerate(items or []):
        sub = f"{path}[{i}]"
        bounds = reader.quantity(item, "bounds", sub, "length", default={"value": [], "unit": "1"})
        if isinstance(bounds, dict):
            bounds = bounds["value"]
        out.append(BoundaryPatch.from_dict({"axis": item["axis"], "side": item["side"], "bounds": bounds}))
    return tuple(out)


def _num(x):
    if isinstance(x, str) and x.lower() in ("inf", "infinity"):
        return math.inf
    return float(x)


def config_from_dict(doc):
    """Build a :class:`StudyConfig` from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    r = _Reader()
    try:
        dom = doc.get("domain", {})
        q = r.quantity
        extents = q(dom, "extents", "domain.extents", "length")
        eps0 = _num(q(dom, "eps0", "domain.eps0", "length"))
        seqd = doc.get("sequence", {})
        eps_init = _num(q(seqd, "eps_init", "sequence.eps_init", "length"))
        domain = DomainConfig(
            dim=int(dom.get("dim", len(extents))),
            extents=tuple(tuple(_num(v) for v in ab) for ab in extents),
            eps0=eps0,
            eps=_num(q(dom, "eps", "domain.eps", "length", default=eps_init)),
            h_bulk=_num(q(dom, "h_bulk", "domain.h_bulk", "length")),
            m_layer=int(dom.get("m_layer", 4)),
            m_refbox=int(dom.get("m_refbox", dom.get("m_layer", 4))),
            dirichlet_patches=_patches(r, dom.get("dirichlet_patches"), "domain.dirichlet_patches"),
            neumann_patches=_patches(r, dom.get("neumann_patches"), "domain.neumann_patches"),
        )
        el = doc.get("elastic", {})
        law = ElasticLaw(
            *(_num(q(el, k, f"elastic.{k}", "stress")) for k in ("lam_minus", "mu_minus", "lam_plus", "mu_plus"))
        )
        de = doc.get("density", {})
        density = BulkDensity(
            _num(q(de, "minus", "density.minus", "density")),
            _num(q(de, "plus", "density.plus", "density")),
        )
        di = doc.get("dissipation", {})
        terms = None
        if di.get("terms") is not None:
            raw = q(di, "terms", "dissipation.terms", "dissipation")
            terms = tuple((_num(c), _num(k)) for c, k in raw)
        diss = DissipationSpec(
            p=_num(di.get("p", 2.0)),
            c_D=_num(q(di, "c_D", "dissipation.c_D", "dissipation", default=1.0)),
            eta=_num(q(di, "eta", "dissipation.eta", "frequency", default=0.0)),
            terms=terms,
        )

        def law_of(key):
            val = q(seqd, key, f"sequence.{key}", "derived")
            return PowerLaw(_num(val["coef"]), _num(val["power"]))

        seq = ParamSequenceSpec(
            eps_init=eps_init,
            ratio=_num(seqd.get("ratio", 0.5)),
            count=int(seqd.get("count", 5)),
            lam=law_of("lam"),
            mu=law_of("mu"),
            b=law_of("b"),
            rho=law_of("rho"),
            lambda_bar=_num(q(seqd, "lambda_bar", "sequence.lambda_bar", "derived")),
            mu_bar=_num(q(seqd, "mu_bar", "sequence.mu_bar", "derived")),
            b_bar=_num(q(seqd, "b_bar", "sequence.b_bar", "derived")),
            rho_bar=_num(q(seqd, "rho_bar", "sequence.rho_bar", "derived")),
            p=_num(seqd.get("p", diss.p)),
            kind=seqd.get("kind", "geometric"),
        )
        if seq.kind != "geometric":
            raise ConfigError("only the geometric sequence generator is supported")
        loads = doc.get("loads", {})
        traction = None
        if loads.get("traction") is not None:
            tr = loads["traction"]
            prof = tr.get("profile", {})
            profile = LoadProfile(
                kind=prof.get("kind", "const"),
                scale=_num(prof.get("scale", 1.0)),
                omega=_num(q(prof, "omega", "loads.traction.profile.omega", "frequency", default=1.0)),
                t_ramp=_num(q(prof, "t_ramp", "loads.traction.profile.t_ramp", "time", default=1.0)),
            )
            traction = TractionLoad(
                tuple(_num(x) for x in q(tr, "vector", "loads.traction.vector", "stress")), profile
            )
        pieces = []
        for i, piece in enumerate(loads.get("body_force", []) or []):
            window = q(piece, "window", f"loads.body_force[{i}]", "time")
            vec = q(piece, "vector", f"loads.body_force.vector[{i}]", "force_density")
            pieces.append((_num(window[0]), _num(window[1]), tuple(_num(x) for x in vec)))
        init = doc.get("initial", {})
        initial = InitialSpec(
            _num(q(init, "displacement_amplitude", "initial.displacement_amplitude", "length", default=0.0)),
            _num(q(init, "velocity_amplitude", "initial.velocity_amplitude", "velocity", default=0.0)),
        )
        tm = doc.get("time", {})
        sol = doc.get("solver", {})
        out = doc.get("output", {})
        cfg = StudyConfig(
            domain=domain,
            law=law,
            density=density,
            dissipation=diss,
            sequence=seq,
            traction=traction,
            body_force=BodyForce(tuple(pieces)),
            initial=initial,
            T=_num(q(tm, "T", "time.T", "time")),
            tau=_num(q(tm, "tau", "time.tau", "time")),
            tol=_num(sol.get("tol", 1e-10)),
            linear_solver=sol.get("linear_solver", "cg"),
            c_cap=_num(sol.get("c_cap", 10.0)),
            output=OutputSpec(
                directory=out.get("directory", "out"),
                study_csv=out.get("study_csv", "study.csv"),
                trajectories=bool(out.get("trajectories", True)),
                field_format=out.get("field_format", ""),
            ),
            seed=int(doc.get("seed", 0)),
            units=tuple(sorted(r.units.items())),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    cfg.validate()
    return cfg


def _wrap(value, cfg, path, default_unit):
    return {"value": value, "unit": cfg.unit(path, default_unit)}


def _jnum(x):
    return "inf" if isinstance(x, float) and math.isinf(x) else x


def config_to_dict(cfg):
    """Serialize a configuration; inverse of :func:`config_from_dict`."""
    d = cfg.domain
    w = lambda value, path, unit="1": _wrap(value, cfg, path, unit)  # noqa: E731

    def patches(items, path):
        return [
            {
                "axis": p.axis,
                "side": p.side,
                "bounds": w(p.to_dict()["bounds"], f"{path}[{i}]"),
            }
            for i, p in enumerate(items)
        ]

    seq = cfg.sequence
    doc = {
        "domain": {
            "dim": d.dim,
            "extents": w([list(ab) for ab in d.extents], "domain.extents"),
            "eps0": w(d.eps0, "domain.eps0"),
            "eps": w(d.eps, "domain.eps"),
            "h_bulk": w(d.h_bulk, "domain.h_bulk"),
            "m_layer": d.m_layer,
            "m_refbox": d.m_refbox,
            "dirichlet_patches": patches(d.dirichlet_patches, "domain.dirichlet_patches"),
            "neumann_patches": patches(d.neumann_patches, "domain.neumann_patches"),
        },
        "elastic": {
            k: w(getattr(cfg.law, k), f"elastic.{k}")
            for k in ("lam_minus", "mu_minus", "lam_plus", "mu_plus")
        },
        "density": {
            "minus": w(cfg.density.minus, "density.minus"),
            "plus": w(cfg.density.plus, "density.plus"),
        },
        "dissipation": {
            "p": cfg.dissipation.p,
            "c_D": w(cfg.dissipation.c_D, "dissipation.c_D"),
            "eta": w(cfg.dissipation.eta, "dissipation.eta"),
            "terms": None
            if cfg.dissipation.terms is None
            else w([list(t) for t in cfg.dissipation.terms], "dissipation.terms"),
        },
        "sequence": {
            "kind": seq.kind,
            "eps_init": w(seq.eps_init, "sequence.eps_init"),
            "ratio": seq.ratio,
            "count": seq.count,
            "p": seq.p,
            **{
                k: w({"coef": getattr(seq, k).coef, "power": getattr(seq, k).power}, f"sequence.{k}")
                for k in ("lam", "mu", "b", "rho")
            },
            **{
                k: w(_jnum(getattr(seq, k)), f"sequence.{k}")
                for k in ("lambda_bar", "mu_bar", "b_bar", "rho_bar")
            },
        },
        "loads": {
            "traction": None
            if cfg.traction is None
            else {
                "vector": w(list(cfg.traction.vector), "loads.traction.vector"),
                "profile": {
                    "kind": cfg.traction.profile.kind,
                    "scale": cfg.traction.profile.scale,
                    "omega": w(cfg.traction.profile.omega, "loads.traction.profile.omega"),
                    "t_ramp": w(cfg.traction.profile.t_ramp, "loads.traction.profile.t_ramp"),
                },
            },
            "body_force": [
                {
                    "window": w([a, b], f"loads.body_force[{i}]"),
                    "vector": w(list(v), f"loads.body_force.vector[{i}]"),
                }
                for i, (a, b, v) in enumerate(cfg.body_force.pieces)
            ],
        },
        "initial": {
            "displacement_amplitude": w(cfg.initial.displacement_amplitude, "initial.displacement_amplitude"),
            "velocity_amplitude": w(cfg.initial.velocity_amplitude, "initial.velocity_amplitude"),
        },
        "time": {"T": w(cfg.T, "time.T"), "tau": w(cfg.tau, "time.tau")},
        "solver": {"tol": cfg.tol, "linear_solver": cfg.linear_solver, "c_cap": cfg.c_cap},
        "output": asdict(cfg.output),
        "seed": cfg.seed,
    }
    return doc


def load_config(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)


def dump_config(cfg, path=None):
    text = json.dumps(config_to_dict(cfg), indent=2, sort_keys=False)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def default_config_document():
    """The default study as a JSON-ready dictionary with SI-free unit labels."""
    cfg = default_study_config()
    return config_to_dict(cfg)
