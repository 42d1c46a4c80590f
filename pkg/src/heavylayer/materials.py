"""Material laws and parameter containers.

Holds the bulk elastic law, densities, the layer dissipation potential with
its smoothing and recession function, and the thin and limit parameter sets.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

RECESSION_SAMPLES = (2.0**10, 2.0**12, 2.0**14)


class MaterialError(ValueError):
    """Raised for inadmissible material or parameter data."""


def dw_lame(e, lam, mu):
    """Stress of the Lamé energy: ``lam tr(e) I + 2 mu e``.

    Works on a single tensor or a stack with trailing shape (d, d).
    """
    e = np.asarray(e, dtype=float)
    d = e.shape[-1]
    tr = np.trace(e, axis1=-2, axis2=-1)
    return lam * tr[..., None, None] * np.eye(d) + 2.0 * mu * e


def fiber_tensor(q):
    """Symmetric product ``q (x)_S e_d`` for a vector or a stack of vectors."""
    q = np.asarray(q, dtype=float)
    d = q.shape[-1]
    out = np.zeros(q.shape + (d,))
    out[..., :, -1] += 0.5 * q
    out[..., -1, :] += 0.5 * q
    return out


def fiber_pairing(q, qp, lam, mu):
    """Closed form of ``DW(q (x)_S e_d) : (q' (x)_S e_d)``."""
    q = np.asarray(q, dtype=float)
    qp = np.asarray(qp, dtype=float)
    lateral = np.sum(q[..., :-1] * qp[..., :-1], axis=-1)
    return mu * lateral + (lam + 2.0 * mu) * q[..., -1] * qp[..., -1]


# --------------------------------------------------------------------------
# bulk law and density
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class ElasticLaw:
    """Isotropic Lamé law per adherent body (below / above the layer)."""

    lam_minus: float = 1.0
    mu_minus: float = 1.0
    lam_plus: float = 1.0
    mu_plus: float = 1.0

    def lame(self, side):
        return (self.lam_minus, self.mu_minus) if side < 0 else (self.lam_plus, self.mu_plus)

    def coercivity_bounds(self, dim):
        """Constants with ``alpha |e|^2 <= a e.e <= beta |e|^2``."""
        alphas, betas = [], []
        for lam, mu in ((self.lam_minus, self.mu_minus), (self.lam_plus, self.mu_plus)):
            # eigenvalues of the Lamé tensor: 2mu (deviatoric), d lam + 2mu (spherical)
            alphas.append(min(2.0 * mu, dim * lam + 2.0 * mu))
            betas.append(max(2.0 * mu, dim * lam + 2.0 * mu))
        return min(alphas), max(betas)

    def validate(self, dim):
        alpha, _ = self.coercivity_bounds(dim)
        if not alpha > 0:
            raise MaterialError("bulk elastic law is not coercive")

    def spot_check(self, dim, rng, samples=20):
        """Sample random symmetric strains and verify the coercivity bounds."""
        alpha, beta = self.coercivity_bounds(dim)
        e = rng.standard_normal((samples, dim, dim))
        e = 0.5 * (e + np.swapaxes(e, 1, 2))
        sq = np.einsum("kij,kij->k", e, e)
        ok = True
        for side in (-1, 1):
            lam, mu = self.lame(side)
            val = np.einsum("kij,kij->k", dw_lame(e, lam, mu), e)
            ok &= bool(np.all(val >= alpha * sq * (1 - 1e-12)) and np.all(val <= beta * sq * (1 + 1e-12)))
        return ok


@dataclass(frozen=True)
class BulkDensity:
    """Piecewise-constant bulk density (below / above the layer)."""

    minus: float = 1.0
    plus: float = 1.0

    def value(self, side):
        return self.minus if side < 0 else self.plus

    @property
    def bounds(self):
        return min(self.minus, self.plus), max(self.minus, self.plus)

    def validate(self):
        if not min(self.minus, self.plus) > 0:
            raise MaterialError("bulk density must be positive")


# --------------------------------------------------------------------------
# dissipation potential
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DissipationSpec:
    """Radial convex dissipation ``D(e) = sum_k c_k |e|**a_k``.

    Parameters
    ----------
    p : float
        Growth exponent in [1, 2].
    c_D : float
        Coefficient of the default power law ``(c_D/p) |e|**p``.
    eta : float
        Smoothing: evaluators use ``f(sqrt(|e|^2 + eta^2)) - f(eta)``.
    terms : tuple of (coef, exponent), optional
        User profile replacing the power law. Exponents must be >= 1 and
        coefficients >= 0, which makes the profile convex.
    """

    p: float = 2.0
    c_D: float = 1.0
    eta: float = 0.0
    terms: tuple = None

    def __post_init__(self):
        if self.terms is not None:
            object.__setattr__(
                self, "terms", tuple((float(c), float(k)) for c, k in self.terms)
            )

    def validate(self, convex=True):
        """Check parameters.

        ``convex=False`` admits profile exponents in ``(0, 1)``; such profiles
        can be evaluated and have a recession function, but the solvers
        require convexity.
        """
        if not 1.0 <= self.p <= 2.0:
            raise MaterialError(f"dissipation exponent p={self.p} outside [1, 2]")
        if self.eta < 0:
            raise MaterialError("smoothing eta must be nonnegative")
        if self.terms is None:
            if not self.c_D > 0:
                raise MaterialError("c_D must be positive")
        else:
            if not self.terms:
                raise MaterialError("empty dissipation profile")
            low = 1.0 if convex else 0.0
            for c, k in self.terms:
                if c < 0 or k < low or (k == 0.0):
                    raise MaterialError(f"profile terms need coef >= 0 and exponent >= {low:g} (nonzero)")

    @property
    def is_power_law(self):
        return self.terms is None

    @property
    def profile(self):
        if self.terms is None:
            return ((self.c_D / self.p, self.p),)
        return self.terms

    @property
    def coefs(self):
        return np.array([c for c, _ in self.profile])

    @property
    def exponents(self):
        return np.array([k for _, k in self.profile])

    @property
    def is_quadratic(self):
        """True when ``D_eta`` is exactly quadratic (so the resolvent is linear)."""
        return all(k == 2.0 or c == 0.0 for c, k in self.profile)

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return sum(c * r**k for c, k in self.profile)

    def value(self, e):
        """Unsmoothed ``D(e)`` for a tensor or stack of tensors."""
        e = np.asarray(e, dtype=float)
        return self.radial(np.sqrt(np.sum(e * e, axis=(-2, -1))))

    def growth_constants(self):
        """``(alpha', beta')`` with ``alpha'|e|^p <= D(e) <= beta'(|e|^p + 1)``.

        Returns ``beta' = inf`` if some term grows faster than ``|e|^p``.
        """
        alpha = sum(c for c, k in self.profile if k == self.p)
        if any(k > self.p and c > 0 for c, k in self.profile):
            return alpha, math.inf
        return alpha, sum(c for c, _ in self.profile)


def dissipation_value_grad(spec, e, eta=None):
    """Smoothed dissipation value and gradient.

    Parameters
    ----------
    spec : DissipationSpec
    e : array_like, shape (..., d, d)
    eta : float, optional
        Overrides ``spec.eta``.

    Returns
    -------
    value : ndarray, shape (...)
    grad : ndarray, shape (..., d, d)
    """
    spec.validate()
    e = np.asarray(e, dtype=float)
    lead = e.shape[:-2]
    d = e.shape[-1]
    eta = spec.eta if eta is None else float(eta)
    val, grad, _ = _kernels.dissipation(
        e.reshape(-1, d, d), spec.coefs, spec.exponents, eta
    )
    return val.reshape(lead), grad.reshape(lead + (d, d))


def _aitken(a0, a1, a2):
    d1, d2 = a1 - a0, a2 - a1
    denom = d2 - d1
    if d1 == 0 or d2 == 0 or denom == 0 or d1 * d2 < 0:
        return None
    return a2 - d2 * d2 / denom


def recession(spec, e):
    """``limsup_t D(t e) / t**p``.

    Exact for the power law. For user profiles the quotient is sampled at
    ``t = 2^10, 2^12, 2^14`` and Aitken-extrapolated when the samples
    approach their limit geometrically; otherwise the largest sample is
    returned.

    Raises
    ------
    OverflowError
        When the profile overflows at the sampled scales.
    """
    spec.validate(convex=False)
    e = np.asarray(e, dtype=float)
    if spec.is_power_law:
        return spec.value(e)
    samples = []
    for t in RECESSION_SAMPLES:
        with np.errstate(over="ignore", invalid="ignore"):
            val = spec.value(t * e) / t**spec.p
        if not np.all(np.isfinite(val)):
            raise OverflowError("dissipation profile overflows at large arguments")
        samples.append(np.asarray(val, dtype=float))
    a0, a1, a2 = samples
    out = np.array(np.maximum(np.maximum(a0, a1), a2), dtype=float)
    flat = out.reshape(-1)  # view: out is a fresh contiguous array
    s0, s1, s2 = (s.reshape(-1) for s in samples)
    for i in range(flat.size):
        if s1[i] > 0 and s2[i] / s1[i] > 2.0 and s1[i] / max(s0[i], 1e-300) > 2.0:
            flat[i] = math.inf  # superlinear growth of the quotient
            continue
        lim = _aitken(s0[i], s1[i], s2[i])
        if lim is not None and np.isfinite(lim):
            flat[i] = lim
    return out if out.ndim else float(out)


def recession_coefficient(spec):
    """Constant ``kappa`` with ``D^{inf,p}(e) = kappa |e|**p`` (radial profiles)."""
    d = 2
    unit = np.zeros((d, d))
    unit[0, 0] = 1.0
    return float(recession(spec, unit))


def recession_spec(spec):
    """Power-law spec that evaluates the recession function of ``spec``."""
    kappa = recession_coefficient(spec)
    if not np.isfinite(kappa):
        raise MaterialError("recession function is infinite: profile grows faster than |e|^p")
    return DissipationSpec(p=spec.p, c_D=kappa * spec.p, eta=spec.eta)


@dataclass(frozen=True)
class RecessionFit:
    """Fitted constants of ``|D - D^inf| <= delta (1 + |e|^theta)``."""

    delta: float
    theta: float
    holds: bool
    max_violation: float


def fit_recession_bound(spec, rng=None, samples=64):
    """Fit the recession remainder bound on random strains.

    The exponent comes from a log-log regression of the remainder against
    ``|e|`` on the large-strain samples; ``delta`` is then the smallest
    constant that makes the bound hold on every sample.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = 2
    mags = np.logspace(-3, 6, samples)
    dirs = rng.standard_normal((samples, d, d))
    dirs = 0.5 * (dirs + np.swapaxes(dirs, 1, 2))
    dirs /= np.sqrt(np.einsum("kij,kij->k", dirs, dirs))[:, None, None]
    e = dirs * mags[:, None, None]
    rem = np.abs(spec.value(e) - np.asarray(recession(spec, e)))
    scale = np.maximum(1.0, np.abs(spec.value(e)))
    big = (mags >= 10.0) & (rem > 1e-13 * scale)
    if np.count_nonzero(big) >= 2:
        theta = float(np.polyfit(np.log(mags[big]), np.log(rem[big]), 1)[0])
        theta = max(theta, 0.0)
    else:
        theta = 0.0
    bound = 1.0 + mags**theta
    delta = float(np.max(rem / bound))
    slack = delta * bound - rem
    return RecessionFit(
        delta=delta,
        theta=theta,
        holds=bool(theta < spec.p and np.all(slack >= -1e-12 * scale)),
        max_violation=float(max(0.0, -np.min(slack))),
    )


# --------------------------------------------------------------------------
# parameter sets
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class QuintupleParams:
    """Layer parameters ``(eps, lambda, mu, b, rho)`` of one thin problem."""

    eps: float
    lam: float
    mu: float
    b: float
    rho: float

    def validate(self):
        for name in ("eps", "lam", "mu", "b", "rho"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise MaterialError(f"{name} must be a positive finite number, got {val}")


@dataclass(frozen=True)
class LimitParams:
    """Limit layer parameters; ``b_bar`` may be ``inf`` (frozen jump)."""

    lambda_bar: float
    mu_bar: float
    b_bar: float
    rho_bar: float
    p: float = 2.0

    def validate(self):
        if not (np.isfinite(self.lambda_bar) and self.lambda_bar >= 0):
            raise MaterialError("lambda_bar must lie in [0, inf)")
        if not (np.isfinite(self.mu_bar) and self.mu_bar > 0):
            raise MaterialError("mu_bar must lie in (0, inf)")
        if not (self.b_bar >= 0):
            raise MaterialError("b_bar must lie in [0, inf]")
        if not (np.isfinite(self.rho_bar) and self.rho_bar > 0):
            raise MaterialError("rho_bar must lie in (0, inf)")
        if not 1.0 <= self.p <= 2.0:
            raise MaterialError("p must lie in [1, 2]")

    @property
    def frozen(self):
        return math.isinf(self.b_bar)


@dataclass(frozen=True)
class LimitDissipationValue:
    value: float
    feasible: bool


def limit_dissipation(lp, spec, q, meshes=None, tol=1e-12):
    """Limit layer dissipation ``b_bar int_B D^{inf,p}(q (x)_S e_d)``.

    Parameters
    ----------
    lp : LimitParams
    spec : DissipationSpec
    q : NodalField or ndarray
        Either a layer field on the reference box (``q`` is then its normal
        derivative at the Gauss points, which needs ``meshes``) or the values
        of ``q`` at the reference-box Gauss points, shape (ncell, nq, d).
    meshes : DomainMeshes, optional
    tol : float
        Feasibility threshold for ``b_bar = inf``, relative to ``max(1, |q|)``.
    """
    from .geometry import NodalField, grid_strain, strain_scale

    ref = meshes.ref_layer if meshes is not None else None
    if isinstance(q, NodalField):
        if ref is None:
            raise MaterialError("a nodal layer field needs the meshes")
        strain = grid_strain(ref, q.values, strain_scale(ref.dim, 0.0))
    else:
        qv = np.asarray(q, dtype=float)
        strain = fiber_tensor(qv)
    if lp.b_bar == 0:
        return LimitDissipationValue(0.0, True)
    if lp.frozen:
        size = float(np.max(np.abs(strain))) if strain.size else 0.0
        feasible = size <= tol
        return LimitDissipationValue(0.0 if feasible else math.inf, feasible)
    if ref is None:
        raise MaterialError("quadrature weights need the meshes")
    rec = np.asarray(recession(spec, strain))
    return LimitDissipationValue(float(lp.b_bar * np.sum(ref.wdet * rec)), True)
