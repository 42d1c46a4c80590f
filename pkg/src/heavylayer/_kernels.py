"""Hot loops: Q1 element matrices and pointwise dissipation evaluation.

Every kernel exists twice, once as a numba ``@njit`` loop nest and once as a
vectorized numpy expression. The numba versions are used when numba imports
and ``HEAVYLAYER_NUMBA`` is not set to ``0``; both produce the same numbers up
to roundoff and the test-suite checks them against each other.
"""

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

try:  # pragma: no cover - exercised implicitly by the backend switch
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _numba_requested():
    flag = os.environ.get("HEAVYLAYER_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


USE_NUMBA = _HAVE_NUMBA and _numba_requested()
BACKEND = "numba" if USE_NUMBA else "numpy"


# --------------------------------------------------------------------------
# element matrices
# --------------------------------------------------------------------------
def elastic_elements_numpy(g1, g2, wdet, lam, mu):
    """Lamé element matrices between two strain operators.

    Parameters
    ----------
    g1, g2 : ndarray, shape (ncell, nq, nloc, d)
        Scaled shape-function gradients ``s_j * dN_a/dx_j`` for the test and
        trial strain operators.
    wdet : ndarray, shape (ncell, nq)
        Quadrature weight times Jacobian determinant.
    lam, mu : ndarray, shape (ncell,)

    Returns
    -------
    ndarray, shape (ncell, nloc*d, nloc*d)
        Entry ``[(a,c),(b,e)] = sum_q w (lam g1_ac g2_be
        + mu (delta_ce g1_a.g2_b + g1_ae g2_bc))``.
    """
    ncell, nq, nloc, d = g1.shape
    wl = wdet * lam[:, None]
    wm = wdet * mu[:, None]
    ke = np.einsum("zq,zqac,zqbe->zacbe", wl, g1, g2)
    ke += np.einsum("zq,zqae,zqbc->zacbe", wm, g1, g2)
    dot = np.einsum("zq,zqaj,zqbj->zab", wm, g1, g2)
    eye = np.eye(d)
    ke += dot[:, :, None, :, None] * eye[None, None, :, None, :]
    return ke.reshape(ncell, nloc * d, nloc * d)


@njit(cache=True)
def _elastic_elements_jit(g1, g2, wdet, lam, mu):
    ncell, nq, nloc, d = g1.shape
    out = np.zeros((ncell, nloc * d, nloc * d))
    for z in range(ncell):
        for q in range(nq):
            wl = wdet[z, q] * lam[z]
            wm = wdet[z, q] * mu[z]
            for a in range(nloc):
                for b in range(nloc):
                    dot = 0.0
                    for j in range(d):
                        dot += g1[z, q, a, j] * g2[z, q, b, j]
                    for c in range(d):
                        row = a * d + c
                        for e in range(d):
                            val = wl * g1[z, q, a, c] * g2[z, q, b, e]
                            val += wm * g1[z, q, a, e] * g2[z, q, b, c]
                            if c == e:
                                val += wm * dot
                            out[z, row, b * d + e] += val
    return out


def mass_elements_numpy(shape, wdet, rho, d):
    """Consistent vector mass matrices, ``shape`` is (nq, nloc)."""
    ncell = wdet.shape[0]
    nloc = shape.shape[1]
    scalar = np.einsum("zq,qa,qb->zab", wdet * rho[:, None], shape, shape)
    ke = scalar[:, :, None, :, None] * np.eye(d)[None, None, :, None, :]
    return ke.reshape(ncell, nloc * d, nloc * d)


@njit(cache=True)
def _mass_elements_jit(shape, wdet, rho, d):
    ncell = wdet.shape[0]
    nq, nloc = shape.shape
    out = np.zeros((ncell, nloc * d, nloc * d))
    for z in range(ncell):
        for q in range(nq):
            w = wdet[z, q] * rho[z]
            for a in range(nloc):
                for b in range(nloc):
                    val = w * shape[q, a] * shape[q, b]
                    for c in range(d):
                        out[z, a * d + c, b * d + c] += val
    return out


# --------------------------------------------------------------------------
# radial dissipation profiles f(r) = sum_k coef_k * r**expo_k
# --------------------------------------------------------------------------
def _profile_derivs(r, coefs, expos):
    f = np.zeros_like(r)
    f1 = np.zeros_like(r)
    f2 = np.zeros_like(r)
    for c, k in zip(coefs, expos):
        f += c * r**k
        f1 += c * k * r ** (k - 1.0)
        f2 += c * k * (k - 1.0) * r ** (k - 2.0)
    return f, f1, f2


def dissipation_numpy(strain, coefs, expos, eta):
    """Smoothed radial dissipation with its first two derivatives.

    ``D_eta(e) = f(sqrt(|e|^2 + eta^2)) - f(eta)`` with
    ``f(r) = sum coefs * r**expos``.

    Parameters
    ----------
    strain : ndarray, shape (nq, d, d)
    coefs, expos : ndarray
    eta : float
        Must be positive unless every exponent is >= 2 (then the profile is
        smooth at the origin) or the strain never vanishes.

    Returns
    -------
    value : ndarray, shape (nq,)
    grad : ndarray, shape (nq, d, d)
    hess : ndarray, shape (nq, d*d, d*d)
    """
    nq, d, _ = strain.shape
    flat = strain.reshape(nq, d * d)
    sq = np.einsum("qi,qi->q", flat, flat)
    rho = np.sqrt(sq + eta * eta)
    safe = np.where(rho > 0, rho, 1.0)
    f, f1, f2 = _profile_derivs(safe, coefs, expos)
    f0 = sum(c * eta**k for c, k in zip(coefs, expos)) if eta > 0 else 0.0
    value = np.where(rho > 0, f - f0, 0.0)
    slope = np.where(rho > 0, f1 / safe, 0.0)
    a = np.where(rho > 0, slope, _origin_curvature(coefs, expos))
    bcoef = np.where(rho > 0, (f2 - slope) / (safe * safe), 0.0)
    grad = (slope[:, None] * flat).reshape(nq, d, d)
    hess = np.zeros((nq, d * d, d * d))
    diag = np.arange(d * d)
    hess[:, diag, diag] = a[:, None]
    hess += bcoef[:, None, None] * (flat[:, :, None] * flat[:, None, :])
    return value, grad, hess


def _origin_curvature(coefs, expos):
    # limit of f'(r)/r at r=0; finite only for quadratic-or-higher profiles
    total = 0.0
    for c, k in zip(coefs, expos):
        if k == 2.0:
            total += 2.0 * c
        elif k < 2.0:
            total += np.inf
    return total


@njit(cache=True)
def _dissipation_jit(strain, coefs, expos, eta):
    nq, d, _ = strain.shape
    dd = d * d
    value = np.zeros(nq)
    grad = np.zeros((nq, d, d))
    hess = np.zeros((nq, dd, dd))
    nk = coefs.shape[0]
    f0 = 0.0
    if eta > 0.0:
        for k in range(nk):
            f0 += coefs[k] * eta ** expos[k]
    for q in range(nq):
        sq = 0.0
        for i in range(d):
            for j in range(d):
                sq += strain[q, i, j] * strain[q, i, j]
        rho = np.sqrt(sq + eta * eta)
        if rho > 0.0:
            f = 0.0
            f1 = 0.0
            f2 = 0.0
            for k in range(nk):
                c = coefs[k]
                p = expos[k]
                f += c * rho**p
                f1 += c * p * rho ** (p - 1.0)
                f2 += c * p * (p - 1.0) * rho ** (p - 2.0)
            a = f1 / rho
            bc = (f2 - a) / (rho * rho)
            value[q] = f - f0
        else:
            a = 0.0
            for k in range(nk):
                if expos[k] == 2.0:
                    a += 2.0 * coefs[k]
                elif expos[k] < 2.0:
                    a = np.inf
            bc = 0.0
        if rho > 0.0:
            for i in range(d):
                for j in range(d):
                    grad[q, i, j] = a * strain[q, i, j]
        for r in range(dd):
            er = strain[q, r // d, r % d]
            hess[q, r, r] += a
            if bc == 0.0:
                continue
            for s in range(dd):
                hess[q, r, s] += bc * er * strain[q, s // d, s % d]
    return value, grad, hess


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------
def elastic_elements(g1, g2, wdet, lam, mu):
    args = (
        np.ascontiguousarray(g1, dtype=np.float64),
        np.ascontiguousarray(g2, dtype=np.float64),
        np.ascontiguousarray(wdet, dtype=np.float64),
        np.ascontiguousarray(lam, dtype=np.float64),
        np.ascontiguousarray(mu, dtype=np.float64),
    )
    if USE_NUMBA:
        return _elastic_elements_jit(*args)
    return elastic_elements_numpy(*args)


def mass_elements(shape, wdet, rho, d):
    args = (
        np.ascontiguousarray(shape, dtype=np.float64),
        np.ascontiguousarray(wdet, dtype=np.float64),
        np.ascontiguousarray(rho, dtype=np.float64),
    )
    if USE_NUMBA:
        return _mass_elements_jit(*args, int(d))
    return mass_elements_numpy(*args, int(d))


def dissipation(strain, coefs, expos, eta):
    strain = np.ascontiguousarray(strain, dtype=np.float64)
    coefs = np.ascontiguousarray(coefs, dtype=np.float64)
    expos = np.ascontiguousarray(expos, dtype=np.float64)
    if USE_NUMBA:
        return _dissipation_jit(strain, coefs, expos, float(eta))
    return dissipation_numpy(strain, coefs, expos, float(eta))


# explicit handles so tests and benchmarks can compare the two paths
NUMPY_IMPL = {
    "elastic": elastic_elements_numpy,
    "mass": mass_elements_numpy,
    "dissipation": dissipation_numpy,
}
JIT_IMPL = {
    "elastic": _elastic_elements_jit,
    "mass": _mass_elements_jit,
    "dissipation": _dissipation_jit,
}
