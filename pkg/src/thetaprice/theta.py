"""Jacobi theta function of the third kind and the differences used in pricing.

``theta3(z, omega) = 1 + 2 sum_{n>=1} omega**(n**2) cos(2 n z)`` for a real
nome ``0 <= omega < 1``.  Close to ``omega = 1`` the series is replaced by its
image (Poisson-summed) form

    theta3(z, exp(-kappa)) = sqrt(pi/kappa) sum_m exp(-(z - m pi)**2 / kappa),

which converges fast exactly where the direct series does not.
"""
import numpy as np

from .errors import InvalidNome

__all__ = ["theta3", "dtheta3", "theta_diff", "theta_diff_dz", "series_terms", "MODULAR_SWITCH"]

MODULAR_SWITCH = 0.9
DEFAULT_TOL = 1e-14


def _check_nome(omega):
    omega = np.asarray(omega, dtype=float)
    if np.any(~(omega >= 0.0)) or np.any(omega >= 1.0):
        raise InvalidNome("theta nome must lie in [0, 1)")
    return omega


def series_terms(omega, tol=DEFAULT_TOL):
    """Number of series terms: first ``n`` with ``2 omega**(n**2) < tol`` is dropped."""
    omega = float(omega)
    if omega == 0.0:
        return 0
    return int(np.ceil(np.sqrt(np.log(tol / 2.0) / np.log(omega))))


def _series(z, omega, tol, derivative):
    n_max = series_terms(np.max(omega), tol) if omega.size else 0
    if n_max == 0:
        return np.zeros_like(z) if derivative else np.ones_like(z)
    n = np.arange(1, n_max + 1, dtype=float)
    with np.errstate(under="ignore"):
        weights = np.exp(np.multiply.outer(np.log(np.where(omega > 0, omega, 1.0)), n * n))
    weights = np.where((omega > 0)[..., None], weights, 0.0)
    arg = np.multiply.outer(2.0 * z, n)
    if derivative:
        return -4.0 * np.sum(n * weights * np.sin(arg), axis=-1)
    return 1.0 + 2.0 * np.sum(weights * np.cos(arg), axis=-1)


def _images(z, omega, tol, derivative):
    kappa = -np.log(omega)
    zr = z - np.pi * np.round(z / np.pi)
    m_max = int(np.ceil(np.sqrt(np.max(kappa) * np.log(1.0 / tol)) / np.pi + 0.5)) + 1
    m = np.arange(-m_max, m_max + 1, dtype=float)
    shift = zr[..., None] - np.pi * m
    kap = kappa[..., None]
    with np.errstate(under="ignore"):
        gauss = np.exp(-shift * shift / kap)
    pref = np.sqrt(np.pi / kappa)
    if derivative:
        return pref * np.sum(-2.0 * shift / kap * gauss, axis=-1)
    return pref * np.sum(gauss, axis=-1)


def _theta(z, omega, tol, derivative):
    z, omega = np.broadcast_arrays(np.asarray(z, dtype=float), _check_nome(omega))
    out = np.empty(z.shape)
    near_one = omega > MODULAR_SWITCH
    if np.any(~near_one):
        out[~near_one] = _series(z[~near_one], omega[~near_one], tol, derivative)
    if np.any(near_one):
        out[near_one] = _images(z[near_one], omega[near_one], tol, derivative)
    return out if out.ndim else float(out)


def theta3(z, omega, tol=DEFAULT_TOL):
    """Jacobi theta function ``theta3(z, omega)`` for real ``z`` and nome ``omega``.

    Parameters
    ----------
    z : array_like
        Phase in radians.
    omega : array_like
        Nome, ``0 <= omega < 1``; broadcast against ``z``.
    tol : float
        Series truncation tolerance.

    Raises
    ------
    InvalidNome
        If any ``omega`` lies outside ``[0, 1)``.
    """
    return _theta(z, omega, tol, derivative=False)


def dtheta3(z, omega, tol=DEFAULT_TOL):
    """Derivative of :func:`theta3` with respect to ``z``."""
    return _theta(z, omega, tol, derivative=True)


def theta_diff(x, z, y_tau, omega, tol=DEFAULT_TOL):
    """``theta3(phi_minus, omega) - theta3(phi_plus, omega)`` with
    ``phi_minus/plus = pi (x -/+ z) / (2 y_tau)``.

    Equals ``4 sum omega**(n**2) sin(n pi x / y) sin(n pi z / y)``, so it
    vanishes at ``x = 0`` and ``x = y_tau``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    scale = np.pi / (2.0 * np.asarray(y_tau, dtype=float))
    # |x - z| keeps the x = 0 case exactly antisymmetric-free
    return theta3(scale * np.abs(x - z), omega, tol) - theta3(scale * (x + z), omega, tol)


def theta_diff_dz(x, z, y_tau, omega, tol=DEFAULT_TOL):
    """Derivative of :func:`theta_diff` with respect to the source position ``z``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    scale = np.pi / (2.0 * np.asarray(y_tau, dtype=float))
    return -scale * (dtheta3(scale * (x - z), omega, tol) + dtheta3(scale * (x + z), omega, tol))
