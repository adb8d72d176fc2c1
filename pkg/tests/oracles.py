"""Independent reference values used by the tests.

Nothing here imports the package: each oracle is a separate derivation
(closed forms, image series, Monte Carlo, arbitrary precision).
"""
import mpmath
import numpy as np
from scipy.stats import norm


# exponential family: r = r0 e^{-r_k t}, q = q0, sigma = sigma0 e^{-sigma_k t}
def exp_family_w(t, r0, q0, r_k):
    return q0 - r0 * np.exp(-r_k * t)


def exp_family_g(t, r0, q0, r_k):
    return np.exp(q0 * t + (r0 / r_k) * (np.exp(-r_k * t) - 1.0))


def exp_family_k(t, r0, q0, r_k):
    int_r = (r0 / r_k) * (1.0 - np.exp(-r_k * t))
    return 0.5 * (np.log(exp_family_g(t, r0, q0, r_k)) + 3.0 * int_r - q0 * t)


def fp_degenerate(p, K1, y0):
    """Right-hand side for a = k = 0:
    int_{K1}^{y0} (z - K1) sinh(z sqrt(p)) dz, written through the cosh/sinh antiderivative."""
    s = np.sqrt(p)
    return (s * (y0 - K1) * np.cosh(s * y0) - np.sinh(s * y0) + np.sinh(s * K1)) / p


def abm_up_out_call(S0, K, H, T, sigma, n_images=50):
    """Up-and-Out call for dS = sigma dW on the strip (0, H) with both edges absorbing.

    With r = q = 0 the transformed problem is the heat equation on ``(0, H)``
    with zero data at both edges; the method of images sums reflected
    Gaussians, alternating in sign.
    """
    s = sigma * np.sqrt(T)

    def piece(c):
        a = (K - c) / s
        b = (H - c) / s
        return (c - K) * (norm.cdf(b) - norm.cdf(a)) + s * (norm.pdf(a) - norm.pdf(b))

    total = 0.0
    for n in range(-n_images, n_images + 1):
        total += piece(S0 + 2 * n * H) - piece(-S0 + 2 * n * H)
    return total


def bachelier_mc(S0, K, T, r, q, sigma, n_paths=1_000_000, seed=12345):
    """Monte Carlo call price under dS = (r - q) S dt + sigma dW with constant coefficients.

    Samples the exact Gaussian terminal law. Returns (price, standard error).
    """
    rng = np.random.default_rng(seed)
    mu = r - q
    mean = S0 * np.exp(mu * T)
    var = sigma ** 2 * (np.expm1(2 * mu * T) / (2 * mu) if mu != 0 else T)
    ST = mean + np.sqrt(var) * rng.standard_normal(n_paths)
    pay = np.exp(-r * T) * np.maximum(ST - K, 0.0)
    return float(pay.mean()), float(pay.std(ddof=1) / np.sqrt(n_paths))


def theta3_reference(z, omega, terms=50, dps=50):
    """Truncated series of ``theta3`` with ``terms`` terms at ``dps`` digits."""
    with mpmath.workdps(dps):
        z = mpmath.mpf(z)
        w = mpmath.mpf(omega)
        return 1 + 2 * mpmath.fsum(w ** (n * n) * mpmath.cos(2 * n * z) for n in range(1, terms + 1))


def theta3_exact(z, omega, dps=50):
    with mpmath.workdps(dps):
        return mpmath.jtheta(3, mpmath.mpf(z), mpmath.mpf(omega))


def sine_series_diff(x, z, y, omega, terms=200):
    """``4 sum omega**(n**2) sin(n pi x / y) sin(n pi z / y)`` by direct summation."""
    n = np.arange(1, terms + 1)
    return 4.0 * np.sum(omega ** (n * n) * np.sin(n * np.pi * x / y) * np.sin(n * np.pi * z / y))
