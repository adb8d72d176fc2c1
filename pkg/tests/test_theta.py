import mpmath
import numpy as np
import pytest

from oracles import sine_series_diff, theta3_exact, theta3_reference
from thetaprice import InvalidNome, theta3, theta_diff
from thetaprice.theta import MODULAR_SWITCH, dtheta3, series_terms, theta_diff_dz

OMEGAS = [0.0, 0.1, 0.5, 0.9, 0.95, 0.99, 0.999]


def test_zero_nome_is_one():
    z = np.linspace(-3, 3, 11)
    assert np.all(theta3(z, 0.0) == 1.0)


def test_value_at_half_nome():
    # high-precision direct summation; see the decisions ledger for the quoted digits
    ref = float(theta3_reference(0.0, 0.5))
    assert ref == pytest.approx(2.128936827211877, abs=1e-15)
    assert theta3(0.0, 0.5) == pytest.approx(ref, abs=1e-14)


@pytest.mark.parametrize("omega", OMEGAS[1:])
def test_matches_arbitrary_precision(omega):
    z = np.linspace(-2.0, 2.0, 9)
    ref = np.array([float(theta3_exact(x, omega)) for x in z])
    assert np.max(np.abs(theta3(z, omega) - ref)) <= 1e-13 * max(1.0, np.max(np.abs(ref)))


@pytest.mark.parametrize("omega", [0.3, 0.85, 0.9, 0.97])
def test_derivative_matches_arbitrary_precision(omega):
    for z in (0.1, 0.7, 1.3):
        ref = float(mpmath.jtheta(3, z, omega, 1))
        assert dtheta3(z, omega) == pytest.approx(ref, rel=1e-12, abs=1e-13)


def test_series_and_image_forms_agree_at_switch():
    z = np.linspace(0, np.pi, 21)
    for omega in (MODULAR_SWITCH - 1e-12, MODULAR_SWITCH + 1e-12):
        assert np.max(np.abs(theta3(z, omega) - theta3(z, MODULAR_SWITCH))) < 1e-10


def test_periodicity_and_evenness():
    rng = np.random.default_rng(5)
    z = rng.uniform(-4, 4, 200)
    omega = rng.uniform(0, 0.995, 200)
    base = theta3(z, omega)
    assert np.max(np.abs(theta3(z + np.pi, omega) - base)) <= 1e-13 * np.max(np.abs(base))
    assert np.max(np.abs(theta3(-z, omega) - base)) <= 1e-13 * np.max(np.abs(base))


@pytest.mark.parametrize("omega", [0.1, 0.5, 0.9, 0.99])
def test_truncation_bound(omega):
    ref = theta3_reference(1.0, omega, terms=50, dps=50)
    with mpmath.workdps(50):
        w = mpmath.mpf(omega)
        tail_of_ref = 2 * w ** 2601 / (1 - w)
        for N in range(1, 40):
            partial = 1 + 2 * mpmath.fsum(w ** (n * n) * mpmath.cos(2 * n) for n in range(1, N))
            bound = 2 * w ** (N * N) / (1 - w)
            if bound < 1e6 * tail_of_ref:
                break
            assert abs(ref - partial) <= bound


def test_series_terms_rule():
    for omega in (0.1, 0.5, 0.8):
        n = series_terms(omega, 1e-14)
        assert 2 * omega ** (n * n) < 1e-14 <= 2 * omega ** ((n - 1) ** 2)


@pytest.mark.parametrize("bad", [-0.1, 1.0, 1.5, np.nan])
def test_invalid_nome(bad):
    with pytest.raises(InvalidNome):
        theta3(0.3, bad)


def test_difference_vanishes_on_both_edges():
    rng = np.random.default_rng(6)
    y = 80.0
    z = rng.uniform(0, y, 100)
    for omega in (0.2, 0.9, 0.999):
        assert np.all(theta_diff(0.0, z, y, omega) == 0.0)
        scale = np.max(np.abs(theta3(0.0, omega)))
        assert np.max(np.abs(theta_diff(y, z, y, omega))) <= 1e-12 * scale
    assert np.all(theta_diff(rng.uniform(0, y, 10), z[:10], y, 0.0) == 0.0)


def test_difference_matches_sine_series():
    rng = np.random.default_rng(7)
    for _ in range(40):
        y = rng.uniform(1, 100)
        x, z = rng.uniform(0, y, 2)
        omega = rng.uniform(0.0, 0.97)
        ref = sine_series_diff(x, z, y, omega, terms=400)
        assert theta_diff(x, z, y, omega) == pytest.approx(ref, abs=1e-12 * max(1.0, abs(ref)))


def test_difference_derivative_in_source():
    x, y, omega, h = 30.0, 90.0, 0.95, 1e-5
    for z in (10.0, 45.0, 80.0):
        fd = (theta_diff(x, z + h, y, omega) - theta_diff(x, z - h, y, omega)) / (2 * h)
        assert theta_diff_dz(x, z, y, omega) == pytest.approx(fd, rel=1e-6, abs=1e-9)
