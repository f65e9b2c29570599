"""
Modified Bessel functions of the second kind.

K0 and K1 use the ascending series for x <= 2 and Steed's continued
fraction (Temme's CF2 form with order 0) above. Half-integer orders use
their closed forms. Accuracy is about 1e-13 relative over (0, 700].
"""
import math

import numpy as np

EULER_GAMMA = 0.57721566490153286061
SERIES_SPLIT = 2.0
SERIES_TERMS = 30
CF_MAX_ITER = 500
CF_EPS = 1e-16

# Harmonic numbers H_0..H_{SERIES_TERMS}
_HARMONIC = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, SERIES_TERMS + 1))])


def _series(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K0, K1 from the ascending series (A&S 9.6.13 and 9.6.11)."""
    q = 0.25 * x * x
    log_half = np.log(0.5 * x)
    term = np.ones_like(x)  # (x^2/4)^k / (k!)^2
    i0 = np.zeros_like(x)
    k0_tail = np.zeros_like(x)
    i1 = np.zeros_like(x)
    k1_tail = np.zeros_like(x)
    for k in range(SERIES_TERMS):
        i0 += term
        k0_tail += term * _HARMONIC[k]
        shifted = term / (k + 1)  # (x^2/4)^k / (k! (k+1)!)
        i1 += shifted
        psi_sum = 2.0 * (-EULER_GAMMA) + _HARMONIC[k] + _HARMONIC[k + 1]
        k1_tail += psi_sum * shifted
        term = term * q / ((k + 1) * (k + 1))
    i1 *= 0.5 * x
    k0 = -(log_half + EULER_GAMMA) * i0 + k0_tail
    k1 = 1.0 / x + log_half * i1 - 0.25 * x * k1_tail
    return k0, k1


def _continued_fraction(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """K0, K1 from Steed's algorithm for x > 2."""
    a1 = 0.25
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, CF_MAX_ITER):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h = h + delh
        dels = q * delh
        s = s + dels
        if np.all(np.abs(dels / s) < CF_EPS):
            break
    h = a1 * h
    k0 = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = k0 * (x + 0.5 - h) / x
    return k0, k1


def bessel_k01(x) -> tuple[np.ndarray, np.ndarray]:
    """K0(x) and K1(x) for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("modified Bessel K is defined for x > 0 only")
    flat = x.ravel()
    k0 = np.empty_like(flat)
    k1 = np.empty_like(flat)
    small = flat <= SERIES_SPLIT
    if small.any():
        k0[small], k1[small] = _series(flat[small])
    if (~small).any():
        k0[~small], k1[~small] = _continued_fraction(flat[~small])
    return k0.reshape(x.shape), k1.reshape(x.shape)


def bessel_k0(x):
    return bessel_k01(x)[0]


def bessel_k1(x):
    return bessel_k01(x)[1]


def bessel_k(nu: float, x):
    """K_nu(x) for nu in {0, 1/2, 1, 3/2}."""
    x = np.asarray(x, dtype=float)
    if nu == 0.0:
        return bessel_k0(x)
    if nu == 1.0:
        return bessel_k1(x)
    if nu in (0.5, 1.5):
        if np.any(~(x > 0)):
            raise ValueError("modified Bessel K is defined for x > 0 only")
        base = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x)
        return base if nu == 0.5 else base * (1.0 + 1.0 / x)
    raise ValueError(f"unsupported Bessel order {nu}")
