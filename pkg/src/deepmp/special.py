"""Stable special functions and the scalar channel free energies.

Everything here is a pure function of its arguments and broadcasts over
numpy arrays.  The sign channel

    phi(B, omega, V) = log( 1/2 * sum_{x=+-1} exp(B x) H(-x omega / sqrt(V)) )

and the binary-weight channel psi(H, theta) = log 2 cosh(H + theta) are the
only nonlinearities the message-passing layers need.  Their derivatives are
written in closed form through the Gaussian tail H and the inverse Mills
ratio K = N / H, and every tail quantity goes through ``erfcx`` so nothing
underflows for large arguments.
"""

from typing import NamedTuple

import numpy as np
from scipy.special import erf, erfcx

# V is clamped here before any division or square root.
V_MIN = 1e-8

_SQRT2 = np.sqrt(2.0)
_LOG2 = np.log(2.0)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_SQRT_2PI = np.sqrt(2.0 * np.pi)


class DomainError(ValueError):
    """Raised when a channel function receives an argument outside its domain."""


class GaussTail(NamedTuple):
    value: np.ndarray
    log_value: np.ndarray


class ChannelMoments(NamedTuple):
    mean: np.ndarray
    var: np.ndarray


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite argument")


def _floor_var(V):
    V = np.maximum(np.asarray(V, dtype=float), V_MIN)
    if np.any(np.isnan(V)):
        raise DomainError("variance is NaN")
    return V


def log_H(x):
    """log H(x), finite for every finite x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x > 0
    xp = x[pos]
    # x > 0: H(x) = erfcx(x/sqrt2) exp(-x^2/2) / 2
    out[pos] = np.log(0.5 * erfcx(xp / _SQRT2)) - 0.5 * xp * xp
    xn = x[~pos]
    out[~pos] = np.log1p(-0.5 * erfcx(-xn / _SQRT2) * np.exp(-0.5 * xn * xn))
    return out if out.ndim else out[()]


def H(x):
    """Gaussian tail 1/2 erfc(x / sqrt 2)."""
    x = np.asarray(x, dtype=float)
    return np.exp(log_H(x))


def gauss_tail(x):
    """Return ``GaussTail(value, log_value)`` for H(x) = 1/2 erfc(x/sqrt2)."""
    _check_finite(x)
    lv = log_H(x)
    return GaussTail(np.exp(lv), lv)


def k_ratio(x):
    """Inverse Mills ratio K(x) = N(x) / H(x) = sqrt(2/pi) / erfcx(x/sqrt2)."""
    _check_finite(x)
    return _k(np.asarray(x, dtype=float))


def _k(x):
    with np.errstate(over="ignore"):
        return _SQRT_2_OVER_PI / erfcx(x / _SQRT2)


def phi_sign(B, omega, V):
    """Free energy of a sign neuron under a Gaussian preactivation N(omega, V)."""
    _check_finite(B, omega)
    V = _floor_var(V)
    u = omega / np.sqrt(V)
    return np.logaddexp(B + log_H(-u), -B + log_H(u)) - _LOG2


def _sign_xhat(B, u):
    return np.tanh(B + 0.5 * (log_H(-u) - log_H(u)))


def phi_sign_B_moments(B, omega, V):
    """Mean and variance of the activation: first and second B-derivatives of phi."""
    _check_finite(B, omega)
    V = _floor_var(V)
    xhat = _sign_xhat(B, omega / np.sqrt(V))
    return ChannelMoments(xhat, 1.0 - xhat * xhat)


def _sign_g_gamma(B, omega, V):
    # g = 2 t N(u) / (s (1 + t erf(u / sqrt2))) with t = tanh B; when t and u
    # have opposite signs the denominator is rewritten through erfcx so that
    # neither cancellation nor underflow occurs
    B, omega, V = np.broadcast_arrays(B, omega, V)
    s = np.sqrt(V)
    a = omega / (s * _SQRT2)
    t = np.tanh(B)
    g = np.empty(a.shape)
    same = t * a >= 0
    ts, as_, ss = t[same], a[same], s[same]
    g[same] = 2.0 * ts * np.exp(-as_ * as_) / (_SQRT_2PI * ss * (1.0 + ts * erf(as_)))
    opp = ~same
    to, ao = t[opp], a[opp]
    # (1 - |t|) e^{a^2} in log space: 1 - |t| = 2 e^{-2|B|} / (1 + e^{-2|B|})
    b = np.abs(B[opp])
    with np.errstate(over="ignore"):
        # an infinite denominator is the correct limit g -> 0
        tail = np.exp(ao * ao + np.log(2.0) - 2.0 * b - np.log1p(np.exp(-2.0 * b)))
        den = np.abs(to) * erfcx(np.abs(ao)) + tail
        g[opp] = 2.0 * to / (_SQRT_2PI * s[opp] * den)
    g = g if g.ndim else g[()]
    return g, g * (g + omega / V)


def phi_sign_omega_moments(B, omega, V):
    """Return ``(g, Gamma)`` with g = d phi / d omega and Gamma = -d^2 phi / d omega^2."""
    _check_finite(B, omega)
    V = _floor_var(V)
    return _sign_g_gamma(np.asarray(B, dtype=float), np.asarray(omega, dtype=float), V)


def phi_output_binary(y, omega, V):
    """``(g, Gamma)`` of the hard output constraint y = sign(z), z ~ N(omega, V)."""
    y = np.asarray(y)
    if not np.all((y == 1) | (y == -1)):
        raise DomainError("binary labels must be +1 or -1")
    _check_finite(omega)
    V = _floor_var(V)
    s = np.sqrt(V)
    g = y * _k(-y * omega / s) / s
    return g, g * (g + omega / V)


def log_cosh2(h):
    """Stable log(2 cosh h)."""
    a = np.abs(h)
    return a + np.log1p(np.exp(-2.0 * a))


def psi_binary(H, theta):
    """Binary-weight channel: ``(psi, m, sigma)`` with psi = log 2cosh(H + theta)."""
    h = np.asarray(H, dtype=float) + theta
    _check_finite(h)
    m = np.tanh(h)
    return log_cosh2(h), m, 1.0 - m * m
