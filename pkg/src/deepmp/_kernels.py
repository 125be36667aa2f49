"""Compiled inner loops for the cavity (BP/BPI) backward pass of sign channels.

For every (k, i, n) the cavity derivative g(B_kn, omega_kn - m_kin xhat_kin, V_kn)
is needed; it is summed straight into the B and H fields so the BPI path
never materializes the (n_out, n_in, batch) tensor.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@njit(cache=True)
def erfcx_pos(x):
    """exp(x^2) erfc(x) for x >= 0."""
    if x < 26.0:
        return math.exp(x * x) * math.erfc(x)
    z = 0.5 / (x * x)
    series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z * (1.0 - 9.0 * z))))
    return _INV_SQRT_PI / x * series


@njit(cache=True)
def g_sign(t, omt, omega, inv_s):
    """d phi / d omega for the sign channel written with t = tanh(B).

    ``omt`` is 1 - |t| computed without cancellation; t = +-1, omt = 0 gives
    the hard output constraint.
    """
    a = omega * inv_s * _INV_SQRT2
    if t * a >= 0.0:
        return 2.0 * t * math.exp(-a * a) * _INV_SQRT_2PI * inv_s / (1.0 + t * math.erf(a))
    den = abs(t) * erfcx_pos(abs(a))
    if omt > 0.0:
        den += omt * math.exp(a * a)
    return 2.0 * t * _INV_SQRT_2PI * inv_s / den


@njit(cache=True)
def cavity_sign_backward(t, omt, omega, inv_s, m3, x3, g3, store):
    """Accumulate B_in = sum_k m g_cav and H_ki = sum_n xhat g_cav.

    ``m3`` and ``x3`` are (K, I, N) views (possibly broadcast); when ``store``
    is set the cavity derivatives are written to ``g3``.
    """
    K, I, N = m3.shape
    B = np.zeros((I, N))
    H = np.zeros((K, I))
    for k in range(K):
        for i in range(I):
            h = 0.0
            for n in range(N):
                mm = m3[k, i, n]
                xx = x3[k, i, n]
                g = g_sign(t[k, n], omt[k, n], omega[k, n] - mm * xx, inv_s[k, n])
                if store:
                    g3[k, i, n] = g
                h += xx * g
                B[i, n] += mm * g
            H[k, i] = h
    return B, H


@njit(cache=True)
def cavity_sign_backward_input(t, omt, omega, inv_s, m3, indptr, indices, values, g3, store):
    """H_ki for the first layer, visiting only non-zero inputs.

    The data are given per sample in CSR form (``indptr`` over samples);
    zero inputs contribute nothing to H and leave the cavity field unshifted.
    """
    K = omega.shape[0]
    N = omega.shape[1]
    I = m3.shape[1]
    H = np.zeros((K, I))
    for k in range(K):
        for n in range(N):
            tk = t[k, n]
            ok = omt[k, n]
            om = omega[k, n]
            s = inv_s[k, n]
            for j in range(indptr[n], indptr[n + 1]):
                i = indices[j]
                xx = values[j]
                g = g_sign(tk, ok, om - m3[k, i, n] * xx, s)
                if store:
                    g3[k, i, n] = g
                H[k, i] += xx * g
    return H
