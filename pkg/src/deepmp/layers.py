"""Forward and backward message-passing sweeps for BP, BPI, MF and AMP layers.

A network is a list of :class:`~deepmp.messages.Layer` objects followed by an
output channel.  One iteration ``tau`` is a full forward sweep over the
layers followed by a full backward sweep in reverse order::

    for layer in layers:            forward(layer, ...)
    for layer in reversed(layers):  backward(layer, ...)

Sign activations and binary weights are assumed throughout, so the A and G
fields of the general Gaussian closure are not needed; ``A`` is still
computed when ``layer.track_a`` is set.
"""

from enum import Enum

import numpy as np

from . import special
from ._kernels import cavity_sign_backward, cavity_sign_backward_input
from .special import V_MIN, log_H


class Algorithm(str, Enum):
    BP = "bp"
    BPI = "bpi"
    MF = "mf"
    AMP = "amp"


ALGORITHMS = tuple(a.value for a in Algorithm)


class NumericalError(FloatingPointError):
    """A message tensor became non-finite during an inner iteration."""

    def __init__(self, layer, tensor, tau):
        self.layer, self.tensor, self.tau = layer, tensor, tau
        super().__init__(f"non-finite {tensor} in layer {layer} at tau={tau}")


def _check(index, tau, **tensors):
    for name, t in tensors.items():
        if not np.all(np.isfinite(t)):
            raise NumericalError(index, name, tau)


def _bias(omega, V):
    """Half log-odds ratio of the sign activation under N(omega, V)."""
    u = omega / np.sqrt(np.maximum(V, V_MIN))
    return 0.5 * (log_H(-u) - log_H(u))


def _one_minus_abs_tanh(B):
    e = np.exp(-2.0 * np.abs(B))
    return 2.0 * e / (1.0 + e)


# --------------------------------------------------------------------------
# output channels


class SignOutput:
    """Hard constraint y = sign(z) on a single output unit; labels are +-1."""

    n_classes = 2

    def begin_step(self, batch, rng=None):
        pass

    def check_labels(self, y):
        y = np.asarray(y)
        if not np.all((y == 1) | (y == -1)):
            raise special.DomainError("binary labels must be +1 or -1")
        return y

    def g_gamma(self, y, omega, V):
        return output_sign(y, omega, V)

    def tanh_field(self, y, omega):
        t = np.broadcast_to(y.astype(float), omega.shape)
        return t, np.zeros(omega.shape)

    def cavity_g(self, y, omega, V, shift):
        """Derivative at omega_kn - shift_kin, shape (K, I, N)."""
        g, _ = output_sign(y, omega[:, None, :] - shift, V[:, None, :])
        return g


class ArgmaxOutput:
    """Hard constraint y = argmax(z) over ``n_classes`` units.

    ``approach=1`` uses a single Gaussian draw per sample and step,
    ``approach=2`` the closed-form pairwise approximation.
    """

    def __init__(self, n_classes, approach=1):
        if n_classes < 2:
            raise special.DomainError("argmax output needs at least two classes")
        if approach not in (1, 2):
            raise ValueError("approach must be 1 or 2")
        self.n_classes = n_classes
        self.approach = approach
        self.eps = None

    def begin_step(self, batch, rng=None):
        if self.approach == 1:
            rng = np.random.default_rng() if rng is None else rng
            self.eps = rng.standard_normal(batch)

    def check_labels(self, y):
        y = np.asarray(y)
        if y.dtype.kind not in "iu" or np.any(y < 0) or np.any(y >= self.n_classes):
            raise special.DomainError("class labels must be integers in [0, K)")
        return y

    def _pairs(self, y, omega, V):
        n = np.arange(omega.shape[-1])
        om_star = omega[y, n]
        V_star = np.maximum(V[y, n], V_MIN)
        V = np.maximum(V, V_MIN)
        if self.approach == 2:
            scale = np.sqrt(V + V_star)
            shift = om_star
        else:
            scale = np.sqrt(V)
            shift = om_star + self.eps * np.sqrt(V_star)
        return n, shift, scale

    def g_gamma(self, y, omega, V):
        return output_argmax(y, omega, V, self.approach, eps=self.eps)

    def cavity_g(self, y, omega, V, shift):
        """Derivative w.r.t. omega_k with omega_k alone moved to omega_k - shift_kin."""
        K, N = omega.shape
        n, top, scale = self._pairs(y, omega, V)
        # k != y: only omega_k is shifted
        d = (top[None, None, :] - omega[:, None, :] + shift) / scale[:, None, :]
        g = -special._k(-d) / scale[:, None, :]
        # k == y: the shift moves omega_y in every pairwise term
        s_star = shift[y, :, n].T  # (I, N)
        d_star = (top[None, None, :] - s_star[None] - omega[:, None, :]) / scale[:, None, :]
        terms = special._k(-d_star) / scale[:, None, :]
        terms[y, :, n] = 0.0
        g[y, :, n] = terms.sum(axis=0).T
        return g


def output_sign(labels, omega, V):
    """``(g, Gamma)`` for the binary output channel, applied columnwise."""
    return special.phi_output_binary(labels, omega, V)


def output_argmax(labels, omega, V, approach=2, eps=None, rng=None):
    """``(g, Gamma)`` of the argmax output, both (K, batch).

    Per sample the derivatives satisfy sum_k g_k = 0.
    """
    omega = np.asarray(omega, dtype=float)
    K, N = omega.shape
    if K < 2:
        raise special.DomainError("argmax output needs at least two classes")
    labels = np.asarray(labels)
    if approach == 1 and eps is None:
        rng = np.random.default_rng() if rng is None else rng
        eps = rng.standard_normal(N)
    ch = ArgmaxOutput(K, approach)
    ch.eps = eps
    n, top, scale = ch._pairs(labels, omega, V)
    d = (top[None, :] - omega) / scale
    kd = special._k(-d)
    g = -kd / scale
    gamma = kd * (kd + d) / scale**2
    g[labels, n] = 0.0
    gamma[labels, n] = 0.0
    g[labels, n] = -g.sum(axis=0)
    gamma[labels, n] = gamma.sum(axis=0)
    return g, gamma


# --------------------------------------------------------------------------
# forward passes


def _input_moments(layer, below):
    """Non-cavity activation mean/variance of the layer input (from data or below)."""
    act = layer.act
    act.xhat_prev[...] = act.xhat
    if isinstance(below, np.ndarray):
        act.xhat[...] = below
        act.delta.fill(0.0)
        return None
    a = _bias(below.pre.omega, below.pre.V)
    np.tanh(act.B + a, out=act.xhat)
    np.subtract(1.0, act.xhat**2, out=act.delta)
    return a


def _weight_means(layer):
    w = layer.w
    m_old = w.m_prev.copy()
    m_new = np.tanh(layer.theta + w.H)
    a = layer.alpha
    w.m[...] = a * m_old + (1.0 - a) * m_new if a else m_new
    np.subtract(1.0, w.m * w.m, out=w.sigma)
    w.m_prev[...] = w.m
    return m_old


def _forward_noncavity(layer, below, tau, index, onsager):
    act, w, pre = layer.act, layer.w, layer.pre
    _input_moments(layer, below)
    m_old = _weight_means(layer)
    x, d, m, s = act.xhat, act.delta, w.m, w.sigma
    pre.V[...] = (m * m) @ d + s @ (x * x) + s @ d
    pre.omega[...] = m @ x
    if onsager:
        gp, xp = pre.g_prev, act.xhat_prev
        pre.omega -= gp * (s @ (x * xp)) + gp * ((m * m_old) @ d)
        pre.omega += gp * gp * ((s * m_old) @ (xp * d))
    _check(index, tau, omega=pre.omega, V=pre.V)


def forward_bpi(layer, below, tau, index=0):
    _forward_noncavity(layer, below, tau, index, onsager=False)


def forward_mf(layer, below, tau, index=0):
    _forward_noncavity(layer, below, tau, index, onsager=False)


def forward_amp(layer, below, tau, index=0):
    _forward_noncavity(layer, below, tau, index, onsager=True)


def forward_bp(layer, below, tau, index=0):
    act, w, pre = layer.act, layer.w, layer.pre
    a = _input_moments(layer, below)
    m_old = _weight_means(layer)
    shape = layer.shape.cavity
    if layer.fresh:
        # all cavity fields are zero: cavity means equal the full ones
        w.m_cav = np.broadcast_to(w.m[:, :, None], shape)
        act.xhat_cav = np.broadcast_to(act.xhat[None], shape)
    else:
        mc = np.tanh(layer.theta[:, :, None] + w.H_cav)
        if layer.alpha:
            mc *= 1.0 - layer.alpha
            mc += layer.alpha * m_old[:, :, None]
        w.m_cav = mc
        if a is None:
            act.xhat_cav = np.broadcast_to(act.xhat[None], shape)
        else:
            act.xhat_cav = np.tanh(act.B_cav + a[None])
    mc, xc = w.m_cav, act.xhat_cav
    x, d, s = act.xhat, act.delta, w.sigma
    if layer.fresh:
        pre.omega[...] = w.m @ x
        pre.V[...] = (w.m * w.m) @ d + s @ (x * x) + s @ d
    elif xc.strides[0] == 0:
        # data layer: delta = 0, only the weight cavities are dense
        pre.omega[...] = np.einsum("kin,in->kn", mc, x)
        pre.V[...] = s @ (x * x)
    else:
        pre.omega[...] = np.einsum("kin,kin->kn", mc, xc)
        pre.V[...] = (
            np.einsum("kin,kin,in->kn", mc, mc, d)
            + np.einsum("ki,kin,kin->kn", s, xc, xc)
            + s @ d
        )
    _check(index, tau, omega=pre.omega, V=pre.V)


# --------------------------------------------------------------------------
# backward passes


def _top_moments(layer, top, output, y):
    """Non-cavity (g, Gamma) of the channel sitting above the layer."""
    pre = layer.pre
    if output is not None:
        return output.g_gamma(y, pre.omega, pre.V)
    return special.phi_sign_omega_moments(top.act.B, pre.omega, pre.V)


def _a_field(layer):
    w, pre = layer.w, layer.pre
    layer.act.A = ((w.m**2 + w.sigma).T @ pre.gamma) - w.sigma.T @ (pre.g**2)


def _backward_noncavity(layer, top, tau, index, output, y, amp):
    w, act, pre = layer.w, layer.act, layer.pre
    g, gamma = _top_moments(layer, top, output, y)
    pre.g[...] = g
    pre.gamma[...] = gamma
    m, s, x, d = w.m, w.sigma, act.xhat, act.delta
    w.H[...] = g @ x.T
    if amp:
        w.H += m * (gamma @ (x * x).T) - m * ((g * g) @ d.T)
        w.H -= m * m * ((g * gamma) @ (d * x).T)
    if index > 0:
        act.B[...] = m.T @ g
        if amp:
            act.B += x * ((m * m).T @ gamma) - x * (s.T @ (g * g))
            act.B -= x * x * ((s * m).T @ (g * gamma))
        if layer.track_a:
            _a_field(layer)
    pre.g_prev[...] = g
    _check(index, tau, H=w.H, B=act.B)


def backward_mf(layer, top, tau, index=0, output=None, y=None):
    _backward_noncavity(layer, top, tau, index, output, y, amp=False)


def backward_amp(layer, top, tau, index=0, output=None, y=None):
    _backward_noncavity(layer, top, tau, index, output, y, amp=True)


def _input_csr(X):
    """Per-sample CSR view of the non-zero entries of the (n_in, batch) data."""
    n, i = np.nonzero(X.T)
    indptr = np.zeros(X.shape[1] + 1, dtype=np.int64)
    np.cumsum(np.bincount(n, minlength=X.shape[1]), out=indptr[1:])
    return indptr, i.astype(np.int64), X[i, n]


def _cavity_backward(layer, top, output, y, m3, x3, store, index=1):
    """(B_in, H_ki, g_cav or None) for the derivative evaluated at omega - m3 x3.

    B is not needed below the first layer, which lets ``index == 0`` skip
    zero inputs (its B is returned as zeros).
    """
    pre = layer.pre
    if isinstance(output, ArgmaxOutput):
        g3 = output.cavity_g(y, pre.omega, pre.V, m3 * x3)
        B = np.einsum("kin,kin->in", m3, g3)
        H = np.einsum("kin,kin->ki", x3, g3)
        return B, H, g3
    if output is not None:
        t, omt = output.tanh_field(y, pre.omega)
    else:
        t, omt = np.tanh(top.act.B), _one_minus_abs_tanh(top.act.B)
    inv_s = 1.0 / np.sqrt(np.maximum(pre.V, V_MIN))
    if index == 0:
        g3 = np.zeros(m3.shape) if store else np.empty((1, 1, 1))
        indptr, indices, values = _input_csr(layer.act.xhat)
        H = cavity_sign_backward_input(
            np.ascontiguousarray(t), omt, pre.omega, inv_s, m3, indptr, indices, values, g3, store
        )
        return np.zeros(layer.act.B.shape), H, (g3 if store else None)
    g3 = np.empty(m3.shape) if store else np.empty((1, 1, 1))
    B, H = cavity_sign_backward(
        np.ascontiguousarray(t), omt, pre.omega, inv_s, m3, x3, g3, store
    )
    return B, H, (g3 if store else None)


def backward_bpi(layer, top, tau, index=0, output=None, y=None):
    w, act, pre = layer.w, layer.act, layer.pre
    g, gamma = _top_moments(layer, top, output, y)
    pre.g[...] = g
    pre.gamma[...] = gamma
    shape = layer.shape.cavity
    m3 = np.broadcast_to(w.m[:, :, None], shape)
    x3 = np.broadcast_to(act.xhat[None], shape)
    B, H, _ = _cavity_backward(layer, top, output, y, m3, x3, store=False, index=index)
    w.H[...] = H
    if index > 0:
        act.B[...] = B
        if layer.track_a:
            _a_field(layer)
    _check(index, tau, H=w.H, B=act.B)


def backward_bp(layer, top, tau, index=0, output=None, y=None, need_cavity=True):
    """BP backward pass; ``need_cavity=False`` skips the cavity fields of a final sweep."""
    w, act, pre = layer.w, layer.act, layer.pre
    g, gamma = _top_moments(layer, top, output, y)
    pre.g[...] = g
    pre.gamma[...] = gamma
    m3, x3 = w.m_cav, act.xhat_cav
    B, H, g3 = _cavity_backward(layer, top, output, y, m3, x3, store=need_cavity, index=index)
    w.H[...] = H
    if index > 0:
        act.B[...] = B
        if layer.track_a:
            _a_field(layer)
    if need_cavity:
        np.subtract(H[:, :, None], x3 * g3, out=w.H_cav)
        if index > 0:
            np.subtract(B[None], m3 * g3, out=act.B_cav)
        layer.fresh = False
    _check(index, tau, H=w.H, B=act.B)


_FORWARD = {"bp": forward_bp, "bpi": forward_bpi, "mf": forward_mf, "amp": forward_amp}
_BACKWARD = {"bp": backward_bp, "bpi": backward_bpi, "mf": backward_mf, "amp": backward_amp}


def sweep(layers, X, y, output, tau, need_cavity=True):
    """One forward/backward iteration over the whole network.

    ``X`` has shape (n_features, batch); ``y`` holds the batch labels.
    """
    below = X
    for index, layer in enumerate(layers):
        _FORWARD[layer.algorithm](layer, below, tau, index)
        below = layer
    last = len(layers) - 1
    for index in range(last, -1, -1):
        layer = layers[index]
        top = None if index == last else layers[index + 1]
        out = output if index == last else None
        if layer.algorithm == "bp":
            backward_bp(layer, top, tau, index, out, y, need_cavity=need_cavity)
        else:
            _BACKWARD[layer.algorithm](layer, top, tau, index, out, y)
