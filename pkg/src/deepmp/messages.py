"""Per-layer message tensors, their reset, and damping of the weight means.

Index conventions follow the layer algebra: ``k`` output unit, ``i`` input
unit, ``n`` sample.  Non-cavity tensors are ``(n_out, n_in)`` for weights,
``(n_in, batch)`` for activations and ``(n_out, batch)`` for
preactivations.  Cavity tensors (BP only) are stored densely as
``(n_out, n_in, batch)``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class LayerShape:
    n_in: int
    n_out: int
    batch: int

    def __post_init__(self):
        if min(self.n_in, self.n_out, self.batch) <= 0:
            raise ValueError(f"layer dimensions must be positive, got {self}")

    @property
    def cavity(self):
        return (self.n_out, self.n_in, self.batch)


@dataclass
class WeightState:
    theta: np.ndarray
    H: np.ndarray
    m: np.ndarray
    m_prev: np.ndarray
    sigma: np.ndarray
    H_cav: Optional[np.ndarray] = None
    m_cav: Optional[np.ndarray] = None


@dataclass
class ActivationState:
    xhat: np.ndarray
    delta: np.ndarray
    B: np.ndarray
    xhat_prev: np.ndarray
    B_cav: Optional[np.ndarray] = None
    xhat_cav: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None


@dataclass
class PreactState:
    omega: np.ndarray
    V: np.ndarray
    g: np.ndarray
    g_prev: np.ndarray
    gamma: np.ndarray


@dataclass
class Layer:
    """All message-passing state of one weight layer ``W`` of shape (n_out, n_in).

    ``act`` describes the layer's input activations and ``pre`` its output
    preactivations ``W x``.
    """

    algorithm: str
    theta: np.ndarray
    alpha: float = 0.8
    track_a: bool = False
    shape: Optional[LayerShape] = None
    w: Optional[WeightState] = None
    act: Optional[ActivationState] = None
    pre: Optional[PreactState] = None
    # True while every cavity field is zero (right after a reset)
    fresh: bool = field(default=True, repr=False)

    @property
    def n_out(self):
        return self.theta.shape[0]

    @property
    def n_in(self):
        return self.theta.shape[1]

    @property
    def uses_cavity(self):
        return self.algorithm == "bp"

    def allocate(self, batch):
        """(Re)allocate message buffers for a mini-batch of size ``batch``."""
        shape = LayerShape(self.n_in, self.n_out, batch)
        if self.shape == shape and self.w is not None:
            return
        self.shape = shape
        ki, inb, knb = (self.n_out, self.n_in), (self.n_in, batch), (self.n_out, batch)
        m = np.tanh(self.theta)
        self.w = WeightState(
            theta=self.theta,
            H=np.zeros(ki),
            m=m,
            m_prev=m.copy(),
            sigma=1.0 - m * m,
        )
        self.act = ActivationState(
            xhat=np.zeros(inb),
            delta=np.zeros(inb),
            B=np.zeros(inb),
            xhat_prev=np.zeros(inb),
        )
        self.pre = PreactState(
            omega=np.zeros(knb),
            V=np.zeros(knb),
            g=np.zeros(knb),
            g_prev=np.zeros(knb),
            gamma=np.zeros(knb),
        )
        if self.uses_cavity:
            self.w.H_cav = np.zeros(shape.cavity)
            self.act.B_cav = np.zeros(shape.cavity)

    def dense_nbytes(self):
        """Bytes held in (n_out, n_in, batch) tensors."""
        total = 0
        for state in (self.w, self.act):
            for v in vars(state).values():
                if isinstance(v, np.ndarray) and v.ndim == 3:
                    total += v.nbytes
        return total


def reset_messages(layers, batch=None, keep_damping=False):
    """Zero every message and recompute the weight means from the prior alone.

    ``keep_damping`` leaves ``m_prev`` untouched so the damped means carry
    over between consecutive calls.
    """
    for layer in layers:
        if batch is not None:
            layer.allocate(batch)
        w, act, pre = layer.w, layer.act, layer.pre
        w.theta = layer.theta
        w.H.fill(0.0)
        np.tanh(layer.theta, out=w.m)
        np.subtract(1.0, w.m * w.m, out=w.sigma)
        if not keep_damping:
            w.m_prev[...] = w.m
        act.B.fill(0.0)
        act.xhat_prev.fill(0.0)
        pre.g.fill(0.0)
        pre.g_prev.fill(0.0)
        if layer.uses_cavity:
            w.H_cav.fill(0.0)
            act.B_cav.fill(0.0)
            w.m_cav = None
            act.xhat_cav = None
        layer.fresh = True


def damp_means(m_new, m_prev, alpha):
    """alpha * m_prev + (1 - alpha) * m_new."""
    m_new = np.asarray(m_new)
    m_prev = np.asarray(m_prev)
    if m_new.shape != m_prev.shape:
        raise ValueError(f"shape mismatch: {m_new.shape} vs {m_prev.shape}")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"damping must lie in [0, 1), got {alpha}")
    if alpha == 0.0:
        return m_new.copy()
    return alpha * m_prev + (1.0 - alpha) * m_new
