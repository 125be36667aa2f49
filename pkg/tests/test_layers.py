import zlib

import numpy as np
import pytest

import scalar_oracle as so
from deepmp import special
from deepmp.layers import (
    ArgmaxOutput,
    NumericalError,
    SignOutput,
    output_argmax,
    output_sign,
    sweep,
)
from deepmp.messages import Layer, reset_messages

ALGOS = ["bp", "bpi", "mf", "amp"]


def _network(thetas, algo, alpha, batch):
    layers = [Layer(algo, t.copy(), alpha) for t in thetas]
    reset_messages(layers, batch)
    return layers


def _compare(ref, layers):
    err = 0.0
    for r, ly in zip(ref, layers):
        pairs = [
            (r.H, ly.w.H),
            (r.m, ly.w.m),
            (r.omega, ly.pre.omega),
            (r.V, ly.pre.V),
            (r.xhat, ly.act.xhat),
            (r.delta, ly.act.delta),
            (r.B, ly.act.B),
            (r.g, ly.pre.g),
            (r.gam, ly.pre.gamma),
        ]
        for a, b in pairs:
            a = np.asarray(a, dtype=float)
            # scaled error: deep-tail messages can reach 1e5
            err = max(err, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))))
    return err


CASES = {
    "3x2-argmax": ([(2, 3)], "argmax"),
    "3-2-1-sign": ([(2, 3), (1, 2)], "sign"),
    "4-3-2-argmax": ([(3, 4), (2, 3)], "argmax"),
}


@pytest.mark.parametrize("case", sorted(CASES))
@pytest.mark.parametrize("algo", ALGOS)
@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_scalar_oracle(case, algo, alpha):
    shapes, out = CASES[case]
    rng = np.random.default_rng(zlib.crc32(f"{case}/{algo}".encode()))
    X = rng.normal(size=(shapes[0][1], 2))
    y = [0, 1] if out == "argmax" else [1, -1]
    thetas = [rng.normal(size=s) for s in shapes]
    ref = so.run([t.tolist() for t in thetas], [algo] * len(shapes), alpha, X.tolist(), y, out, 5)
    layers = _network(thetas, algo, alpha, 2)
    output = ArgmaxOutput(shapes[-1][0], approach=2) if out == "argmax" else SignOutput()
    for tau in range(5):
        sweep(layers, X.copy(), np.array(y), output, tau)
    assert _compare(ref, layers) <= 1e-12


def test_oracle_with_sparse_inputs():
    # zero pixels take the sparse first-layer path in BP and BPI
    rng = np.random.default_rng(5)
    X = rng.normal(size=(4, 2))
    X[rng.random(X.shape) < 0.5] = 0.0
    thetas = [rng.normal(size=(3, 4)), rng.normal(size=(1, 3))]
    for algo in ("bp", "bpi"):
        ref = so.run([t.tolist() for t in thetas], [algo] * 2, 0.3, X.tolist(), [1, -1], "sign", 4)
        layers = _network(thetas, algo, 0.3, 2)
        for tau in range(4):
            sweep(layers, X.copy(), np.array([1, -1]), SignOutput(), tau)
        assert _compare(ref, layers) <= 1e-12


def _random_net(shapes, seed, algo, batch):
    rng = np.random.default_rng(seed)
    return _network([rng.normal(size=s) for s in shapes], algo, 0.8, batch)


@pytest.mark.parametrize("algo", ALGOS)
def test_first_forward_identical_across_algorithms(algo):
    shapes = [(6, 8), (5, 6), (1, 5)]
    X = np.random.default_rng(1).normal(size=(8, 4))
    ref = _random_net(shapes, 2, "mf", 4)
    net = _random_net(shapes, 2, algo, 4)
    for layers in (ref, net):
        sweep(layers, X, np.array([1, -1, 1, 1]), SignOutput(), 0)
    for a, b in zip(ref, net):
        assert np.allclose(a.act.xhat, b.act.xhat, rtol=0, atol=1e-13)
        assert np.allclose(a.pre.omega, b.pre.omega, rtol=0, atol=1e-13)
        assert np.allclose(a.pre.V, b.pre.V, rtol=0, atol=1e-13)


def test_amp_equals_mf_forward_but_not_backward_at_first_iteration():
    # the Onsager terms of the forward pass carry g from the previous
    # iteration and vanish after a reset; the backward corrections use the
    # current g and Gamma and are present from the first iteration on
    shapes = [(6, 8), (5, 6), (1, 5)]
    X = np.random.default_rng(1).normal(size=(8, 4))
    mf = _random_net(shapes, 2, "mf", 4)
    amp = _random_net(shapes, 2, "amp", 4)
    for layers in (mf, amp):
        sweep(layers, X, np.array([1, -1, 1, 1]), SignOutput(), 0)
    for a, b in zip(mf, amp):
        assert np.array_equal(a.pre.omega, b.pre.omega)
        assert np.array_equal(a.pre.V, b.pre.V)
    assert not np.allclose(mf[0].w.H, amp[0].w.H)


def test_bp_equals_bpi_single_iteration():
    shapes = [(10, 20), (10, 10), (2, 10)]
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 8))
    y = rng.integers(0, 2, 8)
    bp = _random_net(shapes, 3, "bp", 8)
    bpi = _random_net(shapes, 3, "bpi", 8)
    out = ArgmaxOutput(2, approach=2)
    sweep(bp, X, y, out, 0)
    sweep(bpi, X, y, out, 0)
    for a, b in zip(bp, bpi):
        assert np.max(np.abs(a.w.H - b.w.H)) <= 1e-12
        assert np.max(np.abs(a.act.B - b.act.B)) <= 1e-12


def test_bp_and_bpi_differ_after_two_iterations():
    shapes = [(6, 8), (1, 6)]
    X = np.random.default_rng(1).normal(size=(8, 5))
    y = np.array([1, -1, 1, -1, 1])
    bp = _random_net(shapes, 2, "bp", 5)
    bpi = _random_net(shapes, 2, "bpi", 5)
    for tau in range(2):
        sweep(bp, X, y, SignOutput(), tau)
        sweep(bpi, X, y, SignOutput(), tau)
    assert np.max(np.abs(bp[0].w.H - bpi[0].w.H)) > 1e-6


def test_cavity_tensors_only_for_bp():
    bp = _random_net([(3, 4)], 0, "bp", 5)
    bpi = _random_net([(3, 4)], 0, "bpi", 5)
    assert bp[0].w.H_cav.shape == (3, 4, 5)
    assert bp[0].dense_nbytes() == 2 * 3 * 4 * 5 * 8
    assert bpi[0].dense_nbytes() == 0


def test_skipping_cavity_fields_leaves_them_fresh():
    net = _random_net([(3, 4), (1, 3)], 0, "bp", 2)
    X = np.ones((4, 2))
    sweep(net, X, np.array([1, -1]), SignOutput(), 0, need_cavity=False)
    assert net[0].fresh and not np.any(net[0].w.H_cav)
    sweep(net, X, np.array([1, -1]), SignOutput(), 1)
    assert not net[0].fresh


def test_reset_clears_cavity_state():
    net = _random_net([(3, 4), (1, 3)], 0, "bp", 2)
    X = np.ones((4, 2))
    for tau in range(2):
        sweep(net, X, np.array([1, -1]), SignOutput(), tau)
    reset_messages(net)
    assert net[1].fresh
    assert not np.any(net[1].act.B_cav) and not np.any(net[1].w.H)


def test_argmax_g_sums_to_zero():
    rng = np.random.default_rng(0)
    om = rng.normal(size=(10, 7))
    V = rng.uniform(0.1, 3, size=(10, 7))
    y = rng.integers(0, 10, 7)
    for approach in (1, 2):
        g, G = output_argmax(y, om, V, approach=approach, rng=np.random.default_rng(1))
        assert np.allclose(g.sum(axis=0), 0.0, atol=1e-12)
        assert np.all(g[y, np.arange(7)] >= 0)
        assert np.all(G >= 0)


def test_argmax_approach2_finite_differences():
    # g_k = d phi / d omega_k of phi = sum_k log H(-(w* - w_k) / sqrt(V_k + V*))
    rng = np.random.default_rng(2)
    om = rng.normal(size=(4, 1))
    V = rng.uniform(0.2, 2, size=(4, 1))
    y = np.array([2])

    def phi(o):
        s = np.sqrt(V[:, 0] + V[2, 0])
        d = (o[2] - o) / s
        return sum(special.log_H(-d[k]) for k in range(4) if k != 2)

    g, G = output_argmax(y, om, V, approach=2)
    h = 1e-5
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        fd = (phi(om[:, 0] + e) - phi(om[:, 0] - e)) / (2 * h)
        fd2 = (phi(om[:, 0] + e) - 2 * phi(om[:, 0]) + phi(om[:, 0] - e)) / h**2
        assert g[k, 0] == pytest.approx(fd, abs=1e-8)
        assert G[k, 0] == pytest.approx(-fd2, abs=1e-4)


def test_argmax_rejects_single_class_and_bad_labels():
    with pytest.raises(special.DomainError):
        output_argmax(np.array([0]), np.zeros((1, 1)), np.ones((1, 1)))
    with pytest.raises(special.DomainError):
        ArgmaxOutput(3).check_labels(np.array([3]))


def test_output_sign_matches_channel():
    om, V = np.array([[0.3, -1.0]]), np.array([[1.0, 2.0]])
    g, G = output_sign(np.array([1, 1]), om, V)
    assert np.all(g > 0)


def test_nonfinite_theta_raises_with_location():
    net = _random_net([(3, 4), (1, 3)], 0, "mf", 2)
    net[1].theta[0, 0] = np.nan
    reset_messages(net)
    with pytest.raises(NumericalError) as exc:
        sweep(net, np.ones((4, 2)), np.array([1, -1]), SignOutput(), 0)
    assert exc.value.layer == 1 and exc.value.tau == 0


def test_approach1_noise_is_drawn_once_per_step():
    out = ArgmaxOutput(3, approach=1)
    out.begin_step(5, np.random.default_rng(0))
    eps = out.eps.copy()
    om = np.zeros((3, 5))
    out.g_gamma(np.zeros(5, dtype=int), om, np.ones((3, 5)))
    assert np.array_equal(eps, out.eps)
