import numpy as np
import pytest
from conftest import teacher_split

from deepmp import evalkit
from deepmp.binarynet import (
    BinaryNetConfig,
    BinaryNetState,
    bn_backward_step,
    bn_forward,
    loss_and_grads,
    train_binarynet,
)
from deepmp.trainer import ConfigError


def _fd_check(w, X, y, loss):
    L, grads = loss_and_grads(w, X, y, loss, surrogate=True)
    h = 1e-6
    worst = 0.0
    for l, wl in enumerate(w):
        for idx in np.ndindex(wl.shape):
            wp = [a.copy() for a in w]
            wm = [a.copy() for a in w]
            wp[l][idx] += h
            wm[l][idx] -= h
            fd = (loss_and_grads(wp, X, y, loss, True)[0] - loss_and_grads(wm, X, y, loss, True)[0]) / (2 * h)
            worst = max(worst, abs(fd - grads[l][idx]))
    return worst


@pytest.mark.parametrize("loss,n_classes", [("bce", 2), ("bce", 3), ("softmax", 3)])
def test_surrogate_gradient_finite_differences(loss, n_classes):
    # 2 inputs -> 2 hidden -> output; interior points |w| < 1 and |z| < 1
    rng = np.random.default_rng(0)
    n_out = 1 if n_classes == 2 else n_classes
    w = [rng.uniform(-0.9, 0.9, (2, 2)), rng.uniform(-0.9, 0.9, (n_out, 2))]
    X = rng.uniform(-0.8, 0.8, (6, 2))
    y = rng.choice([-1, 1], 6) if n_classes == 2 else rng.integers(0, n_classes, 6)
    assert _fd_check(w, X, y, loss) <= 1e-4


def test_forward_hand_computed():
    cfg = BinaryNetConfig(arch=(2,))
    w = [np.array([[0.3, -0.2], [-0.5, -0.1]]), np.array([[0.7, -0.4]])]
    st = BinaryNetState(cfg, 2, 2, w=w)
    X = np.array([[1.0, 2.0], [-1.0, 0.5]])
    # sign(w1) = [[1,-1],[-1,-1]]: z1 = [-1,-3]/sqrt2, [-1.5,0.5]/sqrt2
    # hidden = [-1,-1], [-1,1]; sign(w2) = [1,-1] -> [0, -2] / sqrt2
    assert np.allclose(bn_forward(X, st)[:, 0], [0.0, -2 / np.sqrt(2)])


def test_predictions_invariant_to_shadow_scale():
    rng = np.random.default_rng(1)
    cfg = BinaryNetConfig(arch=(5,))
    st = BinaryNetState(cfg, 4, 2)
    X = rng.normal(size=(20, 4))
    a = evalkit.predict(st.weights(), X)
    st.w = [0.5 * a_ for a_ in st.w]
    assert np.array_equal(a, evalkit.predict(st.weights(), X))


def test_gradient_zero_outside_clip_box():
    rng = np.random.default_rng(2)
    w = [rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (1, 3))]
    w[0][0, 0] = 1.5
    _, grads = loss_and_grads(w, rng.normal(size=(8, 4)), rng.choice([-1, 1], 8))
    assert grads[0][0, 0] == 0.0


def test_sgd_step_clips_and_zero_lr_is_identity():
    tr, _ = teacher_split(64, 10, seed=3)
    st = BinaryNetState(BinaryNetConfig(arch=(6,), lr=1e6), tr.n_features, 2)
    bn_backward_step(tr.inputs, tr.labels, st)
    assert all(np.max(np.abs(a)) <= 1.0 for a in st.w)
    before = [a.copy() for a in st.w]
    bn_backward_step(tr.inputs, tr.labels, st, lr=0.0)
    assert all(np.array_equal(a, b) for a, b in zip(before, st.w))


def test_config_validation():
    with pytest.raises(ConfigError):
        BinaryNetConfig(lr=0)
    with pytest.raises(ConfigError):
        BinaryNetConfig(loss="hinge")
    with pytest.raises(ConfigError):
        BinaryNetConfig.from_dict({"arch": [3], "rho": 1.0})


def test_learns_teacher_and_is_deterministic():
    tr, te = teacher_split(600, 400, seed=1)
    cfg = BinaryNetConfig(arch=(31,), lr=1.0, batch_size=20, epochs=8, seed=0)
    a = train_binarynet(tr, cfg, test=te)
    b = train_binarynet(tr, cfg, test=te)
    assert a.final.test_err < 0.3
    assert [r.test_err for r in a.records] == [r.test_err for r in b.records]
    assert np.isnan(a.final.bayes_test_err)
