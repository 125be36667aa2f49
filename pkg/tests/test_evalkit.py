import numpy as np
import pytest

from deepmp import evalkit
from deepmp.data import Dataset

import enum_oracle as eo


def test_enumeration_oracle_polarized_limit():
    # near-polarized marginals: the vote is the sign of a single network
    rng = np.random.default_rng(0)
    means = [0.999999 * rng.choice([-1.0, 1.0], s) for s in eo.SHAPES]
    X = rng.normal(size=(30, 3))
    W = [np.sign(m) for m in means]
    direct = np.where(evalkit.forward_binary(W, X)[:, 0] >= 0, 1.0, -1.0)
    assert np.allclose(eo.vote(means, X, ties="plus"), direct, atol=1e-4)
    # exactly polarized marginals reproduce the network, ties included
    omega, V = evalkit.forward_gaussian(W, X)
    assert not np.any(V)
    assert np.array_equal(np.where(omega[:, 0] >= 0, 1.0, -1.0), direct)


def test_enumeration_agreement_frozen():
    # measured agreement of the Gaussian forward with the exhaustive vote on
    # 4 random 3-2-2-1 nets x 25 samples; frozen as regression values
    assert eo.agreement(ties="fair") == pytest.approx(0.87)
    assert eo.agreement(ties="plus") == pytest.approx(0.61)


def test_bayesian_error_scores_gaussian_prediction():
    rng = np.random.default_rng(3)
    means = [np.tanh(rng.normal(0, 1.5, s)) for s in eo.SHAPES]
    X = rng.normal(size=(40, 3))
    y = rng.choice([-1, 1], 40)
    omega, _ = evalkit.forward_gaussian(means, X)
    pred = np.where(omega[:, 0] >= 0, 1, -1)
    assert evalkit.bayesian_error(means, (X, y)) == pytest.approx(np.mean(pred != y))


def test_polarized_means_give_pointwise_error():
    rng = np.random.default_rng(1)
    # even fan-in with +-1 inputs produces exact ties in the hidden layers
    W = [rng.choice([-1.0, 1.0], s) for s in [(6, 10), (4, 6), (1, 4)]]
    X = rng.choice([-1.0, 1.0], (300, 10))
    y = rng.choice([-1, 1], 300)
    assert evalkit.bayesian_error(W, (X, y)) == evalkit.pointwise_error(W, (X, y))


def test_zero_means_predict_plus_one():
    # symmetric marginals: every output mean is 0 and ties go to +1
    X = np.random.default_rng(2).normal(size=(50, 4))
    y = np.array([1] * 20 + [-1] * 30)
    means = [np.zeros((3, 4)), np.zeros((1, 3))]
    assert evalkit.bayesian_error(means, (X, y)) == pytest.approx(0.6)


def test_pointwise_error_hand_net():
    # 2 inputs -> 2 hidden -> 1 output
    W = [np.array([[1.0, 1.0], [1.0, -1.0]]), np.array([[1.0, -1.0]])]
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    # hidden: (+,+) (+,+) (+,-) (-,+) after ties to +1 -> out 0, 0, 2, -2
    y = np.array([1, -1, 1, 1])
    assert evalkit.pointwise_error(W, (X, y)) == 0.5


def test_multiclass_prediction_is_argmax():
    W = [np.eye(3)]
    X = np.array([[0.1, 2.0, -1.0], [3.0, 0.0, 0.0]])
    assert evalkit.pointwise_error(W, (X, np.array([1, 0]))) == 0.0
    assert evalkit.pointwise_error(W, (X, np.array([0, 0]))) == 0.5


@pytest.fixture
def trained_like():
    rng = np.random.default_rng(3)
    W = [rng.choice([-1.0, 1.0], s) for s in [(15, 20), (1, 15)]]
    X = rng.choice([-1.0, 1.0], (400, 20))
    y = np.where(evalkit.forward_binary(W, X)[:, 0] >= 0, 1, -1)
    return W, Dataset(X, y, 2, name="teacher")


def test_local_energy_zero_flip_is_exactly_zero(trained_like):
    W, d = trained_like
    prof = evalkit.local_energy(W, d, p_grid=[0.0, 0.1], n_masks=5)
    assert prof.delta_e[0] == 0.0 and prof.stderr[0] == 0.0
    assert prof.base_error == 0.0


def test_local_energy_full_flip(trained_like):
    W, d = trained_like
    prof = evalkit.local_energy(W, d, p_grid=[1.0], n_masks=3)
    neg = [-w for w in W]
    assert prof.delta_e[0] == pytest.approx(evalkit.pointwise_error(neg, d))


def test_local_energy_seeded_and_validated(trained_like):
    W, d = trained_like
    a = evalkit.local_energy(W, d, p_grid=[0.05, 0.2], n_masks=4, seed=9)
    b = evalkit.local_energy(W, d, p_grid=[0.05, 0.2], n_masks=4, seed=9)
    assert np.array_equal(a.delta_e, b.delta_e)
    with pytest.raises(ValueError):
        evalkit.local_energy(W, d, p_grid=[1.5])


def test_local_energy_invariant_under_relabeling(trained_like):
    # permuting hidden units leaves the function, hence the profile's mean, unchanged
    W, d = trained_like
    perm = np.random.default_rng(4).permutation(15)
    Wp = [W[0][perm], W[1][:, perm]]
    a = evalkit.local_energy(W, d, p_grid=[0.1], n_masks=40, seed=0)
    b = evalkit.local_energy(Wp, d, p_grid=[0.1], n_masks=40, seed=1)
    assert abs(a.delta_e[0] - b.delta_e[0]) <= 3 * np.hypot(a.stderr[0], b.stderr[0])


def test_local_energy_csv(tmp_path, trained_like):
    W, d = trained_like
    prof = evalkit.local_energy(W, d, p_grid=[0.0, 0.1], n_masks=2)
    prof.to_csv(tmp_path / "le.csv")
    lines = (tmp_path / "le.csv").read_text().splitlines()
    assert lines[0] == "p,delta_e,stderr,n_masks" and len(lines) == 3


def test_overlaps():
    w = np.array([[1.0, -1.0, 1.0, 1.0], [1.0, -1.0, 1.0, 1.0], [-1.0, 1.0, -1.0, -1.0]])
    q0, qab = evalkit.unit_overlaps(w)
    assert q0 == 1.0
    # pairs: identical (+1), opposite (-1), opposite (-1)
    assert qab == pytest.approx(-1 / 3)
    m = np.random.default_rng(0).uniform(-1, 1, (50, 20000))
    q0, qab = evalkit.unit_overlaps(m)
    assert q0 == pytest.approx(1 / 3, abs=0.01)
    assert abs(qab) < 0.01
    rep = evalkit.overlaps([w, w[:1]])
    assert rep.q0 == [1.0, 1.0] and np.isnan(rep.qab[1])
