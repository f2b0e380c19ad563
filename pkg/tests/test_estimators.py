import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dimentropy.estimators import EntropyEstimator, LyapunovEstimator
from dimentropy.exceptions import ValidationError
from dimentropy.validation import check_points, check_schedule, check_seed, check_system, schedule_violations


def test_get_set_params_and_clone():
    est = EntropyEstimator(system="doubling", deltas=(0.2, 0.1), ns=(2, 4))
    p = est.get_params()
    assert p["system"] == "doubling" and p["ns"] == (2, 4)
    est.set_params(quantity="preimage")
    c = clone(est)
    assert c.get_params()["quantity"] == "preimage"


def test_entropy_fit_transform_predict():
    est = EntropyEstimator(system="doubling", quantity="preimage", deltas=(0.2, 0.1), ns=(2, 4, 6, 8)).fit()
    assert est.rate_ == pytest.approx(math.log(2))
    table = est.transform()
    assert table.shape == (8, 4)
    pred = est.predict([10, 12])
    assert pred[1] - pred[0] == pytest.approx(2 * math.log(2))
    assert est.score() == pytest.approx(0.0)


def test_entropy_fit_transform_shortcut():
    table = EntropyEstimator(system="henon", quantity="preimage", deltas=(0.2,), ns=(1, 2)).fit_transform(None)
    assert np.all(table[:, 2] == 1)


def test_unfitted():
    with pytest.raises(NotFittedError):
        EntropyEstimator().transform()


@pytest.mark.parametrize("kw", [dict(deltas=(0.1, 0.2)), dict(ns=(3, 2)), dict(seed=None), dict(system="tent"),
                                dict(quantity="bogus"), dict(quantity="dim", m=2, l=0)])
def test_entropy_validation(kw):
    with pytest.raises(ValidationError):
        EntropyEstimator(**kw).fit()


def test_lyapunov_estimator(cat):
    est = LyapunovEstimator(system=cat, n_steps=2000).fit()
    g = math.log((3 + math.sqrt(5)) / 2)
    assert np.allclose(est.exponents_, [g, -g], atol=1e-9)
    out = est.transform(np.array([[0.1, 0.2], [0.3, 0.7]]))
    assert out.shape == (2, 2)


def test_lyapunov_rejects_bad_points(henon):
    est = LyapunovEstimator(system=henon, n_steps=500)
    with pytest.raises(ValidationError):
        est.fit(np.array([[np.nan, 0.0]]))
    with pytest.raises(ValidationError):
        est.fit(np.zeros((1, 3)))


def test_validation_helpers(henon):
    assert schedule_violations([0.2, 0.2], [1, 1]) == [
        "delta: schedule must be strictly decreasing", "n: schedule must be strictly increasing"]
    assert check_schedule([0.2, 0.1], [1, 2]) == ([0.2, 0.1], [1, 2])
    with pytest.raises(ValidationError):
        check_seed(-1)
    assert check_system("cat").name == "cat"
    assert check_points(henon, [0.1, 0.2]).shape == (1, 2)
