import numpy as np
import pytest
from sklearn.base import clone

from bora.estimator import AdapterRegressor
from bora.tasks import make_regression_task


@pytest.fixture(scope="module")
def task():
    return make_regression_task(16, 16, 2, 0, samples=128)


def test_params_round_trip():
    est = AdapterRegressor(r=3, b=2, steps=10)
    params = est.get_params()
    assert params["r"] == 3 and params["variant"] == "bora"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(lr=0.5)
    assert est.lr == 0.5


def test_fit_predict(task):
    est = AdapterRegressor(r=2, b=2, base_weight=task.W, steps=600, lr=1e-2).fit(task.inputs, task.labels)
    assert est.score(task.inputs, task.labels) > 0.99
    pred = est.predict(task.inputs)
    assert np.allclose(pred, task.inputs @ task.W.T + est.transform(task.inputs))
    assert est.delta_weight().shape == (16, 16)
    assert est.n_features_in_ == 16


def test_zero_base_by_default(task):
    est = AdapterRegressor(r=2, b=1, variant="lora", steps=5).fit(task.inputs, task.labels)
    assert np.allclose(est.predict(task.inputs), est.transform(task.inputs))


def test_unfitted():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        AdapterRegressor().predict(np.zeros((2, 4)))


def test_feature_mismatch(task):
    est = AdapterRegressor(r=2, b=2, steps=3).fit(task.inputs, task.labels)
    with pytest.raises(ValueError):
        est.predict(np.zeros((3, 5)))


def test_bad_base_weight(task):
    with pytest.raises(ValueError):
        AdapterRegressor(base_weight=np.zeros((3, 3)), steps=1).fit(task.inputs, task.labels)
