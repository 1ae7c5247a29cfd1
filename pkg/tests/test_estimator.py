import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from crosssplit.datasets import generate_blobs
from crosssplit.errors import ConfigError
from crosssplit.estimator import CrossSplitClassifier
from crosssplit.trainer import TrainConfig

FAST = dict(hidden=(16,), e_warm=2, e_max=4, batch_size=32)


@pytest.fixture(scope="module")
def blobs():
    return generate_blobs(3, 40, 4, 3.0, seed=0).training_view()


def test_params_mirror_train_config():
    clf = CrossSplitClassifier()
    assert clf.to_config() == TrainConfig()
    cfg = TrainConfig(e_max=9, hidden=(8, 8), seed=4, ablation="no_split")
    assert CrossSplitClassifier.from_config(cfg).to_config() == cfg
    params = clf.get_params()
    assert params["tau"] == 0.95 and params["random_state"] is None


def test_clone_and_set_params():
    clf = CrossSplitClassifier(**FAST, random_state=3)
    twin = clone(clf).set_params(tau=0.8)
    assert twin.get_params()["tau"] == 0.8 and clf.tau == 0.95


def test_fit_predict_and_string_labels(blobs):
    X, y = blobs
    names = np.array(["cat", "dog", "emu"])[y]
    clf = CrossSplitClassifier(**FAST, random_state=1).fit(X, names)
    assert set(clf.predict(X)) <= set(names)
    np.testing.assert_allclose(clf.predict_proba(X).sum(axis=1), 1.0)
    assert clf.score(X, names) > 0.8
    assert clf.embed(X, network=1).shape == (X.shape[0], 16)
    assert clf.history_[-1].epoch == 4


def test_fit_is_reproducible(blobs):
    X, y = blobs
    a = CrossSplitClassifier(**FAST, random_state=2).fit(X, y).predict_proba(X)
    b = CrossSplitClassifier(**FAST, random_state=2).fit(X, y).predict_proba(X)
    assert np.array_equal(a, b)


def test_in_pipeline(blobs):
    X, y = blobs
    pipe = make_pipeline(StandardScaler(), CrossSplitClassifier(**FAST, random_state=0))
    assert pipe.fit(X, y).score(X, y) > 0.8


def test_errors(blobs):
    X, y = blobs
    with pytest.raises(ConfigError):
        CrossSplitClassifier(**FAST, n_classes=2).fit(X, y)
    with pytest.raises(ConfigError):
        CrossSplitClassifier(**FAST).fit(X, np.zeros_like(y))
    with pytest.raises(ConfigError):
        CrossSplitClassifier(**FAST, random_state=np.random.default_rng(0)).fit(X, y)
    clf = CrossSplitClassifier(**FAST).fit(X, y)
    with pytest.raises(ValueError):
        clf.predict(X[:, :3])
