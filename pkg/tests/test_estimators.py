import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from dlom import (DLOMClassifier, GatedFusionDLOMClassifier, PoolingHeadClassifier, ScoreScale,
                  SyntheticSpec, ValidationError, generate_synthetic)
from dlom.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from dlom.metrics import qwk


def _xy(spec, visual=False):
    recs = generate_synthetic(spec)
    if visual:
        X = np.array([np.r_[r.x_text, r.x_visual] for r in recs])
    else:
        X = np.array([r.x_text for r in recs])
    return X, np.array([r.gold for r in recs])


@pytest.fixture(scope="module")
def easy():
    return _xy(SyntheticSpec(n_instances=300, scale=ScoreScale(3, 1), text_noise=0.2, seed=4))


@pytest.fixture(scope="module")
def easy_visual():
    return _xy(SyntheticSpec(n_instances=300, scale=ScoreScale(3), text_noise=0.3, seed=4), visual=True)


@pytest.mark.parametrize("cls", [DLOMClassifier, PoolingHeadClassifier])
def test_fit_predict_external_scores(cls, easy):
    X, y = easy
    est = cls(epochs=100).fit(X, y)
    pred = est.predict(X)
    assert set(np.unique(pred)) <= {1, 2, 3, 4}
    np.testing.assert_array_equal(est.classes_, [1, 2, 3, 4])
    assert est.predict_proba(X).shape == (len(X), 4)
    assert qwk(pred - 1, y - 1, ScoreScale(3)) > 0.6


def test_get_params_and_clone():
    est = DLOMClassifier(hidden_dim=7, distance_aware=True)
    assert est.get_params()["hidden_dim"] == 7
    twin = clone(est)
    assert twin.get_params() == est.get_params()


def test_pipeline_and_cross_val_score(easy):
    X, y = easy
    pipe = make_pipeline(StandardScaler(), DLOMClassifier(epochs=50, score_min=1, score_max=4))
    scores = cross_val_score(pipe, X, y, cv=3)
    assert scores.shape == (3,)


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        DLOMClassifier().predict(np.zeros((2, 3)))


def test_feature_count_checked(easy):
    X, y = easy
    est = DLOMClassifier(epochs=2).fit(X, y)
    with pytest.raises(ValidationError):
        est.predict(X[:, :3])


def test_epochs_must_be_positive(easy):
    X, y = easy
    with pytest.raises(ValidationError):
        DLOMClassifier(epochs=0).fit(X, y)


def test_training_reduces_loss(easy):
    X, y = easy
    est = DLOMClassifier(epochs=60).fit(X, y)
    assert est.loss_curve_[-1] < est.loss_curve_[0]
    assert len(est.loss_curve_) == 60


def test_minibatch_mode(easy):
    X, y = easy
    est = DLOMClassifier(epochs=5, batch_size=16).fit(X, y)
    assert len(est.loss_curve_) == 5


def test_lambda_stays_in_unit_interval(easy):
    X, y = easy
    est = DLOMClassifier(epochs=80, distance_aware=True, beta=0.01).fit(X, y)
    hist = np.array(est.lambda_history_)
    assert np.all((hist > 0) & (hist < 1))
    assert hist[-1] != 0.5


def test_distance_off_keeps_lambda_fixed(easy):
    X, y = easy
    est = DLOMClassifier(epochs=10).fit(X, y)
    assert est.lambda_logit_ == 0.0
    assert set(est.lambda_history_) == {0.5}


def test_same_seed_identical(easy):
    X, y = easy
    a = DLOMClassifier(epochs=20, random_state=3).fit(X, y)
    b = DLOMClassifier(epochs=20, random_state=3).fit(X, y)
    assert dumps(a) == dumps(b)
    c = DLOMClassifier(epochs=20, random_state=4).fit(X, y)
    assert dumps(a) != dumps(c)


def test_gated_strategies_and_alpha(easy_visual):
    X, y = easy_visual
    est = GatedFusionDLOMClassifier(n_text_features=16, epochs=60).fit(X, y)
    preds = est.predict_strategies(X)
    assert set(preds) == {"fused", "text_only", "mm_only"}
    np.testing.assert_array_equal(preds["fused"], est.predict(X))
    alpha = est.gate_alpha(X)
    assert np.all((alpha > 0) & (alpha < 1))
    text_only = clone(est).set_params(inference_strategy="text_only")
    assert text_only.get_params()["inference_strategy"] == "text_only"


def test_gated_gate_starts_neutral(easy_visual):
    X, y = easy_visual
    est = GatedFusionDLOMClassifier(n_text_features=16, epochs=1, learning_rate=1e-12).fit(X, y)
    np.testing.assert_allclose(est.gate_alpha(X), 0.5, atol=1e-9)


def test_gated_rejects_bad_split(easy_visual):
    X, y = easy_visual
    with pytest.raises(ValidationError):
        GatedFusionDLOMClassifier(n_text_features=X.shape[1], epochs=1).fit(X, y)
    with pytest.raises(ValidationError):
        GatedFusionDLOMClassifier(n_text_features=16, inference_strategy="both", epochs=1).fit(X, y)


def test_gated_concat_input(easy_visual):
    X, y = easy_visual
    est = GatedFusionDLOMClassifier(n_text_features=16, multimodal_input="concat", epochs=3).fit(X, y)
    assert est.mm_encoder_.feature_dim == X.shape[1]


@pytest.mark.parametrize("make", [
    lambda: DLOMClassifier(epochs=15, distance_aware=True),
    lambda: GatedFusionDLOMClassifier(n_text_features=16, epochs=15),
    lambda: PoolingHeadClassifier(epochs=15),
])
def test_checkpoint_round_trip(make, easy_visual, tmp_path):
    X, y = easy_visual
    est = make().fit(X, y)
    path = tmp_path / "m.ckpt"
    save_checkpoint(est, path)
    back = load_checkpoint(path)
    np.testing.assert_array_equal(back.decision_function(X), est.decision_function(X))
    assert dumps(back) == path.read_text()


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValidationError):
        loads("hello\n")
    with pytest.raises(ValidationError):
        loads("DLOM-CHECKPOINT 99\nend\n")
