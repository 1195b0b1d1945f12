import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ctcmix.data import GenConfig, generate_lines
from ctcmix.estimator import CTCLineRecognizer, LinePreprocessor, check_line_images, check_transcripts


@pytest.fixture(scope="module")
def lines():
    train, valid = generate_lines(GenConfig(lines=30, val_fraction=0.2, max_len=4, seed=8))
    return [l.pixels for l in train], [l.transcript for l in train], [l.pixels for l in valid], \
        [l.transcript for l in valid]


def test_params_roundtrip_through_clone():
    est = CTCLineRecognizer(mixup=True, n_way=3, max_epochs=7)
    params = est.get_params()
    assert params["n_way"] == 3 and params["max_epochs"] == 7
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(lr=1e-3)
    assert copy.lr == 1e-3 and est.lr == 4e-4


def test_image_validation():
    with pytest.raises(ValueError, match="single 2-D"):
        check_line_images(np.zeros((32, 40)))
    with pytest.raises(ValueError, match="image 1"):
        check_line_images([np.zeros((32, 40)), np.zeros(5)])
    with pytest.raises(ValueError, match="outside"):
        check_line_images([np.full((4, 4), 300.0)])
    with pytest.raises(ValueError):
        check_line_images([])
    assert check_line_images([np.full((2, 2), 7.0)])[0].dtype == np.uint8


def test_transcript_validation():
    with pytest.raises(ValueError, match="2 transcripts for 3"):
        check_transcripts(["a", "b"], "ab", 3)
    with pytest.raises(ValueError, match="outside the alphabet"):
        check_transcripts(["az"], "ab", 1)


def test_preprocessor():
    pre = LinePreprocessor(height=16)
    with pytest.raises(NotFittedError):
        pre.transform([np.zeros((32, 40))])
    out = pre.fit_transform([np.arange(32 * 40).reshape(32, 40) % 256])
    assert out[0].shape == (16, 20)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CTCLineRecognizer().predict([np.zeros((32, 40))])


def test_fit_predict_score(lines):
    X, y, Xv, yv = lines
    est = CTCLineRecognizer(max_epochs=2, dropout=0.0, mixup=True, seed=1)
    assert est.fit(X, y, Xv, yv) is est
    assert len(est.log_) == 2 and est.best_epoch_ in (1, 2)
    preds = est.predict(Xv)
    assert len(preds) == len(Xv) and all(isinstance(p, str) for p in preds)
    probs = est.predict_proba(Xv[:2])
    np.testing.assert_allclose(probs[0].sum(axis=1), 1.0, atol=1e-12)
    assert probs[0].shape[1] == 11
    assert est.score(Xv, yv) <= 1.0


def test_fit_holds_out_validation(lines):
    X, y, _, _ = lines
    est = CTCLineRecognizer(max_epochs=1, validation_fraction=0.25).fit(X, y)
    assert len(est.log_) == 1
    with pytest.raises(ValueError, match="validation"):
        CTCLineRecognizer(validation_fraction=0.99).fit(X[:2], y[:2])
