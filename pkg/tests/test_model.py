import numpy as np
import pytest

from ctcmix.autodiff.tensor import Tensor
from ctcmix.errors import InvalidConfig, InvalidDepth, MalformedCheckpoint, ShapeMismatch, TooNarrow
from ctcmix.mixup import MixPlan
from ctcmix.model import GatedConvRecognizer, NetworkConfig, gated_block, glorot_bound, load, save
from ctcmix.model.checkpoint import dumps, loads

ALPHA = "abcdefghij"


@pytest.fixture(scope="module")
def paper():
    return GatedConvRecognizer(NetworkConfig.from_preset("paper", ALPHA), seed=0)


@pytest.fixture(scope="module")
def tiny():
    return GatedConvRecognizer(NetworkConfig.from_preset("tiny", ALPHA, dropout=0.0), seed=0)


def _images(rng, batch, height, width):
    return rng.uniform(0.0, 1.0, size=(batch, 1, height, width))


def test_full_preset_frame_counts(paper):
    assert paper.output_length(256) == 32
    assert paper.output_length(264) == 33


def test_full_preset_parameter_shapes(paper):
    assert paper.params["conv1.weight"].shape == (8, 4, 3, 3)
    assert paper.params["conv8.weight"].shape == (128, 64, 3, 3)
    assert paper.params["output.weight"].shape == (128, len(ALPHA) + 1)


def test_full_preset_forward_shape(paper):
    out = paper.forward(_images(np.random.default_rng(0), 1, 128, 256))
    assert out.shape == (1, 32, len(ALPHA) + 1)


def test_tiny_frame_counts(tiny):
    assert tiny.output_length(32) == 4
    assert tiny.output_length(64) == 8
    assert tiny.parameter_count == 53_423
    assert tiny.mix_depths() == list(range(9))


def test_glorot_bound_and_init():
    assert glorot_bound(128, 128) == pytest.approx(0.1531, abs=1e-4)
    cfg = NetworkConfig.from_preset("paper", ALPHA)
    w = GatedConvRecognizer(cfg, seed=3).params["linear1.weight"].data
    assert np.abs(w).max() <= glorot_bound(128, 128)
    # a uniform draw of 16k values gets close to the bound
    assert np.abs(w).max() > 0.99 * glorot_bound(128, 128)


def test_zero_biases(tiny):
    for name, p in tiny.params.items():
        if name.endswith("bias"):
            assert np.all(p.data == 0.0)


def test_too_narrow(tiny):
    with pytest.raises(TooNarrow):
        tiny.output_length(3)


def test_wrong_height_and_rank(tiny):
    with pytest.raises(ShapeMismatch):
        tiny.forward(np.zeros((1, 1, 30, 64)))
    with pytest.raises(ShapeMismatch):
        tiny.forward(np.zeros((1, 32, 64)))


def test_unknown_preset():
    with pytest.raises(InvalidConfig):
        NetworkConfig.from_preset("huge", ALPHA)


def test_invalid_depth(tiny):
    plan = MixPlan.pair([1, 0], [0.5, 0.5], 9)
    with pytest.raises(InvalidDepth):
        tiny.forward(np.zeros((2, 1, 32, 64)), plan)


@pytest.mark.parametrize("depth", [0, 4, 8])
def test_unit_ratio_plan_equals_plain_forward(tiny, depth):
    x = _images(np.random.default_rng(1), 3, 32, 64)
    plan = MixPlan.pair([1, 2, 0], np.ones(3), depth)
    assert tiny.forward(x, plan).data.tobytes() == tiny.forward(x).data.tobytes()


@pytest.mark.parametrize("depth", [0, 5])
def test_self_mix_equals_plain_forward(tiny, depth):
    one = _images(np.random.default_rng(2), 1, 32, 64)
    x = np.concatenate([one, one])
    plan = MixPlan.pair([1, 0], [0.37, 0.81], depth)
    np.testing.assert_allclose(tiny.forward(x, plan).data, tiny.forward(x).data, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("depth", [0, 3, 8])
def test_swapping_inputs_and_complementing_ratio(tiny, depth):
    rng = np.random.default_rng(3)
    x = _images(rng, 2, 32, 64)
    lam = 0.3
    a = tiny.forward(x, MixPlan.pair([1, 0], [lam, lam], depth)).data
    b = tiny.forward(x[::-1].copy(), MixPlan.pair([1, 0], [1 - lam, 1 - lam], depth)).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_predict_proba_rows_are_distributions(tiny):
    p = tiny.predict_proba(_images(np.random.default_rng(4), 2, 32, 96))
    assert p.shape == (2, 12, len(ALPHA) + 1)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_dropout_only_in_training():
    model = GatedConvRecognizer(NetworkConfig.from_preset("tiny", ALPHA, dropout=0.5), seed=0)
    x = _images(np.random.default_rng(5), 2, 32, 64)
    base = model.forward(x).data
    assert np.array_equal(model.forward(x).data, base)
    a = model.forward(x, training=True, rng=np.random.default_rng(0)).data
    b = model.forward(x, training=True, rng=np.random.default_rng(0)).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, base)


def test_zero_dropout_training_equals_eval(tiny):
    x = _images(np.random.default_rng(6), 2, 32, 64)
    assert np.array_equal(tiny.forward(x, training=True, rng=np.random.default_rng(1)).data,
                          tiny.forward(x).data)


def test_gated_block():
    x = Tensor(np.ones((1, 2, 3, 3)))
    w = Tensor(np.zeros((2, 2, 3, 3)))
    out = gated_block(x, w, Tensor(np.zeros(2)))
    np.testing.assert_allclose(out.data, 0.5)
    with pytest.raises(ShapeMismatch):
        gated_block(x, Tensor(np.zeros((3, 2, 3, 3))), Tensor(np.zeros(3)))


def test_checkpoint_roundtrip(tiny, tmp_path):
    path = save(tiny, tmp_path / "m.ckpt")
    back = load(path)
    assert back.config.to_dict() == tiny.config.to_dict()
    for k, v in tiny.params.items():
        assert back.params[k].data.tobytes() == v.data.tobytes()
    x = _images(np.random.default_rng(7), 1, 32, 64)
    assert back.forward(x).data.tobytes() == tiny.forward(x).data.tobytes()


def test_checkpoint_corruption(tiny, tmp_path):
    blob = dumps(tiny)
    with pytest.raises(MalformedCheckpoint):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(MalformedCheckpoint):
        loads(blob[:-7])
    with pytest.raises(MalformedCheckpoint):
        loads(blob + b"\0")
    with pytest.raises(FileNotFoundError, match="nope.ckpt"):
        load(tmp_path / "nope.ckpt")


def test_state_dict_validation(tiny):
    state = tiny.state_dict()
    state["output.bias"] = np.zeros(3)
    other = GatedConvRecognizer(tiny.config, seed=1)
    with pytest.raises(ShapeMismatch):
        other.load_state_dict(state)
