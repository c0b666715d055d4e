import math

import numpy as np
import pytest

from fssl.errors import ContractError, EmptyTargets, ShapeError
from fssl.model import (ApcConfig, ClassifierConfig, apc_batch_loss, apc_forward_loss, apc_loss, apc_targets,
                        classify, decode, encode, encode_arrays, init_apc, init_classifier, scaled_bce)
from fssl.numerics.tensor import Tensor

SMALL = ApcConfig(conv_channels=(4, 4, 8, 8, 8), lstm_units=6)


@pytest.fixture(scope="module")
def small_params():
    return init_apc(SMALL, 0)


def test_default_architecture_shapes():
    cfg = ApcConfig()
    assert cfg.time_stride_total == 32
    assert cfg.output_shape(998) == (32, 5)
    assert cfg.output_shape(198) == (7, 5)
    assert cfg.lstm_input_dim() == 64 * 5


def test_encoder_rejects_wrong_depth():
    with pytest.raises(ContractError):
        ApcConfig(conv_channels=(8, 8, 8, 8))


def test_encode_decode_shapes(small_params, rng):
    x = rng.standard_normal((2, 70, 20))
    h = encode(x, small_params, SMALL)
    assert h.shape == (2, 3, 6)
    y = decode(h, small_params)
    assert y.shape == (2, 3, 20)
    with pytest.raises(ShapeError):
        encode(rng.standard_normal((1, 70, 13)), small_params, SMALL)


def test_parameter_partitions(small_params):
    assert set(small_params.tags.values()) == {"enc", "dec"}
    assert all(k.startswith("enc.") for k in small_params.select("enc"))
    cls = init_classifier(SMALL, ClassifierConfig(lstm_units=5), 1)
    assert set(cls.tags.values()) == {"cls"}
    assert cls["cls.lstm.wx"].shape == (6, 20)


def test_targets_are_shifted_frames():
    x = np.arange(70 * 2, dtype=float).reshape(70, 2)
    t, mask = apc_targets(x, 3, 32)
    # steps anchored at 0, 32, 64 predict frames 3, 35, 67
    np.testing.assert_array_equal(t[:, 0], x[[3, 35, 67], 0])
    np.testing.assert_array_equal(mask, 1.0)


def test_targets_past_the_end_are_masked():
    x = np.ones((33, 2))
    t, mask = apc_targets(x, 3, 32)
    np.testing.assert_array_equal(mask, [1.0, 0.0])
    np.testing.assert_array_equal(t[1], 0.0)
    with pytest.raises(EmptyTargets):
        apc_targets(np.ones((3, 2)), 3, 32)


def test_l1_loss_matches_numpy(rng):
    y, t = rng.standard_normal((2, 4, 3)), rng.standard_normal((2, 4, 3))
    mask = np.array([[1, 1, 0, 1], [1, 0, 0, 0]], dtype=float)
    got = apc_loss(Tensor(y), t, mask).item()
    assert got == pytest.approx(float(np.sum(np.abs(y - t) * mask[..., None])), abs=1e-12)
    with pytest.raises(ShapeError):
        apc_loss(Tensor(y), t[:, :3])


def test_forward_loss_equals_manual_composition(small_params, rng):
    x = rng.standard_normal((1, 70, 20))
    t, mask = apc_targets(x, 3, 32)
    y = decode(encode(x, small_params, SMALL), small_params).data
    want = float(np.sum(np.abs(y - t) * mask[..., None]))
    assert apc_forward_loss(small_params, x, SMALL).item() == pytest.approx(want, rel=1e-12)


def test_batch_loss_reductions(small_params, rng):
    batch = [rng.standard_normal((n, 20)) for n in (70, 40, 70)]
    parts = [apc_forward_loss(small_params, x, SMALL).item() for x in batch]
    total = apc_batch_loss(small_params, batch, SMALL).item()
    assert total == pytest.approx(sum(parts), rel=1e-12)
    assert apc_batch_loss(small_params, batch, SMALL, reduction="mean").item() == pytest.approx(total / 3, rel=1e-12)
    with pytest.raises(ContractError):
        apc_batch_loss(small_params, batch, SMALL, reduction="max")
    with pytest.raises(ContractError):
        apc_batch_loss(small_params, [], SMALL)


def test_scaled_bce_oracle():
    p = np.array([0.9, 0.2, 0.6, 0.1])
    z = np.array([1, 0, 1, 0])
    c = 2.0
    want = -sum(c * zi * math.log(pi) + (1 - zi) * math.log(1 - pi) for pi, zi in zip(p, z))
    assert scaled_bce(Tensor(p), z, c).item() == pytest.approx(want, rel=1e-12)
    assert scaled_bce(Tensor(p), z, c, reduction="mean").item() == pytest.approx(want / 4, rel=1e-12)


def test_scaled_bce_weights_positives_only():
    pos = scaled_bce(Tensor([0.3]), [1], 1.0).item()
    assert scaled_bce(Tensor([0.3]), [1], 3.0).item() == pytest.approx(3 * pos)
    neg = scaled_bce(Tensor([0.3]), [0], 1.0).item()
    assert scaled_bce(Tensor([0.3]), [0], 3.0).item() == pytest.approx(neg)


def test_scaled_bce_clamps_and_validates():
    v = scaled_bce(Tensor([0.0, 1.0]), [1, 0], 2.0).item()
    assert math.isfinite(v)
    assert v == pytest.approx(-3 * math.log(1e-7), rel=1e-6)
    with pytest.raises(ContractError):
        scaled_bce(Tensor([0.5]), [2], 2.0)
    with pytest.raises(ContractError):
        scaled_bce(Tensor([0.5]), [1], 0.0)


def test_classifier_outputs_probabilities(small_params, rng):
    cls = init_classifier(SMALL, ClassifierConfig(lstm_units=5), 1)
    h = encode(rng.standard_normal((3, 70, 20)), small_params, SMALL)
    p = classify(h, cls).data
    assert p.shape == (3,)
    assert np.all((p > 0) & (p < 1))


def test_encode_arrays_matches_per_clip(small_params, rng):
    feats = [rng.standard_normal((n, 20)) for n in (70, 40, 70, 33)]
    out = encode_arrays(small_params, feats, SMALL, batch_size=2)
    for x, h in zip(feats, out):
        np.testing.assert_allclose(h, encode(x, small_params, SMALL).data[0], atol=1e-12)


def test_init_is_seeded():
    assert init_apc(SMALL, 5).equals(init_apc(SMALL, 5))
    assert not init_apc(SMALL, 5).equals(init_apc(SMALL, 6))


def test_desk_length_collapses_to_one_step():
    assert ApcConfig().output_shape(32) == (1, 5)


def test_target_index_formula_by_enumeration():
    x = np.arange(998, dtype=float)[:, None] * np.ones((1, 2))
    t, mask = apc_targets(x, 3, 32)
    assert t.shape == (32, 2)
    for j in range(32):
        if 32 * j + 3 <= 997:
            assert mask[j] == 1.0 and t[j, 0] == 32 * j + 3
        else:
            assert mask[j] == 0.0


def test_unit_stride_shift():
    x = np.array([[10.0], [11.0], [12.0], [13.0]])
    t, mask = apc_targets(x, 1, 1)
    np.testing.assert_array_equal(t[:3, 0], [11.0, 12.0, 13.0])
    np.testing.assert_array_equal(mask, [1, 1, 1, 0])
    with pytest.raises(EmptyTargets):
        apc_targets(x, 4, 1)


def test_l1_hand_cases(rng):
    assert apc_loss(Tensor([[0.0], [0.0], [0.0]]), [[2.0], [3.0], [4.0]]).item() == 9.0
    y, t = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    assert apc_loss(Tensor(t), t).item() == 0.0
    base = apc_loss(Tensor(y), t).item()
    assert apc_loss(Tensor(t + 2 * (y - t)), t).item() == pytest.approx(2 * base)


def test_decoder_hand_cases(rng):
    params = init_apc(SMALL, 0)
    zero = params.replace({k: np.zeros_like(v) for k, v in params.items()})
    bias = rng.standard_normal(20)
    vals = {k: np.zeros_like(v) for k, v in params.items()}
    vals["dec.conv.b"] = bias
    y = decode(Tensor(np.zeros((1, 1, 6))), params.replace(vals)).data
    assert y.shape == (1, 1, 20)
    np.testing.assert_array_equal(y[0, 0], bias)
    # centre tap identity with m == M reproduces the latents
    cfg = ApcConfig(conv_channels=(4, 4, 8, 8, 8), lstm_units=20)
    p = init_apc(cfg, 0)
    w = np.zeros((20, 20, 3))
    w[:, :, 1] = np.eye(20)
    vals = dict(p.items())
    vals["dec.conv.w"], vals["dec.conv.b"] = w, np.zeros(20)
    h = rng.standard_normal((1, 5, 20))
    np.testing.assert_allclose(decode(Tensor(h), p.replace(vals)).data, h, atol=1e-14)
    h0 = encode(np.zeros((1, 64, 20)), zero, SMALL).data
    assert np.all(np.isfinite(h0))
    np.testing.assert_array_equal(h0, encode(np.zeros((1, 64, 20)), zero, SMALL).data)


def test_classifier_hand_cases(rng):
    cls = init_classifier(SMALL, ClassifierConfig(lstm_units=5), 1)
    vals = dict(cls.items())
    vals["cls.dense.w"], vals["cls.dense.b"] = np.zeros((5, 1)), np.array([0.4])
    h = rng.standard_normal((2, 4, 6))
    np.testing.assert_allclose(classify(Tensor(h), cls.replace(vals)).data, 1 / (1 + np.exp(-0.4)))
    # the LSTM reads h in order, so permuting time steps changes the score
    p1 = classify(Tensor(h[:1]), cls).item()
    p2 = classify(Tensor(h[:1, ::-1]), cls).item()
    assert p1 != p2


def test_bce_hand_values():
    assert scaled_bce(Tensor([0.5]), [1], 1.0).item() == pytest.approx(0.693147, abs=1e-6)
    assert scaled_bce(Tensor([0.5]), [0], 7.0).item() == pytest.approx(0.693147, abs=1e-6)
    assert scaled_bce(Tensor([0.5]), [1], 3.0).item() == pytest.approx(2.079442, abs=1e-6)
