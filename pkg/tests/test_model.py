import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from digitrec.audio import tone
from digitrec.errors import CorruptCheckpoint, ShapeMismatch, UnknownVersion
from digitrec.model import (
    ModelConfig,
    count_parameters,
    feature_maps,
    forward,
    init_model,
    load_checkpoint,
    param_shapes,
    predict,
    residual_block,
    save_checkpoint,
)
from digitrec.nn.tensor import Tensor

from conftest import tiny_end_to_end_gradcheck

SMALL = ModelConfig(cnn_channels=4, bridge_out=16, rnn_hidden=8, n_rnn_blocks=2)


@pytest.fixture(scope="module")
def full_params():
    return init_model(ModelConfig(), np.random.default_rng(0), dtype=np.float32)


def test_full_model_parameter_count_and_shapes(full_params):
    cfg = ModelConfig()
    assert full_params["conv.weight"].shape == (32, 1, 3, 3)
    assert full_params["bridge.weight"].shape == (512, 640)
    assert full_params["gru0.fwd.w_ih"].shape == (1536, 512)
    assert full_params["gru1.fwd.w_ih"].shape == (1536, 1024)
    assert full_params["fc1.weight"].shape == (512, 1024)
    assert cfg.flat_size == 25_600
    # independent tally of the layer chain
    conv = 32 * 9 + 32
    res = 3 * 2 * (32 * 32 * 9 + 32 + 2 * 20)
    bridge = 640 * 512 + 512
    gru = 2 * (3 * (512 * 512 + 512 * 512 + 2 * 512)) + 2 * 512
    gru_deep = 2 * (3 * (1024 * 512 + 512 * 512 + 2 * 512)) + 2 * 1024
    head = 1024 * 512 + 512 + 512 * 10 + 10
    assert count_parameters(full_params) == conv + res + bridge + gru + 4 * gru_deep + head


def test_init_is_seeded_and_gammas_are_one():
    a = init_model(SMALL, np.random.default_rng(4))
    b = init_model(SMALL, np.random.default_rng(4))
    for k in a:
        np.testing.assert_array_equal(a[k].data, b[k].data)
    for k, v in a.items():
        if k.endswith("gamma"):
            assert np.all(v.data == 1.0)


def test_full_shape_chain(full_params):
    cfg = ModelConfig()
    x = np.random.default_rng(0).standard_normal((2, 1, 40, 80)).astype(np.float32)
    assert feature_maps(full_params, cfg, x).shape == (2, 32, 20, 40)
    p = forward(full_params, cfg, x).data
    assert p.shape == (2, 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=8, deadline=None)
@given(st.integers(1, 8))
def test_shape_chain_any_batch(bsz):
    params = init_model(SMALL, np.random.default_rng(1))
    x = np.random.default_rng(bsz).standard_normal((bsz, 1, 40, 80))
    assert feature_maps(params, SMALL, x).shape == (bsz,) + SMALL.conv_shape
    p = forward(params, SMALL, x).data
    assert p.shape == (bsz, 10)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_eval_forward_is_pure():
    params = init_model(SMALL, np.random.default_rng(2))
    x = np.random.default_rng(3).standard_normal((3, 1, 40, 80))
    np.testing.assert_array_equal(forward(params, SMALL, x).data, forward(params, SMALL, x).data)


def test_wrong_input_shape():
    params = init_model(SMALL, np.random.default_rng(2))
    with pytest.raises(ShapeMismatch):
        forward(params, SMALL, np.zeros((1, 1, 39, 80)))


def test_zeroed_residual_branch_is_identity():
    params = init_model(SMALL, np.random.default_rng(5))
    for k in list(params):
        if k.startswith("res0.conv"):
            params[k] = Tensor(np.zeros(params[k].shape))
    x = Tensor(np.random.default_rng(6).standard_normal((2, 4, 40, 20)))
    np.testing.assert_array_equal(residual_block(params, "res0", x).data, x.data)


def test_tiny_end_to_end_gradient():
    r = tiny_end_to_end_gradcheck()
    assert r.max_rel_error < 1e-4, r


def test_first_residual_conv_bias_gets_no_gradient():
    from digitrec.nn.functional import softmax_cross_entropy
    from digitrec.model import logits

    params = init_model(SMALL, np.random.default_rng(7))
    x = np.random.default_rng(8).standard_normal((2, 1, 40, 80))
    loss, _ = softmax_cross_entropy(logits(params, SMALL, x), [0, 1])
    loss.backward()
    assert np.max(np.abs(params["res0.conv1.bias"].grad)) < 1e-12
    assert np.max(np.abs(params["res0.conv2.bias"].grad)) > 1e-8


def test_predict_returns_digit_and_probs():
    params = init_model(SMALL, np.random.default_rng(9))
    clip = tone(400, 0.6, 16000, amplitude=0.3)
    digit, probs = predict(params, SMALL, clip)
    assert probs.shape == (10,) and 0 <= digit <= 9 and digit == int(np.argmax(probs))
    np.testing.assert_array_equal(probs, predict(params, SMALL, clip)[1])


# --------------------------------------------------------------------------
# checkpoints


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_roundtrip_is_bit_exact(tmp_path, dtype):
    params = init_model(SMALL, np.random.default_rng(10), dtype=dtype)
    save_checkpoint(tmp_path / "ck", params, SMALL, {"note": "x"})
    back, cfg, meta = load_checkpoint(tmp_path / "ck")
    assert cfg == SMALL and meta == {"note": "x"}
    x = np.random.default_rng(11).standard_normal((3, 1, 40, 80))
    np.testing.assert_array_equal(forward(back, cfg, x).data, forward(params, SMALL, x).data)
    index = json.loads((tmp_path / "ck" / "model.json").read_text())["params"]
    names = [e["name"] for e in index]
    assert sorted(names) == sorted(param_shapes(SMALL)) and len(set(names)) == len(names)


def test_truncated_checkpoint(tmp_path):
    save_checkpoint(tmp_path, init_model(SMALL, np.random.default_rng(0)), SMALL)
    blob = (tmp_path / "params.bin").read_bytes()
    (tmp_path / "params.bin").write_bytes(blob[:-8])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path)


def test_unknown_checkpoint_version(tmp_path):
    save_checkpoint(tmp_path, init_model(SMALL, np.random.default_rng(0)), SMALL)
    doc = json.loads((tmp_path / "model.json").read_text())
    doc["version"] = 99
    (tmp_path / "model.json").write_text(json.dumps(doc))
    with pytest.raises(UnknownVersion):
        load_checkpoint(tmp_path)
