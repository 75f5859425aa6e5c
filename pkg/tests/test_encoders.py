import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ous import autograd as ag
from ous.autograd import Parameter, Tape, Tensor
from ous.config import VisionEncoderConfig
from ous.encoders import (
    LSTM,
    AlignProjector,
    FramesEncoder,
    PolarityEncoder,
    VisionEncoder,
    align_project,
    encode_frozen,
    frame_encode,
    frames_mean,
    lstm_fuse,
    patch_embed,
    patchify,
    polarity_encode,
    vision_encode,
)
from ous.errors import ShapeError
from ous.gradcheck import grad_check


def small_encoder(rng, grid=(2, 2), depth=5, early=4):
    cfg = VisionEncoderConfig(patch=8, D=8, depth=depth, heads=2, early_blocks=early, mlp_ratio=2)
    return VisionEncoder(cfg, 3, grid, rng).freeze()


@pytest.mark.parametrize("side, tokens", [(64, 16), (224, 196)])
def test_patch_count(side, tokens):
    assert patchify(np.zeros((1, 3, side, side)), 16).shape == (1, tokens, 3 * 16 * 16)


def test_zero_positions_give_pure_projection(rng):
    frames = rng.random((2, 3, 32, 32))
    E = Tensor(rng.standard_normal((3 * 16 * 16, 8)))
    out = patch_embed(frames, E, Tensor(np.zeros((4, 8))), 16)
    np.testing.assert_allclose(out.data, patchify(frames, 16).astype(np.float32) @ E.data, rtol=1e-5)


def test_indivisible_frames_are_rejected():
    with pytest.raises(ShapeError):
        patchify(np.zeros((1, 3, 30, 32)), 16)


def test_shared_encoder_gives_equal_outputs(rng):
    enc = small_encoder(rng)
    frames = rng.random((3, 3, 16, 16))
    a, b = vision_encode(enc, frames), vision_encode(enc, frames.copy())
    assert a.tokens.data.tobytes() == b.tokens.data.tobytes()
    assert a.early.data.tobytes() == b.early.data.tobytes()


def test_frozen_encoder_gets_no_gradient(rng):
    enc = small_encoder(rng)
    scale = Parameter(2.0)
    with Tape() as tape:
        out = vision_encode(enc, rng.random((2, 3, 16, 16)), frozen=False)
        loss = ag.sum_(out.tokens * out.tokens) * scale
    tape.backward(loss)
    assert scale.grad != 0.0
    assert sum(np.abs(p.grad).sum() for p in enc.parameters()) == 0.0


def test_early_tap_matches_truncated_forward(rng):
    enc = small_encoder(rng)
    frames = rng.random((2, 3, 16, 16))
    early = vision_encode(enc, frames).early.data
    assert early.tobytes() == enc.truncated(frames, 4).data.tobytes()


def test_face_crop_reads_centre_positions(rng):
    enc = small_encoder(rng, grid=(4, 4))
    rows = enc.positions(2, 2).data
    np.testing.assert_array_equal(rows, enc.E_pos.data[[5, 6, 9, 10]])


def test_encode_frozen_shapes(rng):
    enc = small_encoder(rng, grid=(4, 4))
    clips = rng.random((3, 2, 3, 32, 32))
    feats = encode_frozen(enc, clips, 16, chunk=2)
    assert feats.face.shape == (3, 2, 8) and feats.scene.shape == (3, 2, 8)
    assert feats.scene_early.shape == (3, 8)
    zero = encode_frozen(enc, clips, 16, scene_input="zero")
    np.testing.assert_array_equal(zero.face, feats.face)
    assert np.all(zero.scene == zero.scene[0, 0])


def test_lstm_with_zero_weights_stays_at_zero(rng):
    lstm = LSTM(4, 3, rng)
    for p in lstm.parameters():
        p.assign(np.zeros(p.shape))
    out = lstm_fuse(lstm, Tensor(rng.standard_normal((2, 5, 4))))
    assert out.shape == (2, 5, 3)
    np.testing.assert_array_equal(out.data, 0.0)


def test_lstm_single_step_is_one_cell(rng):
    lstm = LSTM(4, 3, rng)
    x = rng.standard_normal((2, 1, 4))
    z = x[:, 0] @ lstm.W_x.data + lstm.b.data
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    c = sig(z[:, :3]) * np.tanh(z[:, 6:9])
    h = sig(z[:, 9:]) * np.tanh(c)
    np.testing.assert_allclose(lstm(Tensor(x)).data[:, 0], h, rtol=1e-5, atol=1e-6)


def test_lstm_gradient_through_three_steps(f64, rng):
    lstm = LSTM(3, 2, rng)
    x = Parameter(rng.standard_normal((2, 3, 3)))
    w = rng.standard_normal((2, 3, 2))
    assert grad_check(lambda: ag.sum_(lstm(x) * w), lstm.parameters() + [x], eps=1e-5) < 1e-5


@pytest.mark.parametrize("T", [1, 2, 5])
def test_frames_encoder_output_shape(rng, T):
    enc = FramesEncoder(8, 6, 1, 2, 5, rng)
    assert frame_encode(enc, Tensor(rng.standard_normal((3, T, 8)))).shape == (3, 6)


def test_frames_encoder_identity_initialisation(rng):
    enc = FramesEncoder(8, 6, 1, 2, 4, rng)
    enc.set_identity()
    enc.pos.assign(np.zeros(enc.pos.shape))
    x = rng.standard_normal((2, 1, 8))
    expected = x[:, 0] @ enc.proj.weight.data + enc.proj.bias.data
    np.testing.assert_allclose(enc(Tensor(x)).data, expected, rtol=1e-5, atol=1e-6)


def test_frame_order_matters(rng):
    enc = FramesEncoder(8, 6, 1, 2, 4, rng)
    x = rng.standard_normal((1, 4, 8))
    a, b = enc(Tensor(x)).data, enc(Tensor(x[:, ::-1])).data
    assert not np.allclose(a, b)
    enc.pos.assign(np.zeros(enc.pos.shape))
    np.testing.assert_allclose(enc(Tensor(x)).data, enc(Tensor(x[:, ::-1].copy())).data, rtol=1e-4, atol=1e-6)


def test_too_many_frames_rejected(rng):
    with pytest.raises(ShapeError):
        FramesEncoder(8, 6, 1, 2, 2, rng)(Tensor(np.zeros((1, 3, 8))))


def test_frames_mean_examples():
    const = np.full((2, 4, 3), 1.5)
    np.testing.assert_array_equal(frames_mean(Tensor(const)).data, 1.5)
    a, b = np.array([1.0, 2.0]), np.array([3.0, 8.0])
    np.testing.assert_allclose(frames_mean(Tensor(np.stack([a, b])[None])).data[0], [2.0, 5.0])
    x = np.arange(6.0).reshape(2, 1, 3)
    np.testing.assert_array_equal(frames_mean(Tensor(x)).data, x[:, 0])


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_frames_mean_is_linear(alpha, beta, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, 3, 4)), r.standard_normal((2, 3, 4))
    lhs = frames_mean(Tensor(alpha * x + beta * y, dtype=np.float64)).data
    rhs = alpha * frames_mean(Tensor(x, dtype=np.float64)).data + beta * frames_mean(Tensor(y, dtype=np.float64)).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_polarity_encoder_outputs(rng):
    enc = PolarityEncoder(8, 4, rng)
    row = rng.standard_normal(8)
    early = Tensor(np.tile(row, (3 * 2, 5, 1)))
    v_pol, logits = polarity_encode(enc, early, 3)
    assert v_pol.shape == (3, 4) and logits.shape == (3, 3)
    assert logits.data[0].tobytes() == logits.data[1].tobytes() == logits.data[2].tobytes()


def test_polarity_mlp_gradient(f64, rng):
    enc = PolarityEncoder(6, 5, rng)
    x = Tensor(rng.standard_normal((4, 6)))
    w = rng.standard_normal((4, 3))
    assert grad_check(lambda: ag.sum_(enc(x)[1] * w), enc.parameters()) < 1e-5


def test_align_projector_widths_and_identity(rng):
    face, scene = AlignProjector(6, 6, 3, rng), AlignProjector(10, 6, 3, rng)
    a, b = align_project(face, scene, Tensor(rng.standard_normal((2, 6))), Tensor(rng.standard_normal((2, 10))))
    assert a.shape == b.shape == (2, 6)
    face.set_identity()
    x = rng.standard_normal((2, 6))
    np.testing.assert_allclose(face(Tensor(x)).data, x.astype(np.float32), rtol=1e-6)
