import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from poseinsert.pose_encoder import DPEConfig, encode_pose, init_pose_encoder
from poseinsert.rgbd_encoder import (
    BBox,
    GIEConfig,
    GoalImageEncoder,
    crop_and_resize,
    encode_goal_conditioned,
    init_image_encoder,
    union_bbox,
)
from poseinsert.se3 import random_rotation, rot_to_r6d

SMALL_GIE = GIEConfig(patch_size=32, trunk_channels=(4, 8), fused_channels=8, token_patch=2, token_dim=16, d_img=24)


def pose_vec(rng):
    return np.concatenate([rng.uniform(-1, 1, 3), rot_to_r6d(random_rotation(rng))])


# -- pose encoder -----------------------------------------------------------


def test_pose_encoder_output_shape_and_determinism():
    p = init_pose_encoder(seed=0)
    x = pose_vec(np.random.default_rng(0))
    f = encode_pose(x, p)
    assert f.shape == (128,)
    assert encode_pose(x, p).tobytes() == f.tobytes()
    assert encode_pose(np.stack([x, x]), p).shape == (2, 128)


def test_pose_encoder_zero_params_gives_projection_bias():
    p = init_pose_encoder(seed=0)
    p.assign(np.zeros(len(p)))
    bias = np.random.default_rng(1).standard_normal(128)
    p["proj.b"] = bias
    rng = np.random.default_rng(2)
    for _ in range(3):
        np.testing.assert_array_equal(encode_pose(pose_vec(rng), p), bias)


def test_pose_encoder_zero_weights_is_input_independent():
    p = init_pose_encoder(seed=0)
    rng = np.random.default_rng(3)
    for name in p.names():
        if name.endswith(".w") or name.split(".")[-1] in ("wq", "wk", "wv", "wo"):
            p[name] = 0.0
        else:
            p[name] = rng.standard_normal(p[name].shape)
    outs = [encode_pose(pose_vec(rng), p) for _ in range(4)]
    for o in outs[1:]:
        np.testing.assert_allclose(o, outs[0], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_translation_branch_ignores_rotation(seed):
    rng = np.random.default_rng(seed)
    p = init_pose_encoder(seed=1)
    a = pose_vec(rng)
    b = a.copy()
    b[3:] = rot_to_r6d(random_rotation(rng))
    ta, tb = {}, {}
    encode_pose(a, p, trace=ta)
    encode_pose(b, p, trace=tb)
    assert ta["f_t"].tobytes() == tb["f_t"].tobytes()
    c = a.copy()
    c[:3] = rng.uniform(-1, 1, 3)
    tc = {}
    encode_pose(c, p, trace=tc)
    assert ta["f_r"].tobytes() == tc["f_r"].tobytes()


def test_branch_jacobian_is_block_sparse():
    p = init_pose_encoder(seed=2)
    x = pose_vec(np.random.default_rng(4))
    base = {}
    encode_pose(x, p, trace=base)
    h = 1e-6
    for i in range(9):
        tr = {}
        xp = x.copy()
        xp[i] += h
        encode_pose(xp, p, trace=tr)
        d_t = np.abs(tr["f_t"] - base["f_t"]).max() / h
        d_r = np.abs(tr["f_r"] - base["f_r"]).max() / h
        if i < 3:
            assert d_r == 0.0 and d_t > 0
        else:
            assert d_t == 0.0 and d_r > 0


def test_pose_encoder_variants():
    x = pose_vec(np.random.default_rng(5))
    for cfg in (DPEConfig(tokens=1), DPEConfig(mode="mlp"), DPEConfig(residual=False)):
        assert encode_pose(x, init_pose_encoder(cfg), cfg).shape == (128,)
    with pytest.raises(ValueError):
        DPEConfig(mode="cnn")


def test_pose_encoder_rejects_non_finite():
    x = pose_vec(np.random.default_rng(6))
    x[0] = np.nan
    with pytest.raises(ValueError):
        encode_pose(x, init_pose_encoder())


# -- bounding boxes and cropping -------------------------------------------------


def test_union_bbox_examples():
    assert union_bbox(BBox(0, 0, 10, 10), BBox(5, 5, 20, 20)) == BBox(0, 0, 20, 20)
    assert union_bbox(BBox(3, 4, 5, 6), BBox(3, 4, 5, 6)) == BBox(3, 4, 5, 6)
    assert union_bbox(BBox(0, 0, 1, 1), BBox(10, 10, 11, 11)) == BBox(0, 0, 11, 11)
    with pytest.raises(ValueError):
        BBox(5, 0, 1, 1)


def test_crop_full_frame_is_identity():
    img = np.random.default_rng(0).random((16, 16, 4))
    np.testing.assert_allclose(crop_and_resize(img, BBox(0, 0, 16, 16), 16), img, atol=1e-12)


def test_crop_uniform_image_stays_uniform():
    img = np.full((20, 30, 4), 0.3)
    out = crop_and_resize(img, BBox(2.5, 1.2, 27.1, 18.3), 8)
    np.testing.assert_allclose(out, 0.3, atol=1e-12)


def test_crop_checkerboard_downsample():
    cb = (np.indices((8, 8)).sum(0) % 2).astype(float)
    img = np.repeat(cb[..., None], 4, axis=-1)
    out = crop_and_resize(img, BBox(0, 0, 8, 8), 4)
    np.testing.assert_allclose(out[..., :3], 0.5, atol=1e-12)
    # depth is nearest: every sample lands on an odd/odd pixel
    np.testing.assert_array_equal(out[..., 3], np.zeros((4, 4)))


def _oracle_crop(img, box, size):
    H, W = img.shape[:2]
    out = np.empty((size, size, 4))
    for i in range(size):
        for j in range(size):
            x = box.x1 + (j + 0.5) / size * box.width
            y = box.y1 + (i + 0.5) / size * box.height
            for c in range(3):
                out[i, j, c] = ndimage.map_coordinates(img[..., c], [[y - 0.5], [x - 0.5]], order=1, mode="nearest")[0]
            out[i, j, 3] = img[min(int(np.floor(y)), H - 1), min(int(np.floor(x)), W - 1), 3]
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_crop_matches_interpolation_oracle(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((12, 17, 4))
    x1, y1 = rng.uniform(0, 8, 2)
    box = BBox(x1, y1, x1 + rng.uniform(1, 9), y1 + rng.uniform(1, 4))
    np.testing.assert_allclose(crop_and_resize(img, box, 6), _oracle_crop(img, box, 6), atol=1e-12)


def test_crop_zero_area_raises():
    with pytest.raises(ValueError):
        crop_and_resize(np.zeros((8, 8, 4)), BBox(3, 3, 3, 6), 4)
    with pytest.raises(ValueError):
        crop_and_resize(np.zeros((8, 8, 4)), BBox(10, 10, 12, 12), 4)


# -- goal-conditioned image encoder ------------------------------------------------


def patches(rng, n=None, size=32):
    shape = (size, size, 4) if n is None else (n, size, size, 4)
    return rng.random(shape)


def test_image_encoder_shape_and_bitwise_determinism():
    p = init_image_encoder(seed=0)
    rng = np.random.default_rng(0)
    img = patches(rng, size=64)
    a = encode_goal_conditioned(img, img, p)
    b = encode_goal_conditioned(img, img, p)
    assert a.shape == (1200,)
    assert a.tobytes() == b.tobytes()


def test_image_encoder_zero_conv_weights_ignore_pixels():
    p = init_image_encoder(SMALL_GIE, seed=1)
    for name in ("trunk0.w", "trunk1.w"):
        p[name] = 0.0
    rng = np.random.default_rng(1)
    a = encode_goal_conditioned(patches(rng), patches(rng), p, SMALL_GIE)
    b = encode_goal_conditioned(patches(rng), patches(rng), p, SMALL_GIE)
    np.testing.assert_array_equal(a, b)


def test_positional_embeddings_matter():
    p = init_image_encoder(SMALL_GIE, seed=2)
    rng = np.random.default_rng(2)
    cur, goal = patches(rng), patches(rng)
    a = encode_goal_conditioned(cur, goal, p, SMALL_GIE)
    q = p.copy()
    q["pos"] = p["pos"][::-1]
    b = encode_goal_conditioned(cur, goal, q, SMALL_GIE)
    assert np.abs(a - b).max() > 1e-6


def test_swapping_inputs_swaps_shared_trunk_features():
    p = init_image_encoder(SMALL_GIE, seed=3)
    rng = np.random.default_rng(3)
    cur, goal = patches(rng), patches(rng)
    t1, t2 = {}, {}
    encode_goal_conditioned(cur, goal, p, SMALL_GIE, trace=t1)
    encode_goal_conditioned(goal, cur, p, SMALL_GIE, trace=t2)
    assert t1["trunk_current"].tobytes() == t2["trunk_goal"].tobytes()
    assert t1["trunk_goal"].tobytes() == t2["trunk_current"].tobytes()


def test_trunk_is_translation_equivariant_in_the_interior():
    p = init_image_encoder(SMALL_GIE, seed=4)
    rng = np.random.default_rng(4)
    cur, goal = patches(rng), patches(rng)
    t1, t2 = {}, {}
    encode_goal_conditioned(cur, goal, p, SMALL_GIE, trace=t1)
    # two stride-2 convs: a 4-pixel shift moves the trunk map by one cell
    sh = lambda a: np.roll(a, (4, 4), axis=(0, 1))  # noqa: E731
    encode_goal_conditioned(sh(cur), sh(goal), p, SMALL_GIE, trace=t2)
    a = t1["trunk_current"][0]
    b = t2["trunk_current"][0]
    M = a.shape[0]
    np.testing.assert_allclose(b[2 : M - 1, 2 : M - 1], a[1 : M - 2, 1 : M - 2], atol=1e-12)


def test_image_encoder_shape_errors():
    p = init_image_encoder(SMALL_GIE)
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        encode_goal_conditioned(patches(rng), patches(rng, size=16), p, SMALL_GIE)
    with pytest.raises(ValueError):
        encode_goal_conditioned(patches(rng, size=16), patches(rng, size=16), p, SMALL_GIE)
    with pytest.raises(ValueError):
        GoalImageEncoder(GIEConfig(patch_size=20))
