import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poseinsert.se3 import (
    FrameMismatchError,
    Pose,
    compose,
    decode_action,
    encode_action,
    end_effector_trajectory,
    inverse,
    orthonormality_error,
    r6d_to_rot,
    random_pose,
    random_rotation,
    relative_pose,
    rot_to_r6d,
    rot_z,
)

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
seeds = st.integers(0, 2**32 - 1)


def P(R, t, frame=("c", "s")):
    return Pose(np.asarray(R, float), np.asarray(t, float), frame)


def H(p: Pose):
    return p.matrix


# -- compose / inverse examples ------------------------------------------


def test_identity_compose():
    T = random_pose(np.random.default_rng(0), ("s", "e"))
    out = compose(Pose.identity(("s", "s")), T)
    assert out.allclose(T, 0.0)


def test_pure_translation_compose():
    out = compose(P(np.eye(3), [1, 0, 0], ("c", "t")), P(np.eye(3), [2, 0, 0], ("t", "s")))
    np.testing.assert_array_equal(out.translation, [3, 0, 0])
    np.testing.assert_array_equal(out.rotation, np.eye(3))
    assert out.frame == ("c", "s")


def test_rotated_compose_matches_matrix_oracle():
    a = P(RZ90, [1, 0, 0], ("c", "t"))
    b = P(np.eye(3), [1, 0, 0], ("t", "s"))
    out = compose(a, b)
    np.testing.assert_allclose(out.matrix, H(a) @ H(b), atol=1e-12)
    np.testing.assert_allclose(out.translation, [1, 1, 0], atol=1e-12)
    np.testing.assert_allclose(out.rotation, RZ90, atol=1e-12)


def test_compose_frame_mismatch():
    with pytest.raises(FrameMismatchError):
        compose(Pose.identity(("c", "t")), Pose.identity(("s", "e")))


def test_inverse_examples():
    assert inverse(Pose.identity(("c", "s"))).allclose(Pose.identity(("s", "c")), 0.0)
    inv = inverse(P(np.eye(3), [1, 2, 3], ("c", "s")))
    np.testing.assert_array_equal(inv.translation, [-1, -2, -3])
    assert inv.frame == ("s", "c")
    inv = inverse(P(RZ90, [1, 0, 0]))
    np.testing.assert_allclose(inv.matrix, np.linalg.inv(H(P(RZ90, [1, 0, 0]))), atol=1e-12)
    np.testing.assert_allclose(inv.rotation, RZ90.T, atol=1e-12)
    np.testing.assert_allclose(inv.translation, [0, 1, 0], atol=1e-12)


def test_compose_reorthonormalizes_drift():
    R = RZ90 + 1e-9
    out = compose(P(R, [0, 0, 0], ("c", "t")), P(np.eye(3), [0, 0, 0], ("t", "s")))
    assert orthonormality_error(out.rotation) < 1e-12
    assert np.linalg.det(out.rotation) > 0


# -- relative pose --------------------------------------------------------


def test_relative_pose_examples():
    rng = np.random.default_rng(1)
    t_c_s = random_pose(rng, ("c", "s"))
    assert relative_pose(Pose.identity(("c", "t")), t_c_s).retag(("c", "s")).allclose(t_c_s, 1e-12)
    same = relative_pose(t_c_s.retag(("c", "t")), t_c_s)
    assert same.allclose(Pose.identity(("t", "s")), 1e-12)
    out = relative_pose(P(np.eye(3), [1, 0, 0], ("c", "t")), P(np.eye(3), [3, 0, 0], ("c", "s")))
    np.testing.assert_array_equal(out.translation, [2, 0, 0])
    assert out.frame == ("t", "s")


def test_relative_pose_needs_shared_parent():
    with pytest.raises(FrameMismatchError):
        relative_pose(Pose.identity(("b", "t")), Pose.identity(("c", "s")))


# -- R6D ------------------------------------------------------------------


def test_r6d_examples():
    np.testing.assert_array_equal(rot_to_r6d(np.eye(3)), [1, 0, 0, 0, 1, 0])
    np.testing.assert_array_equal(rot_to_r6d(RZ90), [0, 1, 0, -1, 0, 0])
    np.testing.assert_array_equal(r6d_to_rot([1, 0, 0, 0, 1, 0]), np.eye(3))
    np.testing.assert_allclose(r6d_to_rot([1, 0, 0, 1, 1, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(r6d_to_rot([2, 0, 0, 0, 3, 0]), np.eye(3), atol=1e-15)


def test_r6d_rejects_bad_input():
    with pytest.raises(ValueError):
        rot_to_r6d(np.diag([1.0, 1.0, 1.01]))
    with pytest.raises(ValueError):
        rot_to_r6d(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        r6d_to_rot([1, 0, 0, 2, 0, 0])
    with pytest.raises(ValueError):
        r6d_to_rot([1, 0, 0, 1, 1e-7, 0])
    with pytest.raises(ValueError):
        r6d_to_rot([0, 0, 0, 0, 1, 0])


def test_r6d_round_trip_1000():
    rng = np.random.default_rng(2)
    Rs = np.stack([random_rotation(rng) for _ in range(1000)])
    back = r6d_to_rot(rot_to_r6d(Rs))
    assert np.max(np.abs(back - Rs)) < 1e-9


@given(seeds)
def test_r6d_output_is_rotation(seed):
    r = np.random.default_rng(seed).standard_normal(6)
    R = r6d_to_rot(r)
    assert orthonormality_error(R) < 1e-9
    assert abs(np.linalg.det(R) - 1.0) < 1e-9


@given(seeds)
def test_r6d_lipschitz(seed):
    rng = np.random.default_rng(seed)
    r = rot_to_r6d(random_rotation(rng))
    d = rng.standard_normal(6)
    d *= 1e-6 / np.linalg.norm(d)
    assert np.linalg.norm(r6d_to_rot(r + d) - r6d_to_rot(r)) <= 1e-4


@given(seeds)
def test_action_vec_idempotent(seed):
    rng = np.random.default_rng(seed)
    v = np.concatenate([rng.uniform(-1, 1, 3), rng.standard_normal(6)])
    once = encode_action(decode_action(v))
    np.testing.assert_allclose(encode_action(decode_action(once)), once, atol=1e-12)


# -- group laws, canonicalization -------------------------------------------


@settings(max_examples=200)
@given(seeds)
def test_associativity_and_inverse(seed):
    rng = np.random.default_rng(seed)
    a, b, c = random_pose(rng, ("b", "c")), random_pose(rng, ("c", "t")), random_pose(rng, ("t", "s"))
    assert compose(compose(a, b), c).allclose(compose(a, compose(b, c)), 1e-9)
    assert compose(inverse(a), a).allclose(Pose.identity(("c", "c")), 1e-9)
    assert compose(a, inverse(a)).allclose(Pose.identity(("b", "b")), 1e-9)


@settings(max_examples=200)
@given(seeds)
def test_canonicalization_invariance(seed):
    rng = np.random.default_rng(seed)
    t_c_t, t_c_s = random_pose(rng, ("c", "t")), random_pose(rng, ("c", "s"))
    G = random_pose(rng, ("c", "c"))
    moved = relative_pose(compose(G, t_c_t), compose(G, t_c_s))
    assert moved.allclose(relative_pose(t_c_t, t_c_s), 1e-9)


def test_canonicalization_translation_case_is_exact():
    rng = np.random.default_rng(3)
    for _ in range(100):
        a = P(np.eye(3), rng.integers(-100, 100, 3), ("c", "t"))
        b = P(np.eye(3), rng.integers(-100, 100, 3), ("c", "s"))
        G = P(np.eye(3), rng.integers(-100, 100, 3), ("c", "c"))
        np.testing.assert_array_equal(
            relative_pose(compose(G, a), compose(G, b)).translation, relative_pose(a, b).translation
        )


# -- end-effector chain ------------------------------------------------------


def _chain_inputs(rng):
    return (
        random_pose(rng, ("b", "e")),
        random_pose(rng, ("b", "c")),
        random_pose(rng, ("c", "s")),
        random_pose(rng, ("c", "t")),
    )


def test_chain_identity():
    I = Pose.identity
    out = end_effector_trajectory(I(("b", "e")), I(("b", "c")), I(("c", "s")), I(("c", "t")), [I(("t", "s"))] * 3, 3)
    assert all(o.allclose(I(("b", "e")), 0.0) for o in out)


def test_chain_no_motion_step_returns_current_end_effector():
    rng = np.random.default_rng(4)
    t_b_e, t_b_c, t_c_s, t_c_t = _chain_inputs(rng)
    cur = relative_pose(t_c_t, t_c_s)
    out = end_effector_trajectory(t_b_e, t_b_c, t_c_s, t_c_t, [cur])
    assert out[0].allclose(t_b_e, 1e-9)


def test_chain_matches_matrix_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        t_b_e, t_b_c, t_c_s, t_c_t = _chain_inputs(rng)
        pred = [random_pose(rng, ("t", "s")) for _ in range(4)]
        out = end_effector_trajectory(t_b_e, t_b_c, t_c_s, t_c_t, pred, 4)
        t_s_e = np.linalg.inv(H(t_b_c) @ H(t_c_s)) @ H(t_b_e)
        for o, p in zip(out, pred):
            np.testing.assert_allclose(o.matrix, H(t_b_c) @ H(t_c_t) @ H(p) @ t_s_e, atol=1e-9)
        assert all(o.frame == ("b", "e") for o in out)


def test_chain_errors():
    I = Pose.identity
    with pytest.raises(FrameMismatchError):
        end_effector_trajectory(I(("b", "e")), I(("b", "c")), I(("c", "s")), I(("c", "t")), [I(("s", "t"))])
    with pytest.raises(ValueError):
        end_effector_trajectory(I(("b", "e")), I(("b", "c")), I(("c", "s")), I(("c", "t")), [I(("t", "s"))], 2)


def test_chain_cancels_calibration_error_at_step_zero():
    rng = np.random.default_rng(6)
    t_b_e, t_b_c, t_c_s, t_c_t = _chain_inputs(rng)
    cur = relative_pose(t_c_t, t_c_s)
    for _ in range(20):
        bad = compose(random_pose(rng, ("b", "b"), scale=5.0), t_b_c)
        out = end_effector_trajectory(t_b_e, bad, t_c_s, t_c_t, [cur])
        assert out[0].allclose(t_b_e, 1e-9)


def test_rot_z_is_rotation():
    assert orthonormality_error(rot_z(0.3)) < 1e-15
