import json
from dataclasses import replace

import numpy as np
import pytest

from poseinsert.diffusion import DenoiserConfig
from poseinsert.harness import cli
from poseinsert.harness.collect import collect, load_dataset
from poseinsert.harness.dataset import (
    Normalizer,
    build_batch,
    chunk_indices,
    fit_normalizer,
    read_canonical_csv,
    relative_vectors,
)
from poseinsert.harness.episode_io import (
    EpisodeFormatError,
    decode_episode,
    encode_episode,
    file_hash,
    read_manifest,
    verify_manifest,
)
from poseinsert.harness.evaluation import (
    calibrated,
    evaluate,
    parse_report,
    sample_ood_target,
    write_expert_checkpoint,
)
from poseinsert.harness.export import RunError, export_traces
from poseinsert.harness.training import train_cmd
from poseinsert.policy import PolicyConfig, TrainConfig
from poseinsert.pose_encoder import DPEConfig
from poseinsert.rgbd_encoder import GIEConfig
from poseinsert.se3 import Pose
from poseinsert.sim import EASY, HARD, reset, scripted_expert

TINY = PolicyConfig(
    variant="posedp-dpe",
    horizon=8,
    exec_steps=4,
    K=20,
    infer_steps=4,
    pose=DPEConfig(hidden=16, branch_dim=8, feature_dim=16),
    image=GIEConfig(trunk_channels=(4, 4), fused_channels=4, token_dim=8, d_img=16),
    denoiser=DenoiserConfig(channels=16, n_blocks=1, k_embed=8),
)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    return collect(EASY, 2, d, seed=3)


@pytest.fixture(scope="module")
def tiny_ckpt(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "tiny"
    return train_cmd(dataset, "posedp-dpe", out, TINY, TrainConfig(epochs=2, batch_size=64))


# -- episode file ----------------------------------------------------------------


@pytest.mark.parametrize("patches", [True, False])
def test_episode_round_trip(patches):
    ep = scripted_expert(reset(EASY, 1), EASY.with_noise(0.1), "direct", 1, with_patches=patches)
    back = decode_episode(encode_episode(ep))
    for name in ("t_c_s", "t_c_t", "bbox", "true_rel", "contact"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ep, name))
    if patches:
        np.testing.assert_array_equal(back.patches, ep.patches)
    else:
        assert back.patches is None
    assert back.meta["style"] == "direct" and back.meta["spec_hash"] == ep.meta["spec_hash"]


def test_episode_format_errors():
    ep = scripted_expert(reset(EASY, 1), EASY, "direct", 1, with_patches=False)
    data = encode_episode(ep)
    with pytest.raises(EpisodeFormatError):
        decode_episode(b"NOT-AN-EPISODE\n" + data[20:])
    with pytest.raises(EpisodeFormatError):
        decode_episode(data[:-8])
    with pytest.raises(EpisodeFormatError):
        decode_episode(data.replace(b"version 1", b"version 9", 1))


# -- collect ---------------------------------------------------------------------------


def test_manifest_lists_every_episode_with_hashes(dataset):
    header, entries = read_manifest(dataset)
    eps = [n for _, n in entries if n.endswith(".ep")]
    assert eps == ["episode_000.ep", "episode_001.ep"]
    assert header["episodes"] == "2"
    for h, n in entries:
        assert file_hash(dataset / n) == h
    assert verify_manifest(dataset) == []


def test_tampering_is_detected(dataset, tmp_path):
    import shutil

    d = tmp_path / "copy"
    shutil.copytree(dataset, d)
    (d / "canonical_001.csv").write_text("frame\n")
    assert verify_manifest(d) == ["canonical_001.csv"]
    with pytest.raises(ValueError):
        load_dataset(d)


def test_single_noiseless_direct_demo_descends_monotonically(tmp_path):
    d = collect(EASY, 1, tmp_path / "one", seed=0, patches=False)
    v = read_canonical_csv(d / "canonical_000.csv")
    assert np.all(np.diff(v[:, 2]) < 0)
    assert v[-1, 2] == pytest.approx(-EASY.hole_depth)
    _, eps, _ = load_dataset(d)
    np.testing.assert_allclose(v, relative_vectors(eps[0]), atol=1e-12)


def test_fixed_target_is_shared(tmp_path):
    d = collect(EASY, 3, tmp_path / "fixed", seed=0, fix_target=True, patches=False)
    _, eps, header = load_dataset(d)
    assert header["fix_target"] == "1"
    for e in eps[1:]:
        np.testing.assert_allclose(e.t_c_t[0], eps[0].t_c_t[0], atol=1e-12)
    d2 = collect(EASY, 2, tmp_path / "free", seed=0, patches=False)
    _, eps2, _ = load_dataset(d2)
    assert np.abs(eps2[0].t_c_t[0] - eps2[1].t_c_t[0]).max() > 1e-3


def test_collect_needs_a_demo(tmp_path):
    with pytest.raises(ValueError):
        collect(EASY, 0, tmp_path / "none")


# -- dataset ----------------------------------------------------------------------------


def test_normalizer_round_trip_and_range():
    rng = np.random.default_rng(0)
    t = rng.uniform(-5, 20, (50, 3))
    n = Normalizer.fit(t)
    v = np.concatenate([t, rng.standard_normal((50, 6))], axis=1)
    e = n.encode(v)
    assert e[:, :3].min() == pytest.approx(-1) and e[:, :3].max() == pytest.approx(1)
    np.testing.assert_array_equal(e[:, 3:], v[:, 3:])
    np.testing.assert_allclose(n.decode(e), v, atol=1e-12)
    assert Normalizer.from_json(n.to_json()) == n


def test_chunks_repeat_the_final_frame():
    idx = chunk_indices(5, 3)
    np.testing.assert_array_equal(idx[0], [1, 2, 3])
    np.testing.assert_array_equal(idx[3], [4, 4, 4])
    np.testing.assert_array_equal(idx[4], [4, 4, 4])


def test_build_batch_shapes(dataset):
    _, eps, _ = load_dataset(dataset)
    norm = fit_normalizer(eps)
    b = build_batch(eps, 8, norm, patches=True)
    n = sum(len(e) for e in eps)
    assert b.obs.shape == (n, 9) and b.actions.shape == (n, 8, 9)
    assert b.current.shape == (n, 64, 64, 4) and b.goals.shape == (1, 64, 64, 4)
    assert np.all(b.goal_index == 0)
    be = build_batch(eps, 8, norm, patches=True, goal_mode="episode")
    assert be.goals.shape[0] == 2 and set(be.goal_index) == {0, 1}


# -- train ---------------------------------------------------------------------------------


def test_rpdp_needs_patches(tmp_path):
    d = collect(EASY, 1, tmp_path / "nopatch", patches=False)
    with pytest.raises(ValueError, match="patches"):
        train_cmd(d, "rpdp-prgf", tmp_path / "x", TINY, TrainConfig(epochs=1))


def test_identical_seeds_give_identical_checkpoints(dataset, tmp_path):
    t = TrainConfig(epochs=2, batch_size=64, seed=5)
    a = train_cmd(dataset, "posedp-dpe", tmp_path / "a", TINY, t)
    b = train_cmd(dataset, "posedp-dpe", tmp_path / "b", TINY, t)
    assert a.read_bytes() == b.read_bytes()


def test_rpdp_training_writes_goal_sidecar(dataset, tmp_path):
    out = train_cmd(dataset, "rpdp-prgf", tmp_path / "r", TINY, TrainConfig(epochs=1, batch_size=64))
    goal = np.load(tmp_path / "r.goal.npy")
    assert goal.shape == (64, 64, 4)
    assert out.exists()


# -- evaluate -------------------------------------------------------------------------------


def test_expert_replay_succeeds_everywhere(tmp_path):
    ck = write_expert_checkpoint(tmp_path / "expert")
    for spec in (EASY, HARD):
        rep = evaluate(ck, spec, 4, seed=1)
        assert rep.successes == 4
        rep = evaluate(ck, spec, 2, in_dist=False, seed=1)
        assert rep.successes == 2


def test_random_weights_fail_on_hard(dataset, tmp_path):
    # untrained (zero epochs of learning: lr 0) policy on the tight task
    ck = train_cmd(dataset, "posedp-dpe", tmp_path / "rand", TINY, TrainConfig(epochs=1, lr=0.0))
    rep = evaluate(ck, HARD, 3, seed=0)
    assert rep.successes == 0


def test_report_arithmetic_and_parse(tiny_ckpt, tmp_path):
    rep = evaluate(tiny_ckpt, EASY, 3, seed=2, out_dir=tmp_path / "run")
    text = (tmp_path / "run" / "report.txt").read_text()
    parsed = parse_report(text)
    trials = parsed["trials_list"]
    assert len(trials) == 3 == int(parsed["trials"])
    succ = sum(t[2] for t in trials)
    assert succ == int(parsed["successes"]) == rep.successes
    assert parsed["success_rate"] == f"{succ}/3 = {100 * succ / 3:.4f}%"
    lines = (tmp_path / "run" / "trials.jsonl").read_text().splitlines()
    assert [json.loads(l)["success"] for l in lines] == [t[2] for t in trials]


def test_evaluation_is_bitwise_reproducible(tiny_ckpt, tmp_path):
    evaluate(tiny_ckpt, EASY.with_noise(0.05), 2, seed=4, out_dir=tmp_path / "a")
    evaluate(tiny_ckpt, EASY.with_noise(0.05), 2, seed=4, out_dir=tmp_path / "b")
    for f in ("report.txt", "trials.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_ood_targets_lie_in_the_ring():
    rng = np.random.default_rng(0)
    R = EASY.region_half
    for _ in range(500):
        x, y, yaw = sample_ood_target(EASY, rng)
        m = max(abs(x - EASY.region_x), abs(y - EASY.region_y))
        assert 1.5 * R <= m <= 2 * R
        assert abs(yaw) <= EASY.region_yaw


def test_calibration_error_shifts_translation_only():
    p = Pose(np.eye(3), np.array([1.0, 2.0, 3.0]), ("b", "c"))
    q = calibrated(p, (2.0, 0.0, 0.0))
    np.testing.assert_array_equal(q.translation, [3.0, 2.0, 3.0])
    np.testing.assert_array_equal(q.rotation, p.rotation)
    assert calibrated(p, None) is p


# -- export ----------------------------------------------------------------------------------


def test_export_rows_match_steps_and_are_stable(tiny_ckpt, tmp_path):
    run = tmp_path / "run"
    rep = evaluate(tiny_ckpt, EASY, 2, seed=6, out_dir=run)
    a = export_traces(run, tmp_path / "e1")
    b = export_traces(run, tmp_path / "e2")
    for t in rep.trials:
        rows = (tmp_path / "e1" / f"trajectory_{t.index:03d}.csv").read_text().splitlines()
        assert len(rows) - 1 == t.steps
    assert [p.name for p in a] == [p.name for p in b]
    for p, q in zip(a, b):
        assert p.read_bytes() == q.read_bytes()
    assert (tmp_path / "e1" / "trajectories.svg").read_text().startswith("<?xml")


def test_export_of_gated_policy_writes_gate_traces(dataset, tmp_path):
    ck = train_cmd(dataset, "rpdp-prgf", tmp_path / "g", TINY, TrainConfig(epochs=1, batch_size=64))
    evaluate(ck, EASY, 1, seed=0, out_dir=tmp_path / "run", policy=None)
    paths = export_traces(tmp_path / "run", tmp_path / "ex")
    names = {p.name for p in paths}
    assert "gates_000.csv" in names and "gates.svg" in names
    rows = np.loadtxt(tmp_path / "ex" / "gates_000.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.all((rows[:, 1:4] >= 0) & (rows[:, 1:4] <= 1))


def test_export_errors(tmp_path):
    with pytest.raises(RunError):
        export_traces(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    (tmp_path / "empty" / "trials.jsonl").write_text("")
    with pytest.raises(RunError):
        export_traces(tmp_path / "empty")


# -- command line -----------------------------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 1\nbatch-size = 64\ntask.region_half = 2.0\n")
    assert cli.main(["collect", "--demos", "1", "--no-patches", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 0
    _, _, header = load_dataset(tmp_path / "d")
    assert header["episodes"] == "1"
    from poseinsert.sim import TaskSpec

    assert TaskSpec.load(tmp_path / "d" / "task.cfg").region_half == 2.0
    assert cli.main(["train", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "m"), "--config", str(cfg)]) == 0
    log = (tmp_path / "m.log.csv").read_text().splitlines()
    assert len(log) == 2  # header + one epoch from the config file
    assert cli.main(["rollout", "--expert", "direct", "--index", "2", "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["export", "--run", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "export" / "trajectory_002.csv").exists()
    out = capsys.readouterr().out
    assert "success_rate = 1/1 = 100.0000%" in out


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = red\n")
    assert cli.main(["collect", "--out", str(tmp_path / "x"), "--config", str(bad)]) == 2
    assert cli.main(["collect", "--out", str(tmp_path / "x"), "--task", "medium"]) == 2
    assert cli.main(["export", "--run", str(tmp_path / "nothing")]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_seed_controls_collection(tmp_path):
    for s, name in ((1, "a"), (1, "b"), (2, "c")):
        cli.main(["collect", "--demos", "1", "--no-patches", "--seed", str(s), "--out", str(tmp_path / name)])
    a, b, c = ((tmp_path / n / "episode_000.ep").read_bytes() for n in "abc")
    assert a == b and a != c
