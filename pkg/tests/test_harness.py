"""Setting registry, experiment configs, and the collect/adapt/test stages."""

import json

import numpy as np
import pytest

from netadapt import harness as H
from netadapt.data import ExperienceDataset
from netadapt.envs.abr import qoe
from netadapt.errors import UsageError
from netadapt.reporting import load_results


def tiny(task, setting=None, seed=0, **train_kw):
    cfg = H.default_config(task, setting, seed)
    cfg.train.steps = train_kw.pop("steps", 2)
    cfg.train.batch_size = train_kw.pop("batch_size", 2)
    for k, v in train_kw.items():
        setattr(cfg.train, k, v)
    return cfg


# -- registry -----------------------------------------------------------------------

def test_setting_ids_per_task():
    assert "default-train" in H.setting_ids("abr")
    assert "default-test" in H.setting_ids("abr")
    assert "volatile-test" in H.setting_ids("abr")
    assert set(H.setting_ids("cjs")) >= {"default-train", "default-test",
                                         "unseen-1", "unseen-2"}
    assert H.setting_ids("vp") == ["default"]


def test_unknown_setting_error_lists_registered_ids():
    with pytest.raises(UsageError, match="default-train"):
        H.resolve_setting("abr", "nope")
    with pytest.raises(UsageError, match="unknown task"):
        H.resolve_setting("nah", "default")


def test_cjs_unseen_settings_get_strictly_harder():
    chain = [H.resolve_setting("cjs", s)
             for s in ("default-test", "unseen-1", "unseen-2")]
    for easy, hard in zip(chain, chain[1:]):
        assert hard["jobs"] > easy["jobs"]
        assert hard["executors"] < easy["executors"]


def test_train_and_test_seed_bases_disjoint():
    tr = H.resolve_setting("abr", "default-train")
    te = H.resolve_setting("abr", "default-test")
    n = 20  # more episodes than any test run uses
    assert tr["seed_base"] != te["seed_base"]
    assert abs(tr["seed_base"] - te["seed_base"]) > n


def test_make_abr_env_deterministic_per_index():
    setting = H.resolve_setting("abr", "default-test")
    a = H.make_abr_env(setting, 3)
    b = H.make_abr_env(setting, 3)
    c = H.make_abr_env(setting, 4)
    assert np.array_equal(a.trace.mbps, b.trace.mbps)
    assert np.array_equal(a.manifest.chunk_sizes, b.manifest.chunk_sizes)
    assert not np.array_equal(a.trace.mbps, c.trace.mbps)


def test_abr_ladder_fixed_across_episodes():
    setting = H.resolve_setting("abr", "default-test")
    ladder = H.abr_ladder(setting)
    assert ladder == H.abr_ladder(setting)
    assert list(H.make_abr_env(setting, 7).manifest.ladder_kbps) == ladder


def test_make_cjs_env_respects_setting_size():
    setting = H.resolve_setting("cjs", "unseen-1")
    env = H.make_cjs_env(setting, 0)
    assert len(env.jobs) == setting["jobs"]
    assert env.executor_total == setting["executors"]


def test_vp_splits_share_no_windows_and_match_setting():
    setting = H.resolve_setting("vp", "default")
    train, test = H.build_vp_splits(setting)
    assert len(train) > 0 and len(test) > 0
    assert train.manifest["hw_s"] == setting["hw_s"]
    assert train.manifest["horizon"] == int(round(
        setting["pw_s"] * setting["rate_hz"]))
    # val traces are held back entirely
    per_trace = int(setting["duration_s"] * setting["rate_hz"]) - 30 + 1
    assert len(train) + len(test) < setting["traces"] * per_trace


# -- config -------------------------------------------------------------------------

def test_experiment_config_digest_and_roundtrip():
    cfg = H.default_config("abr", "default-train", seed=5)
    assert cfg.digest() == H.ExperimentConfig.from_dict(cfg.to_dict()).digest()
    other = H.default_config("abr", "default-train", seed=6)
    assert cfg.digest() != other.digest()


def test_from_dict_layers_partial_overrides():
    cfg = H.ExperimentConfig.from_dict({
        "task": "cjs", "seed": 2,
        "backbone": {"model_dim": 32, "num_heads": 1},
        "train": {"steps": 7},
    })
    assert cfg.setting == "default-train"
    assert cfg.backbone.model_dim == 32
    assert cfg.backbone.max_context == 96     # default kept
    assert cfg.train.steps == 7
    assert cfg.train.seed == 2                # follows the experiment seed


def test_config_rejects_unknown_task_and_setting():
    with pytest.raises(UsageError):
        H.ExperimentConfig.from_dict({"task": "nope"})
    with pytest.raises(UsageError):
        H.default_config("abr", "bogus")


def test_model_for_matches_setting():
    cfg = tiny("cjs")
    model = H.model_for(cfg)
    setting = H.resolve_setting("cjs", cfg.setting)
    assert model.spec.extra["executor_total"] == setting["executors"]
    vp = H.model_for(tiny("vp"))
    assert vp.spec.extra["horizon"] == 20
    assert vp.spec.extra["history_len"] == 10


# -- collect ------------------------------------------------------------------------

def test_collect_stamps_provenance(tmp_path):
    cfg = tiny("abr", seed=1)
    ds = H.run_collect(cfg, "bba", out_dir=tmp_path / "ds", episodes=2)
    assert len(ds) == 2
    assert ds.manifest["setting"] == "default-train"
    assert ds.manifest["config_digest"] == cfg.digest()
    reloaded = ExperienceDataset.load(tmp_path / "ds")
    assert reloaded.digest() == ds.digest()


def test_collect_refuses_supervised_task():
    with pytest.raises(UsageError, match="supervised"):
        H.run_collect(tiny("vp"), "hold")


def test_collect_cjs_records_level_indices(tmp_path):
    cfg = tiny("cjs", seed=1)
    ds = H.run_collect(cfg, "fifo", episodes=1)
    levels = ds.manifest["executor_levels"]
    for traj in ds.trajectories:
        for act in traj.actions:
            assert 0 <= act["executors"] < len(levels)


# -- adapt --------------------------------------------------------------------------

def test_adapt_requires_dataset_for_rl():
    with pytest.raises(UsageError, match="collect"):
        H.run_adapt(tiny("abr"), dataset_path=None)


def test_adapt_rejects_task_mismatch(tmp_path):
    H.run_collect(tiny("abr"), "bba", out_dir=tmp_path / "ds", episodes=1)
    with pytest.raises(UsageError, match="mismatch|holds"):
        H.run_adapt(tiny("cjs"), dataset_path=tmp_path / "ds")


def test_adapt_stamps_experiment_digest(tmp_path):
    cfg = tiny("abr", seed=4)
    H.run_collect(cfg, "bba", out_dir=tmp_path / "ds", episodes=2)
    _model, result = H.run_adapt(cfg, dataset_path=tmp_path / "ds",
                                 checkpoint_dir=tmp_path / "ckpt")
    assert result.steps == cfg.train.steps
    meta = json.loads((tmp_path / "ckpt" / "config.json").read_text())
    assert meta["experiment"]["digest"] == cfg.digest()


def test_adapt_vp_builds_windows_without_dataset(tmp_path):
    cfg = tiny("vp", steps=2, batch_size=4)
    _model, result = H.run_adapt(cfg, checkpoint_dir=tmp_path / "ckpt")
    assert result.steps == 2
    assert (tmp_path / "ckpt" / "weights.npz").exists()


# -- test ---------------------------------------------------------------------------

def test_run_test_needs_exactly_one_method(tmp_path):
    cfg = tiny("abr", "default-test")
    with pytest.raises(UsageError):
        H.run_test(cfg)
    with pytest.raises(UsageError):
        H.run_test(cfg, checkpoint=tmp_path, policy="bba")


def test_run_test_abr_policy_rows(tmp_path):
    cfg = tiny("abr", "default-test", seed=0)
    rep = H.run_test(cfg, out_path=tmp_path / "r.jsonl", policy="bba",
                     episodes=3)
    rows = load_results(tmp_path / "r.jsonl")
    assert rep.metric == "qoe" and rep.method == "bba"
    assert len(rows) == 3
    for row in rows:
        assert row["config_digest"] == cfg.digest()
        assert row["setting"] == "default-test"
        # per-episode value decomposes into the three factor means
        assert row["value"] == pytest.approx(
            row["bitrate_mbps"] - 4.3 * row["rebuffer_s"]
            - row["change_mbps"], abs=1e-9)


def test_run_test_replays_collection_policy_scores(tmp_path):
    """Evaluating BBA on the train setting must reproduce collection returns."""
    cfg = tiny("abr", "default-train")
    ds = H.run_collect(cfg, "bba", episodes=2)
    rep = H.run_test(cfg, policy="bba", episodes=2)
    for traj, value in zip(ds.trajectories, rep.values):
        per_chunk = sum(traj.rewards) / len(traj.rewards)
        assert value == pytest.approx(per_chunk, abs=1e-9)


def test_run_test_deterministic_digest():
    cfg = tiny("cjs", "default-test")
    a = H.run_test(cfg, policy="fifo", episodes=2)
    b = H.run_test(cfg, policy="fifo", episodes=2)
    assert a.digest() == b.digest()
    assert a.extras["jct_mean_all_jobs"] > 0


def test_run_test_checkpoint_roundtrip(tmp_path):
    cfg = tiny("abr", seed=2)
    H.run_collect(cfg, "bba", out_dir=tmp_path / "ds", episodes=2)
    H.run_adapt(cfg, dataset_path=tmp_path / "ds",
                checkpoint_dir=tmp_path / "ckpt")
    test_cfg = tiny("abr", "default-test", seed=2)
    rep = H.run_test(test_cfg, checkpoint=tmp_path / "ckpt", episodes=2)
    assert rep.method == "adapted"
    assert all(np.isfinite(rep.values))


def test_run_test_checkpoint_task_mismatch(tmp_path):
    cfg = tiny("abr", seed=2)
    H.run_collect(cfg, "bba", out_dir=tmp_path / "ds", episodes=1)
    H.run_adapt(cfg, dataset_path=tmp_path / "ds",
                checkpoint_dir=tmp_path / "ckpt")
    with pytest.raises(UsageError, match="abr"):
        H.run_test(tiny("vp"), checkpoint=tmp_path / "ckpt")


def test_vp_zero_head_model_equals_hold_baseline(tmp_path):
    """With the offset head zeroed, checkpoint inference is the hold predictor."""
    import torch
    cfg = tiny("vp")
    model = H.model_for(cfg)
    with torch.no_grad():
        model.head.weight.zero_()
    model.save(tmp_path / "ckpt")
    rep_model = H.run_test(cfg, checkpoint=tmp_path / "ckpt")
    rep_hold = H.run_test(cfg, policy="hold")
    assert len(rep_model.values) == len(rep_hold.values)
    assert rep_model.values == pytest.approx(rep_hold.values, abs=1e-3)


def test_vp_unknown_predictor_name():
    with pytest.raises(UsageError, match="hold"):
        H.run_test(tiny("vp"), policy="bogus")
