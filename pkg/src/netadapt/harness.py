"""Experiment orchestration: named settings, collection, adaptation, evaluation.

A *setting* is a registered recipe for building environments (or viewport
traces): which synthetic generator kinds to use, how large the workload is,
and a seed base so every episode index maps to one reproducible instance.
Training settings and test settings use disjoint seed bases, so held-out
evaluation never replays a training environment. Methods under comparison
share the same test setting and therefore see byte-identical environments.

`ExperimentConfig` bundles everything a run needs (task, setting, backbone,
training hyperparameters, mandatory seed) and hashes to a digest that is
stamped into every artifact: dataset manifests, checkpoints, result rows.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .adaptation import (AdaptResult, adapt, collect_abr_experience,
                         collect_cjs_experience, default_target_return,
                         load_checkpoint, run_abr_with_model,
                         run_cjs_with_model)
from .backbone import BackboneConfig
from .baselines import (VP_PREDICTORS, make_abr_policy, make_cjs_policy,
                        make_vp_predictor)
from .data import ExperienceDataset, SLDataset, TrainConfig, digest_json
from .envs.abr import AbrEnv, qoe, synth_trace, synth_video
from .envs.cjs import ClusterEnv, executor_level_ladder, synth_workload
from .errors import UsageError
from .reporting import MetricsReport, percentile, write_results
from .tasks import (TaskModel, abr_task_spec, build_model, cjs_task_spec,
                    vp_task_spec)
from .viewport import make_dataset, split_traces, synth_viewports

TASKS = ("abr", "cjs", "vp")

# -- setting registry ---------------------------------------------------------------

# ABR: one bandwidth trace + one video manifest per episode index.
_ABR_SETTINGS = {
    "default-train": {"trace_kind": "default", "video_kind": "default",
                      "seed_base": 11_000},
    "default-test": {"trace_kind": "default", "video_kind": "default",
                     "seed_base": 21_000},
    "volatile-test": {"trace_kind": "volatile", "video_kind": "default",
                      "seed_base": 22_000},
    "large-video-test": {"trace_kind": "default", "video_kind": "large",
                         "seed_base": 23_000},
}
_ABR_COMMON = {"chunk_count": 48, "trace_duration_s": 500.0, "history": 8}

# CJS: a fresh workload per episode index. The unseen settings get strictly
# harder left to right: more jobs contending for fewer executors.
_CJS_SETTINGS = {
    "default-train": {"jobs": 20, "executors": 50, "seed_base": 31_000},
    "default-test": {"jobs": 20, "executors": 50, "seed_base": 41_000},
    "unseen-1": {"jobs": 30, "executors": 40, "seed_base": 42_000},
    "unseen-2": {"jobs": 45, "executors": 30, "seed_base": 43_000},
}

# VP: a pool of motion traces split train/val/test at the trace level.
_VP_SETTINGS = {
    "default": {"hw_s": 2.0, "pw_s": 4.0, "rate_hz": 5.0, "traces": 40,
                "duration_s": 60.0, "seed_base": 51_000,
                "fractions": (0.7, 0.15, 0.15)},
}

_REGISTRY = {"abr": _ABR_SETTINGS, "cjs": _CJS_SETTINGS, "vp": _VP_SETTINGS}


def setting_ids(task: str) -> list:
    if task not in _REGISTRY:
        raise UsageError(f"unknown task {task!r}; options: {', '.join(TASKS)}")
    return sorted(_REGISTRY[task])


def resolve_setting(task: str, setting: str) -> dict:
    """Resolved parameter dict for a registered setting id."""
    table = _REGISTRY.get(task)
    if table is None:
        raise UsageError(f"unknown task {task!r}; options: {', '.join(TASKS)}")
    if setting not in table:
        raise UsageError(
            f"unknown {task} setting {setting!r}; registered settings: "
            f"{', '.join(sorted(table))}")
    out = dict(_ABR_COMMON) if task == "abr" else {}
    out.update(table[setting])
    return out


def default_setting(task: str) -> str:
    return "default" if task == "vp" else "default-train"


# -- environment builders -----------------------------------------------------------

def make_abr_env(setting: dict, index: int) -> AbrEnv:
    """Episode `index` of an ABR setting; same index -> identical episode."""
    rng = np.random.default_rng(setting["seed_base"] + index)
    video = synth_video(setting["video_kind"], rng,
                        chunk_count=setting["chunk_count"])
    trace = synth_trace(setting["trace_kind"], setting["trace_duration_s"], rng)
    return AbrEnv(video, trace, history=setting["history"])


def abr_ladder(setting: dict) -> list:
    """Bitrate ladder of a setting's video kind (fixed across episodes)."""
    return list(synth_video(setting["video_kind"],
                            np.random.default_rng(0)).ladder_kbps)


def make_cjs_env(setting: dict, index: int) -> ClusterEnv:
    rng = np.random.default_rng(setting["seed_base"] + index)
    jobs, total = synth_workload(setting["jobs"], setting["executors"], rng)
    return ClusterEnv(jobs, total)


def vp_traces(setting: dict, include_images: bool = False) -> list:
    return [synth_viewports(setting["duration_s"],
                            np.random.default_rng(setting["seed_base"] + k),
                            rate_hz=setting["rate_hz"], viewer_id=k,
                            with_images=include_images)
            for k in range(setting["traces"])]


def build_vp_splits(setting: dict,
                    include_images: bool = False) -> tuple[SLDataset, SLDataset]:
    """(train, test) window datasets with no trace shared between them."""
    traces = vp_traces(setting, include_images)
    train, _val, test = split_traces(
        traces, np.random.default_rng(setting["seed_base"]),
        fractions=setting["fractions"])
    kw = dict(hw_s=setting["hw_s"], pw_s=setting["pw_s"],
              rate_hz=setting["rate_hz"], include_images=include_images)
    return make_dataset(train, **kw), make_dataset(test, **kw)


# -- experiment configuration -------------------------------------------------------

_DEFAULT_BACKBONE = {
    "abr": dict(num_layers=2, model_dim=64, num_heads=2, max_context=64,
                adapter_rank=4),
    "cjs": dict(num_layers=2, model_dim=64, num_heads=2, max_context=96,
                adapter_rank=4),
    "vp": dict(num_layers=2, model_dim=64, num_heads=2, max_context=16,
               adapter_rank=4),
}

_DEFAULT_TRAIN = {
    "abr": dict(window=10, batch_size=16, steps=3000, lr=1e-3, loss_kind="ce"),
    "cjs": dict(window=20, batch_size=8, steps=1500, lr=1e-3, loss_kind="ce"),
    "vp": dict(window=10, batch_size=32, steps=4000, lr=1e-3, loss_kind="mse"),
}

COLLECT_EPISODES = {"abr": 500, "cjs": 50}
TEST_EPISODES = {"abr": 100, "cjs": 20}


@dataclass
class ExperimentConfig:
    """Everything one run needs; hashes to a digest stamped into artifacts."""

    task: str
    setting: str
    seed: int
    backbone: BackboneConfig
    train: TrainConfig
    episodes: int | None = None       # collect/test override
    include_images: bool = False      # vp only

    def __post_init__(self):
        if self.task not in TASKS:
            raise UsageError(
                f"unknown task {self.task!r}; options: {', '.join(TASKS)}")
        resolve_setting(self.task, self.setting)  # fail fast on bad ids

    def to_dict(self) -> dict:
        return {
            "task": self.task, "setting": self.setting, "seed": self.seed,
            "episodes": self.episodes, "include_images": self.include_images,
            "backbone": self.backbone.to_dict(), "train": self.train.to_dict(),
        }

    def digest(self) -> str:
        return digest_json(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from a (possibly partial) dict layered over task defaults."""
        d = dict(d)
        task = d.get("task")
        if task not in TASKS:
            raise UsageError(
                f"config needs a task in {{{', '.join(TASKS)}}}, got {task!r}")
        seed = int(d.get("seed", 0))
        base = default_config(task, d.get("setting"), seed)
        backbone = BackboneConfig.from_dict(
            {**base.backbone.to_dict(), **d.get("backbone", {})})
        train = TrainConfig.from_dict(
            {**base.train.to_dict(), **d.get("train", {})})
        episodes = d.get("episodes")
        return cls(task=task, setting=base.setting, seed=seed,
                   backbone=backbone, train=train,
                   episodes=None if episodes is None else int(episodes),
                   include_images=bool(d.get("include_images", False)))


def default_config(task: str, setting: str | None = None,
                   seed: int = 0, **overrides) -> ExperimentConfig:
    if task not in TASKS:
        raise UsageError(f"unknown task {task!r}; options: {', '.join(TASKS)}")
    cfg = ExperimentConfig(
        task=task, setting=setting or default_setting(task), seed=seed,
        backbone=BackboneConfig(**_DEFAULT_BACKBONE[task]),
        train=TrainConfig(seed=seed, **_DEFAULT_TRAIN[task]))
    return replace(cfg, **overrides) if overrides else cfg


def model_for(config: ExperimentConfig) -> TaskModel:
    """Fresh frozen-backbone model matching the config's task and setting."""
    setting = resolve_setting(config.task, config.setting)
    if config.task == "abr":
        spec = abr_task_spec(abr_ladder(setting), history=setting["history"],
                             window=config.train.window)
    elif config.task == "cjs":
        spec = cjs_task_spec(setting["executors"], window=config.train.window)
    else:
        spec = vp_task_spec(
            horizon=int(round(setting["pw_s"] * setting["rate_hz"])),
            history_len=int(round(setting["hw_s"] * setting["rate_hz"])),
            include_images=config.include_images,
            rate_hz=setting["rate_hz"])
    return build_model(spec, config.backbone, seed=config.seed)


# -- pipeline stages ----------------------------------------------------------------

def run_collect(config: ExperimentConfig, policy_name: str,
                out_dir=None, episodes: int | None = None) -> ExperienceDataset:
    """Roll a baseline policy over a setting and store the experience."""
    if config.task == "vp":
        raise UsageError(
            "the viewport task is supervised, so there is no experience to "
            "collect; adapt builds its windows from the setting's traces "
            "(see netadapt.harness.build_vp_splits)")
    setting = resolve_setting(config.task, config.setting)
    n = episodes or config.episodes or COLLECT_EPISODES[config.task]
    if config.task == "abr":
        policy = make_abr_policy(policy_name, abr_ladder(setting))
        dataset = collect_abr_experience(
            lambda i: make_abr_env(setting, i), policy, n, policy_name)
    else:
        policy = make_cjs_policy(policy_name)
        dataset = collect_cjs_experience(
            lambda i: make_cjs_env(setting, i), policy, n,
            executor_level_ladder(setting["executors"]), policy_name)
    dataset.manifest.update({
        "setting": config.setting, "seed": config.seed,
        "config_digest": config.digest(),
    })
    if out_dir is not None:
        dataset.save(out_dir)
    return dataset


def run_adapt(config: ExperimentConfig, dataset_path=None,
              checkpoint_dir=None) -> tuple[TaskModel, AdaptResult]:
    """Adapt a fresh model on stored experience (or built VP windows)."""
    if config.task == "vp":
        if dataset_path is not None:
            dataset = SLDataset.load(dataset_path)
        else:
            setting = resolve_setting(config.task, config.setting)
            dataset, _ = build_vp_splits(setting, config.include_images)
    else:
        if dataset_path is None:
            raise UsageError(
                f"the {config.task} task adapts on collected experience; "
                "run collect first and pass its output directory")
        dataset = ExperienceDataset.load(dataset_path)
    ds_task = dataset.manifest.get("task")
    if ds_task != config.task:
        raise UsageError(
            f"dataset at {dataset_path} holds {ds_task!r} experience but the "
            f"config asks for {config.task!r}")
    model = model_for(config)
    result = adapt(model, dataset, config.train, checkpoint_dir=checkpoint_dir)
    if checkpoint_dir is not None:
        _stamp_experiment(checkpoint_dir, config)
    return model, result


def _stamp_experiment(checkpoint_dir, config: ExperimentConfig) -> None:
    path = Path(checkpoint_dir) / "config.json"
    meta = json.loads(path.read_text())
    meta["experiment"] = {"config": config.to_dict(),
                          "digest": config.digest()}
    path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def run_test(config: ExperimentConfig, out_path=None, checkpoint=None,
             policy: str | None = None, episodes: int | None = None,
             target_return: float | None = None,
             method: str | None = None) -> MetricsReport:
    """Evaluate a checkpoint or a named baseline on a setting's episodes.

    Writes one JSONL row per episode (plus a summary sidecar) when
    `out_path` is given, and returns the aggregated report.
    """
    if (checkpoint is None) == (policy is None):
        raise UsageError("pass exactly one of a checkpoint or a policy name")
    start = time.monotonic()
    if config.task == "abr":
        rows, metric, extras, method = _test_abr(
            config, checkpoint, policy, episodes, target_return, method)
    elif config.task == "cjs":
        rows, metric, extras, method = _test_cjs(
            config, checkpoint, policy, episodes, target_return, method)
    else:
        rows, metric, extras, method = _test_vp(config, checkpoint, policy,
                                                method)
    report = MetricsReport(
        task=config.task, method=method, setting=config.setting,
        metric=metric, values=tuple(r["value"] for r in rows),
        runtime_s=time.monotonic() - start, config_digest=config.digest(),
        extras=extras)
    if out_path is not None:
        write_results(out_path, report, rows)
    return report


def _load_for_test(config: ExperimentConfig, checkpoint,
                   target_return, method):
    model, meta = load_checkpoint(checkpoint)
    if model.spec.name != config.task:
        raise UsageError(
            f"checkpoint at {checkpoint} holds a {model.spec.name!r} model "
            f"but the config asks for {config.task!r}")
    if target_return is None and config.task != "vp":
        target_return = default_target_return(meta)
    return model, target_return, method or "adapted"


def _row(config, method, metric, episode, value, **fields) -> dict:
    row = {"task": config.task, "method": method, "setting": config.setting,
           "metric": metric, "episode": episode, "value": float(value),
           "config_digest": config.digest()}
    row.update(fields)
    return row


def _test_abr(config, checkpoint, policy, episodes, target_return, method):
    setting = resolve_setting("abr", config.setting)
    n = episodes or config.episodes or TEST_EPISODES["abr"]
    if checkpoint is not None:
        model, target, method = _load_for_test(config, checkpoint,
                                               target_return, method)
    else:
        pol = make_abr_policy(policy, abr_ladder(setting))
        method = method or policy
    rows = []
    for i in range(n):
        env = make_abr_env(setting, i)
        if checkpoint is not None:
            record, score = run_abr_with_model(model, env, target)
        else:
            state = env.reset()
            if hasattr(pol, "reset"):
                pol.reset()
            while True:
                state, res = env.step(int(pol.decide(state)["bitrate"]))
                if res.done:
                    break
            record, score = env.record, qoe(env.record)
        mbps = [b / 1000.0 for b in record.bitrates_kbps]
        changes = [abs(b - a) for a, b in zip(mbps, mbps[1:])]
        rows.append(_row(
            config, method, "qoe", i, score,
            bitrate_mbps=float(np.mean(mbps)),
            rebuffer_s=float(np.mean(record.rebuffers_s)),
            change_mbps=float(sum(changes) / len(mbps)) if mbps else 0.0))
    return rows, "qoe", {"episodes": n}, method


def _test_cjs(config, checkpoint, policy, episodes, target_return, method):
    setting = resolve_setting("cjs", config.setting)
    n = episodes or config.episodes or TEST_EPISODES["cjs"]
    if checkpoint is not None:
        model, target, method = _load_for_test(config, checkpoint,
                                               target_return, method)
    else:
        method = method or policy
    rows, all_jcts = [], []
    for i in range(n):
        env = make_cjs_env(setting, i)
        if checkpoint is not None:
            run_cjs_with_model(model, env, target)
        else:
            pol = make_cjs_policy(policy)
            if hasattr(pol, "reset"):
                pol.reset()
            while not env.done:
                want = pol.decide(env.graph_obs(), env.snapshot())
                env.step(int(want["stage"]), int(want["executors"]))
        jcts = env.completion_times()
        all_jcts.extend(jcts)
        rows.append(_row(config, method, "jct", i, float(np.mean(jcts)),
                         jct_p90=percentile(jcts, 90), jobs=len(jcts),
                         episode_reward=float(env.episode_reward)))
    extras = {"episodes": n,
              "jct_mean_all_jobs": float(np.mean(all_jcts)),
              "jct_p90_all_jobs": percentile(all_jcts, 90)}
    return rows, "jct", extras, method


def _test_vp(config, checkpoint, policy, method):
    setting = resolve_setting("vp", config.setting)
    _train, test = build_vp_splits(setting, config.include_images)
    horizon = int(round(setting["pw_s"] * setting["rate_hz"]))
    if checkpoint is not None:
        model, _target, method = _load_for_test(config, checkpoint, None,
                                                method)
        preds = _vp_batch_predict(model, test.inputs)
    else:
        if policy not in VP_PREDICTORS:
            raise UsageError(
                f"unknown vp predictor {policy!r}; options: "
                f"{', '.join(sorted(VP_PREDICTORS))}")
        fn = make_vp_predictor(policy)
        method = method or policy
        preds = [fn(x["history"], horizon, setting["rate_hz"])
                 for x in test.inputs]
    rows = []
    for i, (pred, label) in enumerate(zip(preds, test.labels)):
        mae = float(np.mean(np.abs(np.asarray(pred) - np.asarray(label))))
        rows.append(_row(config, method, "mae", i, mae))
    return rows, "mae", {"windows": len(rows)}, method


def _vp_batch_predict(model, inputs, batch_size: int = 64) -> list:
    preds = []
    with torch.no_grad():
        for lo in range(0, len(inputs), batch_size):
            batch = model.predict_batch(list(inputs[lo:lo + batch_size]))
            preds.extend(np.asarray(batch.detach().cpu(), dtype=np.float64))
    return preds
