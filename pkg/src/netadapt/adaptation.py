"""Experience collection, the adaptation loop, and target-return inference.

The loop trains only the low-rank adapters, modality encoders, heads, and
the small embedding tables; the backbone core is checksummed before and
after and any drift is a hard failure. Return-conditioned tasks sample
fixed-width windows uniformly over (trajectory, end step); the supervised
task samples labelled examples. Inference feeds a target return and
decrements it by each observed reward, reading one answer piece per
backbone forward.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data import (ExperienceDataset, ReturnAnnotatedTrajectory, SLDataset,
                   TrainConfig, sample_window)
from .envs.abr import AbrEnv, qoe
from .envs.cjs import ClusterEnv
from .errors import ConfigError, EnvError, InputError, InvariantViolation
from .tasks import AbrModel, CjsModel, TaskModel, VPModel, snap_to_level

# -- experience collection ---------------------------------------------------------


def collect_abr_experience(env_factory, policy, episodes: int,
                           policy_name: str = "policy") -> ExperienceDataset:
    """Roll a fixed bitrate policy over `episodes` environments.

    `env_factory(i)` must build a fresh single-episode environment. An
    environment error aborts and excludes that episode (counted in the
    manifest) rather than poisoning the dataset.
    """
    trajectories, aborted = [], 0
    for e in range(episodes):
        env = env_factory(e)
        state = env.reset()
        if hasattr(policy, "reset"):
            policy.reset()
        rewards, states, actions = [], [], []
        while True:
            choice = int(policy.decide(state)["bitrate"])
            try:
                nxt, res = env.step(choice)
            except EnvError:
                aborted += 1
                rewards = []
                break
            states.append(state)
            actions.append({"bitrate": choice})
            rewards.append(res.reward)
            state = nxt
            if res.done:
                break
        if rewards:
            trajectories.append(ReturnAnnotatedTrajectory(
                rewards=rewards, states=states, actions=actions))
    if not trajectories:
        raise InputError("collection produced no complete episodes")
    return ExperienceDataset(trajectories, manifest={
        "task": "abr", "policy": policy_name,
        "episodes": episodes, "aborted": aborted,
    })


def collect_cjs_experience(env_factory, policy, episodes: int, levels,
                           policy_name: str = "policy") -> ExperienceDataset:
    """Roll a scheduling policy, snapping executor requests to the level ladder.

    The recorded action stores the level index actually requested from the
    environment, so replayed decisions match the observed rewards exactly.
    """
    levels = tuple(levels)
    trajectories, aborted = [], 0
    for e in range(episodes):
        env = env_factory(e)
        env.reset()
        rewards, states, actions = [], [], []
        try:
            while not env.done:
                obs = env.graph_obs()
                snap = env.snapshot()
                want = policy.decide(obs, snap)
                level_idx = snap_to_level(int(want["executors"]), levels)
                reward, _ = env.step(int(want["stage"]), levels[level_idx])
                states.append({"dag": obs})
                actions.append({"stage": int(want["stage"]),
                                "executors": level_idx})
                rewards.append(reward)
        except EnvError:
            aborted += 1
            continue
        if rewards:
            trajectories.append(ReturnAnnotatedTrajectory(
                rewards=rewards, states=states, actions=actions))
    if not trajectories:
        raise InputError("collection produced no complete episodes")
    return ExperienceDataset(trajectories, manifest={
        "task": "cjs", "policy": policy_name, "episodes": episodes,
        "aborted": aborted, "executor_levels": list(levels),
    })


# -- adaptation loop ---------------------------------------------------------------


@dataclass
class AdaptResult:
    losses: list = field(default_factory=list)
    steps: int = 0
    frozen_before: str = ""
    frozen_after: str = ""
    trainable_parameters: int = 0
    duration_s: float = 0.0
    checkpoint_dir: str | None = None

    @property
    def final_loss(self) -> float:
        if not self.losses:
            raise InputError("no training steps were recorded")
        return self.losses[-1]


def _sample_batch(model: TaskModel, dataset, config: TrainConfig, rng):
    if model.spec.paradigm == "rl":
        if not isinstance(dataset, ExperienceDataset):
            raise ConfigError("return-conditioned tasks need experience data")
        return [sample_window(dataset, config.window, rng)
                for _ in range(config.batch_size)]
    if not isinstance(dataset, SLDataset):
        raise ConfigError("supervised tasks need a labelled dataset")
    idx = rng.integers(0, len(dataset.inputs), size=config.batch_size)
    return ([dataset.inputs[i] for i in idx], [dataset.labels[i] for i in idx])


def _check_window_fits(model: TaskModel, config: TrainConfig) -> None:
    if model.spec.paradigm != "rl":
        return
    need = config.window * model.spec.timestep_stride
    limit = model.backbone_cfg.max_context
    if need > limit:
        raise ConfigError(
            f"window of {config.window} steps needs {need} tokens but the "
            f"backbone context holds {limit}")


def adapt(model: TaskModel, dataset, config: TrainConfig,
          checkpoint_dir=None, log_every: int = 0) -> AdaptResult:
    """Run the training loop over adapters + encoders + heads only."""
    _check_window_fits(model, config)
    rng = np.random.default_rng(config.seed)
    before = model.frozen_checksum()
    named = model.trainable_parameters()
    if not named:
        raise ConfigError("model has nothing trainable")
    head_params = [p for n, p in named.items() if n.startswith("head")]
    rest_params = [p for n, p in named.items() if not n.startswith("head")]
    if config.head_lr is not None and head_params:
        groups = [{"params": rest_params, "lr": config.lr},
                  {"params": head_params, "lr": config.head_lr}]
    else:
        groups = [{"params": list(named.values()), "lr": config.lr}]
    optimizer = torch.optim.Adam(groups)

    started = time.monotonic()
    losses = []
    for step in range(config.steps):
        batch = _sample_batch(model, dataset, config, rng)
        if model.spec.paradigm == "rl":
            loss = model.training_loss(batch)
        else:
            loss = model.training_loss(*batch)
        optimizer.zero_grad()
        loss.backward()
        if config.grad_clip:
            torch.nn.utils.clip_grad_norm_(list(named.values()),
                                           config.grad_clip)
        optimizer.step()
        losses.append(float(loss.detach()))
        if log_every and (step + 1) % log_every == 0:
            print(f"step {step + 1}/{config.steps} loss {losses[-1]:.4f}")

    after = model.frozen_checksum()
    if after != before:
        raise InvariantViolation(
            "frozen backbone weights changed during adaptation")

    result = AdaptResult(
        losses=losses, steps=config.steps,
        frozen_before=before, frozen_after=after,
        trainable_parameters=model.trainable_parameter_count(),
        duration_s=time.monotonic() - started,
    )
    if checkpoint_dir is not None:
        extra = {"train_config": config.to_dict(),
                 "dataset_digest": dataset.digest()}
        if isinstance(dataset, ExperienceDataset):
            extra["default_target_return"] = float(dataset.max_return)
        model.save(checkpoint_dir, extra=extra)
        (Path(checkpoint_dir) / "losses.json").write_text(
            json.dumps(losses) + "\n")
        result.checkpoint_dir = str(checkpoint_dir)
    return result


def load_checkpoint(directory) -> tuple[TaskModel, dict]:
    model = TaskModel.load(directory)
    meta = json.loads((Path(directory) / "config.json").read_text())
    return model, meta


def default_target_return(meta: dict) -> float:
    try:
        return float(meta["train"]["default_target_return"])
    except KeyError as exc:
        raise ConfigError("checkpoint records no default target return") from exc


# -- target-return inference -------------------------------------------------------


class AbrAgent:
    """Streams one bitrate decision per backbone forward.

    Completed timestep groups are cached as token tensors; each decision
    appends the pending step's (return, state) prefix and reads the feature
    at the final state token.
    """

    def __init__(self, model: AbrModel, target_return: float):
        self.model = model
        self.window = model.spec.window
        self.rtg = float(target_return)
        self.t = 0
        self.groups = []
        self._pending = None

    @torch.no_grad()
    def act(self, state: dict) -> int:
        prefix = self.model.encode_step_prefix(self.rtg, state, self.t)
        context = self.groups[-(self.window - 1):] if self.window > 1 else []
        tokens = torch.cat(context + [prefix]).unsqueeze(0)
        feats = self.model.backbone(tokens)
        idx, _, _ = self.model.head.select(feats[0, -1])
        self._pending = torch.cat(
            [prefix, self.model.action_token(idx, self.t)])
        return int(idx)

    def observe(self, reward: float) -> None:
        if self._pending is None:
            raise InputError("observe() called before act()")
        self.groups.append(self._pending)
        self._pending = None
        del self.groups[:-max(self.window - 1, 0) or None]
        self.rtg -= float(reward)
        self.t += 1


class CjsAgent:
    """Two sequential decisions per scheduling step: stage, then executors."""

    def __init__(self, model: CjsModel, target_return: float):
        self.model = model
        self.window = model.spec.window
        self.levels = model.levels
        self.rtg = float(target_return)
        self.t = 0
        self.groups = []
        self._pending = None

    @torch.no_grad()
    def act(self, graph) -> tuple[int, int, int]:
        """Returns (stage node, executor count, executor level index)."""
        prefix, node_feats = self.model.encode_step_prefix(
            self.rtg, graph, self.t)
        context = self.groups[-(self.window - 1):] if self.window > 1 else []
        tokens = torch.cat(context + [prefix]).unsqueeze(0)
        feats = self.model.backbone(tokens)
        node = self.model.head.select_stage(node_feats, feats[0, -1],
                                            graph.runnable)
        if node is None:
            raise EnvError("no runnable stage at a decision point")
        stage_tok = self.model.stage_action_token(node_feats[node], self.t)
        tokens = torch.cat([tokens, stage_tok.unsqueeze(0)], dim=1)
        feats = self.model.backbone(tokens)
        level_idx, count = self.model.head.select_executors(feats[0, -1])
        exec_tok = self.model.executor_action_token(level_idx, self.t)
        self._pending = torch.cat([prefix, stage_tok, exec_tok])
        return int(node), int(count), int(level_idx)

    def observe(self, reward: float) -> None:
        if self._pending is None:
            raise InputError("observe() called before act()")
        self.groups.append(self._pending)
        self._pending = None
        del self.groups[:-max(self.window - 1, 0) or None]
        self.rtg -= float(reward)
        self.t += 1


def run_abr_with_model(model: AbrModel, env: AbrEnv, target_return: float):
    """One full episode; returns (episode record, realized quality score)."""
    agent = AbrAgent(model, target_return)
    state = env.reset()
    while True:
        choice = agent.act(state)
        state, res = env.step(choice)
        agent.observe(res.reward)
        if res.done:
            break
    record = env.record
    return record, qoe(record)


def run_cjs_with_model(model: CjsModel, env: ClusterEnv,
                       target_return: float) -> float:
    """One full episode; returns the realized episode reward."""
    agent = CjsAgent(model, target_return)
    env.reset()
    while not env.done:
        obs = env.graph_obs()
        node, count, _ = agent.act(obs)
        reward, _ = env.step(node, count)
        agent.observe(reward)
    return env.episode_reward


def infer_with_target_return(model: TaskModel, env, target_return: float):
    if isinstance(model, AbrModel):
        return run_abr_with_model(model, env, target_return)
    if isinstance(model, CjsModel):
        return run_cjs_with_model(model, env, target_return)
    raise ConfigError("target-return inference applies to the "
                      "return-conditioned tasks only")


def predict_viewport(model: VPModel, history, image=None) -> np.ndarray:
    return model.predict(history, image)
