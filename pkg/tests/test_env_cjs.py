"""Scheduler simulator oracles: serial chains, JCT identities, conservation."""

import numpy as np
import pytest

from netadapt.envs.cjs import (
    ClusterEnv,
    Job,
    JobRecord,
    JobStage,
    executor_level_ladder,
    jct,
    load_workload,
    save_workload,
    synth_workload,
)
from netadapt.errors import EnvError, InputError


def single_stage_job(jid=0, arrival=0.0, tasks=1, duration=10.0):
    return Job(job_id=jid, arrival=arrival,
               stages=(JobStage(task_count=tasks, duration=duration),))


def run_random_policy(env, seed=0):
    rng = np.random.default_rng(seed)
    while not env.done:
        obs = env.graph_obs()
        options = [i for i, r in enumerate(obs.runnable) if r]
        node = options[int(rng.integers(len(options)))]
        count = int(rng.integers(1, env.executor_total + 1))
        env.step(node, count)
    return env


# -- closed-form schedules -----------------------------------------------------

def test_single_task_job():
    env = ClusterEnv([single_stage_job(duration=10.0)], executor_total=1)
    obs = env.graph_obs()
    assert obs.runnable == [True]
    reward, done = env.step(0, 1)
    assert done
    assert env.clock == pytest.approx(10.0)
    assert env.completion_times() == [pytest.approx(10.0)]
    assert reward == pytest.approx(-10.0)


def test_chain_serial_oracle():
    # two dependent 5s stages on one executor finish at t=10
    job = Job(job_id=0, arrival=0.0,
              stages=(JobStage(1, 5.0), JobStage(1, 5.0, parents=(0,))))
    env = ClusterEnv([job], executor_total=1)
    env.step(0, 1)           # stage 0
    assert env.clock == pytest.approx(5.0)
    obs = env.graph_obs()
    runnable = [i for i, r in enumerate(obs.runnable) if r]
    assert [obs.node_ids[i] for i in runnable] == [[0, 1]]
    _, done = env.step(runnable[0], 1)
    assert done and env.completion_times() == [pytest.approx(10.0)]


def test_parallel_tasks_split_across_executors():
    # 4 tasks of 5s on 2 executors -> two waves -> stage done at 10
    env = ClusterEnv([single_stage_job(tasks=4, duration=5.0)], executor_total=2)
    _, done = env.step(0, 2)
    assert done and env.clock == pytest.approx(10.0)


def test_grant_clipped_to_free_and_unstarted():
    env = ClusterEnv([single_stage_job(tasks=3, duration=1.0)], executor_total=10)
    env.step(0, 10)  # only 3 tasks exist
    assert env.decisions[0]["granted"] == 3
    assert env.done


# -- JCT ------------------------------------------------------------------------

def test_jct_hand_values():
    assert jct(JobRecord(0, 0.0, 10.0)) == pytest.approx(10.0)
    assert jct(JobRecord(1, 3.5, 7.25)) == pytest.approx(3.75)


def test_jct_incomplete_rejected():
    with pytest.raises(InputError):
        jct(JobRecord(0, 1.0, None))


def test_episode_reward_is_negative_total_jct():
    jobs, total = synth_workload(8, 12, np.random.default_rng(11))
    env = ClusterEnv(jobs, total)
    run_random_policy(env, seed=1)
    jcts = env.completion_times()
    assert env.episode_reward == pytest.approx(-sum(jcts), rel=1e-9)
    # average JCT identity
    assert sum(jcts) / len(jcts) == pytest.approx(
        -env.episode_reward / len(jcts), rel=1e-9)


# -- safety and conservation ------------------------------------------------------

def test_non_runnable_stage_rejected_and_counted():
    job = Job(job_id=0, arrival=0.0,
              stages=(JobStage(1, 5.0), JobStage(1, 5.0, parents=(0,))))
    env = ClusterEnv([job], executor_total=2)
    obs = env.graph_obs()
    blocked = next(i for i, r in enumerate(obs.runnable) if not r)
    with pytest.raises(EnvError):
        env.step(blocked, 1)
    with pytest.raises(EnvError):
        env.step(0, 0)   # count below 1
    with pytest.raises(EnvError):
        env.step(0, 99)  # count above E
    assert env.error_count == 3


def test_executor_conservation_at_every_decision():
    jobs, total = synth_workload(6, 8, np.random.default_rng(13))
    env = ClusterEnv(jobs, total)
    rng = np.random.default_rng(2)
    while not env.done:
        running = sum(st.running for st in env.stage_states.values())
        assert env.free + running == total
        obs = env.graph_obs()
        options = [i for i, r in enumerate(obs.runnable) if r]
        env.step(options[int(rng.integers(len(options)))],
                 int(rng.integers(1, total + 1)))
    running = sum(st.running for st in env.stage_states.values())
    assert env.free + running == total and env.free == total


def test_work_conservation():
    jobs, total = synth_workload(5, 6, np.random.default_rng(17))
    env = ClusterEnv(jobs, total)
    run_random_policy(env, seed=3)
    expected = sum(j.total_work for j in jobs)
    assert env.busy_executor_seconds() == pytest.approx(expected, rel=1e-9)


def test_dependency_safety_chain_never_overlaps():
    job = Job(job_id=0, arrival=0.0,
              stages=(JobStage(3, 2.0), JobStage(1, 1.0, parents=(0,))))
    env = ClusterEnv([job], executor_total=5)
    obs = env.graph_obs()
    assert obs.runnable == [True, False]
    env.step(0, 5)
    # stage 0 completes at t=2 before stage 1 may start
    assert env.clock == pytest.approx(2.0)
    obs = env.graph_obs()
    assert obs.runnable[[tuple(i) for i in obs.node_ids].index((0, 1))]


def test_replay_determinism_bitwise():
    jobs, total = synth_workload(7, 9, np.random.default_rng(23))

    def run(record_actions=None, replay=None):
        env = ClusterEnv(jobs, total)
        rng = np.random.default_rng(4)
        i = 0
        while not env.done:
            if replay is None:
                obs = env.graph_obs()
                options = [k for k, r in enumerate(obs.runnable) if r]
                action = (options[int(rng.integers(len(options)))],
                          int(rng.integers(1, total + 1)))
                record_actions.append(action)
            else:
                action = replay[i]
                i += 1
            env.step(*action)
        return env.completion_times(), env.episode_reward

    actions = []
    jcts1, reward1 = run(record_actions=actions)
    jcts2, reward2 = run(replay=actions)
    assert jcts1 == jcts2 and reward1 == reward2


# -- workload synthesis -----------------------------------------------------------

def test_workload_determinism():
    a, ea = synth_workload(10, 20, np.random.default_rng(29))
    b, eb = synth_workload(10, 20, np.random.default_rng(29))
    assert ea == eb
    assert [(j.arrival, j.stages) for j in a] == [(j.arrival, j.stages) for j in b]


def test_workload_shape_validity():
    jobs, _ = synth_workload(30, 50, np.random.default_rng(31))
    assert len(jobs) == 30
    for j in jobs:
        assert all(s.task_count >= 1 and s.duration > 0 for s in j.stages)


def test_workload_file_roundtrip(tmp_path):
    jobs, total = synth_workload(4, 5, np.random.default_rng(37))
    path = save_workload(tmp_path / "w.json", jobs, total)
    loaded, lt = load_workload(path)
    assert lt == total
    assert loaded == jobs


def test_job_validation():
    with pytest.raises(InputError):
        JobStage(task_count=0, duration=1.0)
    with pytest.raises(InputError):
        JobStage(task_count=1, duration=0.0)
    with pytest.raises(InputError):
        Job(job_id=0, arrival=0.0, stages=())
    with pytest.raises(InputError):  # cycle
        Job(job_id=0, arrival=0.0,
            stages=(JobStage(1, 1.0, parents=(1,)), JobStage(1, 1.0, parents=(0,))))


def test_executor_level_ladder():
    levels = executor_level_ladder(50)
    assert levels == (1, 2, 5, 10, 20, 50)
    assert executor_level_ladder(30) == (1, 2, 5, 10, 20, 30)
    assert executor_level_ladder(3) == (1, 2, 3)
    for e in (1, 7, 100, 640):
        lv = executor_level_ladder(e)
        assert all(1 <= x <= e for x in lv) and lv[-1] == e


def test_late_arrivals_become_visible():
    jobs = [single_stage_job(0, arrival=0.0, duration=4.0),
            single_stage_job(1, arrival=100.0, duration=2.0)]
    env = ClusterEnv(jobs, executor_total=1)
    assert len(env.graph_obs().node_ids) == 1
    env.step(0, 1)         # first job runs alone; clock jumps to arrival
    assert env.clock == pytest.approx(100.0)
    obs = env.graph_obs()
    assert obs.node_ids == [[1, 0]]
    _, done = env.step(0, 1)
    assert done
    assert env.completion_times() == [pytest.approx(4.0), pytest.approx(2.0)]
