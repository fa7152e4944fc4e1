"""Event-driven cluster job scheduler over DAG-structured jobs.

Jobs arrive over time; each job is a DAG of stages, each stage a bag of
equal-duration tasks. A decision point occurs whenever free executors and
runnable stages coexist; the policy picks a runnable stage and an executor
count, and the simulator assigns min(requested, free, unstarted tasks)
executors. Executors keep taking tasks from their stage until none remain
unstarted, then return to the pool. Reward between decisions is the negative
integral of the active-job count, so episode reward sums to minus the total
job completion time.

Workload file format (version 1): JSON with executor_total and a job list
(id, arrival, stages with tasks/duration/parents).
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..encoders import GraphObs
from ..errors import ConfigError, EnvError, InputError

NODE_FEATURES = 8  # per-stage feature vector width in graph snapshots


@dataclass(frozen=True)
class JobStage:
    task_count: int
    duration: float
    parents: tuple = ()

    def __post_init__(self):
        if self.task_count < 1:
            raise InputError("stage needs at least one task")
        if self.duration <= 0:
            raise InputError("task duration must be positive")


@dataclass(frozen=True)
class Job:
    job_id: int
    arrival: float
    stages: tuple

    def __post_init__(self):
        if self.arrival < 0:
            raise InputError("arrival time must be nonnegative")
        n = len(self.stages)
        if n == 0:
            raise InputError("job needs at least one stage")
        for s in self.stages:
            for p in s.parents:
                if not (0 <= p < n):
                    raise InputError(f"parent stage {p} missing in job {self.job_id}")
        # acyclicity via topological elimination
        indeg = [len(s.parents) for s in self.stages]
        children = [[] for _ in range(n)]
        for i, s in enumerate(self.stages):
            for p in s.parents:
                children[p].append(i)
        queue = [i for i, d in enumerate(indeg) if d == 0]
        seen = 0
        while queue:
            v = queue.pop()
            seen += 1
            for c in children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if seen != n:
            raise InputError(f"job {self.job_id} stage graph has a cycle")

    @property
    def total_work(self) -> float:
        return sum(s.task_count * s.duration for s in self.stages)


@dataclass
class _StageState:
    unstarted: int
    running: int = 0
    finished: int = 0

    def complete(self, total: int) -> bool:
        return self.finished >= total


@dataclass
class JobRecord:
    job_id: int
    t_start: float
    t_end: float | None = None

    @property
    def complete(self) -> bool:
        return self.t_end is not None


def jct(record: JobRecord) -> float:
    """Job completion time: finish clock minus arrival clock."""
    if not record.complete:
        raise InputError(f"job {record.job_id} has not completed")
    return record.t_end - record.t_start


class ClusterEnv:
    """Single-episode scheduler simulation (one instance per episode)."""

    ACTION_PIECES = ("stage", "executors")

    def __init__(self, jobs, executor_total: int):
        if executor_total < 1:
            raise ConfigError("need at least one executor")
        self.jobs = tuple(sorted(jobs, key=lambda j: (j.arrival, j.job_id)))
        if not self.jobs:
            raise ConfigError("workload has no jobs")
        if len({j.job_id for j in self.jobs}) != len(self.jobs):
            raise ConfigError("job ids must be unique")
        self._job_index = {j.job_id: i for i, j in enumerate(self.jobs)}
        self.executor_total = int(executor_total)
        self.error_count = 0
        self.reset()

    def reset(self) -> None:
        self.clock = 0.0
        self.free = self.executor_total
        self.stage_states = {}   # (job_id, stage_idx) -> _StageState
        self.arrived = []        # job ids in arrival order
        self.records = {}        # job_id -> JobRecord
        self.episode_reward = 0.0
        self.decisions = []
        self._events = []        # (time, seq, kind, payload)
        self._seq = 0
        self._done = False
        for job in self.jobs:
            self._push(job.arrival, "arrival", job.job_id)
        self._advance_to_decision_point()

    # -- event machinery ---------------------------------------------------

    def _push(self, time: float, kind: str, payload) -> None:
        heapq.heappush(self._events, (time, self._seq, kind, payload))
        self._seq += 1

    def _job(self, job_id: int) -> Job:
        return self.jobs[self._job_index[job_id]]

    def _active_count(self) -> int:
        return sum(1 for jid in self.arrived if not self.records[jid].complete)

    def _stage_runnable(self, job: Job, idx: int) -> bool:
        st = self.stage_states[(job.job_id, idx)]
        if st.unstarted <= 0:
            return False
        for p in job.stages[idx].parents:
            ps = self.stage_states[(job.job_id, p)]
            if not ps.complete(job.stages[p].task_count):
                return False
        return True

    def runnable_stages(self) -> list:
        """(job_id, stage_idx) pairs whose parents are done and tasks remain."""
        out = []
        for jid in self.arrived:
            if self.records[jid].complete:
                continue
            job = self._job(jid)
            for idx in range(len(job.stages)):
                if self._stage_runnable(job, idx):
                    out.append((jid, idx))
        return out

    @property
    def done(self) -> bool:
        return self._done

    def _accrue(self, until: float) -> None:
        dt = until - self.clock
        if dt > 0:
            self.episode_reward_delta += -self._active_count() * dt
            self.clock = until

    def _process_event(self, time: float, kind: str, payload) -> None:
        self._accrue(time)
        if kind == "arrival":
            job = self._job(payload)
            self.arrived.append(payload)
            self.records[payload] = JobRecord(payload, job.arrival)
            for idx in range(len(job.stages)):
                self.stage_states[(payload, idx)] = _StageState(
                    unstarted=job.stages[idx].task_count)
        elif kind == "task_done":
            jid, idx = payload
            job = self._job(jid)
            st = self.stage_states[(jid, idx)]
            st.running -= 1
            st.finished += 1
            if st.unstarted > 0:
                # executor grabs the next task of the same stage
                st.unstarted -= 1
                st.running += 1
                self._push(time + job.stages[idx].duration, "task_done", (jid, idx))
            else:
                self.free += 1
            if all(self.stage_states[(jid, k)].complete(job.stages[k].task_count)
                   for k in range(len(job.stages))):
                rec = self.records[jid]
                if not rec.complete:
                    rec.t_end = time
                    if all(self.records[j].complete for j in self.arrived) \
                            and len(self.arrived) == len(self.jobs):
                        self._done = True
        else:
            raise EnvError(f"unknown event kind {kind!r}")

    def _advance_to_decision_point(self) -> float:
        """Pop events until a decision is possible or the episode ends."""
        self.episode_reward_delta = 0.0
        while not self._done:
            if self.free > 0 and self.runnable_stages():
                break
            if not self._events:
                if not self._done:
                    raise EnvError("simulation stalled with incomplete jobs")
                break
            time, _, kind, payload = heapq.heappop(self._events)
            self._process_event(time, kind, payload)
        self.episode_reward += self.episode_reward_delta
        return self.episode_reward_delta

    # -- policy-facing API ----------------------------------------------------

    def snapshot(self) -> dict:
        """Cluster state summary at the current decision point."""
        runnable = self.runnable_stages()
        return {
            "clock": self.clock,
            "free_executors": self.free,
            "executor_total": self.executor_total,
            "active_jobs": self._active_count(),
            "runnable": runnable,
        }

    def graph_obs(self) -> GraphObs:
        """All arrived-incomplete jobs as one graph, nodes in arrival order."""
        nodes, edges, runnable, ids = [], [], [], []
        offset = 0
        for jid in self.arrived:
            if self.records[jid].complete:
                continue
            job = self._job(jid)
            for idx, stage in enumerate(job.stages):
                st = self.stage_states[(jid, idx)]
                is_runnable = self._stage_runnable(job, idx)
                nodes.append([
                    float(st.unstarted),
                    float(st.running),
                    st.finished / stage.task_count,
                    stage.duration,
                    st.unstarted * stage.duration,
                    1.0 if is_runnable else 0.0,
                    float(self.free),
                    float(self._active_count()),
                ])
                runnable.append(is_runnable)
                ids.append([jid, idx])
            for idx, stage in enumerate(job.stages):
                for p in stage.parents:
                    edges.append((offset + p, offset + idx))
            offset = len(nodes)
        if not nodes:
            nodes = [[0.0] * NODE_FEATURES]
            runnable = [False]
            ids = [[-1, -1]]
        return GraphObs(nodes=nodes, edges=edges, runnable=runnable, node_ids=ids)

    def step(self, stage_node: int, executors: int) -> tuple[float, bool]:
        """Assign executors to the stage behind graph node `stage_node`.

        Returns (reward accrued while advancing to the next decision point,
        done flag).
        """
        if self._done:
            self.error_count += 1
            raise EnvError("episode already finished")
        obs = self.graph_obs()
        if not (0 <= stage_node < obs.num_nodes) or not obs.runnable[stage_node]:
            self.error_count += 1
            raise EnvError(f"node {stage_node} is not a runnable stage")
        if not (1 <= executors <= self.executor_total):
            self.error_count += 1
            raise EnvError(
                f"executor count {executors} outside [1, {self.executor_total}]")
        jid, idx = obs.node_ids[stage_node]
        job = self._job(jid)
        st = self.stage_states[(jid, idx)]
        grant = min(executors, self.free, st.unstarted)
        self.free -= grant
        st.unstarted -= grant
        st.running += grant
        for _ in range(grant):
            self._push(self.clock + job.stages[idx].duration, "task_done", (jid, idx))
        self.decisions.append({
            "clock": self.clock, "job": jid, "stage": idx,
            "requested": int(executors), "granted": int(grant),
        })
        reward = self._advance_to_decision_point()
        return reward, self._done

    # -- accounting -------------------------------------------------------------

    def job_records(self) -> list:
        return [self.records[j.job_id] for j in self.jobs
                if j.job_id in self.records]

    def completion_times(self) -> list:
        recs = self.job_records()
        if len(recs) != len(self.jobs) or not all(r.complete for r in recs):
            raise InputError("episode has incomplete jobs")
        return [jct(r) for r in recs]

    def busy_executor_seconds(self) -> float:
        """Total work completed so far: finished tasks x duration."""
        total = 0.0
        for (jid, idx), st in self.stage_states.items():
            total += st.finished * self._job(jid).stages[idx].duration
        return total


# -- workload synthesis ------------------------------------------------------------

_TEMPLATES = ("chain", "tree", "diamond")


def _template_stages(kind: str, rng: np.random.Generator) -> list:
    def stage(parents=()):
        return JobStage(task_count=int(rng.integers(1, 9)),
                        duration=float(rng.uniform(1.0, 10.0)),
                        parents=tuple(parents))

    if kind == "chain":
        n = int(rng.integers(2, 5))
        return [stage(() if i == 0 else (i - 1,)) for i in range(n)]
    if kind == "tree":
        fan = int(rng.integers(2, 4))
        return [stage()] + [stage((0,)) for _ in range(fan)]
    if kind == "diamond":
        return [stage(), stage((0,)), stage((0,)), stage((1, 2))]
    raise ConfigError(f"unknown template {kind!r}")


def synth_workload(job_count: int, executor_total: int,
                   rng: np.random.Generator,
                   mean_arrival_gap_s: float = 6.0) -> tuple[list, int]:
    """Poisson job arrivals with DAG shapes drawn from a template library."""
    if job_count < 1 or executor_total < 1:
        raise InputError("need positive job and executor counts")
    jobs = []
    t = 0.0
    for jid in range(job_count):
        if jid > 0:
            t += float(rng.exponential(mean_arrival_gap_s))
        kind = _TEMPLATES[int(rng.integers(len(_TEMPLATES)))]
        jobs.append(Job(job_id=jid, arrival=t,
                        stages=tuple(_template_stages(kind, rng))))
    return jobs, int(executor_total)


def executor_level_ladder(executor_total: int) -> tuple:
    """Discrete executor-count levels: standard steps capped at the total."""
    base = [1, 2, 5, 10, 20, 50, 100]
    levels = sorted({min(b, executor_total) for b in base if b <= executor_total}
                    | {executor_total})
    return tuple(levels)


def save_workload(path, jobs, executor_total: int) -> Path:
    path = Path(path)
    path.write_text(json.dumps({
        "format_version": 1,
        "executor_total": executor_total,
        "jobs": [{
            "id": j.job_id, "arrival": j.arrival,
            "stages": [{"tasks": s.task_count, "duration": s.duration,
                        "parents": list(s.parents)} for s in j.stages],
        } for j in jobs],
    }, indent=2) + "\n")
    return path


def load_workload(path) -> tuple[list, int]:
    d = json.loads(Path(path).read_text())
    if d.get("format_version") != 1:
        raise InputError(f"unsupported workload version in {path}")
    jobs = [Job(job_id=j["id"], arrival=j["arrival"],
                stages=tuple(JobStage(s["tasks"], s["duration"],
                                      tuple(s["parents"]))
                             for s in j["stages"]))
            for j in d["jobs"]]
    return jobs, int(d["executor_total"])
