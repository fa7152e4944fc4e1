"""Trace-driven task environments."""

from .abr import AbrEnv, AbrStepResult, BandwidthTrace, VideoManifest, qoe, synth_trace, synth_video
from .cjs import ClusterEnv, Job, JobStage, synth_workload

__all__ = [
    "AbrEnv", "AbrStepResult", "BandwidthTrace", "VideoManifest", "qoe",
    "synth_trace", "synth_video",
    "ClusterEnv", "Job", "JobStage", "synth_workload",
]
