"""Desk-scale LEO satellite handover lab.

Simulates slot-by-slot handover of ground terminals between satellites on
crossing orbital planes, with exact accounting of admission (resource-block)
collisions, random-access preamble collisions, and access delay.  Ships three
decision policies (A3-triggered baseline, random heuristic, learned policy),
a V-trace actor-learner trainer, and a CLI for reproducing the experiment
sweeps.
"""

from leoho.env import FeatureMask, HandoverEnv, MetricsRecord, ScenarioConfig
from leoho.training import VtraceConfig, train

__all__ = [
    "FeatureMask",
    "HandoverEnv",
    "MetricsRecord",
    "ScenarioConfig",
    "VtraceConfig",
    "train",
]
