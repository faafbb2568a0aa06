"""The three handover decision policies behind one ``act`` interface.

All of them pin already-accessed terminals to action 0: the environment
would ignore their requests anyway, and for the learned policy the pin keeps
recorded behavior log-probabilities consistent (a pinned head chose 0 with
probability one).
"""

from __future__ import annotations

import numpy as np

from leoho import net
from leoho.env import HandoverEnv
from leoho.link import MeasurementState


def conventional_decide(
    measurements: MeasurementState,
    accessed: np.ndarray,
    offset_db: float,
    streak: np.ndarray,
    trigger_slots: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """A3-triggered handover: request the strongest target once the event holds.

    ``streak`` counts consecutive slots the A3 condition held per
    (terminal, target); it is carried by the caller and returned updated.
    A terminal requests when some target's streak reaches ``trigger_slots``,
    choosing the highest filtered measurement among those targets (ties go
    to the lowest plane index).
    """
    flags = measurements.a3_flags(offset_db)
    streak = np.where(flags, streak + 1, 0)
    eligible = streak >= trigger_slots

    actions = np.zeros(accessed.shape[0], dtype=np.int64)
    any_eligible = eligible.any(axis=1) & ~accessed
    if any_eligible.any():
        scores = np.where(eligible, measurements.l3_dbm[:, 1:], -np.inf)
        actions[any_eligible] = scores[any_eligible].argmax(axis=1) + 1
    return actions, streak


def random_decide(
    rng: np.random.Generator, accessed: np.ndarray, num_planes: int
) -> np.ndarray:
    """Uniform draw over {0..K-1} per unaccessed terminal."""
    draws = rng.integers(0, num_planes, size=accessed.shape[0])
    return np.where(accessed, 0, draws)


def dho_decide(
    params: net.PolicyParameters,
    observation: np.ndarray,
    rng: np.random.Generator | None = None,
    mode: str = "sample",
    accessed: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Learned policy: per-terminal categorical heads over the planes.

    Returns the chosen actions and the per-head log-probabilities under the
    current policy.  Pinned (accessed) heads report action 0 with
    log-probability 0.
    """
    logits, _ = net.forward(params, observation)
    if mode == "greedy":
        actions = logits.argmax(axis=1)
    elif mode == "sample":
        if rng is None:
            raise ValueError("sampling mode needs a random generator")
        gumbel = rng.gumbel(size=logits.shape)
        actions = (logits + gumbel).argmax(axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    log_probs = net.head_log_probs(logits, actions)
    if accessed is not None and accessed.any():
        actions = np.where(accessed, 0, actions)
        log_probs = np.where(accessed, 0.0, log_probs)
    return actions, log_probs


class ConventionalAgent:
    """Stateful wrapper carrying the A3 streak counters across a slot loop."""

    name = "conventional"

    def __init__(self, offset_db: float = 1.0, trigger_slots: int = 1):
        self.offset_db = offset_db
        self.trigger_slots = trigger_slots
        self._streak: np.ndarray | None = None

    def begin_episode(self, env: HandoverEnv, rng: np.random.Generator) -> None:
        cfg = env.config
        self._streak = np.zeros((cfg.num_ues, cfg.num_targets), dtype=np.int64)

    def act(self, env: HandoverEnv, observation: np.ndarray) -> np.ndarray:
        actions, self._streak = conventional_decide(
            env.measurements(), env.state.accessed, self.offset_db, self._streak, self.trigger_slots
        )
        return actions


class RandomAgent:
    name = "random"

    def __init__(self) -> None:
        self._rng: np.random.Generator | None = None

    def begin_episode(self, env: HandoverEnv, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env: HandoverEnv, observation: np.ndarray) -> np.ndarray:
        return random_decide(self._rng, env.state.accessed, env.config.num_planes)


class DhoAgent:
    """Learned policy, in greedy (evaluation) or sampling (behavior) mode."""

    name = "dho"

    def __init__(self, params: net.PolicyParameters, mode: str = "greedy"):
        self.params = params
        self.mode = mode
        self._rng: np.random.Generator | None = None

    def begin_episode(self, env: HandoverEnv, rng: np.random.Generator) -> None:
        self._rng = rng

    def act(self, env: HandoverEnv, observation: np.ndarray) -> np.ndarray:
        actions, _ = dho_decide(
            self.params, observation, self._rng, self.mode, env.state.accessed
        )
        return actions


def make_agent(
    kind: str,
    params: net.PolicyParameters | None = None,
    offset_db: float = 1.0,
    trigger_slots: int = 1,
    mode: str = "greedy",
):
    if kind == "conventional":
        return ConventionalAgent(offset_db=offset_db, trigger_slots=trigger_slots)
    if kind == "random":
        return RandomAgent()
    if kind == "dho":
        if params is None:
            raise ValueError("the learned agent needs policy parameters")
        return DhoAgent(params, mode=mode)
    raise ValueError(f"unknown agent kind {kind!r}")
