"""V-trace targets: truncated-importance-sampling value corrections.

``vtrace_from_values`` is the pure recursion over already-computed values
and log importance ratios; ``vtrace_targets`` evaluates the current network
over a recorded segment first.  Both return the per-step targets and the
policy-gradient advantages built from them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from leoho import net


@dataclass
class TrajectorySegment:
    """One recorded episode from a behavior policy.

    ``observations`` has one extra row (the state after the last step);
    ``bootstrap_value`` stands in for the value of that state and is 0 for
    terminal episodes.  ``masks`` flags which heads actually chose (already
    accessed terminals are pinned to action 0 with log-probability 0).
    """

    observations: np.ndarray  # (L + 1, obs_dim)
    actions: np.ndarray  # (L, J) int
    behavior_logprobs: np.ndarray  # (L, J) per-head log mu
    rewards: np.ndarray  # (L,)
    masks: np.ndarray  # (L, J) 1.0 = head active
    bootstrap_value: float = 0.0

    def __post_init__(self) -> None:
        length = self.rewards.shape[0]
        if self.observations.shape[0] != length + 1:
            raise ValueError("observations must hold one row per step plus the final state")
        for name in ("actions", "behavior_logprobs", "masks"):
            if getattr(self, name).shape[0] != length:
                raise ValueError(f"{name} must have {length} rows")
        if not np.all(np.isfinite(self.behavior_logprobs)):
            raise ValueError("behavior log-probabilities must be finite")

    def __len__(self) -> int:
        return self.rewards.shape[0]


def vtrace_from_values(
    rewards: np.ndarray,
    values: np.ndarray,
    bootstrap_value: float,
    log_ratios: np.ndarray,
    gamma: float,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backward-recursion V-trace over one segment.

    ``log_ratios[n]`` is log pi(a_n|s_n) - log mu(a_n|s_n) for the joint
    action.  Returns (targets, pg_advantages, rho) where
    ``pg_advantages[n] = rho_n * (r_n + gamma * v_{n+1} - V(s_n))`` with
    ``v_L`` the bootstrap value.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    log_ratios = np.asarray(log_ratios, dtype=float)
    length = rewards.shape[0]
    if values.shape[0] != length or log_ratios.shape[0] != length:
        raise ValueError("rewards, values and log_ratios must have equal length")

    with np.errstate(over="ignore"):
        ratios = np.exp(log_ratios)
    if not np.all(np.isfinite(ratios)):
        raise ValueError("non-finite importance ratios; behavior log-probs corrupt?")
    rho = np.minimum(rho_bar, ratios)
    c = np.minimum(c_bar, ratios)

    values_ext = np.append(values, bootstrap_value)
    deltas = rho * (rewards + gamma * values_ext[1:] - values_ext[:-1])

    targets = np.empty(length + 1)
    targets[length] = bootstrap_value
    correction = 0.0  # v_n - V(s_n), accumulated backwards
    for n in range(length - 1, -1, -1):
        correction = deltas[n] + gamma * c[n] * (targets[n + 1] - values_ext[n + 1])
        targets[n] = values_ext[n] + correction

    q = rewards + gamma * targets[1:]
    pg_advantages = rho * (q - values_ext[:-1])
    return targets[:-1], pg_advantages, rho


def segment_log_ratios(
    params: net.PolicyParameters, segment: TrajectorySegment, logits: np.ndarray | None = None
) -> np.ndarray:
    """Joint log pi/mu ratio per step; masked heads contribute nothing."""
    if logits is None:
        logits, _, _ = net.forward_batch(params, segment.observations[:-1])
    target_logp = net.head_log_probs(logits, segment.actions) * segment.masks
    behavior_logp = segment.behavior_logprobs * segment.masks
    return (target_logp - behavior_logp).sum(axis=1)


def vtrace_targets(
    params: net.PolicyParameters,
    segment: TrajectorySegment,
    gamma: float,
    rho_bar: float = 1.0,
    c_bar: float = 1.0,
    vtrace_enabled: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Targets and advantages for a segment under the current parameters."""
    _, values, _ = net.forward_batch(params, segment.observations[:-1])
    if vtrace_enabled:
        log_ratios = segment_log_ratios(params, segment)
    else:
        log_ratios = np.zeros(len(segment))
    targets, pg_advantages, _ = vtrace_from_values(
        segment.rewards, values, segment.bootstrap_value, log_ratios, gamma, rho_bar, c_bar
    )
    return targets, pg_advantages
