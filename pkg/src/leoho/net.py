"""Policy/value network: a small tanh MLP with per-terminal categorical heads.

Implemented directly on numpy arrays so gradients are exact, inspectable,
and cheap at desk scale (observation dims in the tens, batch in the
thousands).  The trunk is shared; each terminal gets one head of
``num_actions`` logits and a single linear value head estimates the state
value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TENSOR_NAMES = ("w1", "b1", "w2", "b2", "w_pi", "b_pi", "w_v", "b_v")


@dataclass
class PolicyParameters:
    """All trainable tensors plus the shape metadata needed to rebuild them."""

    obs_dim: int
    num_ues: int
    num_actions: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w_pi: np.ndarray  # (hidden2, num_ues * num_actions)
    b_pi: np.ndarray
    w_v: np.ndarray  # (hidden2,)
    b_v: np.ndarray  # (1,)

    def __post_init__(self) -> None:
        h1 = self.w1.shape[1]
        h2 = self.w2.shape[1]
        heads = self.num_ues * self.num_actions
        expected = {
            "w1": (self.obs_dim, h1),
            "b1": (h1,),
            "w2": (h1, h2),
            "b2": (h2,),
            "w_pi": (h2, heads),
            "b_pi": (heads,),
            "w_v": (h2,),
            "b_v": (1,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} must have shape {shape}, got {actual}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return self.w1.shape[1], self.w2.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TENSOR_NAMES}

    def copy(self) -> "PolicyParameters":
        return PolicyParameters(
            obs_dim=self.obs_dim,
            num_ues=self.num_ues,
            num_actions=self.num_actions,
            **{name: getattr(self, name).copy() for name in TENSOR_NAMES},
        )


def init_params(
    obs_dim: int,
    num_ues: int,
    num_actions: int,
    hidden: tuple[int, int] = (128, 128),
    rng: np.random.Generator | None = None,
    head_scale: float = 0.01,
) -> PolicyParameters:
    """Xavier trunk, near-zero heads so the initial policy is near uniform."""
    rng = np.random.default_rng(0) if rng is None else rng
    h1, h2 = hidden
    heads = num_ues * num_actions

    def xavier(fan_in: int, fan_out: int) -> np.ndarray:
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        return scale * rng.standard_normal((fan_in, fan_out))

    return PolicyParameters(
        obs_dim=obs_dim,
        num_ues=num_ues,
        num_actions=num_actions,
        w1=xavier(obs_dim, h1),
        b1=np.zeros(h1),
        w2=xavier(h1, h2),
        b2=np.zeros(h2),
        w_pi=head_scale * rng.standard_normal((h2, heads)),
        b_pi=np.zeros(heads),
        w_v=head_scale * rng.standard_normal(h2),
        b_v=np.zeros(1),
    )


def zero_params(
    obs_dim: int, num_ues: int, num_actions: int, hidden: tuple[int, int] = (128, 128)
) -> PolicyParameters:
    h1, h2 = hidden
    heads = num_ues * num_actions
    return PolicyParameters(
        obs_dim=obs_dim,
        num_ues=num_ues,
        num_actions=num_actions,
        w1=np.zeros((obs_dim, h1)),
        b1=np.zeros(h1),
        w2=np.zeros((h1, h2)),
        b2=np.zeros(h2),
        w_pi=np.zeros((h2, heads)),
        b_pi=np.zeros(heads),
        w_v=np.zeros(h2),
        b_v=np.zeros(1),
    )


@dataclass
class ForwardCache:
    """Activations kept for the backward pass."""

    inputs: np.ndarray  # (B, obs_dim)
    h1: np.ndarray  # (B, hidden1) post-tanh
    h2: np.ndarray  # (B, hidden2) post-tanh


def forward_batch(
    params: PolicyParameters, obs: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Logits (B, J, K), values (B,), and the cache for backprop."""
    obs = np.asarray(obs, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != params.obs_dim:
        raise ValueError(f"observations must be (B, {params.obs_dim}), got {obs.shape}")
    h1 = np.tanh(obs @ params.w1 + params.b1)
    h2 = np.tanh(h1 @ params.w2 + params.b2)
    logits = (h2 @ params.w_pi + params.b_pi).reshape(
        obs.shape[0], params.num_ues, params.num_actions
    )
    values = h2 @ params.w_v + params.b_v[0]
    return logits, values, ForwardCache(inputs=obs, h1=h1, h2=h2)


def forward(params: PolicyParameters, obs: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-observation forward pass: ((J, K) logits, scalar value)."""
    logits, values, _ = forward_batch(params, np.asarray(obs, dtype=float)[None, :])
    return logits[0], float(values[0])


def backward_trunk(
    params: PolicyParameters,
    cache: ForwardCache,
    dlogits: np.ndarray,
    dvalues: np.ndarray,
) -> dict[str, np.ndarray]:
    """Exact gradients of any scalar loss given its logits/value gradients."""
    b = cache.inputs.shape[0]
    dlogits_flat = dlogits.reshape(b, -1)
    grads: dict[str, np.ndarray] = {}
    grads["w_pi"] = cache.h2.T @ dlogits_flat
    grads["b_pi"] = dlogits_flat.sum(axis=0)
    grads["w_v"] = cache.h2.T @ dvalues
    grads["b_v"] = np.array([dvalues.sum()])

    dh2 = dlogits_flat @ params.w_pi.T + dvalues[:, None] * params.w_v[None, :]
    dz2 = dh2 * (1.0 - cache.h2**2)
    grads["w2"] = cache.h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)

    dh1 = dz2 @ params.w2.T
    dz1 = dh1 * (1.0 - cache.h1**2)
    grads["w1"] = cache.inputs.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def head_log_probs(logits: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-head log-probability of the chosen actions.

    ``logits`` is (..., J, K), ``actions`` (..., J) integer; returns (..., J).
    """
    logp = log_softmax(logits)
    return np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]


def head_entropy(logits: np.ndarray) -> np.ndarray:
    """Entropy of each categorical head, shape (..., J)."""
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)
