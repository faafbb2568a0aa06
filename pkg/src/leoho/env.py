"""The handover MDP.

One episode is ``horizon`` handover opportunities.  Each slot runs, in order:
request derivation, admission against remaining resource blocks, two-step
random access with preamble contention, completion bookkeeping, metrics, and
reward.  The constellation then advances one slot and measurements fold new
samples.

Conventions, fixed across the whole package:

* Resource blocks are an episode-total budget per target plane.  A terminal
  that completes handover holds one block for the rest of the episode; a
  terminal that was granted a block but lost the preamble contention gives
  it back at the end of the slot.
* The per-slot delay metric ``D`` counts terminals still lacking access
  after the slot's completions, so a run where everyone succeeds at the
  first opportunity scores a delay sum of 0.
* The reward is ``-nu * D - C`` where ``C`` sums both collision rates.
  ``nu`` therefore sets how expensive waiting is relative to colliding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from leoho import link, orbital


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending knob."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class FeatureMask:
    """Which blocks the observation vector carries.

    The first three are locally observable at the serving satellite.
    ``a3_centralized`` appends per-(terminal, target) A3 event flags, which
    require terminal-side measurements and exist as an upper-bound study.
    """

    time_index: bool = True
    accessed_vector: bool = True
    prev_action: bool = True
    a3_centralized: bool = False


@dataclass(frozen=True)
class ScenarioConfig:
    """All environment knobs for one scenario."""

    num_ues: int = 10
    num_planes: int = 3  # plane 0 serves; planes 1..K-1 are handover targets
    rb_per_target: tuple[int, ...] = (10, 10)  # episode-total budget per target
    num_preambles: int = 50
    horizon: int = 20  # handover opportunities per episode
    slot_s: float = 0.3
    nu: float = 1.0  # delay weight in the reward
    area_m: float = 1000.0
    altitude_m: float = 550e3
    ue_positions: tuple | None = None  # explicit (J, 3) metres, else uniform
    seed: int = 0
    features: FeatureMask = field(default_factory=FeatureMask)
    shadowing_sigma_db: float = 2.0
    dl_eirp_dbw: float = 10.0
    terminal_profile: str = "handheld"  # names a link.PROFILES preset
    measurement_carrier_ghz: float = 0.0  # 0 = use the terminal profile's carrier
    a3_offset_db: float = 1.0
    a3_trigger_slots: int = 1
    measurement_period_s: float = 0.15
    iir_order: float = 4.0
    sats_per_plane: int = 1

    def __post_init__(self) -> None:
        if self.num_ues < 1:
            raise ConfigError("num_ues", "need at least one terminal")
        if self.num_planes < 2:
            raise ConfigError("num_planes", "need a serving plane and at least one target")
        if len(self.rb_per_target) != self.num_planes - 1:
            raise ConfigError(
                "rb_per_target",
                f"expected {self.num_planes - 1} entries, got {len(self.rb_per_target)}",
            )
        if any(r < 0 for r in self.rb_per_target):
            raise ConfigError("rb_per_target", "resource blocks must be non-negative")
        if self.num_preambles < 1:
            raise ConfigError("num_preambles", "need at least one preamble signature")
        if self.horizon < 1:
            raise ConfigError("horizon", "need at least one handover opportunity")
        if self.slot_s <= 0:
            raise ConfigError("slot_s", "slot duration must be positive")
        if self.nu < 0:
            raise ConfigError("nu", "reward weight must be non-negative")
        if self.area_m <= 0:
            raise ConfigError("area_m", "area side must be positive")
        if self.altitude_m <= 0:
            raise ConfigError("altitude_m", "altitude must be positive")
        if self.shadowing_sigma_db < 0:
            raise ConfigError("shadowing_sigma_db", "sigma must be non-negative")
        if self.a3_trigger_slots < 1:
            raise ConfigError("a3_trigger_slots", "trigger count must be at least 1")
        if self.ue_positions is not None and len(self.ue_positions) != self.num_ues:
            raise ConfigError("ue_positions", f"expected {self.num_ues} positions")
        if self.terminal_profile not in link.PROFILES:
            raise ConfigError(
                "terminal_profile", f"expected one of {sorted(link.PROFILES)}, got {self.terminal_profile!r}"
            )
        if self.measurement_carrier_ghz < 0:
            raise ConfigError("measurement_carrier_ghz", "carrier must be non-negative")

    @property
    def num_targets(self) -> int:
        return self.num_planes - 1

    @property
    def beta_l3(self) -> float:
        return link.beta_from_iir_order(self.iir_order)

    @property
    def profile(self) -> link.TerminalProfile:
        return link.PROFILES[self.terminal_profile]

    @property
    def carrier_ghz(self) -> float:
        """Downlink measurement carrier: explicit override or the profile's band."""
        return self.measurement_carrier_ghz or self.profile.carrier_ghz


def observation_size(config: ScenarioConfig, features: FeatureMask | None = None) -> int:
    f = config.features if features is None else features
    j, k = config.num_ues, config.num_planes
    size = 0
    if f.time_index:
        size += 1
    if f.accessed_vector:
        size += j
    if f.prev_action:
        size += j * k
    if f.a3_centralized:
        size += j * (k - 1)
    return size


def one_hot(actions: np.ndarray, num_planes: int) -> np.ndarray:
    """(J,) integer actions to a (J, K) one-hot matrix."""
    actions = np.asarray(actions)
    out = np.zeros((actions.shape[0], num_planes))
    out[np.arange(actions.shape[0]), actions] = 1.0
    return out


@dataclass
class EnvState:
    """Full mutable simulation state for one episode.

    ``measurements`` is maintained lazily from its own random stream (see
    :meth:`HandoverEnv.measurements`): folding it early or late never
    changes the admission/contention draws, and the folded values are
    identical either way because sample geometry is the closed-form
    position at each instant.
    """

    slot: int
    accessed: np.ndarray  # (J,) bool, monotone within an episode
    rb_remaining: np.ndarray  # (K-1,) int
    prev_action: np.ndarray  # (J,) int in [0, K)
    constellation: orbital.ConstellationState
    measurements: link.MeasurementState | None
    ue_positions: np.ndarray  # (J, 3) m
    rng: np.random.Generator
    seed_key: tuple[int, ...] = (0,)


@dataclass(frozen=True)
class StepOutcome:
    """Everything one slot produced, per terminal and aggregated."""

    slot: int  # 1-based opportunity index
    requested: np.ndarray  # (J,) target plane requested, 0 = none
    command: np.ndarray  # (J,) target granted, 0 = none
    preamble: np.ndarray  # (J,) drawn signature, 0 = none
    rb_collision: np.ndarray  # (J,) bool, request refused for lack of blocks
    prach_collision: np.ndarray  # (J,) bool, shared signature on the target
    newly_accessed: np.ndarray  # (J,) bool
    c_r_per_target: np.ndarray  # (K-1,)
    c_p: float
    c_total: float
    d: float
    reward: float


@dataclass(frozen=True)
class MetricsRecord:
    """Episode-level aggregates."""

    sum_delay: float
    sum_collision_rb: float
    sum_collision_prach: float
    ho_success: float
    episode_return: float

    @property
    def sum_collision(self) -> float:
        return self.sum_collision_rb + self.sum_collision_prach


def admission(
    requested: np.ndarray,
    rb_remaining: np.ndarray,
    num_ues: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grant handover requests against the remaining per-target blocks.

    When a target has fewer blocks than requesters, the granted subset is
    drawn uniformly at random.  Returns (command, rb_collision, c_r) where
    ``command[j]`` is the granted target plane (0 if none), ``rb_collision``
    flags refused requesters, and ``c_r`` is the per-target collision rate
    (excess requesters over the whole population).
    """
    requested = np.asarray(requested)
    num_targets = len(rb_remaining)
    num_requesters = requested.shape[0]
    command = np.zeros(num_requesters, dtype=np.int64)
    rb_collision = np.zeros(num_requesters, dtype=bool)
    c_r = np.zeros(num_targets)
    buckets: list[list[int]] = [[] for _ in range(num_targets + 1)]
    for j, target in enumerate(requested.tolist()):
        if target:
            buckets[target].append(j)
    for k in range(1, num_targets + 1):
        requesters = buckets[k]
        n_req = len(requesters)
        if n_req == 0:
            continue
        blocks = int(rb_remaining[k - 1])
        if n_req <= blocks:
            command[requesters] = k
            continue
        c_r[k - 1] = (n_req - blocks) / num_ues
        if blocks > 0:
            granted_pos = rng.choice(n_req, size=blocks, replace=False)
            granted = {requesters[i] for i in granted_pos.tolist()}
        else:
            granted = set()
        for j in requesters:
            if j in granted:
                command[j] = k
            else:
                rb_collision[j] = True
    return command, rb_collision, c_r


def rach(
    command: np.ndarray,
    num_preambles: int,
    num_ues: int,
    rng: np.random.Generator,
    num_targets: int | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Two-step random access for every commanded terminal.

    Each draws a signature uniformly from {1..P} on its target; terminals
    sharing a (target, signature) pair collide and fail, the rest complete.
    Returns (preamble, prach_collision, c_p).
    """
    command = np.asarray(command)
    preamble = np.zeros(command.shape[0], dtype=np.int64)
    prach_collision = np.zeros(command.shape[0], dtype=bool)
    if num_targets is None:
        num_targets = int(command.max()) if command.shape[0] else 0
    buckets: list[list[int]] = [[] for _ in range(num_targets + 1)]
    for j, target in enumerate(command.tolist()):
        if target:
            buckets[target].append(j)
    collided = 0
    for k in range(1, num_targets + 1):
        commanded = buckets[k]
        if not commanded:
            continue
        draws = rng.integers(1, num_preambles + 1, size=len(commanded)).tolist()
        seen: dict[int, int] = {}
        for d in draws:
            seen[d] = seen.get(d, 0) + 1
        for j, d in zip(commanded, draws):
            preamble[j] = d
            if seen[d] > 1:
                prach_collision[j] = True
                collided += 1
    c_p = collided / num_ues
    return preamble, prach_collision, c_p


class HandoverEnv:
    """One serving satellite's handover episode, stepped action-by-action.

    A single instance is owned by one caller at a time; independent
    instances are safe to run in parallel.  All randomness flows through the
    per-episode generator seeded at :meth:`reset`, and the draw order within
    a slot is fixed, so traces are bit-reproducible from (config, seed,
    actions).
    """

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.orbital_config = orbital.default_constellation(
            altitude_m=config.altitude_m,
            num_planes=config.num_planes,
            slot_duration_s=config.slot_s,
            horizon=config.horizon,
            area_m=config.area_m,
            sats_per_plane=config.sats_per_plane,
        )
        self.state: EnvState | None = None
        # Downlink budget constant: everything except the distance term.
        self._rsrp_const = (
            config.dl_eirp_dbw + 30.0 - (20.0 * np.log10(config.carrier_ghz) + 92.45)
        )
        # Shared per-episode invariants; never mutated after construction.
        initial = orbital.initial_state(self.orbital_config)
        self._initial_constellation = initial
        self._init_positions = initial.positions
        self._velocities = initial.velocities
        self._rb_initial = np.array(config.rb_per_target, dtype=np.int64)
        self._head_offsets = np.arange(config.num_ues) * config.num_planes
        self._meas_slot = -1  # slots folded into measurements; -1 = uninitialised
        self._meas_rng: np.random.Generator | None = None

    @property
    def done(self) -> bool:
        return self.state is None or self.state.slot >= self.config.horizon

    def reset(self, seed=None) -> np.ndarray:
        """Start a fresh episode; ``seed`` may be an int or a sequence of ints."""
        cfg = self.config
        raw = cfg.seed if seed is None else seed
        if isinstance(raw, (int, np.integer)):
            seed_key: tuple[int, ...] = (int(raw),)
        else:
            seed_key = tuple(int(v) for v in raw)
        rng = np.random.default_rng(seed_key)
        if cfg.ue_positions is not None:
            ue_pos = np.asarray(cfg.ue_positions, dtype=float)
            if ue_pos.shape[1] == 2:
                ue_pos = np.hstack([ue_pos, np.zeros((cfg.num_ues, 1))])
        else:
            xy = rng.uniform(0.0, cfg.area_m, size=(cfg.num_ues, 2))
            ue_pos = np.hstack([xy, np.zeros((cfg.num_ues, 1))])

        self._meas_slot = -1
        self._meas_rng = None
        self.state = EnvState(
            slot=0,
            accessed=np.zeros(cfg.num_ues, dtype=bool),
            rb_remaining=self._rb_initial.copy(),
            prev_action=np.zeros(cfg.num_ues, dtype=np.int64),
            constellation=self._initial_constellation,
            measurements=None,
            ue_positions=ue_pos,
            rng=rng,
            seed_key=seed_key,
        )
        return self.observe()

    def _rsrp(self, positions: np.ndarray, ue_pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Instantaneous downlink RSRP per (terminal, plane), dBm.

        ``positions`` may carry a leading axis of sample instants.
        """
        d_km = orbital.nearest_distances_km(positions, ue_pos)
        base = self._rsrp_const - 20.0 * np.log10(d_km)
        sigma = self.config.shadowing_sigma_db
        if sigma > 0.0:
            base += sigma * rng.standard_normal(base.shape)
        return base

    def measurements(self) -> link.MeasurementState:
        """Measurement state folded up to the current slot.

        Measurement shadowing has its own random stream, so consumers that
        never look at measurements leave the contention draws untouched,
        and catching up late folds exactly the samples an eager per-slot
        update would have.
        """
        state = self.state
        if state is None:
            raise RuntimeError("reset() must be called first")
        cfg = self.config
        if self._meas_slot < 0:
            self._meas_rng = np.random.default_rng(state.seed_key + (0x4D53,))
            first_l1 = self._rsrp(self._init_positions, state.ue_positions, self._meas_rng)
            state.measurements = link.MeasurementState.initialise(
                first_l1,
                beta_l3=cfg.beta_l3,
                iir_order=cfg.iir_order,
                measurement_period_s=cfg.measurement_period_s,
                a3_offset_db=cfg.a3_offset_db,
            )
            self._meas_slot = 0
        while self._meas_slot < state.slot:
            samples = self._rsrp(
                self._sample_positions(self._meas_slot), state.ue_positions, self._meas_rng
            )
            state.measurements.fold_sample(samples[0])
            state.measurements.fold_sample(samples[1])
            self._meas_slot += 1
        return state.measurements

    def _sample_positions(self, slot: int) -> np.ndarray:
        """The two measurement instants of a slot: mid-slot and slot end."""
        dt = self.config.slot_s
        out = np.empty((2,) + self._init_positions.shape)
        out[0] = self._init_positions + ((slot + 0.5) * dt) * self._velocities
        out[1] = self._init_positions + ((slot + 1.0) * dt) * self._velocities
        return out

    def step(self, actions: Sequence[int] | np.ndarray) -> tuple[np.ndarray, StepOutcome]:
        cfg = self.config
        state = self.state
        if state is None:
            raise RuntimeError("reset() must be called before step()")
        if state.slot >= cfg.horizon:
            raise RuntimeError(f"episode finished after {cfg.horizon} opportunities")
        actions = np.asarray(actions, dtype=np.int64)
        if actions.shape != (cfg.num_ues,):
            raise ValueError(f"actions must have shape ({cfg.num_ues},), got {actions.shape}")
        if actions.min() < 0 or actions.max() >= cfg.num_planes:
            raise ValueError("actions must lie in [0, num_planes)")

        # Request derivation: already-accessed terminals never request.
        requested = np.where(state.accessed, 0, actions)

        command, rb_collision, c_r = admission(
            requested, state.rb_remaining, cfg.num_ues, state.rng
        )
        preamble, prach_collision, c_p = rach(
            command, cfg.num_preambles, cfg.num_ues, state.rng, cfg.num_targets
        )

        newly = (command > 0) & ~prach_collision
        if newly.any():
            # Completed terminals keep their block; contention losers return theirs.
            completions = np.bincount(command[newly], minlength=cfg.num_planes)
            state.rb_remaining -= completions[1 : cfg.num_planes]
            state.accessed |= newly

        d = float(cfg.num_ues - state.accessed.sum()) / cfg.num_ues
        c_total = float(c_r.sum()) + c_p
        reward = -cfg.nu * d - c_total

        state.constellation = orbital.propagate(state.constellation, self.orbital_config, 1)
        state.prev_action = actions.copy()
        state.slot += 1

        outcome = StepOutcome(
            slot=state.slot,
            requested=requested,
            command=command,
            preamble=preamble,
            rb_collision=rb_collision,
            prach_collision=prach_collision,
            newly_accessed=newly,
            c_r_per_target=c_r,
            c_p=c_p,
            c_total=c_total,
            d=d,
            reward=reward,
        )
        return self.observe(), outcome

    def observe(self, features: FeatureMask | None = None) -> np.ndarray:
        f = self.config.features if features is None else features
        if f.a3_centralized:
            self.measurements()
        if features is None:
            return _observe_fast(self)
        return observe(self.state, self.config, features)

    def metrics(self, outcomes: Sequence[StepOutcome]) -> MetricsRecord:
        return episode_metrics(outcomes, self.state)


def observe(
    state: EnvState, config: ScenarioConfig, features: FeatureMask | None = None
) -> np.ndarray:
    """Observation vector: [n/N] + accessed + one-hot previous action (+ A3 flags).

    Blocks appear in that fixed order; disabled blocks are dropped outright.
    With ``a3_centralized`` the state's measurements must be current; go
    through :meth:`HandoverEnv.observe` for the managed path.
    """
    f = config.features if features is None else features
    j, k = config.num_ues, config.num_planes
    out = np.zeros(observation_size(config, f))
    pos = 0
    if f.time_index:
        out[0] = state.slot / config.horizon
        pos = 1
    if f.accessed_vector:
        out[pos : pos + j] = state.accessed
        pos += j
    if f.prev_action:
        out[pos + np.arange(j) * k + state.prev_action] = 1.0
        pos += j * k
    if f.a3_centralized:
        out[pos : pos + j * (k - 1)] = state.measurements.a3_flags(config.a3_offset_db).ravel()
    return out


def _observe_fast(env: "HandoverEnv") -> np.ndarray:
    """Default-mask observation on the env's cached offsets (hot path)."""
    state = env.state
    cfg = env.config
    f = cfg.features
    j, k = cfg.num_ues, cfg.num_planes
    out = np.zeros(observation_size(cfg, f))
    pos = 0
    if f.time_index:
        out[0] = state.slot / cfg.horizon
        pos = 1
    if f.accessed_vector:
        out[pos : pos + j] = state.accessed
        pos += j
    if f.prev_action:
        out[pos + env._head_offsets + state.prev_action] = 1.0
        pos += j * k
    if f.a3_centralized:
        out[pos : pos + j * (k - 1)] = state.measurements.a3_flags(cfg.a3_offset_db).ravel()
    return out


def episode_metrics(outcomes: Sequence[StepOutcome], final_state: EnvState) -> MetricsRecord:
    if len(outcomes) != final_state.slot:
        raise ValueError(
            f"got {len(outcomes)} outcomes for {final_state.slot} completed slots"
        )
    num_ues = final_state.accessed.shape[0]
    return MetricsRecord(
        sum_delay=float(sum(o.d for o in outcomes)),
        sum_collision_rb=float(sum(float(o.c_r_per_target.sum()) for o in outcomes)),
        sum_collision_prach=float(sum(o.c_p for o in outcomes)),
        ho_success=float(final_state.accessed.sum()) / num_ues,
        episode_return=float(sum(o.reward for o in outcomes)),
    )


TRACE_FIELDS_FIXED = ["episode", "n", "D"]


def trace_header(num_targets: int) -> list[str]:
    cols = list(TRACE_FIELDS_FIXED)
    cols += [f"C_R_{k}" for k in range(1, num_targets + 1)]
    cols += ["C_P", "reward", "accessed_count"]
    return cols


def write_trace_csv(
    path, episodes: Iterable[tuple[int, Sequence[StepOutcome]]], num_ues: int, num_targets: int
) -> None:
    """One row per slot: (episode, n, D, C_R_1.., C_P, reward, accessed_count)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_header(num_targets))
        for episode_idx, outcomes in episodes:
            for o in outcomes:
                accessed = round(num_ues * (1.0 - o.d))
                row = [episode_idx, o.slot, f"{o.d:.6f}"]
                row += [f"{v:.6f}" for v in o.c_r_per_target]
                row += [f"{o.c_p:.6f}", f"{o.reward:.6f}", accessed]
                writer.writerow(row)
