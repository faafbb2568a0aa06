"""Experiment orchestration: spec files, evaluation, sweeps, reports.

A spec file is flat ``key = value`` text with dotted section prefixes
(``scenario.J = 10``); see the README for the grammar.  Every run emits
schema-stable CSVs: a summary row per (agent, sweep value), a per-slot trace,
and a learning curve when training happened.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from leoho import net
from leoho.agents import dho_decide, make_agent
from leoho.env import (
    ConfigError,
    FeatureMask,
    HandoverEnv,
    MetricsRecord,
    ScenarioConfig,
    episode_metrics,
    write_trace_csv,
)
from leoho.training import (
    VtraceConfig,
    load_checkpoint,
    save_checkpoint,
    train,
    write_curve_csv,
)

AGENT_KINDS = ("conventional", "random", "dho")

ABLATION_MASKS: dict[str, FeatureMask] = {
    "full_local": FeatureMask(),
    "no_time": FeatureMask(time_index=False),
    "no_accessed": FeatureMask(accessed_vector=False),
    "no_prev_action": FeatureMask(prev_action=False),
    "centralized": FeatureMask(a3_centralized=True),
}


def label_for_nu(nu: float) -> str:
    if math.isclose(nu, 5.0):
        return "delay-aware"
    if math.isclose(nu, 1.0 / 20.0):
        return "collision-averse"
    return ""


def scenario_with_ratios(
    base: ScenarioConfig, rb_ratio: float | None = None, preamble_ratio: float | None = None
) -> ScenarioConfig:
    """Scale per-target blocks and preambles as multiples of the UE count."""
    changes: dict = {}
    if rb_ratio is not None:
        blocks = max(0, round(rb_ratio * base.num_ues))
        changes["rb_per_target"] = tuple([blocks] * base.num_targets)
    if preamble_ratio is not None:
        changes["num_preambles"] = max(1, round(preamble_ratio * base.num_ues))
    return dataclasses.replace(base, **changes) if changes else base


def scenario_for_case(case: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Named resource regimes used throughout the result tables."""
    base = ScenarioConfig() if base is None else base
    ratios = {
        "case1": (1.0, 5.0),
        "case2": (0.3, 5.0),
        "case3": (1.0, 2.0),
        "case4": (1.0, 0.8),
        "abundant": (1.0, 2.0),  # enough blocks and signatures
        "scarce": (0.3, 0.8),  # short on both
    }
    if case not in ratios:
        raise ConfigError("case", f"unknown case {case!r}, expected one of {sorted(ratios)}")
    rb, pre = ratios[case]
    return scenario_with_ratios(base, rb_ratio=rb, preamble_ratio=pre)


# Learner schedule that converges at desk scale (tens of terminals, short
# episodes): small batches so a few thousand episodes buy a few hundred
# updates.  The VtraceConfig defaults keep the published batch size instead.
DESK_TRAINING = VtraceConfig(
    batch_size=200, learning_rate=5e-4, entropy_coeff=0.005, gamma=0.97
)


@dataclass
class ExperimentSpec:
    """Everything one experiment needs; mirrors the spec-file keys."""

    scenario: ScenarioConfig = dataclasses.field(default_factory=ScenarioConfig)
    training: VtraceConfig = dataclasses.field(default_factory=lambda: DESK_TRAINING)
    agent: str = "conventional"
    eval_episodes: int = 1000
    train_episodes: int = 2000
    master_seed: int = 0
    output_dir: str | None = None
    checkpoint: str | None = None
    eval_mode: str = "greedy"
    threshold_return: float = -2.0  # episodes-to-threshold cut for training-cost sweeps
    sweep_parameter: str | None = None
    sweep_values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.agent not in AGENT_KINDS:
            raise ConfigError("agent", f"expected one of {AGENT_KINDS}, got {self.agent!r}")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes", "need at least one evaluation episode")
        if self.train_episodes < 0:
            raise ConfigError("train_episodes", "must be non-negative")
        if self.eval_mode not in ("greedy", "sample"):
            raise ConfigError("eval_mode", f"expected greedy or sample, got {self.eval_mode!r}")


# Spec-file aliases to dataclass fields.
_SCENARIO_ALIASES = {
    "J": "num_ues",
    "K": "num_planes",
    "N": "horizon",
    "P": "num_preambles",
    "R": "rb_per_target",
    "tau": "slot_s",
    "area": "area_m",
    "altitude": "altitude_m",
}
_SPEC_TOP_KEYS = {
    "agent",
    "eval_episodes",
    "train_episodes",
    "master_seed",
    "output_dir",
    "checkpoint",
    "eval_mode",
    "threshold_return",
}


def _parse_number(text: str) -> float:
    """Float with fraction support so 'nu = 1/20' reads naturally."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_bool(text: str, key: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "on", "yes"):
        return True
    if lowered in ("0", "false", "off", "no"):
        return False
    raise ConfigError(key, f"expected a boolean, got {text!r}")


def _coerce(key: str, name: str, value: str, current):
    if isinstance(current, bool):
        return _parse_bool(value, key)
    if isinstance(current, int):
        number = _parse_number(value)
        if number != int(number):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(number)
    if isinstance(current, float):
        return _parse_number(value)
    if isinstance(current, tuple):
        return tuple(int(_parse_number(v)) for v in value.split(","))
    return value


def parse_spec_file(path) -> ExperimentSpec:
    """Parse the flat key-value experiment grammar into an ExperimentSpec."""
    scenario_kw: dict = {}
    feature_kw: dict = {}
    training_kw: dict = {}
    top_kw: dict = {}
    ratios: dict = {}
    sweep_parameter = None
    sweep_values: tuple[float, ...] = ()

    scenario_defaults = ScenarioConfig()
    training_defaults = DESK_TRAINING
    feature_defaults = FeatureMask()

    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))

        if key.startswith("scenario."):
            name = key.split(".", 1)[1]
            name = _SCENARIO_ALIASES.get(name, name)
            if name in ("rb_ratio", "preamble_ratio"):
                ratios[name] = _parse_number(value)
                continue
            if name == "rb_per_target" and "," not in value:
                # A single number means the same budget on every target.
                ratios["rb_uniform"] = int(_parse_number(value))
                continue
            if not hasattr(scenario_defaults, name):
                raise ConfigError(key, "unknown scenario field")
            scenario_kw[name] = _coerce(key, name, value, getattr(scenario_defaults, name))
        elif key.startswith("features."):
            name = key.split(".", 1)[1]
            if not hasattr(feature_defaults, name):
                raise ConfigError(key, "unknown feature flag")
            feature_kw[name] = _parse_bool(value, key)
        elif key.startswith("training."):
            name = key.split(".", 1)[1]
            if not hasattr(training_defaults, name):
                raise ConfigError(key, "unknown training field")
            training_kw[name] = _coerce(key, name, value, getattr(training_defaults, name))
        elif key == "sweep.parameter":
            sweep_parameter = value
        elif key == "sweep.values":
            sweep_values = tuple(_parse_number(v) for v in value.split(","))
        elif key in _SPEC_TOP_KEYS:
            if key in ("eval_episodes", "train_episodes", "master_seed"):
                top_kw[key] = int(_parse_number(value))
            elif key == "threshold_return":
                top_kw[key] = _parse_number(value)
            else:
                top_kw[key] = value
        else:
            raise ConfigError(key, "unknown spec key")

    if feature_kw:
        scenario_kw["features"] = FeatureMask(**feature_kw)
    num_ues = scenario_kw.get("num_ues", scenario_defaults.num_ues)
    num_planes = scenario_kw.get("num_planes", scenario_defaults.num_planes)
    if "rb_uniform" in ratios:
        scenario_kw["rb_per_target"] = tuple([ratios["rb_uniform"]] * (num_planes - 1))
    if "rb_ratio" in ratios:
        blocks = max(0, round(ratios["rb_ratio"] * num_ues))
        scenario_kw["rb_per_target"] = tuple([blocks] * (num_planes - 1))
    if "preamble_ratio" in ratios:
        scenario_kw["num_preambles"] = max(1, round(ratios["preamble_ratio"] * num_ues))
    if "rb_per_target" not in scenario_kw and num_planes != scenario_defaults.num_planes:
        scenario_kw["rb_per_target"] = tuple([num_ues] * (num_planes - 1))

    scenario = ScenarioConfig(**scenario_kw)
    training = dataclasses.replace(DESK_TRAINING, **training_kw)
    return ExperimentSpec(
        scenario=scenario,
        training=training,
        sweep_parameter=sweep_parameter,
        sweep_values=sweep_values,
        **top_kw,
    )


def evaluate(
    scenario: ScenarioConfig,
    agent_kind: str,
    episodes: int,
    master_seed: int,
    params: net.PolicyParameters | None = None,
    eval_mode: str = "greedy",
    collect_traces: bool = False,
) -> tuple[list[MetricsRecord], list]:
    """Evaluate one agent over fresh episode seeds master_seed + i."""
    env = HandoverEnv(scenario)
    agent = make_agent(
        agent_kind,
        params=params,
        offset_db=scenario.a3_offset_db,
        trigger_slots=scenario.a3_trigger_slots,
        mode=eval_mode,
    )
    records: list[MetricsRecord] = []
    traces = []
    for i in range(episodes):
        seed = master_seed + i
        obs = env.reset(seed)
        agent.begin_episode(env, np.random.default_rng([seed, 101]))
        outcomes = []
        for _ in range(scenario.horizon):
            obs, outcome = env.step(agent.act(env, obs))
            outcomes.append(outcome)
        records.append(episode_metrics(outcomes, env.state))
        if collect_traces:
            traces.append((i, outcomes))
    return records, traces


SUMMARY_HEADER = [
    "agent",
    "label",
    "parameter",
    "value",
    "eval_episodes",
    "sum_delay_mean",
    "sum_delay_std",
    "sum_collision_rb_mean",
    "sum_collision_rb_std",
    "sum_collision_prach_mean",
    "sum_collision_prach_std",
    "ho_success_mean",
    "ho_success_std",
    "return_mean",
    "return_std",
    "episodes_to_threshold",
]


def summary_row(
    records: Sequence[MetricsRecord],
    agent: str,
    label: str = "",
    parameter: str = "",
    value: str = "",
    episodes_to_threshold: str = "",
) -> dict:
    def stats(name):
        data = np.array([getattr(r, name) for r in records])
        return float(data.mean()), float(data.std())

    row = {
        "agent": agent,
        "label": label,
        "parameter": parameter,
        "value": value,
        "eval_episodes": len(records),
        "episodes_to_threshold": episodes_to_threshold,
    }
    for name, column in (
        ("sum_delay", "sum_delay"),
        ("sum_collision_rb", "sum_collision_rb"),
        ("sum_collision_prach", "sum_collision_prach"),
        ("ho_success", "ho_success"),
        ("episode_return", "return"),
    ):
        mean, std = stats(name)
        row[f"{column}_mean"] = f"{mean:.6f}"
        row[f"{column}_std"] = f"{std:.6f}"
    return row


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def episodes_to_threshold(curve, threshold: float, window: int = 100) -> int | None:
    """First episode whose trailing-window mean return reaches the threshold."""
    returns = [r.episode_return for r in curve]
    if not returns:
        return None
    window = min(window, len(returns))
    for end in range(window, len(returns) + 1):
        if float(np.mean(returns[end - window : end])) >= threshold:
            return end
    return None


def _trained_params(
    spec: ExperimentSpec, scenario: ScenarioConfig, out_dir: Path | None
):
    """Load or train the learned policy for a scenario; returns (params, curve)."""
    if spec.checkpoint:
        return load_checkpoint(spec.checkpoint, scenario), None
    params, curve = train(
        scenario,
        spec.training,
        episodes=spec.train_episodes,
        seed=spec.master_seed,
    )
    if out_dir is not None:
        save_checkpoint(params, out_dir / "checkpoint.npz")
        write_curve_csv(out_dir / "curve.csv", curve)
    return params, curve


def run_experiment(spec: ExperimentSpec, out_dir) -> dict:
    """Train if needed, evaluate, and write summary/trace artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = spec.scenario

    params = None
    curve = None
    if spec.agent == "dho":
        params, curve = _trained_params(spec, scenario, out_dir)

    records, traces = evaluate(
        scenario,
        spec.agent,
        spec.eval_episodes,
        spec.master_seed,
        params=params,
        eval_mode=spec.eval_mode,
        collect_traces=True,
    )
    row = summary_row(records, spec.agent, label=label_for_nu(scenario.nu))
    write_summary_csv(out_dir / "summary.csv", [row])
    write_trace_csv(out_dir / "trace.csv", traces, scenario.num_ues, scenario.num_targets)

    artifacts = {
        "summary": out_dir / "summary.csv",
        "trace": out_dir / "trace.csv",
        "row": row,
    }
    if curve is not None:
        artifacts["curve"] = out_dir / "curve.csv"
        artifacts["checkpoint"] = out_dir / "checkpoint.npz"
    return artifacts


def apply_sweep_value(
    scenario: ScenarioConfig, training: VtraceConfig, parameter: str, value: float
) -> tuple[ScenarioConfig, VtraceConfig]:
    if parameter == "rb_ratio":
        return scenario_with_ratios(scenario, rb_ratio=value), training
    if parameter == "preamble_ratio":
        return scenario_with_ratios(scenario, preamble_ratio=value), training
    name = _SCENARIO_ALIASES.get(parameter, parameter)
    if name == "num_ues":
        j = int(value)
        # Resource ratios follow the UE count so the regime stays comparable.
        rb_ratio = scenario.rb_per_target[0] / scenario.num_ues
        pre_ratio = scenario.num_preambles / scenario.num_ues
        scaled = dataclasses.replace(scenario, num_ues=j, rb_per_target=tuple([j] * scenario.num_targets))
        return scenario_with_ratios(scaled, rb_ratio=rb_ratio, preamble_ratio=pre_ratio), training
    if hasattr(scenario, name):
        current = getattr(scenario, name)
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            cast = type(current)
            return dataclasses.replace(scenario, **{name: cast(value)}), training
        raise ConfigError("sweep.parameter", f"{parameter} is not a numeric scenario field")
    if hasattr(training, name):
        current = getattr(training, name)
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            cast = type(current)
            return scenario, dataclasses.replace(training, **{name: cast(value)})
        raise ConfigError("sweep.parameter", f"{parameter} is not a numeric training field")
    raise ConfigError("sweep.parameter", f"unknown parameter {parameter!r}")


def sweep_experiment(spec: ExperimentSpec, parameter: str, values: Sequence[float], out_dir) -> dict:
    """One summary row per sweep value for the spec's agent."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        scenario, training = apply_sweep_value(spec.scenario, spec.training, parameter, value)
        point = dataclasses.replace(spec, scenario=scenario, training=training)
        params = None
        to_threshold = ""
        if spec.agent == "dho":
            params, curve = _trained_params(point, scenario, None)
            if curve is not None:
                hit = episodes_to_threshold(curve, spec.threshold_return)
                to_threshold = "" if hit is None else str(hit)
        records, _ = evaluate(
            scenario,
            spec.agent,
            spec.eval_episodes,
            spec.master_seed,
            params=params,
            eval_mode=spec.eval_mode,
        )
        rows.append(
            summary_row(
                records,
                spec.agent,
                label=label_for_nu(scenario.nu),
                parameter=parameter,
                value=f"{value:g}",
                episodes_to_threshold=to_threshold,
            )
        )
    path = out_dir / "sweep.csv"
    write_summary_csv(path, rows)
    return {"sweep": path, "rows": rows}


def behavior_stats(
    params: net.PolicyParameters,
    scenario: ScenarioConfig,
    episodes: int,
    master_seed: int = 0,
) -> tuple[float, float]:
    """Fractions of request vs. wait decisions among unaccessed terminals.

    Decisions are sampled from the policy (not greedy) so an untrained
    uniform policy reports a request fraction near (K-1)/K.
    """
    env = HandoverEnv(scenario)
    requests = 0
    waits = 0
    for i in range(episodes):
        obs = env.reset(master_seed + i)
        rng = np.random.default_rng([master_seed + i, 202])
        for _ in range(scenario.horizon):
            accessed = env.state.accessed.copy()
            actions, _ = dho_decide(params, obs, rng, "sample", accessed)
            active = ~accessed
            requests += int((actions[active] > 0).sum())
            waits += int((actions[active] == 0).sum())
            obs, _ = env.step(actions)
    total = requests + waits
    if total == 0:
        return 0.0, 0.0
    return requests / total, waits / total


ABLATION_HEADER = ["mask", "episode", "mean_return", "sum_delay", "sum_collision"]


def ablation(
    scenario: ScenarioConfig,
    training: VtraceConfig,
    mask_names: Sequence[str],
    episodes: int,
    master_seed: int,
    out_dir,
) -> dict:
    """Train one policy per feature mask and emit the overlaid curves."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = {}
    for name in mask_names:
        if name not in ABLATION_MASKS:
            raise ConfigError("mask", f"unknown mask {name!r}, expected one of {sorted(ABLATION_MASKS)}")
        masked = dataclasses.replace(scenario, features=ABLATION_MASKS[name])
        _, curve = train(masked, training, episodes=episodes, seed=master_seed)
        curves[name] = curve

    path = out_dir / "ablation_curves.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ABLATION_HEADER)
        for name, curve in curves.items():
            for r in curve:
                writer.writerow(
                    [
                        name,
                        r.episode,
                        f"{r.episode_return:.6f}",
                        f"{r.sum_delay:.6f}",
                        f"{r.sum_collision:.6f}",
                    ]
                )
    return {"curves": curves, "path": path}
