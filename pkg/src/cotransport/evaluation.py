"""Nine-scenario evaluation: success rate, completion time, and tilt rate
with seed-controlled statistics, plus the layer ablations.

Episodes are deterministic per (scenario, seed); policy checkpoints are
evaluated in mean mode so every reported number replays exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from .env import EnvConfig, TransportEnv
from .mdp import ACTION_DIM, STACKED_DIM, polyline_deviation
from .nn import NetworkParams, load_checkpoint, policy_forward
from .replay import record_line
from .scenario import CATEGORIES, Scenario, builtin_scenario
from .sim import suspension_tilt

EVAL_EPISODES_PER_SEED = 100   # disclosed in every report header


class EvalError(RuntimeError):
    pass


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    gamma_time: float | None      # s to goal; None on failure
    tilt_rate: float | None       # deg/s mean |d tilt|/dt; None in push mode
    drop: bool
    timeout: bool
    path_deviation_max: float
    steps: int

    def __post_init__(self) -> None:
        assert self.success != (self.drop or self.timeout), "success XOR failure"


class ScriptedPolicies:
    """Both agents at zero residual (the pure nominal controller)."""

    def act(self, agent_idx: int, obs: np.ndarray) -> np.ndarray:
        return np.zeros(ACTION_DIM)


class CheckpointPolicies:
    """Independent per-agent networks evaluated in mean mode; a None slot
    falls back to the scripted zero residual (single-agent baseline)."""

    def __init__(self, params: list[NetworkParams | None]):
        self.params = params
        for p in params:
            if p is not None and p.spec.input_dim != STACKED_DIM:
                raise EvalError(f"checkpoint/scenario mismatch: policy expects "
                                f"{p.spec.input_dim}-dim obs, scenarios emit {STACKED_DIM}")

    @classmethod
    def from_dir(cls, ckpt_dir: str | Path) -> "CheckpointPolicies":
        ckpt_dir = Path(ckpt_dir)
        out: list[NetworkParams | None] = []
        for i in range(2):
            path = ckpt_dir / f"policy{i}.ckpt"
            if path.exists():
                params, _ = load_checkpoint(path)
                out.append(params)
            else:
                out.append(None)
        if all(p is None for p in out):
            raise EvalError(f"no policy checkpoints under {ckpt_dir}")
        return cls(out)

    def act(self, agent_idx: int, obs: np.ndarray) -> np.ndarray:
        p = self.params[agent_idx]
        if p is None:
            return np.zeros(ACTION_DIM)
        a, _, _ = policy_forward(p, obs.astype(np.float32), mode="mean")
        return a


class EpisodeTracker:
    """Accumulates per-step metric state; shared by the eval harness and the
    live session server so both report identical EpisodeMetrics."""

    def __init__(self, env: TransportEnv):
        self.env = env
        self.carry = env.scenario.task_mode == "carry"
        self.dt = env.sim.params.dt_low
        self.tilt_prev = (math.degrees(suspension_tilt(env.world.object, env.scenario))
                          if self.carry else None)
        self.tilt_deltas: list[float] = []
        self.dev_max = 0.0
        self.steps = 0

    def update(self) -> None:
        self.steps += 1
        w = self.env.world
        if self.carry:
            tilt = math.degrees(suspension_tilt(w.object, self.env.scenario))
            self.tilt_deltas.append(abs(tilt - self.tilt_prev) / self.dt)
            self.tilt_prev = tilt
        self.dev_max = max(self.dev_max, polyline_deviation(
            (w.object.pose[0], w.object.pose[1]), self.env.anchors))

    def tilt_rate(self) -> float | None:
        if not self.carry:
            return None
        return float(np.mean(self.tilt_deltas)) if self.tilt_deltas else 0.0

    def finalize(self, info: dict) -> EpisodeMetrics:
        success = bool(info["goal"])
        return EpisodeMetrics(success=success,
                              gamma_time=self.env.world.time if success else None,
                              tilt_rate=self.tilt_rate(),
                              drop=bool(info["drop"]), timeout=bool(info["timeout"]),
                              path_deviation_max=self.dev_max, steps=self.steps)


def run_episode(scenario: Scenario, policies, seed: int, *, record: bool = False,
                env_cfg: EnvConfig | None = None
                ) -> tuple[EpisodeMetrics, list[str] | None]:
    """One deterministic episode; optionally returns replay_v1 lines."""
    cfg = env_cfg or EnvConfig(start_jitter=0.1)
    env = TransportEnv(scenario, cfg)
    obs = env.reset(seed)
    tracker = EpisodeTracker(env)
    lines: list[str] | None = [] if record else None
    t = 0
    while True:
        acts = [policies.act(i, obs[i]) for i in range(2)]
        prev_world = env.world
        obs, reward, done, info = env.step(acts)
        if record:
            lines.append(record_line(t, prev_world, info["commands"], info["events"]))
        t += 1
        tracker.update()
        if done:
            break
    if record:
        lines.append(record_line(t, env.world, None, None))
    return tracker.finalize(info), lines


def _episode_seed(seed: int, episode: int) -> int:
    return (seed * 7_919 + episode * 104_729 + 17) & 0x7FFFFFFF


@dataclass
class ScenarioStats:
    sr_mean: float
    sr_std: float
    per_seed_sr: list[float]
    gamma_mean: float | None
    tilt_mean: float | None
    episodes: int


def evaluate_scenario(scenario: Scenario, policies, *, n_seeds: int,
                      episodes_per_seed: int, env_cfg: EnvConfig | None = None
                      ) -> ScenarioStats:
    per_seed = []
    gammas: list[float] = []
    tilts: list[float] = []
    for s in range(n_seeds):
        wins = 0
        for e in range(episodes_per_seed):
            m, _ = run_episode(scenario, policies, _episode_seed(s, e), env_cfg=env_cfg)
            wins += int(m.success)
            if m.success and m.gamma_time is not None:
                gammas.append(m.gamma_time)
            if m.tilt_rate is not None:
                tilts.append(m.tilt_rate)
        per_seed.append(100.0 * wins / episodes_per_seed)
    arr = np.asarray(per_seed)
    return ScenarioStats(sr_mean=float(arr.mean()), sr_std=float(arr.std()),
                         per_seed_sr=per_seed,
                         gamma_mean=float(np.mean(gammas)) if gammas else None,
                         tilt_mean=float(np.mean(tilts)) if tilts else None,
                         episodes=n_seeds * episodes_per_seed)


@dataclass
class SuiteReport:
    scenarios: dict
    categories: dict
    deltas: dict
    n_seeds: int
    episodes_per_seed: int
    notes: str = field(default="SR mean+-std over seeds; delta relative to scripted baseline")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def run_suite(scenario_ids: list[str], policies, *, n_seeds: int = 5,
              episodes_per_seed: int = EVAL_EPISODES_PER_SEED,
              baseline=None, env_cfg: EnvConfig | None = None) -> SuiteReport:
    """SR mean+-std per scenario over seeds, category means, and relative
    improvement over the scripted baseline."""
    if n_seeds < 5:
        raise EvalError("suite statistics need n_seeds >= 5")
    baseline = baseline if baseline is not None else ScriptedPolicies()
    scen_stats: dict = {}
    deltas: dict = {}
    for sid in scenario_ids:
        scenario = builtin_scenario(sid) if isinstance(sid, str) else sid
        learned = evaluate_scenario(scenario, policies, n_seeds=n_seeds,
                                    episodes_per_seed=episodes_per_seed, env_cfg=env_cfg)
        script = evaluate_scenario(scenario, baseline, n_seeds=n_seeds,
                                   episodes_per_seed=episodes_per_seed, env_cfg=env_cfg)
        scen_stats[scenario.id] = {
            "learned": asdict(learned),
            "scripted": asdict(script),
            "category": scenario.category,
        }
        if script.sr_mean > 0:
            deltas[scenario.id] = 100.0 * (learned.sr_mean - script.sr_mean) / script.sr_mean
        else:
            deltas[scenario.id] = None
    categories: dict = {}
    for cat, members in CATEGORIES.items():
        rows = [scen_stats[m] for m in members if m in scen_stats]
        if rows:
            categories[cat] = {
                "learned_sr": float(np.mean([r["learned"]["sr_mean"] for r in rows])),
                "scripted_sr": float(np.mean([r["scripted"]["sr_mean"] for r in rows])),
            }
    return SuiteReport(scenarios=scen_stats, categories=categories, deltas=deltas,
                       n_seeds=n_seeds, episodes_per_seed=episodes_per_seed)


def render_suite_text(report: SuiteReport) -> str:
    lines = [
        f"scenario suite: {report.n_seeds} seeds x {report.episodes_per_seed} episodes per cell",
        f"{'scenario':<10} {'category':<9} {'scripted SR':>14} {'learned SR':>14} {'delta':>8}",
    ]
    for sid, row in report.scenarios.items():
        s, l = row["scripted"], row["learned"]
        d = report.deltas[sid]
        dtxt = f"{d:+.1f}%" if d is not None else "n/a"
        lines.append(f"{sid:<10} {row['category']:<9} "
                     f"{s['sr_mean']:6.1f} +- {s['sr_std']:4.1f} "
                     f"{l['sr_mean']:6.1f} +- {l['sr_std']:4.1f} {dtxt:>8}")
    for cat, row in report.categories.items():
        lines.append(f"{cat:<10} {'mean':<9} {row['scripted_sr']:6.1f}         "
                     f"{row['learned_sr']:6.1f}")
    return "\n".join(lines)


ABLATION_VARIANTS = ("full", "no_skill", "no_cognition")


def ablate(scenario_id: str, ckpt_dir: str | Path, *, n_seeds: int = 5,
           episodes_per_seed: int = 20, env_cfg: EnvConfig | None = None) -> dict:
    """Layer ablations with paired seeds: the full stack, zero residual with
    anchors (no_skill), and zeroed task guidance with a holding nominal
    (no_cognition)."""
    scenario = builtin_scenario(scenario_id)
    base_cfg = env_cfg or EnvConfig(start_jitter=0.1)
    learned = CheckpointPolicies.from_dir(ckpt_dir)
    out: dict = {"scenario": scenario_id, "variants": {}}
    for variant in ABLATION_VARIANTS:
        if variant == "no_skill":
            policies = ScriptedPolicies()
            cfg = base_cfg
        elif variant == "no_cognition":
            policies = learned
            cfg = replace(base_cfg, no_cognition=True)
        else:
            policies = learned
            cfg = base_cfg
        stats = evaluate_scenario(scenario, policies, n_seeds=n_seeds,
                                  episodes_per_seed=episodes_per_seed, env_cfg=cfg)
        out["variants"][variant] = asdict(stats)
    return out


