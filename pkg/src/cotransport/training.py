"""CTDE training: independent per-agent policies updated with the clipped
surrogate against one shared joint-critic GAE advantage, and a joint-action
critic trained on the semi-gradient TD error.

Each agent acts only on its own stacked observation; the critic sees the
global state concatenated with both agents' actions.  Everything is seeded
and serializable so runs replay bit-exactly and resume mid-training.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .env import GLOBAL_STATE_DIM, JOINT_ACTION_DIM, EnvConfig, TransportEnv
from .mdp import ACTION_DIM, STACKED_DIM, RewardConfig
from .nn import (
    AdamState,
    MlpSpec,
    NetworkParams,
    adam_step,
    cosine_lr,
    gradients,
    init_params,
    load_checkpoint,
    policy_forward,
    policy_logprob_graph,
    save_checkpoint,
    value_forward,
    value_graph,
)
from .nn.autodiff import Tensor, clip as ad_clip, exp as ad_exp, mean_ as ad_mean, minimum as ad_min, square as ad_square, mul as ad_mul, add as ad_add
from .nn.models import param_tensors
from .scenario import Scenario, builtin_scenario

CRITIC_INPUT_DIM = GLOBAL_STATE_DIM + JOINT_ACTION_DIM


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Optimizer rows mirror the published hyperparameter table; scale knobs
    (envs, horizon, total steps) default to desk size."""

    scenario_id: str = "C1"
    seed: int = 0
    solver: str = "joint_critic_ppo"   # extension point: happo / hatrpo / pcgrad not implemented
    lr: float = 1.0e-4
    epochs: int = 10
    minibatch: int = 16
    minibatch_mode: str = "size"       # "size": minibatches of 16 samples; "count": 16 minibatches
    entropy_coeff: float = 0.01
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    value_coeff: float = 0.5
    weight_decay: float = 1.0e-4
    grad_clip: float = 10.0
    lr_schedule: str = "cosine"
    total_steps: int = 5_000_000
    n_envs: int = 16
    horizon: int = 256
    hidden: tuple[int, ...] = (256, 256, 128)
    log_std_init: float = -0.5
    normalize_advantages: bool = True
    start_jitter: float = 0.08
    single_agent: bool = False         # partner runs the scripted zero-residual policy
    checkpoint_every: int = 20         # iterations
    out_dir: str = "runs/train"

    def __post_init__(self) -> None:
        if self.solver != "joint_critic_ppo":
            raise TrainError(f"solver {self.solver!r} is an extension point, not implemented")
        if self.minibatch_mode not in ("size", "count"):
            raise TrainError("minibatch_mode must be 'size' or 'count'")
        batch = self.n_envs * self.horizon
        if batch % self.minibatch_size() != 0:
            raise TrainError(f"minibatch size {self.minibatch_size()} must divide batch {batch}")

    def minibatch_size(self) -> int:
        batch = self.n_envs * self.horizon
        return self.minibatch if self.minibatch_mode == "size" else batch // self.minibatch

    def batch_size(self) -> int:
        return self.n_envs * self.horizon


def scripted_policy(state, agent_idx: int) -> np.ndarray:
    """The zero-residual baseline: compose with the residual map to get u_base."""
    return np.zeros(ACTION_DIM)


@dataclass
class RolloutBatch:
    obs: np.ndarray          # (2, B, 210)
    u: np.ndarray            # (2, B, 11) pre-squash actions
    actions: np.ndarray      # (2, B, 11)
    logp: np.ndarray         # (2, B)
    joint: np.ndarray        # (B, 22)
    gstate: np.ndarray       # (B, G)
    next_gstate: np.ndarray  # (B, G)
    next_joint: np.ndarray   # (B, 22)
    reward: np.ndarray       # (B,)
    done: np.ndarray         # (B,) 1.0 at episode end (drop/goal/timeout)
    value: np.ndarray        # (B,) V(s_t, a_t)
    next_value: np.ndarray   # (B,) V(s_{t+1}, a_{t+1}); 0 at terminal
    episode_returns: list[float]
    episode_goals: list[bool]
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None


class EnvPool:
    """N sequentially stepped env instances with per-env episode seeding."""

    def __init__(self, scenario: Scenario, env_cfg: EnvConfig, n_envs: int, seed: int):
        self.envs = [TransportEnv(scenario, env_cfg) for _ in range(n_envs)]
        self.seed = seed
        self.episode_idx = [0] * n_envs
        self.obs: list[tuple[np.ndarray, np.ndarray]] = []
        self.ep_return = [0.0] * n_envs
        for k, env in enumerate(self.envs):
            self.obs.append(env.reset(self._episode_seed(k)))

    def _episode_seed(self, k: int) -> int:
        s = (self.seed * 1_000_003 + k * 9_176 + self.episode_idx[k]) & 0x7FFFFFFF
        self.episode_idx[k] += 1
        return s

    def reset_env(self, k: int) -> None:
        self.obs[k] = self.envs[k].reset(self._episode_seed(k))
        self.ep_return[k] = 0.0

    def state_dict(self) -> dict:
        return {
            "episode_idx": list(self.episode_idx),
            "ep_return": list(self.ep_return),
            "envs": [e.state_dict() for e in self.envs],
            "obs": [[o.tolist() for o in pair] for pair in self.obs],
        }

    def load_state_dict(self, d: dict) -> None:
        self.episode_idx = list(d["episode_idx"])
        self.ep_return = list(d["ep_return"])
        for e, s in zip(self.envs, d["envs"]):
            e.load_state_dict(s)
        self.obs = [tuple(np.asarray(o) for o in pair) for pair in d["obs"]]


def _policy_act(params: NetworkParams, obs: np.ndarray, rng: np.random.Generator
                ) -> tuple[np.ndarray, np.ndarray, float]:
    a, u, logp = policy_forward(params, obs.astype(np.float32), mode="sample", rng=rng)
    return a, u, float(logp)


def collect(pool: EnvPool, policies: list[NetworkParams | None], critic: NetworkParams,
            horizon: int, rngs: list[np.random.Generator]) -> RolloutBatch:
    """Decentralized execution: each agent samples from its own policy on its
    own observation; a scripted partner slot (None) emits zero residuals."""
    n = len(pool.envs)
    B = n * horizon
    obs_b = np.zeros((2, B, STACKED_DIM), dtype=np.float32)
    u_b = np.zeros((2, B, ACTION_DIM), dtype=np.float32)
    act_b = np.zeros((2, B, ACTION_DIM), dtype=np.float32)
    logp_b = np.zeros((2, B), dtype=np.float64)
    joint_b = np.zeros((B, JOINT_ACTION_DIM), dtype=np.float32)
    g_b = np.zeros((B, GLOBAL_STATE_DIM), dtype=np.float32)
    ng_b = np.zeros((B, GLOBAL_STATE_DIM), dtype=np.float32)
    nj_b = np.zeros((B, JOINT_ACTION_DIM), dtype=np.float32)
    r_b = np.zeros(B, dtype=np.float64)
    d_b = np.zeros(B, dtype=np.float64)
    v_b = np.zeros(B, dtype=np.float64)
    nv_b = np.zeros(B, dtype=np.float64)
    ep_returns: list[float] = []
    ep_goals: list[bool] = []

    for k, env in enumerate(pool.envs):
        base = k * horizon
        for t in range(horizon):
            i = base + t
            ob = pool.obs[k]
            g_b[i] = env.global_state()
            acts = []
            for agent in range(2):
                if policies[agent] is None:
                    a = np.zeros(ACTION_DIM, dtype=np.float32)
                    u = np.zeros(ACTION_DIM, dtype=np.float32)
                    lp = 0.0
                else:
                    a, u, lp = _policy_act(policies[agent], ob[agent], rngs[agent])
                obs_b[agent, i] = ob[agent]
                u_b[agent, i] = u
                act_b[agent, i] = a
                logp_b[agent, i] = lp
                acts.append(np.asarray(a, dtype=np.float32))
            joint = np.concatenate(acts)
            joint_b[i] = joint
            v_b[i] = value_forward(critic, np.concatenate([g_b[i], joint]).astype(np.float32))

            try:
                next_obs, reward, done, info = env.step(acts)
            except Exception as exc:
                raise TrainError(f"env {k} failed at step {t}: {exc}") from exc
            r_b[i] = reward
            d_b[i] = 1.0 if done else 0.0
            pool.ep_return[k] += reward
            if done:
                ep_returns.append(pool.ep_return[k])
                ep_goals.append(bool(info["goal"]))
                pool.reset_env(k)
            else:
                pool.obs[k] = next_obs

        # successor (s', a') entries: within-stream shifts, fresh sample at the cut
        for t in range(horizon):
            i = base + t
            if d_b[i] > 0.5:
                continue
            if t + 1 < horizon:
                ng_b[i] = g_b[base + t + 1]
                nj_b[i] = joint_b[base + t + 1]
                nv_b[i] = v_b[base + t + 1]
            else:
                g_next = pool.envs[k].global_state()
                acts = []
                for agent in range(2):
                    if policies[agent] is None:
                        acts.append(np.zeros(ACTION_DIM, dtype=np.float32))
                    else:
                        a, _, _ = _policy_act(policies[agent], pool.obs[k][agent], rngs[agent])
                        acts.append(np.asarray(a, dtype=np.float32))
                nj = np.concatenate(acts)
                ng_b[i] = g_next
                nj_b[i] = nj
                nv_b[i] = value_forward(critic, np.concatenate([ng_b[i], nj]).astype(np.float32))

    return RolloutBatch(obs=obs_b, u=u_b, actions=act_b, logp=logp_b, joint=joint_b,
                        gstate=g_b, next_gstate=ng_b, next_joint=nj_b, reward=r_b,
                        done=d_b, value=v_b, next_value=nv_b,
                        episode_returns=ep_returns, episode_goals=ep_goals)


def gae(batch: RolloutBatch, gamma: float, lam: float, *, n_envs: int, horizon: int
        ) -> tuple[np.ndarray, np.ndarray]:
    """Recursive GAE per env stream; terminal bootstraps are zero, stream cuts
    bootstrap through the stored next value."""
    adv = np.zeros_like(batch.reward)
    for k in range(n_envs):
        base = k * horizon
        acc = 0.0
        for t in range(horizon - 1, -1, -1):
            i = base + t
            nonterminal = 1.0 - batch.done[i]
            delta = batch.reward[i] + gamma * batch.next_value[i] * nonterminal - batch.value[i]
            acc = delta + gamma * lam * nonterminal * acc
            adv[i] = acc
    returns = adv + batch.value
    return adv, returns


def _minibatch_slices(B: int, mb_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(B)
    return [order[i:i + mb_size] for i in range(0, B, mb_size)]


def ppo_update(params: NetworkParams, opt: AdamState, batch: RolloutBatch, adv: np.ndarray,
               agent_idx: int, cfg: TrainConfig, lr: float, rng: np.random.Generator) -> dict:
    """Clipped-surrogate ascent for one agent's policy (its own ratio, the
    shared advantage)."""
    B = batch.reward.shape[0]
    mb = cfg.minibatch_size()
    obs = batch.obs[agent_idx]
    u = batch.u[agent_idx]
    logp_old = batch.logp[agent_idx]
    clip_hits = 0
    kl_sum = 0.0
    loss_sum = 0.0
    n_mb = 0
    entropy_val = 0.0
    for _ in range(cfg.epochs):
        for idx in _minibatch_slices(B, mb, rng):
            leaves, _ = param_tensors(params)
            logp, entropy = policy_logprob_graph(params, leaves,
                                                 obs[idx].astype(np.float64),
                                                 u[idx].astype(np.float64))
            ratio = ad_exp(ad_add(logp, Tensor(-logp_old[idx])))
            a_t = Tensor(adv[idx])
            surrogate = ad_min(ad_mul(ratio, a_t),
                               ad_mul(ad_clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), a_t))
            objective = ad_add(ad_mean(surrogate), ad_mul(entropy, cfg.entropy_coeff))
            loss = ad_mul(objective, -1.0)
            if not np.isfinite(loss.data):
                raise TrainError(f"non-finite policy loss (agent {agent_idx})")
            grad = gradients(loss, leaves)
            flat = adam_step(params.flat(), grad.astype(np.float32), opt, lr=lr,
                             weight_decay=cfg.weight_decay, clip_norm=cfg.grad_clip)
            params.load_flat(flat)
            r = np.asarray(ratio.data)
            clip_hits += int(np.sum(np.abs(r - 1.0) > cfg.clip_eps))
            kl_sum += float(np.mean(logp_old[idx] - logp.data))
            loss_sum += float(loss.data)
            entropy_val = float(entropy.data)
            n_mb += 1
    return {
        "clip_frac": clip_hits / (n_mb * mb),
        "approx_kl": kl_sum / n_mb,
        "policy_loss": loss_sum / n_mb,
        "entropy": entropy_val,
    }


def critic_update(critic: NetworkParams, opt: AdamState, batch: RolloutBatch,
                  cfg: TrainConfig, lr: float, rng: np.random.Generator) -> dict:
    """Semi-gradient TD: targets R + gamma V(s', a') recomputed per minibatch
    with current weights, detached; terminal targets are the reward alone."""
    B = batch.reward.shape[0]
    mb = cfg.minibatch_size()
    x = np.concatenate([batch.gstate, batch.joint], axis=1)
    x_next = np.concatenate([batch.next_gstate, batch.next_joint], axis=1)
    nonterminal = 1.0 - batch.done
    loss_sum = 0.0
    n_mb = 0
    for _ in range(cfg.epochs):
        for idx in _minibatch_slices(B, mb, rng):
            v_next = value_forward(critic, x_next[idx].astype(np.float32))
            target = batch.reward[idx] + cfg.gamma * nonterminal[idx] * v_next
            leaves, _ = param_tensors(critic)
            pred = value_graph(critic, leaves, x[idx].astype(np.float64))
            err = ad_add(pred, Tensor(-target))
            loss = ad_mul(ad_mean(ad_square(err)), cfg.value_coeff)
            if not np.isfinite(loss.data):
                raise TrainError("non-finite critic loss")
            grad = gradients(loss, leaves)
            flat = adam_step(critic.flat(), grad.astype(np.float32), opt, lr=lr,
                             weight_decay=cfg.weight_decay, clip_norm=cfg.grad_clip)
            critic.load_flat(flat)
            loss_sum += float(loss.data)
            n_mb += 1
    return {"critic_loss": loss_sum / n_mb}


# ---------- full training loop ----------

def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng


class Trainer:
    def __init__(self, cfg: TrainConfig, scenario: Scenario | None = None,
                 env_cfg: EnvConfig | None = None):
        self.cfg = cfg
        self.scenario = scenario or builtin_scenario(cfg.scenario_id)
        self.env_cfg = env_cfg or EnvConfig(start_jitter=cfg.start_jitter)
        seq = np.random.SeedSequence(cfg.seed)
        s_policy0, s_policy1, s_critic, s_act0, s_act1, s_shuffle = seq.spawn(6)
        policy_spec = MlpSpec(input_dim=STACKED_DIM, output_dim=ACTION_DIM,
                              hidden=cfg.hidden, head="gaussian_policy")
        critic_spec = MlpSpec(input_dim=CRITIC_INPUT_DIM, output_dim=1,
                              hidden=cfg.hidden, head="scalar_value")
        self.policies: list[NetworkParams | None] = [
            init_params(policy_spec, _seed_int(s_policy0), log_std_init=cfg.log_std_init),
            None if cfg.single_agent
            else init_params(policy_spec, _seed_int(s_policy1), log_std_init=cfg.log_std_init),
        ]
        self.critic = init_params(critic_spec, _seed_int(s_critic))
        self.opt_policies = [None if p is None else AdamState.zeros(p.n_params)
                             for p in self.policies]
        self.opt_critic = AdamState.zeros(self.critic.n_params)
        self.act_rngs = [np.random.default_rng(s_act0), np.random.default_rng(s_act1)]
        self.shuffle_rng = np.random.default_rng(s_shuffle)
        self.pool = EnvPool(self.scenario, self.env_cfg, cfg.n_envs, cfg.seed)
        self.env_steps = 0
        self.iteration = 0

    # -- one optimization iteration --

    def run_iteration(self) -> dict:
        cfg = self.cfg
        lr = cosine_lr(min(self.env_steps, cfg.total_steps), cfg.total_steps, cfg.lr)
        batch = collect(self.pool, self.policies, self.critic, cfg.horizon, self.act_rngs)
        adv, returns = gae(batch, cfg.gamma, cfg.gae_lambda,
                           n_envs=cfg.n_envs, horizon=cfg.horizon)
        batch.advantages = adv
        batch.returns = returns
        if cfg.normalize_advantages:
            adv_n = (adv - adv.mean()) / (adv.std() + 1e-8)
        else:
            adv_n = adv
        stats: dict = {}
        for agent in range(2):
            if self.policies[agent] is None:
                continue
            s = ppo_update(self.policies[agent], self.opt_policies[agent], batch, adv_n,
                           agent, cfg, lr, self.shuffle_rng)
            stats.update({f"a{agent}_{k}": v for k, v in s.items()})
        stats.update(critic_update(self.critic, self.opt_critic, batch, cfg, lr,
                                   self.shuffle_rng))
        self.env_steps += cfg.batch_size()
        self.iteration += 1
        n_ep = len(batch.episode_returns)
        stats.update({
            "iteration": self.iteration,
            "step": self.env_steps,
            "lr": lr,
            "return_mean": float(np.mean(batch.episode_returns)) if n_ep else float("nan"),
            "sr": float(np.mean(batch.episode_goals)) if n_ep else float("nan"),
            "episodes": n_ep,
        })
        return stats

    # -- persistence --

    def save(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for i, p in enumerate(self.policies):
            if p is not None:
                save_checkpoint(out / f"policy{i}.ckpt", p, seed=self.cfg.seed, step=self.env_steps)
        save_checkpoint(out / "critic.ckpt", self.critic, seed=self.cfg.seed, step=self.env_steps)
        moments = {}
        for i, o in enumerate(self.opt_policies):
            if o is not None:
                moments[f"p{i}_m"] = o.m
                moments[f"p{i}_v"] = o.v
        moments["c_m"] = self.opt_critic.m
        moments["c_v"] = self.opt_critic.v
        np.savez(out / "trainer_state.npz", **moments)
        state = {
            "config": asdict(self.cfg),
            "iteration": self.iteration,
            "env_steps": self.env_steps,
            "opt_t": {str(i): (o.t if o else None) for i, o in enumerate(self.opt_policies)},
            "opt_critic_t": self.opt_critic.t,
            "act_rngs": [_rng_state(r) for r in self.act_rngs],
            "shuffle_rng": _rng_state(self.shuffle_rng),
            "pool": self.pool.state_dict(),
        }
        (out / "trainer_state.json").write_text(json.dumps(state))

    @classmethod
    def restore(cls, out: str | Path, scenario: Scenario | None = None,
                env_cfg: EnvConfig | None = None) -> "Trainer":
        out = Path(out)
        state = json.loads((out / "trainer_state.json").read_text())
        raw = dict(state["config"])
        raw["hidden"] = tuple(raw["hidden"])
        cfg = TrainConfig(**raw)
        tr = cls(cfg, scenario=scenario, env_cfg=env_cfg)
        for i in range(2):
            path = out / f"policy{i}.ckpt"
            if path.exists():
                params, _ = load_checkpoint(path)
                tr.policies[i].load_flat(params.flat())
        critic, _ = load_checkpoint(out / "critic.ckpt")
        tr.critic.load_flat(critic.flat())
        moments = np.load(out / "trainer_state.npz")
        for i, o in enumerate(tr.opt_policies):
            if o is not None:
                o.m = moments[f"p{i}_m"].copy()
                o.v = moments[f"p{i}_v"].copy()
                o.t = int(state["opt_t"][str(i)])
        tr.opt_critic.m = moments["c_m"].copy()
        tr.opt_critic.v = moments["c_v"].copy()
        tr.opt_critic.t = int(state["opt_critic_t"])
        tr.act_rngs = [_rng_from_state(s) for s in state["act_rngs"]]
        tr.shuffle_rng = _rng_from_state(state["shuffle_rng"])
        tr.pool.load_state_dict(state["pool"])
        tr.iteration = int(state["iteration"])
        tr.env_steps = int(state["env_steps"])
        return tr


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def train(cfg: TrainConfig, *, scenario: Scenario | None = None,
          env_cfg: EnvConfig | None = None, max_iterations: int | None = None,
          on_iteration=None, stop_flag=None) -> Trainer:
    """Run the full loop: collect / GAE / per-agent clipped updates / TD critic,
    with cosine LR on the global step, JSONL metrics, and periodic checkpoints."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2))
    trainer = Trainer(cfg, scenario=scenario, env_cfg=env_cfg)
    metrics_path = out / "metrics.jsonl"
    t0 = time.monotonic()
    with metrics_path.open("w") as metrics:
        while trainer.env_steps < cfg.total_steps:
            if max_iterations is not None and trainer.iteration >= max_iterations:
                break
            if stop_flag is not None and stop_flag():
                break
            try:
                stats = trainer.run_iteration()
            except Exception:
                trainer.save(out / "ckpt_failed")
                raise
            stats["wallclock"] = round(time.monotonic() - t0, 3)
            metrics.write(json.dumps(stats) + "\n")
            metrics.flush()
            if on_iteration is not None:
                on_iteration(trainer, stats)
            if trainer.iteration % cfg.checkpoint_every == 0:
                trainer.save(out / "ckpt_latest")
    trainer.save(out / "ckpt_final")
    return trainer


def train_single_agent(cfg: TrainConfig, **kwargs) -> Trainer:
    """Same loop with one learner; the partner runs the scripted policy."""
    cfg = TrainConfig(**{**asdict(cfg), "single_agent": True})
    return train(cfg, **kwargs)


# ---------- partner-drift diagnostic on a fixed one-state game ----------

def prop1_diagnostic(*, n_self: int = 3, n_partner: int = 3, n_steps: int = 12,
                     drift_scale: float = 0.15, seed: int = 0) -> dict:
    """Holds a joint-action Q-table fixed while the partner's action
    distribution drifts; reports the per-step change of joint-conditioned vs
    partner-marginalized value targets.

    The joint-conditioned target never moves; the marginalized target moves by
    exactly sum_j dP(j) Q(a_i, j).
    """
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1.0, 1.0, size=(n_self, n_partner))
    pi = np.full(n_partner, 1.0 / n_partner)
    steps = []
    for _ in range(n_steps):
        delta = rng.normal(0.0, drift_scale, size=n_partner)
        new_pi = np.clip(pi + delta, 1e-6, None)
        new_pi = new_pi / new_pi.sum()
        d_pi = new_pi - pi
        marg_before = q @ pi
        marg_after = q @ new_pi
        marg_drift = marg_after - marg_before
        expected = q @ d_pi
        joint_drift = 0.0   # Q(s, a_i, a_-i) is unchanged by construction
        steps.append({
            "marginalized_drift": marg_drift.tolist(),
            "expected_drift": expected.tolist(),
            "marginalized_drift_max": float(np.abs(marg_drift).max()),
            "joint_drift_max": joint_drift,
            "oracle_gap": float(np.abs(marg_drift - expected).max()),
        })
        pi = new_pi
    return {
        "q_table": q.tolist(),
        "n_steps": n_steps,
        "steps": steps,
        "max_joint_drift": max(s["joint_drift_max"] for s in steps),
        "max_oracle_gap": max(s["oracle_gap"] for s in steps),
    }
