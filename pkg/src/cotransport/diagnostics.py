"""Numerical diagnostics behind the diag-* CLI commands: a central
finite-difference gradient oracle over the full training losses, and the
partner-drift comparison on a fixed one-state game."""

from __future__ import annotations

import math
import time

import numpy as np

from .nn import MlpSpec, gradients, init_params, policy_forward
from .nn.autodiff import Tensor, clip as ad_clip, exp as ad_exp, mean_ as ad_mean, \
    minimum as ad_min, mul as ad_mul, add as ad_add, square as ad_square
from .nn.models import LOG_2PI, NetworkParams, param_tensors, policy_logprob_graph, \
    value_graph, _squash_correction

CLIP_EPS = 0.2
ENTROPY_COEFF = 0.01
VALUE_COEFF = 0.5


def _relu_signature(params: NetworkParams, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    sigs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            sigs.append(h > 0)
            h = np.maximum(h, 0.0)
    return sigs, h


def _policy_pieces(params: NetworkParams, obs, u, logp_old, adv):
    sigs, mean = _relu_signature(params, obs)
    log_std = params.log_std
    z = (u - mean) / np.exp(log_std)
    logp = (-0.5 * z * z - log_std - 0.5 * LOG_2PI - _squash_correction(u)).sum(axis=-1)
    ratio = np.exp(logp - logp_old)
    lo, hi = 1.0 - CLIP_EPS, 1.0 + CLIP_EPS
    s1 = ratio * adv
    s2 = np.clip(ratio, lo, hi) * adv
    sigs.append((ratio >= lo) & (ratio <= hi))
    sigs.append(s1 <= s2)
    loss = -(np.minimum(s1, s2).mean()
             + ENTROPY_COEFF * (log_std.sum() + 0.5 * len(log_std) * (1.0 + LOG_2PI)))
    return float(loss), np.concatenate([s.ravel() for s in sigs])


def _critic_pieces(params: NetworkParams, x, target):
    sigs, out = _relu_signature(params, x)
    err = out[..., 0] - target
    loss = VALUE_COEFF * float(np.mean(err * err))
    return loss, np.concatenate([s.ravel() for s in sigs]) if sigs else np.zeros(0, dtype=bool)


def _policy_loss_graph(params, obs, u, logp_old, adv):
    leaves, _ = param_tensors(params)
    logp, entropy = policy_logprob_graph(params, leaves, obs, u)
    ratio = ad_exp(ad_add(logp, Tensor(-logp_old)))
    s1 = ad_mul(ratio, Tensor(adv))
    s2 = ad_mul(ad_clip(ratio, 1.0 - CLIP_EPS, 1.0 + CLIP_EPS), Tensor(adv))
    obj = ad_add(ad_mean(ad_min(s1, s2)), ad_mul(entropy, ENTROPY_COEFF))
    return ad_mul(obj, -1.0), leaves


def _critic_loss_graph(params, x, target):
    leaves, _ = param_tensors(params)
    pred = value_graph(params, leaves, x)
    err = ad_add(pred, Tensor(-target))
    return ad_mul(ad_mean(ad_square(err)), VALUE_COEFF), leaves


def gradient_oracle(n_instances: int = 100, *, seed: int = 0, h: float = 1e-5,
                    coords_per_instance: int = 24) -> dict:
    """Backprop vs central finite differences (64-bit) on random small
    instances of the clipped-surrogate and TD losses.

    Coordinates whose clip / min / ReLU branch pattern differs between the
    two probe points straddle a kink and are skipped; the subgradient
    conventions at the kinks themselves are pinned by exact unit tests.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    skipped = 0
    checked = 0
    t0 = time.perf_counter()
    for inst in range(n_instances):
        in_dim = int(rng.integers(6, 14))
        act_dim = int(rng.integers(2, 6))
        hidden = (int(rng.integers(8, 20)), int(rng.integers(6, 16)))
        batch = int(rng.integers(3, 8))
        if inst % 2 == 0:
            spec = MlpSpec(input_dim=in_dim, output_dim=act_dim, hidden=hidden,
                           head="gaussian_policy")
            params = init_params(spec, int(rng.integers(1 << 30)), dtype=np.float64)
            params.load_flat(params.flat() + 0.05 * rng.standard_normal(params.n_params))
            obs = rng.standard_normal((batch, in_dim))
            _, u, logp_old = policy_forward(params, obs, mode="sample", rng=rng)
            logp_old = logp_old + 0.1 * rng.standard_normal(batch)  # push ratios off 1
            adv = rng.standard_normal(batch)
            loss_graph = lambda: _policy_loss_graph(params, obs, u, logp_old, adv)
            pieces = lambda: _policy_pieces(params, obs, u, logp_old, adv)
        else:
            spec = MlpSpec(input_dim=in_dim, output_dim=1, hidden=hidden,
                           head="scalar_value")
            params = init_params(spec, int(rng.integers(1 << 30)), dtype=np.float64)
            params.load_flat(params.flat() + 0.05 * rng.standard_normal(params.n_params))
            x = rng.standard_normal((batch, in_dim))
            target = rng.standard_normal(batch)
            loss_graph = lambda: _critic_loss_graph(params, x, target)
            pieces = lambda: _critic_pieces(params, x, target)

        loss, leaves = loss_graph()
        grad = gradients(loss, leaves)
        loss_np, _ = pieces()
        if not math.isclose(loss_np, float(loss.data), rel_tol=1e-12, abs_tol=1e-12):
            raise AssertionError("graph and direct loss evaluations disagree")
        flat0 = params.flat()
        idx = rng.choice(flat0.size, size=min(coords_per_instance, flat0.size), replace=False)
        for i in idx:
            probe = flat0.copy()
            probe[i] = flat0[i] + h
            params.load_flat(probe)
            lp, sig_p = pieces()
            probe[i] = flat0[i] - h
            params.load_flat(probe)
            lm, sig_m = pieces()
            params.load_flat(flat0)
            if sig_p.shape != sig_m.shape or np.any(sig_p != sig_m):
                skipped += 1
                continue
            fd = (lp - lm) / (2.0 * h)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-6)
            worst = max(worst, rel)
            checked += 1
    return {
        "max_rel_err": worst,
        "instances": n_instances,
        "coords_checked": checked,
        "coords_skipped_at_kinks": skipped,
        "elapsed_s": time.perf_counter() - t0,
        "h": h,
    }
