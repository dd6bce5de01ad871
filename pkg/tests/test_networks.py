"""MLP models, squashed-Gaussian policies, AdamW, cosine schedule, checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest

from cotransport.nn import (
    AdamState,
    MlpSpec,
    NetworkParams,
    adam_step,
    cosine_lr,
    global_norm,
    gradients,
    init_params,
    load_checkpoint,
    policy_forward,
    policy_logprob_graph,
    save_checkpoint,
    value_forward,
)
from cotransport.nn.checkpoint import CheckpointError
from cotransport.nn.models import LOG_2PI, U_CLIP, mlp_forward, param_tensors, _squash_correction

POLICY_SPEC = MlpSpec(input_dim=20, output_dim=6, hidden=(32, 16), head="gaussian_policy")
VALUE_SPEC = MlpSpec(input_dim=12, output_dim=1, hidden=(16, 8), head="scalar_value")


# ---------- initialization ----------

def test_orthogonal_init_all_layers():
    p = init_params(MlpSpec(input_dim=128, output_dim=128, hidden=(128,),
                            head="scalar_value"), seed=0, dtype=np.float64)
    for name, a in p.arrays():
        if not name.endswith(".w"):
            continue
        fi, fo = a.shape
        if fi >= fo:
            err = np.abs(a.T @ a - np.eye(fo)).max()
        else:
            err = np.abs(a @ a.T - np.eye(fi)).max()
        assert err < 1e-5, name
        sv = np.linalg.svd(a, compute_uv=False)
        assert np.abs(sv - 1.0).max() < 1e-5, name


def test_init_biases_zero_and_deterministic():
    a = init_params(POLICY_SPEC, seed=9)
    b = init_params(POLICY_SPEC, seed=9)
    c = init_params(POLICY_SPEC, seed=10)
    for (_, x), (_, y) in zip(a.arrays(), b.arrays()):
        assert np.array_equal(x, y)
    assert any(not np.array_equal(x, y)
               for (_, x), (_, y) in zip(a.arrays(), c.arrays()))
    for name, arr in a.arrays():
        if name.endswith(".b"):
            assert not arr.any()
    assert np.all(a.log_std == -0.5)


# ---------- policy head ----------

def test_vanishing_variance_sample_matches_mean():
    p = init_params(POLICY_SPEC, seed=3, dtype=np.float64)
    p.log_std[...] = -10.0
    rng = np.random.default_rng(0)
    obs = rng.standard_normal(20)
    a_mean, _, _ = policy_forward(p, obs, mode="mean")
    a_sample, _, _ = policy_forward(p, obs, mode="sample", rng=rng)
    assert np.abs(a_sample - a_mean).max() < 1e-3


def test_samples_strictly_inside_bounds():
    p = init_params(POLICY_SPEC, seed=3, dtype=np.float64)
    p.log_std[...] = 3.0    # violent exploration still stays squashed
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, _, _ = policy_forward(p, rng.standard_normal(20), mode="sample", rng=rng)
        assert np.all(np.abs(a) < 1.0)


def test_logprob_matches_numerical_tanh_jacobian():
    p = init_params(POLICY_SPEC, seed=5, dtype=np.float64)
    rng = np.random.default_rng(2)
    obs = rng.standard_normal(20)
    a, u, logp = policy_forward(p, obs, mode="sample", rng=rng)
    mean = mlp_forward(p, obs)
    log_std = p.log_std
    h = 1e-6
    jac = (np.tanh(u + h) - np.tanh(u - h)) / (2.0 * h)
    z = (u - mean) / np.exp(log_std)
    base = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    expected = float(np.sum(base - np.log(jac)))
    assert logp == pytest.approx(expected, abs=1e-6)


def test_squashed_density_integrates_to_one():
    # 1-D slice: a single action dimension, quadrature over the open interval
    spec = MlpSpec(input_dim=4, output_dim=1, hidden=(8,), head="gaussian_policy")
    p = init_params(spec, seed=11, dtype=np.float64)
    obs = np.zeros(4)
    mean = mlp_forward(p, obs)
    sigma = float(np.exp(p.log_std[0]))
    mu = float(mean[0])
    a_grid = np.linspace(-1.0 + 1e-9, 1.0 - 1e-9, 400_001)
    u = np.arctanh(a_grid)
    log_pdf = (-0.5 * ((u - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * LOG_2PI
               - _squash_correction(u))
    mass = np.trapezoid(np.exp(log_pdf), a_grid)
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_non_finite_observation_rejected():
    p = init_params(POLICY_SPEC, seed=0)
    with pytest.raises(ValueError, match="non-finite"):
        policy_forward(p, np.array([np.nan] * 20), mode="mean")


# ---------- value head ----------

def test_zero_weight_value_network_outputs_zero():
    p = init_params(VALUE_SPEC, seed=0, dtype=np.float64)
    for w in p.weights:
        w[...] = 0.0
    assert value_forward(p, np.ones(12)) == 0.0


def test_value_finite_on_fuzzed_inputs():
    p = init_params(VALUE_SPEC, seed=1, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1000, 12)) * 10.0
    out = value_forward(p, x)
    assert out.shape == (1000,)
    assert np.all(np.isfinite(out))


def test_value_dim_mismatch():
    p = init_params(VALUE_SPEC, seed=1)
    with pytest.raises(ValueError, match="input dim"):
        value_forward(p, np.ones(13))


def test_trained_value_net_is_input_sensitive():
    # tiny regression: y depends on x0 and x5; after training, swapping two
    # coordinates that carry different signal changes the output
    rng = np.random.default_rng(4)
    p = init_params(VALUE_SPEC, seed=2, dtype=np.float64)
    opt = AdamState.zeros(p.n_params, dtype=np.float64)
    from cotransport.nn.autodiff import Tensor, add, mean_, mul, square
    from cotransport.nn.models import value_graph

    for _ in range(200):
        x = rng.standard_normal((16, 12))
        y = 2.0 * x[:, 0] - 1.0 * x[:, 5]
        leaves, _ = param_tensors(p)
        pred = value_graph(p, leaves, x)
        loss = mean_(square(add(pred, Tensor(-y))))
        g = gradients(loss, leaves)
        p.load_flat(adam_step(p.flat(), g, opt, lr=3e-3))
    probe = rng.standard_normal(12)
    swapped = probe.copy()
    swapped[[0, 5]] = swapped[[5, 0]]
    assert abs(value_forward(p, probe) - value_forward(p, swapped)) > 1e-3


# ---------- optimizer ----------

def test_adam_zero_gradient_fixed_point():
    p = np.array([1.0, -2.0, 3.0], dtype=np.float64)
    st = AdamState.zeros(3, dtype=np.float64)
    out = adam_step(p, np.zeros(3), st, lr=1e-3, weight_decay=0.0, clip_norm=10.0)
    assert np.array_equal(out, p)


def test_adam_clip_scales_gradient_by_half():
    g = np.zeros(100)
    g[0] = 20.0
    assert global_norm(g) == pytest.approx(20.0)
    p = np.zeros(100)
    st1 = AdamState.zeros(100, dtype=np.float64)
    st2 = AdamState.zeros(100, dtype=np.float64)
    out1 = adam_step(p, g, st1, lr=1e-3, clip_norm=10.0)
    out2 = adam_step(p, 0.5 * g, st2, lr=1e-3, clip_norm=None)
    assert np.allclose(out1, out2, atol=0.0)


def test_adam_single_parameter_hand_computation():
    # one step from zero state: m = 0.1 g, v = 0.001 g^2, with bias correction
    # the update is exactly -lr * g / (|g| + eps) plus the decay term
    lr, wd, g0, p0 = 1e-2, 0.1, 0.5, 2.0
    m_hat = (0.1 * g0) / (1 - 0.9)
    v_hat = (0.001 * g0 * g0) / (1 - 0.999)
    expected = p0 - lr * wd * p0 - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    st = AdamState.zeros(1, dtype=np.float64)
    out = adam_step(np.array([p0]), np.array([g0]), st, lr=lr, weight_decay=wd)
    assert out[0] == pytest.approx(expected, abs=1e-12)


def test_adam_chunking_invariance():
    # flat application equals per-chunk application once the global clip factor
    # is shared, because the update is elementwise after clipping
    rng = np.random.default_rng(8)
    p = rng.standard_normal(64)
    g = rng.standard_normal(64) * 5.0
    clip = 3.0
    st_flat = AdamState.zeros(64, dtype=np.float64)
    flat = adam_step(p, g, st_flat, lr=1e-3, weight_decay=1e-4, clip_norm=clip)
    scale = min(1.0, clip / global_norm(g))
    parts = []
    for sl in (slice(0, 17), slice(17, 40), slice(40, 64)):
        st = AdamState.zeros(len(range(*sl.indices(64))), dtype=np.float64)
        parts.append(adam_step(p[sl], g[sl] * scale, st, lr=1e-3, weight_decay=1e-4,
                               clip_norm=None))
    assert np.array_equal(flat, np.concatenate(parts))


def test_adam_rejects_non_finite():
    st = AdamState.zeros(2, dtype=np.float64)
    with pytest.raises(ValueError, match="non-finite"):
        adam_step(np.zeros(2), np.array([np.inf, 0.0]), st, lr=1e-3)


def test_cosine_schedule_endpoints():
    assert cosine_lr(0, 100, 3e-4) == pytest.approx(3e-4)
    assert cosine_lr(100, 100, 3e-4) == pytest.approx(0.0, abs=1e-20)
    assert cosine_lr(50, 100, 3e-4) == pytest.approx(1.5e-4)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 3e-4)


# ---------- checkpoints ----------

def test_checkpoint_round_trip_byte_exact(tmp_path):
    p = init_params(POLICY_SPEC, seed=21)
    f1 = tmp_path / "a.ckpt"
    f2 = tmp_path / "b.ckpt"
    save_checkpoint(f1, p, seed=21, step=777)
    q, meta = load_checkpoint(f1)
    assert meta == {"seed": 21, "step": 777}
    assert q.spec == p.spec
    for (_, x), (_, y) in zip(p.arrays(), q.arrays()):
        assert np.array_equal(x, y)
    save_checkpoint(f2, q, seed=21, step=777)
    assert f1.read_bytes() == f2.read_bytes()


def test_checkpoint_bad_magic(tmp_path):
    f = tmp_path / "junk.ckpt"
    f.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(f)


def test_flat_vector_round_trip():
    p = init_params(POLICY_SPEC, seed=2)
    vec = p.flat()
    q = init_params(POLICY_SPEC, seed=3)
    q.load_flat(vec)
    for (_, x), (_, y) in zip(p.arrays(), q.arrays()):
        assert np.array_equal(x, y)
    with pytest.raises(ValueError, match="entries"):
        q.load_flat(vec[:-1])


# ---------- graph vs numpy forward consistency ----------

def test_logprob_graph_matches_numpy_path():
    p = init_params(POLICY_SPEC, seed=6, dtype=np.float64)
    rng = np.random.default_rng(5)
    obs = rng.standard_normal((7, 20))
    a, u, logp = policy_forward(p, obs, mode="sample", rng=rng)
    leaves, _ = param_tensors(p)
    logp_graph, entropy = policy_logprob_graph(p, leaves, obs, u)
    assert np.abs(logp_graph.data - logp).max() < 1e-10
    expected_entropy = float(np.sum(p.log_std) + 0.5 * 6 * (1 + LOG_2PI))
    assert float(entropy.data) == pytest.approx(expected_entropy, abs=1e-12)
