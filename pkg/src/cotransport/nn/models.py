"""MLP policies and joint-action critics.

Policies emit a squashed Gaussian over the 11-dim action: a learned
state-independent log-std, tanh squashing with the change-of-variables
correction, and pre-squash values clipped to +-U_CLIP so |a| < 1 always
holds in floating point.  Fast numpy paths serve rollouts; tape graphs from
`autodiff` serve the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

U_CLIP = 8.0                 # pre-squash clip; tanh(8) is still < 1 in float32
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden: tuple[int, ...] = (256, 256, 128)
    activation: str = "relu"
    head: str = "scalar_value"   # "gaussian_policy" | "scalar_value"

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise ValueError("all dimensions must be positive")
        if self.head not in ("gaussian_policy", "scalar_value"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.activation != "relu":
            raise ValueError("only relu is supported")

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "hidden": list(self.hidden), "activation": self.activation, "head": self.head}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(input_dim=int(d["input_dim"]), output_dim=int(d["output_dim"]),
                   hidden=tuple(int(h) for h in d["hidden"]),
                   activation=d.get("activation", "relu"), head=d["head"])


@dataclass
class NetworkParams:
    spec: MlpSpec
    weights: list[np.ndarray]            # per layer, shape (fan_in, fan_out)
    biases: list[np.ndarray]
    log_std: np.ndarray | None = None    # (output_dim,) for policy heads
    _names: list[str] = field(default_factory=list, repr=False)

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"layer{i}.w", w))
            out.append((f"layer{i}.b", b))
        if self.log_std is not None:
            out.append(("log_std", self.log_std))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for _, a in self.arrays()])

    def load_flat(self, vec: np.ndarray) -> None:
        if vec.size != self.n_params:
            raise ValueError(f"flat vector has {vec.size} entries, expected {self.n_params}")
        i = 0
        for _, a in self.arrays():
            n = a.size
            a[...] = vec[i:i + n].reshape(a.shape)
            i += n

    @property
    def n_params(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def copy(self) -> "NetworkParams":
        return NetworkParams(spec=self.spec,
                             weights=[w.copy() for w in self.weights],
                             biases=[b.copy() for b in self.biases],
                             log_std=None if self.log_std is None else self.log_std.copy())


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    """Orthogonal matrix: W^T W = I when fan_in >= fan_out, W W^T = I otherwise."""
    big, small = max(fan_in, fan_out), min(fan_in, fan_out)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))          # deterministic sign convention
    w = q if fan_in >= fan_out else q.T
    return np.ascontiguousarray(w, dtype=dtype)


def init_params(spec: MlpSpec, seed: int, *, log_std_init: float = -0.5,
                dtype=np.float32) -> NetworkParams:
    """Orthogonal weights, zero biases, constant initial log-std; deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dims = [spec.input_dim, *spec.hidden, spec.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        weights.append(_orthogonal(rng, fan_in, fan_out, dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    log_std = None
    if spec.head == "gaussian_policy":
        log_std = np.full(spec.output_dim, log_std_init, dtype=dtype)
    return NetworkParams(spec=spec, weights=weights, biases=biases, log_std=log_std)


# ---------- fast numpy forward passes (rollout path) ----------

def mlp_forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    h = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n - 1:
            h = np.maximum(h, 0.0)
    return h


def _squash_correction(u: np.ndarray) -> np.ndarray:
    """Per-dim log|d tanh(u)/du| = log(1 - tanh(u)^2), computed stably."""
    return 2.0 * (math.log(2.0) - u - np.log1p(np.exp(-2.0 * u)))


def _gauss_logp(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (u - mean) / np.exp(log_std)
    per_dim = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    return (per_dim - _squash_correction(u)).sum(axis=-1)


def policy_forward(params: NetworkParams, obs: np.ndarray, *, mode: str = "sample",
                   rng: np.random.Generator | None = None
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Squashed-Gaussian action: returns (a, u, log_prob) with a = tanh(u).

    mode "sample" draws u ~ N(mean, std) (needs rng); mode "mean" uses the mean.
    Works on a single observation or a batch.
    """
    if params.spec.head != "gaussian_policy":
        raise ValueError("policy_forward needs a gaussian_policy head")
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    mean = mlp_forward(params, obs)
    log_std = params.log_std.astype(mean.dtype)
    if mode == "sample":
        if rng is None:
            raise ValueError("mode='sample' needs an rng")
        eps = rng.standard_normal(mean.shape)
        u = mean + np.exp(log_std) * eps
    elif mode == "mean":
        u = mean.copy()
    else:
        raise ValueError(f"unknown mode {mode!r}")
    u = np.clip(u, -U_CLIP, U_CLIP)
    a = np.tanh(u)
    logp = _gauss_logp(u, mean, log_std)
    return a, u, logp


def value_forward(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    """Scalar critic output V(s, a) for a single input or a batch."""
    if params.spec.head != "scalar_value":
        raise ValueError("value_forward needs a scalar_value head")
    if x.shape[-1] != params.spec.input_dim:
        raise ValueError(f"critic input dim {x.shape[-1]} != spec {params.spec.input_dim}")
    out = mlp_forward(params, x)
    return out[..., 0]


def policy_entropy(params: NetworkParams) -> float:
    """Entropy of the pre-squash Gaussian (state independent)."""
    return float(np.sum(params.log_std) + 0.5 * params.spec.output_dim * (1.0 + LOG_2PI))


# ---------- tape graphs (optimizer path) ----------

def param_tensors(params: NetworkParams) -> tuple[list[Tensor], list[Tensor]]:
    """Leaf tensors over the live parameter arrays, in flat() order."""
    leaves: list[Tensor] = []
    for _, a in params.arrays():
        leaves.append(Tensor(a))
    return leaves, leaves


def _graph_layers(params: NetworkParams, leaves: list[Tensor]):
    n = len(params.weights)
    pairs = [(leaves[2 * i], leaves[2 * i + 1]) for i in range(n)]
    log_std = leaves[2 * n] if params.log_std is not None else None
    return pairs, log_std


def mlp_graph(params: NetworkParams, leaves: list[Tensor], x: np.ndarray) -> Tensor:
    pairs, _ = _graph_layers(params, leaves)
    h: Tensor = Tensor(np.asarray(x))
    for i, (w, b) in enumerate(pairs):
        h = ad.add(ad.matmul(h, w), b)
        if i < len(pairs) - 1:
            h = ad.relu(h)
    return h


def policy_logprob_graph(params: NetworkParams, leaves: list[Tensor],
                         obs: np.ndarray, u: np.ndarray) -> tuple[Tensor, Tensor]:
    """Differentiable (log_prob [B], entropy []) of stored pre-squash actions."""
    _, log_std = _graph_layers(params, leaves)
    mean = mlp_graph(params, leaves, obs)
    std_inv = ad.exp(ad.mul(log_std, -1.0))
    z = ad.mul(ad.add(Tensor(np.asarray(u)), ad.mul(mean, -1.0)), std_inv)
    per_dim = ad.add(ad.mul(ad.square(z), -0.5), ad.mul(log_std, -1.0))
    base = ad.sum_(per_dim, axis=-1)
    const = (-0.5 * LOG_2PI * u.shape[-1]) - _squash_correction(np.asarray(u)).sum(axis=-1)
    logp = ad.add(base, Tensor(const))
    dim = params.spec.output_dim
    entropy = ad.add(ad.sum_(log_std), Tensor(np.asarray(0.5 * dim * (1.0 + LOG_2PI))))
    return logp, entropy


def value_graph(params: NetworkParams, leaves: list[Tensor], x: np.ndarray) -> Tensor:
    """Differentiable critic output [B]."""
    out = mlp_graph(params, leaves, x)
    return ad.sum_(out, axis=-1) if out.data.ndim == 2 else out
