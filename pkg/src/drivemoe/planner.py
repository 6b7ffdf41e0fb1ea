"""Flow-matching trajectory head over 10 ego-frame waypoints.

Training draws ``tau ~ U(0, 1)`` and noise ``eps``, forms
``x_tau = (1 - tau) eps + tau a`` and regresses the field onto ``a - eps``.
Sampling integrates the learned field from ``tau = 0`` to ``1`` with forward Euler.
The field network is a stack of decoder blocks (self-attention over action
tokens, cross-attention to the prefix, sparse expert feed-forward).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action_moe import ActionRouter, ExpertBank, GateDecision, action_router, forced_gate, moe_ffn_forward
from .numerics import Attention, LayerNorm, Linear, Module, Parameter, Tensor, as_tensor, no_grad

N_WAYPOINTS = 10
EULER_STEPS = 10
TAU_FREQS = 8


@dataclass
class TrajectoryNormalizer:
    """Per-waypoint, per-axis affine map between meters and unit scale."""

    mean: np.ndarray  # (10, 2)
    scale: np.ndarray  # (10, 2)

    @classmethod
    def fit(cls, trajs: np.ndarray, floor: float = 0.1) -> "TrajectoryNormalizer":
        trajs = np.asarray(trajs, dtype=np.float64).reshape(-1, N_WAYPOINTS, 2)
        return cls(trajs.mean(axis=0), np.maximum(trajs.std(axis=0), floor))

    @classmethod
    def identity(cls) -> "TrajectoryNormalizer":
        return cls(np.zeros((N_WAYPOINTS, 2)), np.ones((N_WAYPOINTS, 2)))

    def normalize(self, traj: np.ndarray) -> np.ndarray:
        return (np.asarray(traj, dtype=np.float64) - self.mean) / self.scale

    def denormalize(self, unit: np.ndarray) -> np.ndarray:
        return np.asarray(unit, dtype=np.float64) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryNormalizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


@dataclass
class FlowSample:
    tau: np.ndarray  # (B,)
    noise: np.ndarray  # (B, 10, 2)
    x_tau: np.ndarray
    target_velocity: np.ndarray


def make_flow_sample(action, rng: np.random.Generator, tau=None) -> FlowSample:
    """Linear-path sample for a trajectory ``(10, 2)`` or a batch ``(B, 10, 2)``."""
    a = np.asarray(action, dtype=np.float64)
    squeeze = a.ndim == 2
    a = a.reshape(-1, N_WAYPOINTS, 2)
    b = a.shape[0]
    tau = rng.uniform(0.0, 1.0, size=b) if tau is None else np.broadcast_to(np.asarray(tau, np.float64), (b,))
    eps = rng.standard_normal(a.shape)
    t = tau[:, None, None]
    x = (1.0 - t) * eps + t * a
    v = a - eps
    if squeeze:
        return FlowSample(tau[:1].copy(), eps[0], x[0], v[0])
    return FlowSample(np.array(tau), eps, x, v)


def fm_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over every waypoint coordinate."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target.astype(pred.dtype)
    return (diff * diff).mean()


def euler_integrate(field, x0: np.ndarray, steps: int = EULER_STEPS) -> np.ndarray:
    """Integrate ``dx/dtau = field(x, tau)`` from 0 to 1 with ``steps`` equal Euler steps."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=np.float64)
    h = 1.0 / steps
    for i in range(steps):
        v = np.asarray(field(x, i * h), dtype=np.float64)
        if not np.isfinite(v).all():
            raise FloatingPointError("non-finite field output")
        x = x + h * v
    return x


def tau_features(tau: np.ndarray, n_freqs: int = TAU_FREQS) -> np.ndarray:
    tau = np.asarray(tau, dtype=np.float64).reshape(-1, 1)
    ang = tau * (np.pi * 2.0 ** np.arange(n_freqs))[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang), tau], axis=1)


@dataclass
class RoutingPlan:
    """How each decoder block picks experts.

    ``forced``: all routed weight on ``labels`` (teacher forcing).
    ``topk``: router top-k, with logit noise when ``train`` is set.
    ``gumbel`` (with ``topk``): fixed perturbation so every block and every
    integration step of one trajectory draws from the router consistently.
    """

    mode: str = "topk"
    k: int = 3
    labels: np.ndarray | None = None
    train: bool = False
    noise_std: float = 0.0
    rng: np.random.Generator | None = None
    gumbel: np.ndarray | None = None
    normal: np.ndarray | None = None  # (B, n_blocks, K) standard-normal draws for train noise

    def gate(self, router: ActionRouter, pooled: Tensor, layer: int = 0) -> GateDecision:
        if self.mode == "forced":
            if self.labels is None:
                raise ValueError("forced routing needs labels")
            return forced_gate(router, pooled, self.labels)
        if self.mode != "topk":
            raise ValueError(f"unknown routing mode {self.mode!r}")
        normal = None if self.normal is None else self.normal[:, layer]
        return action_router(router, pooled, self.k, self.train, self.noise_std, self.rng, self.gumbel, normal)


def _split(attn: Attention, x: Tensor) -> Tensor:
    b, t, d = x.shape
    return x.reshape(b, t, attn.n_heads, d // attn.n_heads).transpose(0, 2, 1, 3)


def _attend(attn: Attention, x: Tensor, kv: tuple[Tensor, Tensor]) -> Tensor:
    b, t, d = x.shape
    q = _split(attn, attn.q(x))
    k, v = kv
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d // attn.n_heads))
    y = (scores.softmax(axis=-1) @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return attn.o(y)


class DecoderBlock(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, n_experts: int, n_shared: int,
                 rng: np.random.Generator, dtype=np.float32, name: str = "dec"):
        self.ln1 = LayerNorm(d_model, dtype, name=f"{name}.ln1")
        self.self_attn = Attention(d_model, n_heads, rng, dtype, name=f"{name}.self")
        self.ln2 = LayerNorm(d_model, dtype, name=f"{name}.ln2")
        self.cross_attn = Attention(d_model, n_heads, rng, dtype, name=f"{name}.cross")
        self.ln3 = LayerNorm(d_model, dtype, name=f"{name}.ln3")
        self.router = ActionRouter(d_model, n_experts, rng, dtype, name=f"{name}.router")
        self.bank = ExpertBank(d_model, d_ff, n_experts, n_shared, rng, dtype, name=f"{name}.bank")

    def context_kv(self, prefix: Tensor) -> tuple[Tensor, Tensor]:
        a = self.cross_attn
        return _split(a, a.k(prefix)), _split(a, a.v(prefix))

    def __call__(self, x: Tensor, kv, routing: RoutingPlan, layer: int = 0) -> tuple[Tensor, GateDecision]:
        x = x + self.self_attn(self.ln1(x))
        x = x + _attend(self.cross_attn, self.ln2(x), kv)
        h = self.ln3(x)
        # router reads the pooled feed-forward input, which already carries the prefix
        gate = routing.gate(self.router, h.mean(axis=1), layer)
        return x + moe_ffn_forward(h, self.bank, gate), gate


class ActionDecoder(Module):
    """Velocity field ``v(x_tau, tau | prefix)`` on normalized trajectories."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, n_blocks: int, n_experts: int, n_shared: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.action_in = Linear(2, d_model, rng, dtype, name="action_in")
        self.waypoint_pe = Parameter(rng.standard_normal((N_WAYPOINTS, d_model)).astype(dtype) * 0.1, "waypoint_pe")
        self.tau_in = Linear(2 * TAU_FREQS + 1, d_model, rng, dtype, name="tau_in")
        self.blocks = [DecoderBlock(d_model, n_heads, d_ff, n_experts, n_shared, rng, dtype, name=f"dec{i}")
                       for i in range(n_blocks)]
        self.norm = LayerNorm(d_model, dtype, name="out_norm")
        self.action_out = Linear(d_model, 2, rng, dtype, name="action_out", scale=0.1 / np.sqrt(d_model))
        self.d_model = d_model

    @property
    def n_experts(self) -> int:
        return self.blocks[0].bank.n_experts

    def context(self, prefix: Tensor) -> list:
        return [blk.context_kv(prefix) for blk in self.blocks]

    def __call__(self, x_tau, tau, context: list, routing: RoutingPlan) -> tuple[Tensor, list[GateDecision]]:
        dtype = self.action_in.weight.dtype
        x_tau = np.asarray(x_tau, dtype=dtype)
        b = x_tau.shape[0]
        t_emb = self.tau_in(as_tensor(tau_features(np.broadcast_to(tau, (b,))).astype(dtype)))
        h = self.action_in(as_tensor(x_tau)) + self.waypoint_pe + t_emb.reshape(b, 1, self.d_model)
        gates = []
        for i, (blk, kv) in enumerate(zip(self.blocks, context)):
            h, gate = blk(h, kv, routing, i)
            gates.append(gate)
        return self.action_out(self.norm(h)), gates


def sample_trajectory(decoder: ActionDecoder, context: list, routing: RoutingPlan, steps: int = EULER_STEPS,
                      rng: np.random.Generator | None = None, x0: np.ndarray | None = None,
                      normalizer: TrajectoryNormalizer | None = None, batch: int | None = None,
                      gate_log: list | None = None) -> np.ndarray:
    """Euler-integrate the decoder field from Gaussian noise; returns meters ``(B, 10, 2)``.

    If ``gate_log`` is a list, the layer-mean clean router probabilities of every
    Euler step are appended to it.
    """
    if x0 is None:
        if rng is None or batch is None:
            raise ValueError("need x0 or (rng, batch)")
        x0 = rng.standard_normal((batch, N_WAYPOINTS, 2))

    def field(x, tau):
        v, gates = decoder(x, tau, context, routing)
        if gate_log is not None and gates:
            gate_log.append(np.mean([g.probs.data for g in gates], axis=0))
        return v.data

    with no_grad():
        unit = euler_integrate(field, x0, steps)
    return (normalizer or TrajectoryNormalizer.identity()).denormalize(unit)
