"""The driving policy: view encoder, camera router and flow-matching decoder.

The dense baseline is the same class with ``dynamic_view=False`` and one routed
expert; it never computes router losses.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .action_moe import action_router_loss, load_balance_loss
from .backbone import Backbone, assemble_sequence
from .numerics import Module, no_grad
from .planner import (
    EULER_STEPS,
    N_WAYPOINTS,
    ActionDecoder,
    RoutingPlan,
    TrajectoryNormalizer,
    fm_loss,
    sample_trajectory,
)
from .vision_moe import GOAL_DIM, VisionRouter, one_hot, route_views, vision_router_loss
from .world.views import N_VIEWS

STATE_FEATURES = 5


@dataclass
class ModelConfig:
    channels: int = 5
    grid: int = 32
    patch: int = 8
    d_model: int = 64
    n_heads: int = 4
    encoder_blocks: int = 2
    encoder_ff: int = 128
    decoder_blocks: int = 4
    d_ff: int = 128
    n_experts: int = 6
    n_shared: int = 1
    k_top: int = 3
    dynamic_view: bool = True
    history: int = 4
    router_hidden: int = 64
    euler_steps: int = EULER_STEPS
    # "topk": deterministic router top-k; "sample": one router draw per trajectory
    sample_routing: str = "topk"
    dtype: str = "float32"

    def __post_init__(self):
        if self.k_top < 1:
            raise ValueError("k_top must be >= 1")
        if self.sample_routing not in ("topk", "sample"):
            raise ValueError(f"unknown sample_routing {self.sample_routing!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def d_state(self) -> int:
        return (self.history + 1) * STATE_FEATURES + GOAL_DIM

    @property
    def is_moe(self) -> bool:
        return self.dynamic_view or self.n_experts > 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def dense(cls, **kw) -> "ModelConfig":
        return cls(**{"dynamic_view": False, "n_experts": 1, "k_top": 1, **kw})


@dataclass
class Batch:
    """Model inputs for ``B`` frames; rasters as float arrays in [0, 1]."""

    front: np.ndarray  # (B, C, S, S) current front view
    front_prev: np.ndarray  # (B, C, S, S)
    views: np.ndarray | None  # (B, 6, C, S, S) all cameras at t
    state: np.ndarray  # (B, (H+1)*5)
    goal: np.ndarray  # (B, 7)
    traj: np.ndarray | None = None  # (B, 10, 2) meters
    view_label: np.ndarray | None = None
    skill_label: np.ndarray | None = None

    def __len__(self) -> int:
        return self.front.shape[0]

    def subset(self, idx) -> "Batch":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Batch(*(pick(getattr(self, f.name)) for f in fields(self)))


@dataclass
class Draws:
    """Per-sample randomness for one loss evaluation (counter-based so micro-batches agree)."""

    tau: np.ndarray  # (B,)
    eps: np.ndarray  # (B, 10, 2)
    router_normal: np.ndarray  # (B, n_blocks, K)

    @classmethod
    def for_samples(cls, keys, n_blocks: int, n_experts: int) -> "Draws":
        taus, epss, norms = [], [], []
        for key in keys:
            r = np.random.default_rng(key)
            taus.append(r.uniform())
            epss.append(r.standard_normal((N_WAYPOINTS, 2)))
            norms.append(r.standard_normal((n_blocks, n_experts)))
        return cls(np.asarray(taus), np.asarray(epss), np.asarray(norms))


@dataclass
class LossWeights:
    lambda0: float = 0.05
    lambda1: float = 1.0
    lambda2: float = 0.03
    lambda3: float = 0.01


class DrivePolicy(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        dtype = np.dtype(config.dtype)
        self.config = config
        c = config
        self.backbone = Backbone(c.channels, c.grid, c.patch, c.d_model, c.n_heads, c.encoder_blocks,
                                 c.encoder_ff, c.d_state, rng, dtype)
        self.vision_router = VisionRouter(c.d_model, rng, dtype, hidden=c.router_hidden) if c.dynamic_view else None
        self.decoder = ActionDecoder(c.d_model, c.n_heads, c.d_ff, c.decoder_blocks, c.n_experts, c.n_shared,
                                     rng, dtype)
        self.normalizer = TrajectoryNormalizer.identity()
        self.assign_names()

    @property
    def dtype(self):
        return np.dtype(self.config.dtype)

    # prefix -------------------------------------------------------------
    def encode_prefix(self, batch: Batch, view_mode: str = "router", fetch_views=None):
        """Prefix tokens plus vision routing outcome.

        ``view_mode``: ``label`` uses ``batch.view_label`` as the dynamic view,
        ``router`` uses the router's top-1 choice. ``fetch_views(chosen)`` may
        supply the chosen rasters ``(B, C, S, S)`` when ``batch.views`` is None,
        so only the winning camera has to be rendered.
        Returns ``(prefix, view_probs or None, chosen views or None)``.
        """
        dt = self.dtype
        b = len(batch)
        enc = self.backbone.encoder
        state_in = np.concatenate([batch.state, batch.goal], axis=1).astype(dt)
        state = self.backbone.state(state_in)
        if not self.config.dynamic_view:
            tokens, _ = enc(np.concatenate([batch.front, batch.front_prev]).astype(dt, copy=False))
            seq = assemble_sequence(self.backbone, tokens[:b], tokens[b:], None, state)
            return seq.tokens, None, None
        if view_mode == "label":
            if batch.view_label is None:
                raise ValueError("label view mode needs view labels")
            chosen = np.asarray(batch.view_label, dtype=np.int64)
            dyn = batch.views[np.arange(b), chosen]
            tokens, pooled = enc(np.concatenate([batch.front, batch.front_prev, dyn]).astype(dt, copy=False))
            probs = route_views(self.vision_router, pooled[:b], batch.goal)
            fixed_t, fixed_p, dyn_tok = tokens[:b], tokens[b:2 * b], tokens[2 * b:]
        elif view_mode == "router":
            tokens, pooled = enc(np.concatenate([batch.front, batch.front_prev]).astype(dt, copy=False))
            probs = route_views(self.vision_router, pooled[:b], batch.goal)
            chosen = probs.top1()
            # only the winning camera is encoded
            dyn = batch.views[np.arange(b), chosen] if fetch_views is None else fetch_views(chosen)
            dyn_tok, _ = enc(np.asarray(dyn).astype(dt, copy=False))
            fixed_t, fixed_p = tokens[:b], tokens[b:]
        else:
            raise ValueError(f"unknown view mode {view_mode!r}")
        seq = assemble_sequence(self.backbone, fixed_t, fixed_p, dyn_tok, state, chosen)
        return seq.tokens, probs, chosen

    # training -----------------------------------------------------------
    def losses(self, batch: Batch, stage: int, draws: Draws, weights: LossWeights, noise_std: float = 0.1,
               scale: float = 1.0) -> dict:
        """Loss components and their weighted total (scaled by ``scale`` for accumulation).

        Stage 1 teacher-forces the labeled view and expert; stage 2 follows the routers.
        """
        if batch.traj is None:
            raise ValueError("training batch needs trajectories")
        c = self.config
        moe = c.is_moe
        if stage == 1 and moe and (batch.skill_label is None or (c.dynamic_view and batch.view_label is None)):
            raise ValueError("stage 1 needs view and skill labels")
        prefix, vprobs, chosen = self.encode_prefix(batch, "label" if stage == 1 else "router")
        if stage == 1 and c.n_experts > 1:
            routing = RoutingPlan("forced", labels=batch.skill_label)
        elif c.n_experts == 1:
            routing = RoutingPlan("forced", labels=np.zeros(len(batch), dtype=np.int64))
        else:
            routing = RoutingPlan("topk", k=c.k_top, train=True, noise_std=noise_std, normal=draws.router_normal)
        a = self.normalizer.normalize(batch.traj)
        t = draws.tau[:, None, None]
        x_tau = (1.0 - t) * draws.eps + t * a
        target = a - draws.eps
        v, gates = self.decoder(x_tau, draws.tau, self.decoder.context(prefix), routing)
        parts = {"fm": fm_loss(v, target)}
        lam = {"fm": weights.lambda1}
        if c.n_experts > 1 and batch.skill_label is not None:
            parts["ar"] = action_router_loss([g.probs for g in gates], batch.skill_label)
            parts["lb"] = load_balance_loss(gates)
            lam["ar"], lam["lb"] = weights.lambda2, weights.lambda3
        if vprobs is not None and batch.view_label is not None:
            parts["vr"] = vision_router_loss(vprobs.probs, one_hot(batch.view_label), 1.0)
            lam["vr"] = weights.lambda0
        total = None
        for name, value in parts.items():
            if lam[name] == 0.0:
                continue
            term = value * lam[name]
            total = term if total is None else total + term
        return {"total": total * scale, "parts": parts, "weights": lam, "gates": gates, "view_probs": vprobs,
                "chosen_views": chosen}

    # inference ----------------------------------------------------------
    def predict(self, batch: Batch, rng: np.random.Generator | None = None, steps: int | None = None,
                routing: str | None = None, noise: tuple | None = None, fetch_views=None) -> tuple[np.ndarray, dict]:
        """Sample one trajectory per frame; returns meters ``(B, 10, 2)`` and routing info.

        ``noise = (x0 (B, 10, 2), gumbel (B, K))`` replaces draws from ``rng`` so
        callers can key randomness per sample.
        """
        c = self.config
        steps = c.euler_steps if steps is None else steps
        routing = routing or c.sample_routing
        b = len(batch)
        if noise is None:
            if rng is None:
                raise ValueError("need rng or noise")
            x0 = rng.standard_normal((b, N_WAYPOINTS, 2))
            gumbel = rng.gumbel(size=(b, c.n_experts)) if routing == "sample" else None
        else:
            x0, gumbel = noise
        with no_grad():
            prefix, vprobs, chosen = self.encode_prefix(batch, "router", fetch_views)
            context = self.decoder.context(prefix)
            if c.n_experts == 1:
                plan = RoutingPlan("forced", labels=np.zeros(b, dtype=np.int64))
            elif routing == "sample":
                plan = RoutingPlan("topk", k=c.k_top, gumbel=gumbel)
            else:
                plan = RoutingPlan("topk", k=c.k_top)
            log: list = []
            traj = sample_trajectory(self.decoder, context, plan, steps, x0=x0, normalizer=self.normalizer,
                                     gate_log=log)
        experts = np.argmax(np.mean(log, axis=0), axis=-1) if log else None
        info = {"views": chosen, "view_probs": None if vprobs is None else vprobs.probs.data, "experts": experts}
        return traj, info

    def route(self, batch: Batch, seed: int = 0) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Top-1 camera and top-1 expert per frame.

        The expert decision is the argmax of the router probabilities averaged
        over layers and over the Euler path of a deterministic top-k sample,
        i.e. over the states the router actually sees at inference.
        """
        with no_grad():
            prefix, vprobs, chosen = self.encode_prefix(batch, "router")
            if self.config.n_experts == 1:
                return chosen, None
            x0 = np.random.default_rng([seed, 2718]).standard_normal((len(batch), N_WAYPOINTS, 2))
            log: list = []
            sample_trajectory(self.decoder, self.decoder.context(prefix), RoutingPlan("topk", k=self.config.k_top),
                              self.config.euler_steps, x0=x0, gate_log=log)
        return chosen, np.argmax(np.mean(log, axis=0), axis=-1)

    # state ----------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in arrays:
                raise KeyError(f"missing parameter {name}")
            if arrays[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype, copy=True)


def pe_rows_distinct(policy: DrivePolicy, tol: float = 1e-6) -> bool:
    t = policy.backbone.view_pe.data
    d = np.abs(t[:, None, :] - t[None, :, :]).max(axis=-1)
    return bool(np.all(d[~np.eye(N_VIEWS, dtype=bool)] > tol))


__all__ = ["Batch", "Draws", "DrivePolicy", "LossWeights", "ModelConfig", "pe_rows_distinct"]
