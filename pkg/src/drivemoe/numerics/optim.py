"""Adam with linear warmup and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericsError, Parameter


@dataclass
class OptimizerConfig:
    learning_rate: float = 5e-5
    warmup_steps: int = 0
    max_grad_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_grad_norm <= 0:
            raise ValueError("max_grad_norm must be > 0")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


def warmup_rate(config: OptimizerConfig, global_step: int) -> float:
    if config.warmup_steps == 0:
        return config.learning_rate
    return config.learning_rate * min(1.0, global_step / config.warmup_steps)


def global_grad_norm(params) -> float:
    return float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params)))


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if not np.isfinite(norm):
        raise NumericsError("non-finite gradient norm")
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            p.grad *= p.grad.dtype.type(scale)
    return norm


@dataclass
class Adam:
    """Adam optimizer over a fixed, ordered parameter list.

    Moments are kept per parameter name so they survive checkpoint round trips.
    """

    params: list[Parameter]
    config: OptimizerConfig = field(default_factory=OptimizerConfig)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        for p in self.params:
            self.m.setdefault(p.name, np.zeros_like(p.data))
            self.v.setdefault(p.name, np.zeros_like(p.data))

    def step(self, global_step: int) -> dict:
        """Clip, update, zero gradients. Returns step statistics."""
        cfg = self.config
        norm = clip_gradients(self.params, cfg.max_grad_norm)
        lr = warmup_rate(cfg, global_step)
        self.t += 1
        bc1 = 1.0 - cfg.beta1**self.t
        bc2 = 1.0 - cfg.beta2**self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            if lr > 0.0:
                update = (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.epsilon)
                p.data -= update.astype(p.data.dtype, copy=False)
            p.zero_grad()
        return {"grad_norm": norm, "lr": lr}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self.m:
            self.m[name] = np.array(arrays[f"m/{name}"], copy=True)
            self.v[name] = np.array(arrays[f"v/{name}"], copy=True)
        self.t = t


def optimizer_step(params, config: OptimizerConfig, global_step: int, state: Adam | None = None) -> dict:
    """Functional entry point: one Adam update over ``params``."""
    opt = state if state is not None else Adam(list(params), config)
    return opt.step(global_step)
