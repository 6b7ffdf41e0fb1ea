"""Skill-specialized sparse feed-forward layers.

Every decoder block owns a linear router over ``n_experts`` routed experts.
The router reads the mean-pooled hidden state of the block's input, picks the
top-k experts and renormalizes their probabilities. Shared experts always run
with weight one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import MLP, Linear, Module, Tensor, as_tensor, scatter_rows

LAMBDA_FM = 1.0
LAMBDA_ROUTER_STAGE1 = 0.03
LAMBDA_ROUTER_STAGE2 = 0.025
LAMBDA_BALANCE = 0.01
NOISE_STD = 0.1
LOG_FLOOR = 1e-12


class ExpertBank(Module):
    """``n_shared`` always-on and ``n_experts`` routed two-layer perceptrons."""

    def __init__(self, d_model: int, d_ff: int, n_experts: int, n_shared: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "bank"):
        if n_experts < 1:
            raise ValueError("need at least one routed expert")
        out_scale = 0.5 / np.sqrt(d_ff)
        self.experts = [MLP(d_model, d_ff, d_model, rng, dtype, name=f"{name}.e{i}", out_scale=out_scale)
                        for i in range(n_experts)]
        self.shared = [MLP(d_model, d_ff, d_model, rng, dtype, name=f"{name}.s{i}", out_scale=out_scale)
                       for i in range(n_shared)]

    @property
    def n_experts(self) -> int:
        return len(self.experts)


class ActionRouter(Module):
    def __init__(self, d_model: int, n_experts: int, rng: np.random.Generator, dtype=np.float32,
                 name: str = "router"):
        self.proj = Linear(d_model, n_experts, rng, dtype, name=name, scale=0.1 / np.sqrt(d_model))

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.proj(pooled)


@dataclass
class GateDecision:
    """Routing outcome for a batch.

    ``probs`` are noise-free router probabilities (what the router loss sees);
    ``selected`` holds expert indices per row, best first; ``weights`` are the
    renormalized probabilities of the selected experts.
    """

    probs: Tensor  # (B, K)
    selected: np.ndarray  # (B, k) int
    weights: Tensor  # (B, k)

    @property
    def n_experts(self) -> int:
        return self.probs.shape[-1]

    def usage(self) -> np.ndarray:
        """Fraction of rows that selected each expert."""
        counts = np.zeros(self.n_experts)
        np.add.at(counts, self.selected.ravel(), 1.0)
        return counts / self.selected.shape[0]


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores per row; equal scores keep the lower index first."""
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k]


def gate_from_logits(logits: Tensor, k: int, noise: np.ndarray | None = None) -> GateDecision:
    """Top-k gate; ``noise`` (same shape as logits) perturbs selection and weights only."""
    if not np.isfinite(logits.data).all():
        raise ValueError("non-finite router input")
    clean = logits.softmax(axis=-1)
    routed = clean if noise is None else (logits + noise.astype(logits.dtype)).softmax(axis=-1)
    k = min(k, logits.shape[-1])
    sel = topk_indices(routed.data, k)
    rows = np.arange(sel.shape[0])[:, None]
    picked = routed[rows, sel]
    weights = picked / picked.sum(axis=-1, keepdims=True)
    return GateDecision(clean, sel, weights)


def action_router(router: ActionRouter, pooled: Tensor, k: int = 3, train_mode: bool = False,
                  noise_std: float = NOISE_STD, rng: np.random.Generator | None = None,
                  gumbel: np.ndarray | None = None, normal: np.ndarray | None = None) -> GateDecision:
    """Route a batch of pooled hidden states.

    In train mode Gaussian noise of ``noise_std`` is added to the logits before
    selection; ``normal`` supplies the standard-normal draws explicitly, otherwise
    they come from ``rng``. ``gumbel`` (optional, inference only) perturbs
    log-probabilities so the top-k becomes a draw without replacement from the
    router distribution.
    """
    logits = router(pooled)
    noise = None
    if train_mode and noise_std > 0:
        if normal is None:
            if rng is None:
                raise ValueError("train-mode routing with noise needs an rng")
            normal = rng.standard_normal(logits.shape)
        noise = np.asarray(normal).reshape(logits.shape) * noise_std
    if gumbel is not None:
        if not np.isfinite(logits.data).all():
            raise ValueError("non-finite router input")
        clean = logits.softmax(axis=-1)
        scores = np.log(np.maximum(clean.data, LOG_FLOOR)) + gumbel
        sel = topk_indices(scores, min(k, logits.shape[-1]))
        picked = clean[np.arange(sel.shape[0])[:, None], sel]
        return GateDecision(clean, sel, picked / picked.sum(axis=-1, keepdims=True))
    return gate_from_logits(logits, k, noise)


def forced_gate(router: ActionRouter, pooled: Tensor, labels) -> GateDecision:
    """Teacher-forced gate: all routed weight on the labeled expert; router probs still computed."""
    logits = router(pooled)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError("skill label outside expert range")
    return GateDecision(logits.softmax(axis=-1), labels, as_tensor(np.ones(labels.shape, logits.dtype)))


def moe_ffn_forward(h: Tensor, bank: ExpertBank, gate: GateDecision) -> Tensor:
    """``sum_k w_k E_k(h) + sum_m S_m(h)`` tokenwise; experts only see the rows that picked them."""
    if h.ndim != 3:
        raise ValueError("expected (batch, tokens, d_model)")
    b, t, d = h.shape
    if gate.selected.shape[0] != b:
        raise ValueError(f"gate batch {gate.selected.shape[0]} != hidden batch {b}")
    if gate.n_experts != bank.n_experts:
        raise ValueError("gate and bank disagree on expert count")
    out = None
    for e, expert in enumerate(bank.experts):
        rows, slots = np.nonzero(gate.selected == e)
        if rows.size == 0:
            continue
        w = gate.weights[rows, slots].reshape(rows.size, 1, 1)
        y = expert(h[rows]) * w
        y = scatter_rows(y, rows, b) if rows.size != b or np.any(rows != np.arange(b)) else y
        out = y if out is None else out + y
    for expert in bank.shared:
        y = expert(h)
        out = y if out is None else out + y
    return out


def action_router_loss(layer_probs, labels) -> Tensor:
    """Mean over layers (and batch) of ``-log r_label`` on noise-free probabilities."""
    layer_probs = list(layer_probs)
    if not layer_probs:
        raise ValueError("no router probabilities")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    total = None
    for p in layer_probs:
        if labels.size and (labels.min() < 0 or labels.max() >= p.shape[-1]):
            raise ValueError("skill label outside expert range")
        if p.ndim == 1:
            p = p.reshape(1, -1)
        nll = -(p[np.arange(labels.size), labels].clamp_min(LOG_FLOOR).log().mean())
        total = nll if total is None else total + nll
    return total * (1.0 / len(layer_probs))


def load_balance_loss(gates) -> Tensor:
    """``K * sum_k f_k P_k`` per layer, averaged over layers.

    ``f_k`` is the fraction of rows selecting expert ``k`` (a constant),
    ``P_k`` the mean noise-free probability of expert ``k``.
    """
    if isinstance(gates, GateDecision):
        gates = [gates]
    gates = list(gates)
    if not gates:
        raise ValueError("no gate decisions")
    total = None
    for g in gates:
        f = g.usage().astype(g.probs.dtype)
        value = (g.probs.mean(axis=0) * f).sum() * float(g.n_experts)
        total = value if total is None else total + value
    return total * (1.0 / len(gates))


def combined_action_loss(fm, router, balance, lambda1: float = LAMBDA_FM,
                         lambda2: float = LAMBDA_ROUTER_STAGE1, lambda3: float = LAMBDA_BALANCE):
    """``lambda1 * fm + lambda2 * router + lambda3 * balance``; accepts tensors or floats."""
    parts = [(lambda1, fm), (lambda2, router), (lambda3, balance)]
    for _, v in parts:
        val = v.data if isinstance(v, Tensor) else np.asarray(v)
        if not np.isfinite(val).all():
            raise ValueError("non-finite loss component")
    total = 0.0
    for lam, v in parts:
        if lam != 0.0:
            total = v * lam + total if isinstance(v, Tensor) else total + lam * v
    return total


def gate_stats(gates) -> dict:
    """Utilization ``f``, mean probability ``P`` and utilization entropy, averaged over layers."""
    gates = [gates] if isinstance(gates, GateDecision) else list(gates)
    f = np.mean([g.usage() for g in gates], axis=0)
    p = np.mean([g.probs.data.mean(axis=0) for g in gates], axis=0)
    share = f / max(f.sum(), 1e-12)
    nz = share[share > 0]
    return {"f": f.tolist(), "P": p.astype(float).tolist(), "entropy": float(-(nz * np.log(nz)).sum())}


def stack_probs(gates) -> np.ndarray:
    return np.stack([g.probs.data for g in gates])


__all__ = [
    "ExpertBank", "ActionRouter", "GateDecision", "action_router", "forced_gate", "gate_from_logits",
    "moe_ffn_forward", "action_router_loss", "load_balance_loss", "combined_action_loss", "gate_stats",
    "topk_indices",
]
