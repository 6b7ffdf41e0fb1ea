"""Scene-specialized camera selection.

A small MLP scores every camera from the pooled front-view embedding plus the
encoded goal waypoint. Only the winning camera is encoded downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import MLP, Module, Tensor, as_tensor, concat
from .world.views import N_VIEWS

GOAL_DIM = 7
LAMBDA_VISION = 0.05
LOG_FLOOR = 1e-12


class VisionRouter(Module):
    def __init__(self, d_model: int, rng: np.random.Generator, dtype=np.float32, hidden: int = 64,
                 n_views: int = N_VIEWS):
        self.mlp = MLP(d_model + GOAL_DIM, hidden, n_views, rng, dtype, name="mlp")
        self.n_views = n_views

    def __call__(self, pooled_front: Tensor, goal_enc) -> Tensor:
        goal = as_tensor(np.asarray(goal_enc, dtype=pooled_front.dtype))
        if goal.ndim == 1:
            goal = goal.reshape(1, GOAL_DIM)
        return self.mlp(concat([pooled_front, goal], axis=-1))


@dataclass
class ViewProbabilities:
    logits: Tensor
    probs: Tensor

    def top1(self) -> np.ndarray:
        return select_top1_view(self.probs)


def route_views(router: VisionRouter, pooled_front: Tensor, goal_enc) -> ViewProbabilities:
    logits = router(pooled_front, goal_enc)
    return ViewProbabilities(logits, logits.softmax(axis=-1))


def select_top1_view(probs) -> np.ndarray:
    """Index of the most probable camera per row; ties go to the lower index."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(p, axis=-1)  # argmax returns the first maximum


def one_hot(labels, n: int = N_VIEWS, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n):
        raise ValueError(f"label outside [0, {n})")
    out = np.zeros(labels.shape + (n,), dtype=dtype)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def vision_router_loss(probs: Tensor, labels, weight: float = LAMBDA_VISION) -> Tensor:
    """``-weight * sum y log p`` averaged over the batch; ``labels`` must be one-hot rows."""
    y = np.asarray(labels.data if isinstance(labels, Tensor) else labels, dtype=np.float64)
    if y.shape != probs.shape:
        raise ValueError(f"label shape {y.shape} != probability shape {probs.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("vision router labels must be one-hot")
    ll = (probs.clamp_min(LOG_FLOOR).log() * y.astype(probs.dtype)).sum(axis=-1)
    return ll.mean() * (-weight)
