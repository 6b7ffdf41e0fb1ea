"""View encoder and prefix assembly.

Each raster is cut into square patches, projected to ``d_model``, mixed by a
small self-attention stack and normalized. Learned per-view rows are added
after encoding so a view's identity shifts every token of that view by the
same vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import EncoderBlock, LayerNorm, Linear, Module, Parameter, Tensor, as_tensor, concat
from .world.views import N_VIEWS

TAGS = ("fixed_view", "dynamic_view", "text", "state")


@dataclass
class TokenSequence:
    tokens: Tensor  # (B, T, D)
    segment_tags: list[str]

    @property
    def length(self) -> int:
        return len(self.segment_tags)


def patchify(rasters: np.ndarray, patch: int) -> np.ndarray:
    """``(B, C, S, S)`` -> ``(B, P, C*patch*patch)`` with patches in row-major order."""
    b, c, s, s2 = rasters.shape
    if s != s2 or s % patch:
        raise ValueError(f"raster {s}x{s2} not divisible into {patch}x{patch} patches")
    n = s // patch
    x = rasters.reshape(b, c, n, patch, n, patch).transpose(0, 2, 4, 1, 3, 5)
    return x.reshape(b, n * n, c * patch * patch)


class ViewEncoder(Module):
    def __init__(self, channels: int, grid: int, patch: int, d_model: int, n_heads: int, n_blocks: int,
                 d_ff: int, rng: np.random.Generator, dtype=np.float32):
        if grid % patch:
            raise ValueError("grid must be a multiple of patch")
        self.channels, self.grid, self.patch = channels, grid, patch
        self.n_patches = (grid // patch) ** 2
        self.proj = Linear(channels * patch * patch, d_model, rng, dtype, name="proj")
        self.patch_pe = Parameter(rng.standard_normal((self.n_patches, d_model)).astype(dtype) * 0.02, "patch_pe")
        self.blocks = [EncoderBlock(d_model, n_heads, d_ff, rng, dtype, name=f"block{i}") for i in range(n_blocks)]
        self.norm = LayerNorm(d_model, dtype, name="norm")

    def embed(self, rasters: np.ndarray) -> Tensor:
        """Per-patch projections before any attention, ``(B, P, D)``."""
        rasters = np.asarray(rasters)
        if rasters.ndim == 3:
            rasters = rasters[None]
        if rasters.shape[1:] != (self.channels, self.grid, self.grid):
            raise ValueError(f"raster shape {rasters.shape[1:]} != {(self.channels, self.grid, self.grid)}")
        x = patchify(rasters.astype(self.proj.weight.dtype, copy=False), self.patch)
        return self.proj(as_tensor(x)) + self.patch_pe

    def __call__(self, rasters: np.ndarray) -> tuple[Tensor, Tensor]:
        """Tokens ``(B, P, D)`` and pooled embedding ``(B, D)`` (mean of final tokens)."""
        h = self.embed(rasters)
        for blk in self.blocks:
            h = blk(h)
        h = self.norm(h)
        return h, h.mean(axis=1)


def encode_view(encoder: ViewEncoder, raster: np.ndarray) -> tuple[Tensor, Tensor]:
    return encoder(raster)


class StateEncoder(Module):
    """Ego history plus goal encoding to one token."""

    def __init__(self, d_state: int, d_model: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(d_state, d_model, rng, dtype, name="fc1")
        self.fc2 = Linear(d_model, d_model, rng, dtype, name="fc2")

    def __call__(self, feats: np.ndarray) -> Tensor:
        x = as_tensor(np.asarray(feats, dtype=self.fc1.weight.dtype))
        return self.fc2(self.fc1(x).gelu())


def ego_state_features(ego, speed_scale: float = 10.0, pos_scale: float = 10.0) -> np.ndarray:
    """Current and past (x, y, velocity, acceleration, heading) in the current ego frame."""
    import math

    c, s = math.cos(ego.heading), math.sin(ego.heading)
    rows = []
    for k in tuple(ego.history) + (ego.kinematics(),):
        dx, dy = k.x - ego.x, k.y - ego.y
        dh = math.remainder(k.heading - ego.heading, 2 * math.pi)
        rows.append([(c * dx + s * dy) / pos_scale, (-s * dx + c * dy) / pos_scale,
                     k.velocity / speed_scale, k.acceleration / speed_scale, dh])
    return np.asarray(rows, dtype=np.float64).ravel()


class Backbone(Module):
    """Encoder, per-view positional table, frame-age row, text token and state token."""

    def __init__(self, channels: int, grid: int, patch: int, d_model: int, n_heads: int, n_blocks: int,
                 d_ff: int, d_state: int, rng: np.random.Generator, dtype=np.float32):
        self.encoder = ViewEncoder(channels, grid, patch, d_model, n_heads, n_blocks, d_ff, rng, dtype)
        self.view_pe = Parameter(rng.standard_normal((N_VIEWS, d_model)).astype(dtype) * 0.5, "view_pe")
        # separates the previous front frame from the current one
        self.age_pe = Parameter(rng.standard_normal((1, d_model)).astype(dtype) * 0.5, "age_pe")
        self.text = Parameter(rng.standard_normal((1, 1, d_model)).astype(dtype) * 0.02, "text")
        self.state = StateEncoder(d_state, d_model, rng, dtype)
        self.d_model = d_model

    @property
    def n_patches(self) -> int:
        return self.encoder.n_patches

    def add_view_pe(self, tokens: Tensor, view_idx) -> Tensor:
        """Add the positional row of each sample's view to all of its tokens."""
        idx = np.broadcast_to(np.asarray(view_idx, dtype=np.int64), (tokens.shape[0],))
        return tokens + self.view_pe[idx].reshape(tokens.shape[0], 1, self.d_model)


def assemble_sequence(backbone: Backbone, fixed_t: Tensor, fixed_tm1: Tensor, dynamic: Tensor | None,
                      state: Tensor, dynamic_view=None) -> TokenSequence:
    """``[fixed(t), fixed(t-1), dynamic, text, state]``; encoder tokens go in before positional rows."""
    b, p, d = fixed_t.shape
    for name, part in (("fixed_tm1", fixed_tm1), ("dynamic", dynamic)):
        if part is not None and part.shape[-1] != d:
            raise ValueError(f"{name} width {part.shape[-1]} != {d}")
    if state.shape[-1] != d:
        raise ValueError(f"state width {state.shape[-1]} != {d}")
    parts = [backbone.add_view_pe(fixed_t, 0), backbone.add_view_pe(fixed_tm1, 0) + backbone.age_pe]
    tags = ["fixed_view"] * (2 * p)
    if dynamic is not None:
        if dynamic_view is None:
            raise ValueError("dynamic tokens need their view index")
        parts.append(backbone.add_view_pe(dynamic, dynamic_view))
        tags += ["dynamic_view"] * dynamic.shape[1]
    text = backbone.text if b == 1 else concat([backbone.text] * b, axis=0)
    parts += [text, state.reshape(b, 1, d)]
    tags += ["text", "state"]
    return TokenSequence(concat(parts, axis=1), tags)
