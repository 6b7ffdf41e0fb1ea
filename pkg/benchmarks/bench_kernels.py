"""Micro-benchmarks for the raster kernels and the per-tick inference path.

Compares the compiled extension against the numpy fallback on inputs sized
like one six-camera render, then times a full render and a batched planner
call. Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from drivemoe import _raster_py, kernels
from drivemoe.dataset import Observer
from drivemoe.model import Batch, DrivePolicy, ModelConfig
from drivemoe.world.render import render_views
from drivemoe.world.scenarios import make_spec
from drivemoe.world.sim import World
from drivemoe.world.views import N_VIEWS, VIEWS


def kernel_inputs(rng: np.random.Generator, grid: int = 32, n_segments: int = 240, n_boxes: int = 12):
    points = rng.uniform(-40, 40, (N_VIEWS * grid * grid, 2))
    a = rng.uniform(-60, 60, (n_segments, 2))
    segments = np.hstack([a, a + rng.normal(0, 5, (n_segments, 2))])
    groups = rng.integers(0, 4, n_segments)
    boxes = np.column_stack([rng.uniform(-30, 30, (n_boxes, 2)), rng.uniform(-np.pi, np.pi, n_boxes),
                             np.full(n_boxes, 2.4), np.full(n_boxes, 1.0)])
    return points, segments, groups, boxes


def best_ms(fn, repeat: int, number: int = 1) -> float:
    return 1e3 * min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> dict:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=32, help="planner batch size")
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    pts, seg, grp, boxes = kernel_inputs(rng)
    results = {"backend": kernels.BACKEND}

    impls = {"python": _raster_py}
    if kernels.BACKEND == "compiled":
        from drivemoe import _raster

        impls["compiled"] = _raster
    for name, mod in impls.items():
        results[f"segment_min_dist_{name}_ms"] = best_ms(lambda: mod.segment_group_min_dist(pts, seg, grp, 4),
                                                         args.repeat)
        results[f"boxes_first_hit_{name}_ms"] = best_ms(lambda: mod.boxes_first_hit(pts, boxes), args.repeat)
    if "compiled" in impls:
        # both backends must agree before their timings are comparable
        np.testing.assert_allclose(impls["compiled"].segment_group_min_dist(pts, seg, grp, 4),
                                   _raster_py.segment_group_min_dist(pts, seg, grp, 4), rtol=1e-12)
        np.testing.assert_array_equal(impls["compiled"].boxes_first_hit(pts, boxes),
                                      _raster_py.boxes_first_hit(pts, boxes))

    world = World(make_spec("HighwayCutIn", 0, 0))
    results["render_6_views_ms"] = best_ms(lambda: render_views(world), args.repeat)
    results["render_front_ms"] = best_ms(lambda: render_views(world, views=["front"]), args.repeat)

    cfg = ModelConfig(d_model=32, n_heads=2, encoder_blocks=1, encoder_ff=64, decoder_blocks=2, d_ff=64,
                      router_hidden=32)
    policy = DrivePolicy(cfg, np.random.default_rng(0))
    obs = Observer(world)
    front = obs.render(["front"])["front"]
    b = args.batch
    batch = Batch(np.repeat(front[None], b, 0), np.repeat(obs.advance(front)[None], b, 0), None,
                  np.repeat(obs.state()[None], b, 0), np.repeat(obs.goal()[None], b, 0))
    views = obs.render(list(VIEWS))

    def fetch(chosen):
        return np.stack([views[VIEWS[v]] for v in chosen])

    results[f"predict_batch{b}_ms"] = best_ms(
        lambda: policy.predict(batch, rng=np.random.default_rng(1), fetch_views=fetch), args.repeat)
    for k, v in results.items():
        print(f"{k:32s} {v:10.3f}" if isinstance(v, float) else f"{k:32s} {v}")
    return results


if __name__ == "__main__":
    print(json.dumps(main(), sort_keys=True))
