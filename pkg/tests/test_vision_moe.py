import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivemoe.numerics import Adam, OptimizerConfig, Parameter, Tensor, backprop, finite_diff_check
from drivemoe.vision_moe import (
    VisionRouter,
    one_hot,
    route_views,
    select_top1_view,
    vision_router_loss,
)
from drivemoe.world.route import COMMANDS, GoalWaypoint

F64 = np.float64


def zeroed_router(d=8):
    r = VisionRouter(d, np.random.default_rng(0), F64)
    for p in r.parameters():
        p.data[...] = 0.0
    return r


def test_zero_router_is_uniform():
    r = zeroed_router()
    vp = route_views(r, Tensor(np.ones((1, 8))), np.ones(7))
    np.testing.assert_allclose(vp.probs.data, 1.0 / 6.0, atol=1e-15)


def test_softmax_closed_form():
    p = Tensor(np.array([10.0, 0, 0, 0, 0, 0])).softmax().data
    expected = math.exp(10) / (math.exp(10) + 5)
    assert abs(p[0] - expected) < 1e-12
    assert abs(p[0] - 0.99977) < 1e-5


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=6, max_size=6))
def test_probs_sum_to_one(logits):
    r = VisionRouter(4, np.random.default_rng(1), F64)
    vp = route_views(r, Tensor(np.asarray(logits[:4])[None]), np.asarray(logits[:6] + [0.0])[None])
    assert abs(vp.probs.data.sum() - 1.0) < 1e-6
    assert (vp.probs.data >= 0).all()


def test_top1_examples():
    assert select_top1_view(np.array([0.5, 0.1, 0.1, 0.1, 0.1, 0.1])) == 0
    assert select_top1_view(np.array([0.1, 0.1, 0.3, 0.3, 0.1, 0.1])) == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(0.01, 50))
def test_top1_invariant_to_positive_scaling(logits, c):
    z = np.asarray(logits)
    a = select_top1_view(Tensor(z).softmax().data)
    b = select_top1_view(Tensor(z * c).softmax().data)
    if np.sort(z)[-1] - np.sort(z)[-2] > 1e-9:
        assert a == b


def test_loss_closed_forms():
    uniform = Tensor(np.full((1, 6), 1.0 / 6.0))
    loss = vision_router_loss(uniform, one_hot([3]), 0.05).item()
    assert abs(loss - 0.05 * math.log(6)) < 1e-12
    assert abs(loss - 0.08959) < 1e-5
    exact = Tensor(one_hot([2]))
    assert vision_router_loss(exact, one_hot([2])).item() == 0.0
    zero = Tensor(np.array([[0.0, 1.0, 0, 0, 0, 0]]))
    val = vision_router_loss(zero, one_hot([0]), 1.0).item()
    assert math.isfinite(val) and abs(val - (-math.log(1e-12))) < 1e-9


def test_non_one_hot_label_raises():
    p = Tensor(np.full((1, 6), 1.0 / 6.0))
    with pytest.raises(ValueError):
        vision_router_loss(p, np.full((1, 6), 1.0 / 6.0))
    with pytest.raises(ValueError):
        vision_router_loss(p, np.ones((1, 6)))
    with pytest.raises(ValueError):
        one_hot([6])


def test_ce_gradient_is_p_minus_y():
    z = Parameter(np.array([[0.2, -0.4, 1.1, 0.0, 0.3, -1.0]]), "z")
    y = one_hot([4])
    loss = vision_router_loss(z.softmax(), y, 1.0)
    backprop(loss, [z])
    p = np.exp(z.data) / np.exp(z.data).sum()
    np.testing.assert_allclose(z.grad, p - y, atol=1e-12)
    z.zero_grad()
    assert finite_diff_check(lambda: vision_router_loss(z.softmax(), y, 1.0), [z]) < 1e-6


def test_router_gradient_check():
    r = VisionRouter(8, np.random.default_rng(2), F64)
    rng = np.random.default_rng(3)
    e = Tensor(rng.standard_normal((4, 8)))
    g = rng.standard_normal((4, 7))
    y = one_hot([0, 3, 5, 1])
    assert finite_diff_check(lambda: vision_router_loss(route_views(r, e, g).probs, y), r.parameters()) < 1e-4


def test_non_finite_input_raises():
    r = VisionRouter(4, np.random.default_rng(0), F64)
    with pytest.raises(FloatingPointError):
        route_views(r, Tensor(np.array([[np.nan, 0, 0, 0]])), np.zeros(7))


def test_separable_set_reaches_95_percent():
    # goal command alone decides the labeled camera
    mapping = {"follow": 0, "turn_left": 1, "turn_right": 2, "change_left": 4, "change_right": 5}
    rng = np.random.default_rng(4)
    n = 400
    cmds = rng.choice(COMMANDS, size=n)
    goals = np.stack([GoalWaypoint(*rng.uniform(-15, 15, 2), c).encode(20.0) for c in cmds])
    emb = rng.standard_normal((n, 16))
    labels = np.array([mapping[c] for c in cmds])
    r = VisionRouter(16, np.random.default_rng(5), np.float32)
    opt = Adam(r.parameters(), OptimizerConfig(learning_rate=3e-3))
    for step in range(2000):
        idx = rng.integers(0, n, 64)
        loss = vision_router_loss(route_views(r, Tensor(emb[idx].astype(np.float32)), goals[idx]).probs,
                                  one_hot(labels[idx]))
        backprop(loss, r.parameters())
        opt.step(step + 1)
        if step % 100 == 99:
            acc = (route_views(r, Tensor(emb.astype(np.float32)), goals).top1() == labels).mean()
            if acc >= 0.95:
                break
    assert acc >= 0.95
