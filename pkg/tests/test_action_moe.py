import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drivemoe.action_moe import (
    ActionRouter,
    ExpertBank,
    GateDecision,
    action_router,
    action_router_loss,
    combined_action_loss,
    forced_gate,
    gate_from_logits,
    gate_stats,
    load_balance_loss,
    moe_ffn_forward,
    topk_indices,
)
from drivemoe.numerics import Parameter, Tensor, backprop, finite_diff_check

F64 = np.float64


def scalar_bank(scales, shared_scales):
    """Bank whose experts multiply their input by a constant."""
    bank = ExpertBank(1, 1, len(scales), len(shared_scales), np.random.default_rng(0), F64)
    bank.experts = [lambda x, s=s: x * s for s in scales]
    bank.shared = [lambda x, s=s: x * s for s in shared_scales]
    return bank


def test_scalar_toy_example():
    bank = scalar_bank([1.0, -1.0], [2.0])
    gate = GateDecision(Tensor(np.array([[0.3, 0.7]])), np.array([[0, 1]]), Tensor(np.array([[0.3, 0.7]])))
    out = moe_ffn_forward(Tensor(np.ones((1, 1, 1))), bank, gate)
    assert abs(out.item() - 1.6) < 1e-12


def test_single_expert_no_shared_is_identity_of_expert():
    bank = ExpertBank(4, 8, 1, 0, np.random.default_rng(1), F64)
    h = Tensor(np.random.default_rng(2).standard_normal((3, 5, 4)))
    gate = GateDecision(Tensor(np.ones((3, 1))), np.zeros((3, 1), dtype=int), Tensor(np.ones((3, 1))))
    np.testing.assert_array_equal(moe_ffn_forward(h, bank, gate).data, bank.experts[0](h).data)


def test_renormalized_weights_example():
    r = np.array([[0.4, 0.3, 0.2, 0.05, 0.03, 0.02]])
    g = gate_from_logits(Tensor(np.log(r)), 3)
    assert g.selected.tolist() == [[0, 1, 2]]
    np.testing.assert_allclose(g.weights.data, [[4 / 9, 3 / 9, 2 / 9]], atol=1e-12)


def test_zero_router_selects_lowest_indices():
    router = ActionRouter(4, 6, np.random.default_rng(0), F64)
    for p in router.parameters():
        p.data[...] = 0.0
    g = action_router(router, Tensor(np.ones((2, 4))), k=3)
    np.testing.assert_allclose(g.probs.data, 1 / 6, atol=1e-15)
    assert g.selected.tolist() == [[0, 1, 2], [0, 1, 2]]


def test_tie_break_toward_lower_index():
    assert topk_indices(np.array([[0.1, 0.3, 0.3, 0.3]]), 2).tolist() == [[1, 2]]


def test_noise_free_routing_is_deterministic():
    router = ActionRouter(4, 6, np.random.default_rng(3), F64)
    h = Tensor(np.random.default_rng(4).standard_normal((5, 4)))
    a = action_router(router, h, 3, train_mode=True, noise_std=0.0)
    b = action_router(router, h, 3, train_mode=True, noise_std=0.0)
    assert (a.selected == b.selected).all()
    np.testing.assert_array_equal(a.weights.data, b.weights.data)


def test_noise_only_in_train_mode():
    router = ActionRouter(4, 6, np.random.default_rng(3), F64)
    h = Tensor(np.random.default_rng(4).standard_normal((50, 4)))
    clean = action_router(router, h, 3)
    evald = action_router(router, h, 3, train_mode=False, noise_std=5.0, rng=np.random.default_rng(0))
    assert (clean.selected == evald.selected).all()
    noisy = action_router(router, h, 3, train_mode=True, noise_std=5.0, rng=np.random.default_rng(0))
    assert (noisy.selected != clean.selected).any()
    np.testing.assert_array_equal(noisy.probs.data, clean.probs.data)
    with pytest.raises(ValueError):
        action_router(router, h, 3, train_mode=True, noise_std=0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-8, 8), min_size=6, max_size=6), st.integers(1, 6))
def test_weights_sum_to_one(logits, k):
    g = gate_from_logits(Tensor(np.asarray(logits)[None]), k)
    assert g.selected.shape == (1, k)
    assert abs(g.weights.data.sum() - 1.0) < 1e-6
    assert (g.weights.data > 0).all()


def test_k_larger_than_experts_is_clamped():
    g = gate_from_logits(Tensor(np.zeros((1, 3))), 5)
    assert g.selected.shape == (1, 3)


def brute_force_eq4(h, bank, logits, k):
    """Direct evaluation: softmax, sort, renormalize, sum expert outputs written out by hand."""
    def mlp(m, x):
        z = x @ m.fc1.weight.data + m.fc1.bias.data
        z = 0.5 * z * (1 + np.tanh(math.sqrt(2 / math.pi) * (z + 0.044715 * z ** 3)))
        return z @ m.fc2.weight.data + m.fc2.bias.data

    out = np.zeros_like(h)
    for b in range(h.shape[0]):
        r = np.exp(logits[b] - logits[b].max())
        r /= r.sum()
        order = sorted(range(len(r)), key=lambda i: (-r[i], i))[:k]
        z = sum(r[i] for i in order)
        for i in order:
            out[b] += r[i] / z * mlp(bank.experts[i], h[b])
        for m in bank.shared:
            out[b] += mlp(m, h[b])
    return out


@pytest.mark.parametrize("seed", range(5))
def test_brute_force_equivalence(seed):
    rng = np.random.default_rng(seed)
    bank = ExpertBank(2, 4, 3, 1, rng, F64)
    h = rng.standard_normal((4, 3, 2))
    logits = rng.standard_normal((4, 3))
    out = moe_ffn_forward(Tensor(h), bank, gate_from_logits(Tensor(logits), 2)).data
    ref = brute_force_eq4(h, bank, logits, 2)
    np.testing.assert_allclose(out, ref, rtol=1e-6, atol=1e-12)


def test_unselected_experts_get_zero_gradient():
    rng = np.random.default_rng(5)
    bank = ExpertBank(4, 8, 6, 1, rng, F64)
    router = ActionRouter(4, 6, rng, F64)
    h = Tensor(rng.standard_normal((3, 5, 4)))
    gate = action_router(router, h.mean(axis=1), k=2)
    used = set(gate.selected.ravel().tolist())
    assert len(used) < 6
    loss = (moe_ffn_forward(h, bank, gate) ** 2).sum()
    backprop(loss, bank.parameters() + router.parameters(), warn_disconnected=False)
    for i, e in enumerate(bank.experts):
        norms = [np.abs(p.grad).max() for p in e.parameters()]
        if i in used:
            assert max(norms) > 0
        else:
            assert max(norms) == 0.0
    assert all(np.abs(p.grad).max() > 0 for p in bank.shared[0].parameters())
    assert np.abs(router.proj.weight.grad).max() > 0


def test_moe_layer_gradient_check_away_from_ties():
    rng = np.random.default_rng(6)
    bank = ExpertBank(4, 6, 4, 1, rng, F64)
    router = ActionRouter(4, 4, rng, F64, name="r")
    router.proj.weight.data *= 20.0
    h = Parameter(rng.standard_normal((2, 3, 4)), "h")

    def f():
        gate = action_router(router, h.mean(axis=1), k=2)
        return (moe_ffn_forward(h, bank, gate) * np.linspace(-1, 1, 4)).sum()

    p = action_router(router, h.mean(axis=1), k=2).probs.data
    srt = np.sort(p, axis=-1)
    assert (srt[:, -2] - srt[:, -3] > 1e-3).all()  # selection is stable under perturbation
    assert finite_diff_check(f, bank.parameters() + router.parameters() + [h], max_entries=10) < 1e-4


def test_router_loss_closed_forms():
    uniform = Tensor(np.full((1, 6), 1 / 6))
    val = action_router_loss([uniform, uniform], [2]).item()
    assert abs(val - math.log(6)) < 1e-9
    assert abs(val - 1.7918) < 1e-4
    exact = Tensor(np.eye(6)[[4]])
    assert action_router_loss([exact] * 3, [4]).item() == 0.0
    with pytest.raises(ValueError):
        action_router_loss([uniform], [6])


def test_router_loss_gradient_is_r_minus_onehot():
    z = Parameter(np.array([[0.1, 0.5, -0.2, 0.9, 0.0, -0.7]]), "z")
    backprop(action_router_loss([z.softmax()], [1]), [z])
    r = np.exp(z.data) / np.exp(z.data).sum()
    np.testing.assert_allclose(z.grad, r - np.eye(6)[[1]], atol=1e-12)
    z.zero_grad()
    assert finite_diff_check(lambda: action_router_loss([z.softmax()], [1]), [z]) < 1e-6


def test_load_balance_values():
    k, n = 3, 6
    sel = np.array([[(i + j) % n for j in range(k)] for i in range(n)])
    uniform = GateDecision(Tensor(np.full((n, n), 1 / n)), sel, Tensor(np.full((n, k), 1 / k)))
    assert abs(load_balance_loss(uniform).item() - k) < 1e-12
    collapse = GateDecision(Tensor(np.tile(np.eye(n)[0], (4, 1))), np.zeros((4, 1), int), Tensor(np.ones((4, 1))))
    assert abs(load_balance_loss(collapse).item() - n) < 1e-12


def test_load_balance_minimized_by_uniform_routing():
    # enumerate every top-1 assignment of 3 rows to 3 experts with probabilities equal to the usage
    n = 3
    for assign in itertools.product(range(n), repeat=n):
        sel = np.array(assign)[:, None]
        f = np.bincount(sel.ravel(), minlength=n) / n
        g = GateDecision(Tensor(np.tile(f, (n, 1))), sel, Tensor(np.ones((n, 1))))
        val = load_balance_loss(g).item()
        if len(set(assign)) == n:
            assert abs(val - 1.0) < 1e-12
        else:
            assert val > 1.0 + 1e-9


def test_combined_loss_arithmetic():
    assert abs(combined_action_loss(1.0, 2.0, 3.0, 1.0, 0.03, 0.01) - 1.09) < 1e-12
    assert combined_action_loss(1.5, 2.0, 3.0, 2.0, 0.0, 0.0) == 3.0
    t = combined_action_loss(Tensor(np.array(1.0)), Tensor(np.array(2.0)), Tensor(np.array(3.0)), 1.0, 0.025, 0.01)
    assert abs(t.item() - 1.08) < 1e-12
    with pytest.raises(ValueError):
        combined_action_loss(float("nan"), 0.0, 0.0)


def test_forced_gate_routes_to_label():
    router = ActionRouter(4, 6, np.random.default_rng(7), F64)
    g = forced_gate(router, Tensor(np.ones((3, 4))), [5, 0, 2])
    assert g.selected.tolist() == [[5], [0], [2]]
    np.testing.assert_array_equal(g.weights.data, 1.0)
    with pytest.raises(ValueError):
        forced_gate(router, Tensor(np.ones((1, 4))), [6])


def test_gate_stats_entropy():
    sel = np.array([[0], [1], [2], [3]])
    g = GateDecision(Tensor(np.full((4, 4), 0.25)), sel, Tensor(np.ones((4, 1))))
    s = gate_stats([g])
    assert abs(s["entropy"] - math.log(4)) < 1e-12
    np.testing.assert_allclose(s["f"], 0.25)
