import numpy as np
import pytest

from drivemoe.backbone import Backbone, ViewEncoder, assemble_sequence, encode_view, patchify
from drivemoe.model import Batch, DrivePolicy, ModelConfig
from drivemoe.numerics import Tensor, finite_diff_check

F64 = np.float64


def small_encoder(dtype=F64, seed=0):
    return ViewEncoder(5, 16, 8, 8, 2, 1, 16, np.random.default_rng(seed), dtype)


def test_patchify_row_major():
    x = np.arange(2 * 1 * 4 * 4, dtype=float).reshape(2, 1, 4, 4)
    p = patchify(x, 2)
    assert p.shape == (2, 4, 4)
    np.testing.assert_array_equal(p[0, 0], [0, 1, 4, 5])
    np.testing.assert_array_equal(p[0, 1], [2, 3, 6, 7])
    np.testing.assert_array_equal(p[1, 3], [26, 27, 30, 31])


def test_zero_raster_is_constant_and_deterministic():
    enc = small_encoder()
    z = np.zeros((1, 5, 16, 16))
    _, a = encode_view(enc, z)
    _, b = encode_view(enc, z)
    np.testing.assert_array_equal(a.data, b.data)


def test_one_patch_change_touches_one_projection():
    enc = small_encoder()
    rng = np.random.default_rng(1)
    x = rng.random((1, 5, 16, 16))
    y = x.copy()
    y[0, :, 8:, :8] += 0.5  # patch index 2 in row-major order
    ex, ey = enc.embed(x).data, enc.embed(y).data
    changed = np.nonzero(np.abs(ex - ey).max(axis=-1)[0] > 0)[0]
    assert changed.tolist() == [2]
    tx, _ = enc(x)
    ty, _ = enc(y)
    assert np.count_nonzero(np.abs(tx.data - ty.data).max(axis=-1) > 1e-12) > 1


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        small_encoder()(np.zeros((1, 5, 32, 32)))
    with pytest.raises(ValueError):
        ViewEncoder(5, 30, 8, 8, 2, 1, 16, np.random.default_rng(0))


def test_pooled_embedding_gradient():
    enc = small_encoder()
    x = np.random.default_rng(2).random((2, 5, 16, 16))
    w = np.random.default_rng(3).standard_normal(8)

    def f():
        _, pooled = enc(x)
        return (pooled * w).sum()

    assert finite_diff_check(f, enc.parameters(), max_entries=12) < 1e-4


def make_backbone(d=8):
    return Backbone(5, 16, 8, d, 2, 1, 16, 3, np.random.default_rng(4), F64)


def test_sequence_layout_and_tags():
    bb = make_backbone()
    rng = np.random.default_rng(5)
    tok = lambda: Tensor(rng.standard_normal((2, 4, 8)))  # noqa: E731
    state = Tensor(rng.standard_normal((2, 8)))
    seq = assemble_sequence(bb, tok(), tok(), tok(), state, [1, 3])
    assert seq.segment_tags == ["fixed_view"] * 8 + ["dynamic_view"] * 4 + ["text", "state"]
    assert seq.tokens.shape == (2, 14, 8)
    front_only = assemble_sequence(bb, tok(), tok(), None, state)
    assert "dynamic_view" not in front_only.segment_tags
    assert front_only.length == 10


def test_dynamic_identity_changes_only_pe_rows():
    bb = make_backbone()
    rng = np.random.default_rng(6)
    ft, fp, dyn = (Tensor(rng.standard_normal((1, 4, 8))) for _ in range(3))
    state = Tensor(rng.standard_normal((1, 8)))
    a = assemble_sequence(bb, ft, fp, dyn, state, 2).tokens.data
    b = assemble_sequence(bb, ft, fp, dyn, state, 5).tokens.data
    diff = a - b
    np.testing.assert_array_equal(diff[0, :8], 0.0)
    np.testing.assert_array_equal(diff[0, 12:], 0.0)
    expected = bb.view_pe.data[2] - bb.view_pe.data[5]
    np.testing.assert_allclose(diff[0, 8:12], np.broadcast_to(expected, (4, 8)), atol=1e-12)


def test_dimension_mismatch_raises():
    bb = make_backbone()
    t = Tensor(np.zeros((1, 4, 8)))
    with pytest.raises(ValueError):
        assemble_sequence(bb, t, Tensor(np.zeros((1, 4, 6))), None, Tensor(np.zeros((1, 8))))
    with pytest.raises(ValueError):
        assemble_sequence(bb, t, t, t, Tensor(np.zeros((1, 8))))


def tiny_policy(**kw):
    cfg = ModelConfig(grid=16, d_model=16, n_heads=2, encoder_blocks=1, encoder_ff=16, decoder_blocks=1,
                      d_ff=16, router_hidden=8, dtype="float64", **kw)
    return DrivePolicy(cfg, np.random.default_rng(7))


def tiny_batch(n=3, seed=8):
    r = np.random.default_rng(seed)
    return Batch(r.random((n, 5, 16, 16)), r.random((n, 5, 16, 16)), r.random((n, 6, 5, 16, 16)),
                 r.standard_normal((n, 25)), r.standard_normal((n, 7)), r.standard_normal((n, 10, 2)),
                 r.integers(0, 6, n), r.integers(0, 6, n))


def test_sequence_length_constant_per_config():
    pol = tiny_policy()
    a, _, _ = pol.encode_prefix(tiny_batch(3, 1), "label")
    b, _, _ = pol.encode_prefix(tiny_batch(3, 2), "router")
    assert a.shape == b.shape == (3, 3 * 4 + 2, 16)
    dense = DrivePolicy(ModelConfig.dense(grid=16, d_model=16, n_heads=2, encoder_blocks=1, encoder_ff=16,
                                          decoder_blocks=1, d_ff=16), np.random.default_rng(0))
    c, probs, chosen = dense.encode_prefix(tiny_batch(3, 1))
    assert c.shape == (3, 2 * 4 + 2, 16) and probs is None and chosen is None


def test_same_content_from_another_camera_changes_tokens():
    pol = tiny_policy()
    batch = tiny_batch(1)
    batch.views[0, 4] = batch.views[0, 1]
    a, _, _ = pol.encode_prefix(Batch(**{**batch.__dict__, "view_label": np.array([1])}), "label")
    b, _, _ = pol.encode_prefix(Batch(**{**batch.__dict__, "view_label": np.array([4])}), "label")
    assert np.abs(a.data - b.data).max() > 1e-3
