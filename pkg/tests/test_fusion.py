"""Fusion operations against hand cases and an independent transcription."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from dcafusion.autodiff import Matrix, ShapeError, Tape, grad_check, sum_all
from dcafusion.fusion import (
    ATTENDED,
    AUDIO,
    UNATTENDED,
    VISUAL,
    AttentionTrace,
    FeatureSequence,
    FusionParams,
    GateScores,
    attend,
    attention_weights,
    cross_correlate,
    dca_combine,
    fuse_forward,
    gate_logits,
    gate_scores,
    predict,
    regression_head,
)


def straightline_forward(xa, xv, params, mode):
    """Plain-numpy transcription of the fusion pipeline, written separately
    from the library path: materialized gate replication, explicit softmaxes."""

    def colsoftmax(z, t):
        z = z / t
        z = z - z.max(axis=0, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=0, keepdims=True)

    w, gla, glv = params.W.data, params.W_gl_a.data, params.W_gl_v.data
    hw, hb = params.head_W.data, params.head_b.data
    bga = params.b_gl_a.data if params.gate_bias else np.zeros((1, 2))
    bgv = params.b_gl_v.data if params.gate_bias else np.zeros((1, 2))
    z = xa.T @ w @ xv
    a_a = colsoftmax(z, 1.0)
    a_v = colsoftmax(z.T, 1.0)
    xatt_a = xa + xa @ a_a
    xatt_v = xv + xv @ a_v
    if mode == "ca":
        fused = np.concatenate([xatt_a, xatt_v], axis=0)
    else:
        out = []
        for x, xatt, wgl, bgl in ((xa, xatt_a, gla, bga), (xv, xatt_v, glv, bgv)):
            y = xatt.T @ wgl + bgl                             # L x 2 logits
            g = colsoftmax(y.T, params.temperature).T          # row softmax
            g0 = np.tile(g[:, 0], (x.shape[0], 1))             # materialized
            g1 = np.tile(g[:, 1], (x.shape[0], 1))
            out.append(np.maximum(x * g0 + xatt * g1, 0.0))
        fused = np.concatenate(out, axis=0)
    pred = np.tanh(hw @ fused + hb)
    return fused, pred


def random_setup(rng, d_a=None, d_v=None, n=None, gate_bias=None):
    d_a = d_a or int(rng.integers(2, 6))
    d_v = d_v or int(rng.integers(2, 6))
    n = n or int(rng.integers(2, 7))
    xa = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (d_a, n))))
    xv = FeatureSequence(VISUAL, Matrix(rng.normal(0, 1, (d_v, n))))
    if gate_bias is None:
        gate_bias = bool(rng.integers(0, 2))
    params = FusionParams.init(d_a, d_v, rng, gate_bias=gate_bias)
    if gate_bias:
        vals = params.values()
        vals[5] = rng.normal(0, 0.4, (1, 2))
        vals[6] = rng.normal(0, 0.4, (1, 2))
        params = FusionParams.from_values(vals)
    return xa, xv, params


# ---------------------------------------------------------------------------
# cross_correlate


def test_cross_correlate_zero_weights():
    rng = np.random.default_rng(0)
    xa = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (3, 4))))
    xv = FeatureSequence(VISUAL, Matrix(rng.normal(0, 1, (2, 4))))
    z = cross_correlate(xa, xv, Matrix.zeros(3, 2))
    npt.assert_array_equal(z.data, np.zeros((4, 4)))


def test_cross_correlate_identity_features():
    n = 4
    xa = FeatureSequence(AUDIO, Matrix.eye(n))
    xv = FeatureSequence(VISUAL, Matrix.eye(n))
    z = cross_correlate(xa, xv, Matrix.eye(n))
    npt.assert_array_equal(z.data, np.eye(n))


def test_cross_correlate_hand_case():
    xa = FeatureSequence(AUDIO, Matrix([[1.0], [0.0]]))
    xv = FeatureSequence(VISUAL, Matrix([[0.0], [1.0]]))
    w = Matrix([[1.0, 2.0], [3.0, 4.0]])
    npt.assert_array_equal(cross_correlate(xa, xv, w).data, [[2.0]])


def test_cross_correlate_rejects_mismatch():
    xa = FeatureSequence(AUDIO, Matrix.zeros(3, 4))
    xv = FeatureSequence(VISUAL, Matrix.zeros(2, 4))
    with pytest.raises(ShapeError):
        cross_correlate(xa, xv, Matrix.zeros(2, 2))
    xv5 = FeatureSequence(VISUAL, Matrix.zeros(2, 5))
    with pytest.raises(ShapeError):
        cross_correlate(xa, xv5, Matrix.zeros(3, 2))


# ---------------------------------------------------------------------------
# attention_weights / attend


def test_attention_weights_zero_matrix():
    a_a, a_v = attention_weights(Matrix.zeros(2, 2))
    npt.assert_allclose(a_a.data, np.full((2, 2), 0.5), atol=1e-15)
    npt.assert_allclose(a_v.data, np.full((2, 2), 0.5), atol=1e-15)


def test_attention_weights_symmetric_z():
    rng = np.random.default_rng(1)
    z = rng.normal(0, 1, (4, 4))
    z = z + z.T
    a_a, a_v = attention_weights(Matrix(z))
    npt.assert_array_equal(a_a.data, a_v.data)


def test_attention_weights_closed_form():
    z = Matrix([[math.log(2.0), 0.0], [0.0, 0.0]])
    a_a, _ = attention_weights(z)
    npt.assert_allclose(a_a.data[:, 0], [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)


def test_attention_weights_rejects_non_square():
    with pytest.raises(ShapeError):
        attention_weights(Matrix.zeros(2, 3))


def test_attend_identity_doubles():
    rng = np.random.default_rng(2)
    x = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (3, 4))))
    npt.assert_array_equal(attend(x, Matrix.eye(4)).data, 2 * x.features.data)


def test_attend_zero_features():
    x = FeatureSequence(AUDIO, Matrix.zeros(3, 2))
    a = Matrix(np.full((2, 2), 0.5))
    npt.assert_array_equal(attend(x, a).data, np.zeros((3, 2)))


def test_attend_hand_case():
    x = FeatureSequence(AUDIO, Matrix([[1.0, 3.0]]))
    a = Matrix([[0.5, 0.5], [0.5, 0.5]])
    npt.assert_array_equal(attend(x, a).data, [[3.0, 5.0]])


def test_attend_rejects_unnormalized_columns():
    x = FeatureSequence(AUDIO, Matrix([[1.0, 3.0]]))
    with pytest.raises(ValueError):
        attend(x, Matrix([[0.5, 0.5], [0.6, 0.5]]))


# ---------------------------------------------------------------------------
# gates


def test_gate_logits_zero_weights():
    xatt = Matrix(np.random.default_rng(3).normal(0, 1, (3, 5)))
    npt.assert_array_equal(gate_logits(xatt, Matrix.zeros(3, 2)).data, np.zeros((5, 2)))


def test_gate_logits_identity_features():
    w = Matrix([[1.0, 2.0], [3.0, 4.0]])
    got = gate_logits(Matrix.eye(2), w).data
    npt.assert_array_equal(got, w.data)


def test_gate_logits_hand_case():
    got = gate_logits(Matrix([[1.0], [2.0]]), Matrix([[1.0, 0.0], [0.0, 1.0]])).data
    npt.assert_array_equal(got, [[1.0, 2.0]])


def test_gate_scores_symmetry_and_shift_invariance():
    for c in (-3.0, 0.0, 7.5):
        for t in (1.0, 0.1):
            g = gate_scores(Matrix([[c, c]]), t).G.data
            npt.assert_allclose(g, [[0.5, 0.5]], atol=1e-12)


def test_gate_scores_closed_form():
    g = gate_scores(Matrix([[0.2, 0.1]]), 0.1).G.data
    e = math.e
    npt.assert_allclose(g, [[e / (1 + e), 1 / (1 + e)]], atol=1e-12)


def test_gate_scores_unit_gap_bound():
    # losing branch of a 2-way softmax with gap 1 at T=0.1 is exactly 1/(1+e^10)
    g = gate_scores(Matrix([[1.0, 0.0]]), 0.1).G.data
    assert abs(g[0, 1] - 1.0 / (1.0 + math.exp(10.0))) < 1e-9
    assert g[0, 1] == pytest.approx(4.5397868702434395e-05, abs=1e-9)


def test_gate_scores_rows_sum_to_one():
    rng = np.random.default_rng(4)
    for _ in range(50):
        y = Matrix(rng.normal(0, 2, (int(rng.integers(1, 10)), 2)))
        g = gate_scores(y, float(rng.uniform(0.05, 2))).G.data
        npt.assert_allclose(g.sum(axis=1), np.ones(g.shape[0]), atol=1e-12)


def test_gate_scores_rejects_bad_temperature():
    with pytest.raises(ValueError):
        gate_scores(Matrix.zeros(2, 2), 0.0)


def test_gate_temperature_monotone_and_argmax_invariant():
    rng = np.random.default_rng(5)
    y = rng.normal(0, 1, (6, 2))
    y[:, 0] += 1.0  # per-row gap >= g > 0 toward column 0
    temps = [1.0, 0.5, 0.1, 0.01]
    prev = None
    for t in temps:
        g = gate_scores(Matrix(y), t).G.data
        assert (g.argmax(axis=1) == y.argmax(axis=1)).all()
        winners = g.max(axis=1)
        if prev is not None:
            assert (winners >= prev - 1e-15).all()
        prev = winners
    assert (prev > 0.99).all()


# ---------------------------------------------------------------------------
# dca_combine


def gates_of(rows):
    arr = np.asarray(rows, dtype=np.float64)
    return GateScores(Matrix(np.zeros_like(arr)), Matrix(arr))


def test_dca_combine_saturated_attended():
    rng = np.random.default_rng(6)
    x = Matrix(rng.normal(0, 1, (3, 4)))
    xatt = Matrix(rng.normal(0, 1, (3, 4)))
    g = gates_of([[0.0, 1.0]] * 4)
    npt.assert_array_equal(dca_combine(x, xatt, g).data, np.maximum(xatt.data, 0.0))


def test_dca_combine_saturated_unattended():
    rng = np.random.default_rng(7)
    x = Matrix(rng.normal(0, 1, (3, 4)))
    xatt = Matrix(rng.normal(0, 1, (3, 4)))
    g = gates_of([[1.0, 0.0]] * 4)
    npt.assert_array_equal(dca_combine(x, xatt, g).data, np.maximum(x.data, 0.0))


def test_dca_combine_hand_case():
    got = dca_combine(Matrix([[-4.0]]), Matrix([[2.0]]), gates_of([[0.5, 0.5]]))
    npt.assert_array_equal(got.data, [[0.0]])


def test_dca_combine_rejects_shape_mismatch():
    with pytest.raises(ShapeError):
        dca_combine(Matrix.zeros(2, 3), Matrix.zeros(2, 4), gates_of([[0.5, 0.5]] * 3))


def test_gate_scores_validation():
    with pytest.raises(ValueError):
        gates_of([[0.7, 0.7]])
    with pytest.raises(ShapeError):
        GateScores(Matrix.zeros(2, 2), Matrix(np.full((3, 2), 0.5)))


# ---------------------------------------------------------------------------
# fuse_forward / predict


def test_fuse_forward_matches_straightline_oracle():
    rng = np.random.default_rng(8)
    for mode in ("ca", "dca"):
        for _ in range(30):
            xa, xv, params = random_setup(rng)
            fused, trace, gates = fuse_forward(xa, xv, params, mode)
            want_fused, want_pred = straightline_forward(
                xa.features.data, xv.features.data, params, mode
            )
            npt.assert_allclose(fused.data, want_fused, atol=1e-12)
            pred = regression_head(fused, params.head_W, params.head_b)
            npt.assert_allclose(pred.data, want_pred, atol=1e-12)
            assert (gates is None) == (mode == "ca")


def test_fuse_forward_zero_features_single_clip_both_modes():
    # smallest config: all-zero features fuse to zero in both modes
    xa = FeatureSequence(AUDIO, Matrix.zeros(2, 1))
    xv = FeatureSequence(VISUAL, Matrix.zeros(3, 1))
    params = FusionParams.init(2, 3, np.random.default_rng(9))
    for mode in ("ca", "dca"):
        fused, _, _ = fuse_forward(xa, xv, params, mode)
        npt.assert_array_equal(fused.data, np.zeros((5, 1)))


def test_fuse_forward_saturated_gates_equal_relu_of_ca():
    rng = np.random.default_rng(10)
    for _ in range(100):
        xa, xv, params = random_setup(rng)
        ca_out, trace, _ = fuse_forward(xa, xv, params, "ca")
        forced = gates_of([[0.0, 1.0]] * xa.clips)
        dca_out = np.concatenate(
            [
                dca_combine(xa.features, trace.Xatt_a, forced).data,
                dca_combine(xv.features, trace.Xatt_v, forced).data,
            ],
            axis=0,
        )
        npt.assert_array_equal(dca_out, np.maximum(ca_out.data, 0.0))


def test_fuse_forward_shapes():
    rng = np.random.default_rng(11)
    xa, xv, params = random_setup(rng, d_a=4, d_v=3, n=5)
    fused, trace, gates = fuse_forward(xa, xv, params, "dca")
    assert trace.Z.shape == (5, 5)
    assert trace.Xatt_a.shape == (4, 5)
    assert trace.Xatt_v.shape == (3, 5)
    assert fused.shape == (7, 5)
    assert gates[AUDIO].G.shape == (5, 2)
    pred = regression_head(fused, params.head_W, params.head_b)
    assert pred.shape == (2, 5)


def test_fuse_forward_dca_output_nonnegative():
    rng = np.random.default_rng(12)
    for _ in range(20):
        xa, xv, params = random_setup(rng)
        fused, _, _ = fuse_forward(xa, xv, params, "dca")
        assert (fused.data >= 0).all()


def test_fuse_forward_clip_permutation_equivariance():
    rng = np.random.default_rng(13)
    for _ in range(20):
        xa, xv, params = random_setup(rng)
        perm = rng.permutation(xa.clips)
        fused, _, _ = fuse_forward(xa, xv, params, "dca")
        xa_p = FeatureSequence(AUDIO, Matrix(xa.features.data[:, perm]))
        xv_p = FeatureSequence(VISUAL, Matrix(xv.features.data[:, perm]))
        fused_p, _, _ = fuse_forward(xa_p, xv_p, params, "dca")
        npt.assert_allclose(fused_p.data, fused.data[:, perm], atol=1e-12)


def test_fuse_forward_rejects_bad_mode():
    rng = np.random.default_rng(14)
    xa, xv, params = random_setup(rng)
    with pytest.raises(ValueError):
        fuse_forward(xa, xv, params, "jca")


def test_predict_zero_head():
    fused = Matrix(np.random.default_rng(15).normal(0, 1, (5, 4)))
    track = predict(fused, Matrix.zeros(2, 5), Matrix.zeros(2, 1))
    npt.assert_array_equal(track.valence, np.zeros(4))
    npt.assert_array_equal(track.arousal, np.zeros(4))


def test_predict_saturation_stays_inside_range():
    fused = Matrix.zeros(3, 4)
    track = predict(fused, Matrix.zeros(2, 3), Matrix([[5.0], [-5.0]]))
    assert (track.valence > 0.999).all() and (track.valence < 1.0).all()
    assert (track.arousal < -0.999).all() and (track.arousal > -1.0).all()


def test_predict_matches_per_clip_affine_tanh_oracle():
    rng = np.random.default_rng(16)
    fused = rng.normal(0, 1, (6, 5))
    hw = rng.normal(0, 1, (2, 6))
    hb = rng.normal(0, 1, (2, 1))
    track = predict(Matrix(fused), Matrix(hw), Matrix(hb))
    for clip in range(5):
        want = np.tanh(hw @ fused[:, clip] + hb[:, 0])
        assert abs(track.valence[clip] - want[0]) < 1e-12
        assert abs(track.arousal[clip] - want[1]) < 1e-12


def test_predict_rejects_mismatch():
    with pytest.raises(ShapeError):
        predict(Matrix.zeros(5, 4), Matrix.zeros(2, 6), Matrix.zeros(2, 1))


# ---------------------------------------------------------------------------
# parameters


def test_fusion_params_validation():
    rng = np.random.default_rng(17)
    p = FusionParams.init(3, 4, rng)
    assert p.d_a == 3 and p.d_v == 4
    with pytest.raises(ShapeError):
        FusionParams(Matrix.zeros(3, 4), Matrix.zeros(3, 3), Matrix.zeros(4, 2),
                     Matrix.zeros(2, 7), Matrix.zeros(2, 1))
    with pytest.raises(ValueError):
        FusionParams(Matrix.zeros(3, 4), Matrix.zeros(3, 2), Matrix.zeros(4, 2),
                     Matrix.zeros(2, 7), Matrix.zeros(2, 1), temperature=0.0)


def test_fusion_params_init_bounds():
    rng = np.random.default_rng(18)
    p = FusionParams.init(16, 9, rng)
    assert np.abs(p.W.data).max() <= 1 / 3  # fan_in d_v = 9
    assert np.abs(p.W_gl_a.data).max() <= 0.25
    assert np.abs(p.head_W.data).max() <= 1 / 5


def test_fusion_params_roundtrip_and_bind():
    rng = np.random.default_rng(19)
    for gate_bias, count in ((True, 7), (False, 5)):
        p = FusionParams.init(3, 4, rng, gate_bias=gate_bias)
        assert p.gate_bias == gate_bias
        q = FusionParams.from_values(p.values(), temperature=p.temperature)
        assert q.gate_bias == gate_bias
        for a, b in zip(p.matrices(), q.matrices()):
            npt.assert_array_equal(a.data, b.data)
        tape = Tape()
        bound = p.bind(tape)
        assert len(tape.params) == count
        assert all(m.tape is tape for m in bound.matrices())


def test_fusion_params_rejects_one_sided_bias():
    with pytest.raises(ShapeError):
        FusionParams(Matrix.zeros(3, 4), Matrix.zeros(3, 2), Matrix.zeros(4, 2),
                     Matrix.zeros(2, 7), Matrix.zeros(2, 1), b_gl_a=Matrix.zeros(1, 2))


def test_gate_logits_bias_shifts_every_row():
    rng = np.random.default_rng(21)
    xatt = Matrix(rng.normal(0, 1, (3, 5)))
    w = Matrix(rng.normal(0, 1, (3, 2)))
    b = Matrix([[0.7, -0.2]])
    plain = gate_logits(xatt, w).data
    biased = gate_logits(xatt, w, b).data
    npt.assert_allclose(biased, plain + b.data, atol=1e-15)


def test_end_to_end_gradient_via_grad_check():
    rng = np.random.default_rng(20)
    xa = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (3, 4))))
    xv = FeatureSequence(VISUAL, Matrix(rng.normal(0, 1, (2, 4))))
    start = FusionParams.init(3, 2, rng)

    def f(nodes):
        p = FusionParams(*nodes, temperature=0.1)
        fused, _, _ = fuse_forward(xa, xv, p, "dca")
        pred = regression_head(fused, p.head_W, p.head_b)
        return sum_all(pred)

    assert grad_check(f, start.values()) < 1e-4
