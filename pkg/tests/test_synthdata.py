"""Generator determinism, corruption accounting, and the recovery oracle."""

import numpy as np
import numpy.testing as npt
import pytest

from dcafusion.autodiff import Matrix
from dcafusion.fusion import AUDIO, VISUAL, FeatureSequence
from dcafusion.metrics import EmotionTrack, ccc
from dcafusion.synthdata import GeneratorConfig, LabeledSequence, corrupt, generate, smooth

SMALL = GeneratorConfig(d_a=6, d_v=5, L=16, n_train=30, n_val=10, emission_seed=99)


def ridge_fit_ccc(train_seqs, val_seqs, modality):
    """Closed-form ridge regression from one modality's features to labels."""
    attr = "xa" if modality == AUDIO else "xv"

    def stack(seqs):
        x = np.concatenate([getattr(s, attr).features.data for s in seqs], axis=1)
        y = np.concatenate(
            [np.stack([s.labels.valence, s.labels.arousal]) for s in seqs], axis=1
        )
        return x, y

    xtr, ytr = stack(train_seqs)
    xva, yva = stack(val_seqs)
    w = ytr @ xtr.T @ np.linalg.inv(xtr @ xtr.T + 1e-8 * np.eye(xtr.shape[0]))
    pred = w @ xva
    return ccc(pred[0], yva[0]), ccc(pred[1], yva[1])


# ---------------------------------------------------------------------------
# config validation


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        GeneratorConfig(d_a=0)
    with pytest.raises(ValueError):
        GeneratorConfig(corruption_rate=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig(corruption_target="both")
    with pytest.raises(ValueError):
        GeneratorConfig(noise_sigma=0.0)
    with pytest.raises(ValueError):
        GeneratorConfig(corruption_mode="wipe")


# ---------------------------------------------------------------------------
# generate


def test_generate_is_deterministic_bitwise():
    a_train, a_val = generate(SMALL)
    b_train, b_val = generate(SMALL)
    for a, b in zip(a_train + a_val, b_train + b_val):
        npt.assert_array_equal(a.xa.features.data, b.xa.features.data)
        npt.assert_array_equal(a.xv.features.data, b.xv.features.data)
        npt.assert_array_equal(a.labels.valence, b.labels.valence)
        npt.assert_array_equal(a.corruption_mask, b.corruption_mask)


def test_generate_seed_argument_overrides():
    a_train, _ = generate(SMALL, seed=1)
    b_train, _ = generate(SMALL, seed=2)
    assert not np.array_equal(a_train[0].xa.features.data, b_train[0].xa.features.data)


def test_generate_counts_and_shapes():
    train, val = generate(SMALL)
    assert len(train) == 30 and len(val) == 10
    s = train[0]
    assert s.xa.features.shape == (6, 16)
    assert s.xv.features.shape == (5, 16)
    assert s.labels.length == 16
    assert s.corruption_mask.shape == (2, 16)


def test_generate_labels_in_range():
    train, val = generate(SMALL)
    for s in train + val:
        assert (np.abs(s.labels.valence) <= 1.0).all()
        assert (np.abs(s.labels.arousal) <= 1.0).all()


def test_clean_config_has_empty_masks():
    cfg = GeneratorConfig(d_a=4, d_v=4, L=8, n_train=5, n_val=2, corruption_rate=0.0)
    train, val = generate(cfg)
    for s in train + val:
        assert not s.corruption_mask.any()


def test_corruption_targets_requested_modality():
    cfg = GeneratorConfig(d_a=4, d_v=4, L=64, n_train=10, n_val=2, corruption_rate=0.5,
                          corruption_target="visual", emission_seed=5)
    train, _ = generate(cfg)
    for s in train:
        assert not s.corruption_mask[0].any()  # audio untouched
    assert any(s.corruption_mask[1].any() for s in train)


def test_alternating_target_hits_both_modalities():
    cfg = GeneratorConfig(d_a=4, d_v=4, L=64, n_train=10, n_val=2, corruption_rate=0.5,
                          corruption_target="alternating", emission_seed=5)
    train, _ = generate(cfg)
    audio_hit = sum(s.corruption_mask[0].any() for s in train)
    visual_hit = sum(s.corruption_mask[1].any() for s in train)
    assert audio_hit > 0 and visual_hit > 0
    for s in train:
        assert not (s.corruption_mask[0].any() and s.corruption_mask[1].any())


def test_empirical_corruption_fraction():
    cfg = GeneratorConfig()  # 250 sequences x 32 clips at rate 0.4
    train, val = generate(cfg)
    seqs = train + val
    total = sum(s.corruption_mask[1].sum() for s in seqs)
    n_slots = len(seqs) * cfg.L
    fraction = total / n_slots
    assert abs(fraction - cfg.corruption_rate) < 2.0 / np.sqrt(n_slots)


def test_single_modality_ridge_recovers_labels_when_clean():
    cfg = GeneratorConfig(corruption_rate=0.0)
    train, val = generate(cfg)
    for modality in (AUDIO, VISUAL):
        cv, ca = ridge_fit_ccc(train, val, modality)
        assert cv > 0.9 and ca > 0.9


def test_audio_ridge_survives_full_visual_corruption():
    cfg = GeneratorConfig(corruption_rate=1.0, corruption_target="visual")
    train, val = generate(cfg)
    cv, ca = ridge_fit_ccc(train, val, AUDIO)
    assert cv > 0.9 and ca > 0.9
    for s in train:
        assert s.corruption_mask[1].all()


# ---------------------------------------------------------------------------
# corrupt


def test_corrupt_all_false_mask_is_identity():
    rng = np.random.default_rng(0)
    x = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (4, 6))))
    got = corrupt(x, np.zeros(6, dtype=bool), 1.0, seed=3)
    npt.assert_array_equal(got.features.data, x.features.data)


def test_corrupt_replaces_only_masked_columns():
    rng = np.random.default_rng(1)
    x = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (4, 6))))
    mask = np.array([True, False, True, False, False, True])
    got = corrupt(x, mask, 1.0, seed=3)
    npt.assert_array_equal(got.features.data[:, ~mask], x.features.data[:, ~mask])
    assert not np.array_equal(got.features.data[:, mask], x.features.data[:, mask])


def test_corrupt_sigma_zero_wipes_masked_columns():
    rng = np.random.default_rng(2)
    x = FeatureSequence(VISUAL, Matrix(rng.normal(0, 1, (3, 4))))
    got = corrupt(x, np.ones(4, dtype=bool), 0.0, seed=3)
    npt.assert_array_equal(got.features.data, np.zeros((3, 4)))


def test_corrupt_additive_mode_adds():
    rng = np.random.default_rng(3)
    x = FeatureSequence(VISUAL, Matrix(rng.normal(0, 1, (3, 4))))
    mask = np.array([True, True, False, False])
    rep = corrupt(x, mask, 1.0, seed=4, mode="replace")
    addv = corrupt(x, mask, 1.0, seed=4, mode="additive")
    npt.assert_allclose(addv.features.data[:, mask] - x.features.data[:, mask],
                        rep.features.data[:, mask], atol=1e-12)


def test_corrupt_rejects_bad_mask_length():
    x = FeatureSequence(AUDIO, Matrix.zeros(2, 3))
    with pytest.raises(ValueError):
        corrupt(x, np.zeros(4, dtype=bool), 1.0, seed=0)


def test_corrupt_deterministic_per_seed():
    rng = np.random.default_rng(4)
    x = FeatureSequence(AUDIO, Matrix(rng.normal(0, 1, (4, 6))))
    mask = np.array([True] * 3 + [False] * 3)
    a = corrupt(x, mask, 1.0, seed=11)
    b = corrupt(x, mask, 1.0, seed=11)
    npt.assert_array_equal(a.features.data, b.features.data)


# ---------------------------------------------------------------------------
# smooth


def test_smooth_window_one_is_identity():
    t = EmotionTrack([0.1, -0.5, 0.9], [0.0, 0.2, -0.2])
    s = smooth(t, 1)
    npt.assert_array_equal(s.valence, t.valence)
    npt.assert_array_equal(s.arousal, t.arousal)


def test_smooth_constant_track_unchanged():
    t = EmotionTrack([0.3] * 7, [-0.2] * 7)
    s = smooth(t, 5)
    npt.assert_allclose(s.valence, t.valence, atol=1e-15)
    npt.assert_allclose(s.arousal, t.arousal, atol=1e-15)


def test_smooth_hand_case_truncated_edges():
    t = EmotionTrack([0.0, 1.0, 0.0], [0.0, 1.0, 0.0])
    s = smooth(t, 3)
    npt.assert_allclose(s.valence, [0.5, 1.0 / 3.0, 0.5], atol=1e-15)


def test_smooth_rejects_bad_windows():
    t = EmotionTrack([0.0, 1.0, 0.0], [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        smooth(t, 2)
    with pytest.raises(ValueError):
        smooth(t, 5)


def test_smooth_stays_in_window_hull():
    rng = np.random.default_rng(5)
    vals = np.clip(rng.normal(0, 0.6, 25), -1, 1)
    t = EmotionTrack(vals, vals[::-1].copy())
    s = smooth(t, 7)
    for series_in, series_out in ((t.valence, s.valence), (t.arousal, s.arousal)):
        for i, v in enumerate(series_out):
            lo = series_in[max(0, i - 3) : i + 4].min()
            hi = series_in[max(0, i - 3) : i + 4].max()
            assert lo - 1e-12 <= v <= hi + 1e-12
    assert (np.abs(s.valence) <= 1.0).all()


# ---------------------------------------------------------------------------
# LabeledSequence


def test_labeled_sequence_validation():
    xa = FeatureSequence(AUDIO, Matrix.zeros(2, 4))
    xv = FeatureSequence(VISUAL, Matrix.zeros(3, 4))
    with pytest.raises(ValueError):
        LabeledSequence(xv, xa, None, None)  # swapped modalities
    with pytest.raises(ValueError):
        LabeledSequence(xa, xv, EmotionTrack([0.0] * 5, [0.0] * 5), None)
    with pytest.raises(ValueError):
        LabeledSequence(xa, xv, None, np.zeros((2, 5), dtype=bool))
    seq = LabeledSequence(xa, xv, None, np.zeros((2, 4), dtype=bool))
    assert seq.clips == 4
