"""Synthetic audio-visual feature sequences with controllable corruption.

Each sequence carries a smooth latent valence/arousal trajectory. Both
modalities are noisy linear images of the same latent through fixed
full-rank mixing maps, so either one alone suffices to recover the labels
(a strongly complementary regime). Corruption then replaces a fraction of
one modality's clips with pure Gaussian noise, which makes the corrupted
clips' cross-modal pairing uninformative (a weakly complementary regime).

Everything is a pure function of (config, seed): sequence i draws all of
its randomness from a generator keyed on (seed, i), so datasets are
reproducible bitwise and order-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Matrix
from .fusion import AUDIO, VISUAL, FeatureSequence
from .metrics import EmotionTrack

__all__ = ["GeneratorConfig", "LabeledSequence", "generate", "corrupt", "smooth"]

# Keys for per-purpose random streams under one emission seed.
_STREAM_MAPS = 0
_STREAM_SEQ = 1
_STREAM_CORRUPT = 2

# Standard deviation of the additive feature noise on clean clips.
_CLEAN_NOISE = 0.05
# Per-modality mixing-map scales (column norms). Audio carries the latent
# at a large scale, so the per-sequence offsets that diffuse attention
# smears into it are costly; visual stays small enough that replacing a
# clip with unit noise clearly leaves the signal subspace. Both scales
# keep single-modality linear recovery comfortably above CCC 0.9.
_AUDIO_MAP_SCALE = 12.0
_VISUAL_MAP_SCALE = 1.5

_TARGETS = ("audio", "visual", "alternating")
_MODES = ("replace", "additive")


@dataclass(frozen=True)
class GeneratorConfig:
    """Dimensions, corruption schedule and seed for one synthetic dataset."""

    d_a: int = 16
    d_v: int = 16
    L: int = 32
    n_train: int = 200
    n_val: int = 50
    corruption_rate: float = 0.4
    corruption_target: str = "visual"
    corruption_mode: str = "replace"
    noise_sigma: float = 1.0
    emission_seed: int = 1234

    def __post_init__(self):
        for name in ("d_a", "d_v", "L", "n_train", "n_val"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError(f"corruption_rate must lie in [0, 1], got {self.corruption_rate}")
        if self.corruption_target not in _TARGETS:
            raise ValueError(
                f"corruption_target must be one of {_TARGETS}, got {self.corruption_target!r}"
            )
        if self.corruption_mode not in _MODES:
            raise ValueError(
                f"corruption_mode must be one of {_MODES}, got {self.corruption_mode!r}"
            )
        if self.noise_sigma <= 0:
            raise ValueError(f"noise_sigma must be positive, got {self.noise_sigma}")


@dataclass(frozen=True)
class LabeledSequence:
    """One sub-sequence: features per modality, labels, and corruption mask.

    ``corruption_mask`` has shape (2, L): row 0 flags corrupted audio
    clips, row 1 corrupted visual clips. Labels and mask may be None for
    feature-only data read from disk.
    """

    xa: FeatureSequence
    xv: FeatureSequence
    labels: EmotionTrack | None
    corruption_mask: np.ndarray | None

    def __post_init__(self):
        if self.xa.modality != AUDIO or self.xv.modality != VISUAL:
            raise ValueError("xa must be the audio sequence and xv the visual one")
        if self.xa.clips != self.xv.clips:
            raise ValueError(f"clip counts differ: {self.xa.clips} vs {self.xv.clips}")
        if self.labels is not None and self.labels.length != self.xa.clips:
            raise ValueError(
                f"label length {self.labels.length} does not match {self.xa.clips} clips"
            )
        if self.corruption_mask is not None:
            mask = np.asarray(self.corruption_mask, dtype=bool)
            if mask.shape != (2, self.xa.clips):
                raise ValueError(
                    f"corruption mask must have shape (2, {self.xa.clips}), got {mask.shape}"
                )
            object.__setattr__(self, "corruption_mask", mask)

    @property
    def clips(self) -> int:
        return self.xa.clips

    def mask_for(self, modality: str) -> np.ndarray:
        if self.corruption_mask is None:
            raise ValueError("sequence carries no corruption mask")
        return self.corruption_mask[0 if modality == AUDIO else 1]


def _seed_key(seed: int) -> int:
    # SeedSequence wants non-negative entries; fold signed 64-bit seeds.
    return int(seed) % (1 << 64)


def _latent_track(rng: np.random.Generator, length: int) -> np.ndarray:
    """A smooth (2, L) trajectory in [-1, 1]: few low-frequency sinusoids, clipped."""
    t = np.arange(length) / length
    out = np.empty((2, length))
    for dim in range(2):
        k = int(rng.integers(2, 5))
        amps = rng.uniform(0.3, 1.0, k) / np.sqrt(k)
        # frequencies reach well below one cycle per window, so sequences
        # carry distinct slow offsets, not just oscillations around zero
        freqs = rng.uniform(0.15, 2.5, k)
        phases = rng.uniform(0.0, 2.0 * np.pi, k)
        wave = np.zeros(length)
        for a, f, p in zip(amps, freqs, phases):
            wave += a * np.sin(2.0 * np.pi * f * t + p)
        out[dim] = np.clip(wave, -1.0, 1.0)
    return out


def _mixing_map(rng: np.random.Generator, dim: int, scale: float) -> np.ndarray:
    """A dim x 2 map of full rank (rank min(dim, 2)).

    The two latent directions are drawn as a random orthonormal basis and
    stretched by ``scale``, so the encoding strength is controlled exactly.
    """
    want = min(dim, 2)
    while True:
        raw = rng.normal(0.0, 1.0, (dim, 2))
        if np.linalg.matrix_rank(raw) < want:
            continue
        q, _ = np.linalg.qr(raw)
        m = q[:, :2] * scale if dim >= 2 else raw / np.linalg.norm(raw) * scale
        if np.linalg.matrix_rank(m) == want:
            return m


def corrupt(
    x: FeatureSequence,
    mask,
    sigma: float,
    seed,
    mode: str = "replace",
) -> FeatureSequence:
    """Replace (or, with ``mode='additive'``, perturb) masked clips with noise.

    Unmasked columns come through bitwise unchanged.
    """
    mask = np.asarray(mask, dtype=bool).ravel()
    if mask.size != x.clips:
        raise ValueError(f"mask length {mask.size} does not match {x.clips} clips")
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    count = int(mask.sum())
    if count == 0:
        return x
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, (x.dim, count)) if sigma > 0 else np.zeros((x.dim, count))
    data = x.features.data.copy()
    if mode == "replace":
        data[:, mask] = noise
    else:
        data[:, mask] += noise
    return FeatureSequence(x.modality, Matrix(data))


def _target_for(cfg: GeneratorConfig, index: int) -> str:
    if cfg.corruption_target == "alternating":
        return VISUAL if index % 2 == 0 else AUDIO
    return cfg.corruption_target


def _make_sequence(
    cfg: GeneratorConfig,
    seed: int,
    index: int,
    m_a: np.ndarray,
    m_v: np.ndarray,
) -> LabeledSequence:
    rng = np.random.default_rng([seed, _STREAM_SEQ, index])
    latent = _latent_track(rng, cfg.L)
    xa = m_a @ latent + rng.normal(0.0, _CLEAN_NOISE, (cfg.d_a, cfg.L))
    xv = m_v @ latent + rng.normal(0.0, _CLEAN_NOISE, (cfg.d_v, cfg.L))

    mask = np.zeros((2, cfg.L), dtype=bool)
    if cfg.corruption_rate > 0:
        target = _target_for(cfg, index)
        hit = rng.random(cfg.L) < cfg.corruption_rate
        mask[0 if target == AUDIO else 1] = hit

    seq_a = FeatureSequence(AUDIO, Matrix(xa))
    seq_v = FeatureSequence(VISUAL, Matrix(xv))
    if mask[0].any():
        seq_a = corrupt(seq_a, mask[0], cfg.noise_sigma, [seed, _STREAM_CORRUPT, index, 0],
                        cfg.corruption_mode)
    if mask[1].any():
        seq_v = corrupt(seq_v, mask[1], cfg.noise_sigma, [seed, _STREAM_CORRUPT, index, 1],
                        cfg.corruption_mode)
    labels = EmotionTrack(latent[0].copy(), latent[1].copy())
    return LabeledSequence(seq_a, seq_v, labels, mask)


def generate(
    cfg: GeneratorConfig, seed: int | None = None
) -> tuple[list[LabeledSequence], list[LabeledSequence]]:
    """Build (train, val) lists of labeled sequences, deterministic per seed.

    ``seed`` defaults to ``cfg.emission_seed``. The two mixing maps are
    shared across the whole dataset so both modalities encode the same
    latent redundantly.
    """
    key = _seed_key(cfg.emission_seed if seed is None else seed)
    map_rng = np.random.default_rng([key, _STREAM_MAPS])
    m_a = _mixing_map(map_rng, cfg.d_a, _AUDIO_MAP_SCALE)
    m_v = _mixing_map(map_rng, cfg.d_v, _VISUAL_MAP_SCALE)
    total = cfg.n_train + cfg.n_val
    seqs = [_make_sequence(cfg, key, i, m_a, m_v) for i in range(total)]
    return seqs[: cfg.n_train], seqs[cfg.n_train :]


def smooth(track: EmotionTrack, window: int) -> EmotionTrack:
    """Centered moving average with a shrinking window at the edges.

    Every output value stays inside the convex hull of its input window,
    so tracks never leave [-1, 1].
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window > track.length:
        raise ValueError(f"window {window} exceeds track length {track.length}")
    half = window // 2

    def _avg(values: np.ndarray) -> np.ndarray:
        n = values.size
        return np.array(
            [values[max(0, i - half) : min(n, i + half + 1)].mean() for i in range(n)]
        )

    return EmotionTrack(_avg(track.valence), _avg(track.arousal))
