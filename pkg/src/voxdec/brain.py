"""Ground-truth voxel simulator: a linear encoding model with explicit
early-visual and category-selective ROI structure, trial noise, and repeat
averaging. The forward map is known by construction, so decoding claims can
be checked against it exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Rng
from .world import CATEGORIES, FEATURE_DIM, N_PATCHES, Scene, stimulus_features

N_VOXELS = 512
ROI_NAMES = ("early", "face", "word", "place", "body", "mixed")
ROI_SIZES = {"early": 128, "face": 64, "word": 64, "place": 64, "body": 64, "mixed": 128}
_CATEGORY_ROIS = ("face", "word", "place", "body")


@dataclass
class VoxelPattern:
    values: np.ndarray
    scene_id: str | None = None
    repeat_index: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_VOXELS,):
            raise ValueError(f"voxel pattern must have {N_VOXELS} entries, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite voxel values")
        object.__setattr__(self, "values", v)


@dataclass
class BrainModel:
    """Linear voxel encoding v = W f + noise over the 32-dim stimulus features."""

    weights: np.ndarray                 # (512, 32)
    roi: tuple[str, ...]                # per-voxel label
    sigma: np.ndarray                   # per-voxel noise scale
    seed: int
    nonlinear: bool = False
    _roi_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.weights.shape != (N_VOXELS, FEATURE_DIM):
            raise ValueError("bad weight shape")
        if np.linalg.matrix_rank(self.weights) < FEATURE_DIM:
            raise ValueError("encoding weights are rank deficient; rebuild with a new seed")
        self._roi_index = {name: np.flatnonzero(np.array(self.roi) == name)
                           for name in ROI_NAMES}

    def roi_voxels(self, name: str) -> np.ndarray:
        if name not in self._roi_index:
            raise KeyError(f"unknown ROI {name!r}")
        return self._roi_index[name]

    def response(self, features: np.ndarray) -> np.ndarray:
        v = self.weights @ np.asarray(features, dtype=np.float64)
        if self.nonlinear:
            # mild saturation stressor, off by default
            s = 5.0
            v = s * np.tanh(v / s)
        return v


def build_brain(rng: Rng, sigma: np.ndarray | None = None, nonlinear: bool = False) -> BrainModel:
    """ROI-structured weights: early voxels read only patch means, category
    voxels are dominated by their category indicator, mixed voxels cover the
    remaining features so the full map keeps column rank 32."""
    seed_echo = int(rng.integers(0, 2**31 - 1))
    W = np.zeros((N_VOXELS, FEATURE_DIM))
    labels: list[str] = []
    row = 0

    n_early = ROI_SIZES["early"]
    # early-visual gain keeps patch-feature recovery on par with the
    # category indicators, which ride on dedicated high-weight voxels
    early = 2.5 * (np.abs(rng.normal((n_early, N_PATCHES))) + 0.2)
    W[row:row + n_early, :N_PATCHES] = early
    labels += ["early"] * n_early
    row += n_early

    for cat in _CATEGORY_ROIS:
        n = ROI_SIZES[cat]
        cat_col = N_PATCHES + CATEGORIES.index(cat)
        block = rng.normal((n, FEATURE_DIM)) * 0.05
        block[:, :N_PATCHES] = 0.0
        block[:, cat_col] = 2.0 + np.abs(rng.normal((n,)))
        W[row:row + n] = block
        labels += [cat] * n
        row += n

    n_mixed = ROI_SIZES["mixed"]
    W[row:row + n_mixed] = rng.normal((n_mixed, FEATURE_DIM)) * 0.6
    labels += ["mixed"] * n_mixed

    if sigma is None:
        sigma = np.zeros(N_VOXELS)
    return BrainModel(weights=W, roi=tuple(labels), sigma=np.asarray(sigma, dtype=np.float64),
                      seed=seed_echo, nonlinear=nonlinear)


def simulate_voxels(brain: BrainModel, scene: Scene, img: np.ndarray, rng: Rng,
                    repeats: int = 1) -> list[VoxelPattern]:
    """Independent noisy trials of the same stimulus."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    f = stimulus_features(scene, img)
    clean = brain.response(f)
    out = []
    for r in range(repeats):
        noise = brain.sigma * rng.normal((N_VOXELS,))
        out.append(VoxelPattern(clean + noise, scene_id=scene.scene_id, repeat_index=r))
    return out


def average_repeats(trials: list[VoxelPattern]) -> VoxelPattern:
    if not trials:
        raise ValueError("need at least one trial")
    ids = {t.scene_id for t in trials}
    if len(ids) > 1:
        raise ValueError(f"cannot average trials of different scenes: {sorted(ids)}")
    stacked = np.stack([t.values for t in trials])
    return VoxelPattern(stacked.mean(axis=0), scene_id=trials[0].scene_id)


def roi_activation_pattern(brain: BrainModel, roi: str, gain: float,
                           baseline_mean: np.ndarray, baseline_std: np.ndarray) -> VoxelPattern:
    """Synthetic probe: ROI voxels at baseline + gain * training std, rest at baseline."""
    if gain < 0:
        raise ValueError("gain must be >= 0")
    idx = brain.roi_voxels(roi)
    values = np.asarray(baseline_mean, dtype=np.float64).copy()
    values[idx] = values[idx] + gain * np.asarray(baseline_std)[idx]
    return VoxelPattern(values, scene_id=f"roi:{roi}:k{gain:g}")


def calibrate_sigma(brain_weights: np.ndarray, feature_matrix: np.ndarray,
                    target_r2: float = 0.9, repeats: int = 3,
                    jitter_rng: Rng | None = None) -> np.ndarray:
    """Per-voxel noise scale such that least-squares feature recovery from
    repeat-averaged trials lands at the target R^2.

    With v = W f + e and e averaged over `repeats` trials, the recovery error
    of the pseudo-inverse estimate has variance (s^2/repeats) tr((W'W)^-1) per
    unit noise shape, which is solved for the scale in closed form.
    """
    if not 0.0 < target_r2 < 1.0:
        raise ValueError("target R^2 must be in (0, 1)")
    shape = np.ones(brain_weights.shape[0])
    if jitter_rng is not None:
        shape = shape + 0.2 * (jitter_rng.uniform((brain_weights.shape[0],)) - 0.5)
    gram_inv = np.linalg.inv(brain_weights.T @ brain_weights)
    pinv = gram_inv @ brain_weights.T
    # E||f_hat - f||^2 = (c^2/repeats) * sum_i shape_i^2 ||pinv[:, i]||^2
    noise_gain = float(np.sum((pinv**2) * (shape**2)[None, :]))
    centered = feature_matrix - feature_matrix.mean(axis=0)
    total_var = float(np.sum(centered**2) / feature_matrix.shape[0])
    c2 = (1.0 - target_r2) * total_var * repeats / noise_gain
    return np.sqrt(c2) * shape
