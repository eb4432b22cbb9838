"""Network input/target preparation.

Windowing and normalization, grid resizing, augmentation, per-structure
contour maps (3D Prewitt), and per-structure foreground distance
transforms (exact Euclidean, in voxel units). The brute-force distance
transform used to verify the fast one lives here as well.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from .volume_io import ChannelMapStack, IntensityVolume, LabelVolume


@dataclass
class PreprocessConfig:
    """Windowing, resizing and augmentation settings.

    target_size is (D, H, W); the default keeps 64 slices in depth.
    cutout_size is the maximum cutout edge per axis; None means 1/8 of
    each axis at application time.
    """

    window_low: float = -300.0
    window_high: float = 1000.0
    target_size: tuple[int, int, int] = (64, 128, 128)
    noise_sigma: float = 0.02
    rotation_max_deg: float = 10.0
    cutout_size: tuple[int, int, int] | None = None
    augmentation_probability: float = 0.5

    def __post_init__(self):
        if self.window_low >= self.window_high:
            raise ValueError(
                f"window_low must be below window_high, got [{self.window_low}, {self.window_high}]"
            )
        self.target_size = tuple(int(s) for s in self.target_size)
        if len(self.target_size) != 3 or min(self.target_size) < 1:
            raise ValueError(f"target_size must be three positive ints, got {self.target_size}")
        if not 0.0 <= self.augmentation_probability <= 1.0:
            raise ValueError(
                f"augmentation_probability must lie in [0, 1], got {self.augmentation_probability}"
            )
        if self.noise_sigma < 0.0 or self.rotation_max_deg < 0.0:
            raise ValueError("noise_sigma and rotation_max_deg must be non-negative")
        if self.cutout_size is not None:
            self.cutout_size = tuple(int(s) for s in self.cutout_size)

    def content_hash(self) -> str:
        """Stable hash used to key precomputed-target caches."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def window_normalize(vol: IntensityVolume, cfg: PreprocessConfig) -> IntensityVolume:
    """Clamp to the HU window and rescale linearly to [0, 1]."""
    lo, hi = cfg.window_low, cfg.window_high
    out = np.clip((vol.voxels - lo) / (hi - lo), 0.0, 1.0)
    return IntensityVolume(voxels=out.astype(np.float32), spacing=vol.spacing)


def _target_coords(src_shape, target_size):
    axes = [
        (np.arange(t, dtype=np.float64) + 0.5) * s / t - 0.5
        for s, t in zip(src_shape, target_size)
    ]
    return np.stack(np.meshgrid(*axes, indexing="ij"))


def resize(obj: IntensityVolume | LabelVolume, target_size: tuple[int, int, int]):
    """Resample to a new grid: trilinear for intensities, nearest for labels."""
    target_size = tuple(int(s) for s in target_size)
    if min(target_size) < 1:
        raise ValueError(f"target size must be positive, got {target_size}")
    src = obj.voxels
    if src.size == 0:
        raise ValueError("cannot resize an empty volume")
    new_spacing = tuple(sp * s / t for sp, s, t in zip(obj.spacing, src.shape, target_size))
    if src.shape == target_size:
        coords = None
    else:
        coords = _target_coords(src.shape, target_size)

    if isinstance(obj, LabelVolume):
        if coords is None:
            out = src.copy()
        else:
            out = ndimage.map_coordinates(src, coords, order=0, mode="nearest")
        return LabelVolume(voxels=out.astype(np.int32), label_map=obj.label_map, spacing=new_spacing)
    if coords is None:
        out = src.copy()
    else:
        out = ndimage.map_coordinates(src.astype(np.float64), coords, order=1, mode="nearest")
    return IntensityVolume(voxels=out.astype(np.float32), spacing=new_spacing)


def rotate_pair(
    vol_voxels: np.ndarray,
    label_voxels: np.ndarray,
    angle_deg: float,
    axes: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Rotate volume and labels by the same in-plane angle about the grid centre."""
    v = ndimage.rotate(
        vol_voxels, angle_deg, axes=axes, reshape=False, order=1, mode="constant", cval=0.0
    )
    l = ndimage.rotate(
        label_voxels, angle_deg, axes=axes, reshape=False, order=0, mode="constant", cval=0
    )
    return v, l.astype(label_voxels.dtype)


def augment(
    vol: IntensityVolume,
    labels: LabelVolume,
    cfg: PreprocessConfig,
    rng: np.random.Generator,
) -> tuple[IntensityVolume, LabelVolume]:
    """Apply rotation (to both), then noise and cutout (to the volume only).

    Each transform fires independently with cfg.augmentation_probability.
    With probability 0 this is exactly the identity.
    """
    if vol.voxels.shape != labels.voxels.shape:
        raise ValueError(
            f"volume and labels must be aligned, got {vol.voxels.shape} vs {labels.voxels.shape}"
        )
    p = cfg.augmentation_probability
    if p == 0.0:
        return vol, labels

    v = vol.voxels.astype(np.float32).copy()
    l = labels.voxels.copy()

    if rng.random() < p and cfg.rotation_max_deg > 0.0:
        angle = float(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
        axes = tuple(int(a) for a in rng.choice(3, size=2, replace=False))
        v, l = rotate_pair(v, l, angle, axes)

    if rng.random() < p and cfg.noise_sigma > 0.0:
        value_range = float(v.max() - v.min())
        v = v + rng.normal(0.0, cfg.noise_sigma * value_range, size=v.shape)

    if rng.random() < p:
        max_edges = cfg.cutout_size or tuple(max(1, s // 8) for s in v.shape)
        edges = [int(rng.integers(1, min(m, s) + 1)) for m, s in zip(max_edges, v.shape)]
        starts = [int(rng.integers(0, s - e + 1)) for e, s in zip(edges, v.shape)]
        box = tuple(slice(st, st + e) for st, e in zip(starts, edges))
        v[box] = 0.0

    out_vol = IntensityVolume(voxels=v.astype(np.float32), spacing=vol.spacing)
    out_lab = LabelVolume(voxels=l, label_map=labels.label_map, spacing=labels.spacing)
    return out_vol, out_lab


def contour_target(onehot: ChannelMapStack) -> ChannelMapStack:
    """Binary contour map per channel: nonzero 3D Prewitt gradient magnitude.

    The volume border is padded with background, matching the distance
    transform convention, so structures touching the border still produce
    a contour there.
    """
    if onehot.role != "onehot":
        raise ValueError(f"contour_target expects a one-hot stack, got role {onehot.role!r}")
    out = np.zeros_like(onehot.values, dtype=np.float32)
    for c in range(onehot.values.shape[0]):
        m = onehot.values[c].astype(np.int16)
        flagged = np.zeros(m.shape, dtype=bool)
        for axis in range(3):
            g = ndimage.prewitt(m, axis=axis, mode="constant", cval=0)
            flagged |= g != 0
        out[c] = flagged
    return ChannelMapStack(values=out, role="contour")


def _dt_two_sweep_axis0(mask: np.ndarray) -> np.ndarray:
    """1D distance-to-background along axis 0, squared. Lines must hit background."""
    d = np.where(mask, np.inf, 0.0)
    for i in range(1, d.shape[0]):
        np.minimum(d[i], d[i - 1] + 1.0, out=d[i])
    for i in range(d.shape[0] - 2, -1, -1):
        np.minimum(d[i], d[i + 1] + 1.0, out=d[i])
    return d * d


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """Exact 1D squared-distance transform via the lower envelope of parabolas."""
    n = f.shape[0]
    v = np.zeros(n, dtype=np.intp)
    z = np.empty(n + 1, dtype=np.float64)
    z[0] = -np.inf
    z[1] = np.inf
    k = 0
    for q in range(1, n):
        fq = f[q] + q * q
        s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        while s <= z[k]:
            k -= 1
            s = (fq - (f[v[k]] + v[k] * v[k])) / (2.0 * (q - v[k]))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    d = np.empty(n, dtype=np.float64)
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def _edt_squared(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest background voxel.

    The mask must carry a background border (call sites pad by one voxel)
    so the first sweep leaves no unreached line.
    """
    dsq = _dt_two_sweep_axis0(mask)
    for axis in (1, 2):
        work = np.moveaxis(dsq, axis, -1)
        shape = work.shape
        rows = np.ascontiguousarray(work).reshape(-1, shape[-1])
        for r in range(rows.shape[0]):
            rows[r] = _envelope_1d(rows[r])
        dsq = np.moveaxis(rows.reshape(shape), -1, axis)
    return dsq


def foreground_distance(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (voxels) from each foreground voxel to the
    nearest background voxel; borders count as background; background is 0."""
    mask = np.asarray(mask) > 0
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    dsq = _edt_squared(padded)
    d = np.sqrt(dsq[1:-1, 1:-1, 1:-1])
    d[~mask] = 0.0
    return d


def fdt_target(onehot: ChannelMapStack) -> ChannelMapStack:
    """Per-channel foreground distance transform of a one-hot stack."""
    if onehot.role != "onehot":
        raise ValueError(f"fdt_target expects a one-hot stack, got role {onehot.role!r}")
    out = np.zeros_like(onehot.values, dtype=np.float32)
    for c in range(onehot.values.shape[0]):
        out[c] = foreground_distance(onehot.values[c])
    return ChannelMapStack(values=out, role="distance")


def edt_bruteforce(mask: np.ndarray) -> np.ndarray:
    """All-pairs nearest-background distance; verification oracle for
    foreground_distance with the identical border convention."""
    mask = np.asarray(mask) > 0
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    fg = np.argwhere(padded)
    if fg.size == 0:
        return np.zeros(mask.shape, dtype=np.float64)
    bg = np.argwhere(~padded)
    dists = cdist(fg.astype(np.float64), bg.astype(np.float64)).min(axis=1)
    out = np.zeros(padded.shape, dtype=np.float64)
    out[tuple(fg.T)] = dists
    return out[1:-1, 1:-1, 1:-1]
