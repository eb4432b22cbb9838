"""Volume and label I/O, one-hot encoding, and synthetic phantom generation.

All arrays follow the canonical (D, H, W) axis order. Channel stacks are
(N, D, H, W). Label volumes carry a name -> integer-code mapping; code 0
is always background.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .nifti import read_nifti, write_nifti

STRUCTURE_NAMES = ("LV", "RV", "LA", "RA", "LV-myo", "AA", "PA")

STACK_ROLES = ("onehot", "probability", "contour", "distance")


@dataclass
class IntensityVolume:
    """3D scalar field; HU before normalization, [0, 1] after."""

    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise ValueError(f"expected 3 spatial dimensions, got shape {self.voxels.shape}")
        if not np.isfinite(self.voxels).all():
            raise ValueError("intensity volume contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or min(self.spacing) <= 0.0:
            raise ValueError(f"spacing must be three positive values, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class LabelVolume:
    """3D integer field of structure codes plus the name -> code mapping."""

    voxels: np.ndarray
    label_map: dict[str, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3:
            raise ValueError(f"expected 3 spatial dimensions, got shape {self.voxels.shape}")
        if not np.issubdtype(self.voxels.dtype, np.integer):
            raise ValueError(f"label voxels must be integers, got {self.voxels.dtype}")
        self.voxels = self.voxels.astype(np.int32)
        self.label_map = {str(k): int(v) for k, v in self.label_map.items()}
        if 0 in self.label_map.values():
            raise ValueError("label code 0 is reserved for background")
        self.spacing = tuple(float(s) for s in self.spacing)
        present = set(np.unique(self.voxels).tolist()) - {0}
        known = set(self.label_map.values())
        unknown = sorted(present - known)
        if unknown:
            raise ValueError(f"label volume contains codes not in label map: {unknown}")
        if self.voxels.min() < 0:
            raise ValueError("label codes must be non-negative")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def structure_codes(self) -> list[int]:
        """Structure codes in canonical (sorted) channel order."""
        return sorted(self.label_map.values())

    def structure_names(self) -> list[str]:
        code_to_name = {v: k for k, v in self.label_map.items()}
        return [code_to_name[c] for c in self.structure_codes()]

    def mask(self, name: str) -> np.ndarray:
        return self.voxels == self.label_map[name]

    def foreground(self) -> np.ndarray:
        """Union of all structures (whole-heart mask for cardiac data)."""
        return self.voxels != 0


@dataclass
class ChannelMapStack:
    """(N, D, H, W) scalar stack with a declared role."""

    values: np.ndarray
    role: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise ValueError(f"expected (N, D, H, W) stack, got shape {self.values.shape}")
        if self.role not in STACK_ROLES:
            raise ValueError(f"unknown stack role {self.role!r}, expected one of {STACK_ROLES}")
        v = self.values
        if not np.isfinite(v).all():
            raise ValueError("channel stack contains non-finite values")
        if self.role == "onehot":
            if not np.isin(v, (0.0, 1.0)).all():
                raise ValueError("one-hot stack must contain only 0 and 1")
            sums = v.sum(axis=0)
            if not np.isin(sums, (0.0, 1.0)).all():
                raise ValueError("one-hot per-voxel channel sums must be 0 or 1")
        elif self.role in ("probability", "contour"):
            if v.min() < 0.0 or v.max() > 1.0:
                raise ValueError(f"{self.role} stack values must lie in [0, 1]")
        elif self.role == "distance":
            if v.min() < 0.0:
                raise ValueError("distance stack values must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureMap:
    """(C, D, H, W) activation with a semantic role tag.

    Roles: input/contour/distance/output features, or a single-channel
    attention map whose values must lie strictly inside (0, 1).
    """

    values: np.ndarray
    role: str = "feature"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 4:
            raise ValueError(f"expected (C, D, H, W) feature map, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("feature map contains non-finite values")
        if self.role == "attention":
            if self.values.shape[0] != 1:
                raise ValueError("attention map must have a single channel")
            if self.values.min() < 0.0 or self.values.max() > 1.0:
                raise ValueError("attention values must lie in [0, 1]")


def load_volume(path: str | Path) -> IntensityVolume:
    """Load an intensity volume from a NIfTI file."""
    voxels, spacing = read_nifti(path)
    return IntensityVolume(voxels=voxels.astype(np.float32), spacing=spacing)


def save_volume(vol: IntensityVolume, path: str | Path) -> None:
    write_nifti(path, vol.voxels.astype(np.float32), vol.spacing)


def load_labels(path: str | Path, label_map: dict[str, int]) -> LabelVolume:
    """Load a label volume and validate every nonzero code against label_map."""
    voxels, spacing = read_nifti(path)
    if not np.issubdtype(voxels.dtype, np.integer):
        rounded = np.rint(voxels)
        if not np.array_equal(rounded, voxels):
            raise ValueError(f"label file contains non-integer values: {path}")
        voxels = rounded.astype(np.int32)
    return LabelVolume(voxels=voxels, label_map=label_map, spacing=spacing)


def save_prediction(labels: LabelVolume, path: str | Path) -> None:
    """Save a label volume; codes round-trip bit-exactly."""
    write_nifti(path, labels.voxels.astype(np.int32), labels.spacing)


def export_attention(fmap: FeatureMap, path: str | Path) -> None:
    """Export a single-channel attention map as a scalar volume in [0, 1]."""
    if fmap.values.shape[0] != 1:
        raise ValueError(f"attention export expects a single channel, got {fmap.values.shape[0]}")
    if fmap.values.min() < 0.0 or fmap.values.max() > 1.0:
        raise ValueError("attention values must lie in [0, 1]")
    write_nifti(path, fmap.values[0].astype(np.float32))


def load_label_map(path: str | Path) -> dict[str, int]:
    """Read a name -> integer-code mapping from a YAML key-value file."""
    with open(path) as f:
        raw = yaml.safe_load(f)
    if not isinstance(raw, dict) or not raw:
        raise ValueError(f"label map file must hold a non-empty name: code mapping: {path}")
    return {str(k): int(v) for k, v in raw.items()}


def save_label_map(label_map: dict[str, int], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump({str(k): int(v) for k, v in label_map.items()}, f, sort_keys=True)


def one_hot(labels: LabelVolume, include_background: bool = False) -> ChannelMapStack:
    """Encode a label volume as a one-hot channel stack.

    Channel order is background first (when included) followed by the
    structures in sorted-code order.
    """
    codes = labels.structure_codes()
    if include_background:
        codes = [0] + codes
    stack = np.stack([(labels.voxels == c) for c in codes]).astype(np.float32)
    return ChannelMapStack(values=stack, role="onehot")


def decode_onehot(stack: ChannelMapStack, label_map: dict[str, int]) -> np.ndarray:
    """Invert one_hot(include_background=True) back to a label-code array."""
    codes = [0] + sorted(label_map.values())
    if stack.values.shape[0] != len(codes):
        raise ValueError(
            f"stack has {stack.values.shape[0]} channels, expected {len(codes)} "
            "(background plus one per structure)"
        )
    idx = np.argmax(stack.values, axis=0)
    return np.asarray(codes, dtype=np.int32)[idx]


def default_label_map(n_structures: int) -> dict[str, int]:
    """Phantom label map: the seven cardiac substructure names, then S8, S9, ..."""
    names = list(STRUCTURE_NAMES) + [f"S{i}" for i in range(8, n_structures + 1)]
    return {names[i]: i + 1 for i in range(n_structures)}


def generate_phantom(
    seed: int,
    size: tuple[int, int, int],
    n_structures: int,
) -> tuple[IntensityVolume, LabelVolume]:
    """Synthesize a multi-compartment phantom for desk-scale experiments.

    Compartments are nested ellipsoidal shells around a common centre, so
    consecutive structures share 6-connected boundaries. Structure mean
    intensities are nearly identical (offsets far below the noise level),
    which keeps the inter-structure boundaries intensity-inseparable while
    the foreground/background boundary stays visible.
    """
    size = tuple(int(s) for s in size)
    if len(size) != 3:
        raise ValueError(f"size must be (D, H, W), got {size}")
    if n_structures < 2:
        raise ValueError(f"need at least 2 structures, got {n_structures}")
    if min(size) < 16:
        raise ValueError(f"each axis must be at least 16 voxels, got {size}")

    rng = np.random.default_rng(seed)
    shape = np.asarray(size, dtype=np.float64)

    centre = shape / 2.0 + rng.uniform(-0.04, 0.04, size=3) * shape
    semi_axes = (shape / 2.0 - 1.5) * rng.uniform(0.78, 0.92, size=3)
    if semi_axes.min() < n_structures:
        raise ValueError(
            f"size {size} too small to fit {n_structures} structures "
            f"(min semi-axis {semi_axes.min():.1f} voxels)"
        )

    grids = np.meshgrid(*(np.arange(s, dtype=np.float64) for s in size), indexing="ij")
    r = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grids, centre, semi_axes)))

    # Shell thresholds: sqrt spacing balances inner-core volume against
    # outer-shell thickness; small jitter varies geometry across seeds.
    cuts = np.sqrt(np.arange(1, n_structures) / n_structures)
    cuts = cuts + rng.uniform(-0.03, 0.03, size=n_structures - 1) / n_structures
    thresholds = np.concatenate([[0.0], cuts, [1.0]])

    labels = np.zeros(size, dtype=np.int32)
    for i in range(n_structures):
        band = (r >= thresholds[i]) & (r < thresholds[i + 1])
        labels[band] = i + 1

    counts = np.bincount(labels.ravel(), minlength=n_structures + 1)
    empty = [i for i in range(1, n_structures + 1) if counts[i] == 0]
    if empty:
        raise ValueError(f"size {size} too small: structures {empty} received no voxels")

    background_hu = -80.0
    structure_hu = 300.0 + rng.normal(0.0, 8.0, size=n_structures)
    noise_sigma = 40.0

    hu = np.full(size, background_hu, dtype=np.float64)
    for i in range(n_structures):
        hu[labels == i + 1] = structure_hu[i]
    hu += rng.normal(0.0, noise_sigma, size=size)

    vol = IntensityVolume(voxels=hu.astype(np.float32))
    lab = LabelVolume(voxels=labels, label_map=default_label_map(n_structures))
    return vol, lab
