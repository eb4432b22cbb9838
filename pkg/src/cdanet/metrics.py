"""Per-structure evaluation: overlap, surface-distance and detection metrics.

Distances are in voxel units and computed at whatever grid the masks live
on (evaluation runs at native label resolution). Metrics that are
undefined for empty masks are reported as NaN markers, excluded from
aggregates, and counted.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .volume_io import LabelVolume

WHOLE_LABEL = "WH"


@dataclass
class SurfaceSet:
    """Coordinates of a mask's surface voxels (foreground with a background
    6-neighbour; the volume border counts as background)."""

    coords: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass
class StructureMetrics:
    case_id: str
    structure: str
    dsc: float
    ji: float
    hd95: float
    assd: float
    sensitivity: float
    precision: float

    METRIC_FIELDS = ("dsc", "ji", "hd95", "assd", "sensitivity", "precision")


def _as_bool(mask) -> np.ndarray:
    m = np.asarray(mask)
    return m.astype(bool)


def _check_same_shape(x: np.ndarray, y: np.ndarray):
    if x.shape != y.shape:
        raise ValueError(f"mask shape mismatch: {x.shape} vs {y.shape}")


def dsc(x, y) -> float:
    """Dice similarity coefficient; 1 when both masks are empty."""
    x, y = _as_bool(x), _as_bool(y)
    _check_same_shape(x, y)
    total = int(x.sum()) + int(y.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((x & y).sum()) / total


def jaccard(x, y) -> float:
    """Jaccard index; 1 when both masks are empty."""
    x, y = _as_bool(x), _as_bool(y)
    _check_same_shape(x, y)
    union = int((x | y).sum())
    if union == 0:
        return 1.0
    return int((x & y).sum()) / union


def extract_surface(mask, spacing=(1.0, 1.0, 1.0)) -> SurfaceSet:
    """All foreground voxels with at least one background 6-neighbour."""
    m = _as_bool(mask)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    neighbour_all_fg = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        neighbour_all_fg &= padded[tuple(lo)] & padded[tuple(hi)]
    surface = m & ~neighbour_all_fg
    return SurfaceSet(coords=np.argwhere(surface), spacing=tuple(spacing))


def _directed_distances(src: SurfaceSet, dst: SurfaceSet) -> np.ndarray:
    tree = cKDTree(dst.coords.astype(np.float64))
    dists, _ = tree.query(src.coords.astype(np.float64), k=1)
    return np.atleast_1d(dists)


def hd95(x, y) -> float:
    """Symmetric 95th-percentile Hausdorff distance in voxel units.

    NaN marks the undefined case of an empty mask.
    """
    sx = extract_surface(x)
    sy = extract_surface(y)
    if len(sx) == 0 or len(sy) == 0:
        return math.nan
    d_xy = _directed_distances(sx, sy)
    d_yx = _directed_distances(sy, sx)
    return float(max(np.percentile(d_xy, 95), np.percentile(d_yx, 95)))


def assd(x, y) -> float:
    """Average symmetric surface distance in voxel units; NaN when undefined."""
    sx = extract_surface(x)
    sy = extract_surface(y)
    if len(sx) == 0 or len(sy) == 0:
        return math.nan
    d_xy = _directed_distances(sx, sy)
    d_yx = _directed_distances(sy, sx)
    return float((d_xy.sum() + d_yx.sum()) / (len(sx) + len(sy)))


def sensitivity_precision(pred, gt) -> tuple[float, float]:
    """(TP/(TP+FN), TP/(TP+FP)); NaN for zero denominators."""
    p, g = _as_bool(pred), _as_bool(gt)
    _check_same_shape(p, g)
    tp = int((p & g).sum())
    fn = int((~p & g).sum())
    fp = int((p & ~g).sum())
    sens = tp / (tp + fn) if tp + fn else math.nan
    prec = tp / (tp + fp) if tp + fp else math.nan
    return sens, prec


def evaluate_case(pred: LabelVolume, gt: LabelVolume, case_id: str = "case") -> list[StructureMetrics]:
    """All metrics per structure plus the whole-foreground aggregate row."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/ground-truth shape mismatch: {pred.shape} vs {gt.shape}")
    rows = []
    pairs = [(name, gt.label_map[name]) for name in gt.structure_names()]
    for name, code in pairs:
        pm = pred.voxels == code
        gm = gt.voxels == code
        sens, prec = sensitivity_precision(pm, gm)
        rows.append(
            StructureMetrics(
                case_id=case_id,
                structure=name,
                dsc=dsc(pm, gm),
                ji=jaccard(pm, gm),
                hd95=hd95(pm, gm),
                assd=assd(pm, gm),
                sensitivity=sens,
                precision=prec,
            )
        )
    pm = pred.foreground()
    gm = gt.foreground()
    sens, prec = sensitivity_precision(pm, gm)
    rows.append(
        StructureMetrics(
            case_id=case_id,
            structure=WHOLE_LABEL,
            dsc=dsc(pm, gm),
            ji=jaccard(pm, gm),
            hd95=hd95(pm, gm),
            assd=assd(pm, gm),
            sensitivity=sens,
            precision=prec,
        )
    )
    return rows


def aggregate_rows(rows: list[StructureMetrics]) -> dict[str, dict[str, float | int]]:
    """Mean per (structure, metric) over cases, excluding and counting NaNs."""
    by_structure: dict[str, list[StructureMetrics]] = {}
    for row in rows:
        by_structure.setdefault(row.structure, []).append(row)
    out: dict[str, dict[str, float | int]] = {}
    for structure, group in by_structure.items():
        agg: dict[str, float | int] = {"n_cases": len(group)}
        for metric in StructureMetrics.METRIC_FIELDS:
            values = [getattr(r, metric) for r in group]
            defined = [v for v in values if not math.isnan(v)]
            agg[metric] = float(np.mean(defined)) if defined else math.nan
            agg[f"{metric}_undefined"] = len(values) - len(defined)
        out[structure] = agg
    return out


def _cell(value: float) -> str:
    return "" if isinstance(value, float) and math.isnan(value) else repr(value)


def write_report_csv(rows: list[StructureMetrics], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case_id", "structure", *StructureMetrics.METRIC_FIELDS])
        for row in rows:
            writer.writerow(
                [row.case_id, row.structure]
                + [_cell(getattr(row, m)) for m in StructureMetrics.METRIC_FIELDS]
            )


def write_report_json(rows: list[StructureMetrics], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = []
    for row in rows:
        rec = asdict(row)
        for key, value in rec.items():
            if isinstance(value, float) and math.isnan(value):
                rec[key] = None
        records.append(rec)
    with open(path, "w") as f:
        json.dump(records, f, indent=2)
