"""Differentiable architecture: U-Net backbone, V-transition blocks,
contour and distance-transform transition heads, shape-aware attention,
a CBAM baseline, and the ablation variant builder.

All tensors are (B, C, D, H, W). Variant names follow the ablation grid:
base, base+CBAM, base+CTN, base+DTTN, base+CTN+DTTN, base+CTN+DTTN+penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .volume_io import IntensityVolume

VARIANTS = (
    "base",
    "base+CBAM",
    "base+CTN",
    "base+DTTN",
    "base+CTN+DTTN",
    "base+CTN+DTTN+penalty",
)


@dataclass
class ModelVariantSpec:
    """Configuration of one ablation variant."""

    variant: str = "base+CTN+DTTN+penalty"
    base_channels: int = 16
    depth: int = 3
    n_structures: int = 7
    n_seg_classes: int | None = None
    groups: int = 4
    attention_mid_channels: int = 16

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.n_seg_classes is None:
            self.n_seg_classes = self.n_structures + 1
        if self.n_seg_classes != self.n_structures + 1:
            raise ValueError(
                f"n_seg_classes must be n_structures + 1, got {self.n_seg_classes} "
                f"for {self.n_structures} structures"
            )
        if self.base_channels < 1 or self.depth < 1 or self.n_structures < 1:
            raise ValueError("base_channels, depth and n_structures must be positive")

    @property
    def has_ctn(self) -> bool:
        return "CTN" in self.variant

    @property
    def has_dttn(self) -> bool:
        return "DTTN" in self.variant

    @property
    def has_penalty(self) -> bool:
        return "penalty" in self.variant

    @property
    def has_cbam(self) -> bool:
        return "CBAM" in self.variant

    @property
    def has_attention(self) -> bool:
        return self.has_ctn or self.has_dttn


def _largest_valid_groups(requested: int, *channels: int) -> int:
    for g in range(min(requested, *channels), 0, -1):
        if all(c % g == 0 for c in channels):
            return g
    return 1


class SeparableConvBlock(nn.Module):
    """Grouped 3x3x3 convolution + batch norm + ReLU.

    Grouping divides the dense parameter count by the group count; both
    channel counts must be divisible by it.
    """

    def __init__(self, in_channels: int, out_channels: int, groups: int = 4):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ValueError(
                f"channels ({in_channels} -> {out_channels}) not divisible by groups={groups}"
            )
        self.conv = nn.Conv3d(in_channels, out_channels, 3, padding=1, groups=groups)
        self.norm = nn.BatchNorm3d(out_channels)
        self.act = nn.ReLU()

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ChannelAttention(nn.Module):
    """Squeeze-and-excitation style per-channel gate."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        w = x.mean(dim=(2, 3, 4))
        w = torch.sigmoid(self.fc2(F.relu(self.fc1(w))))
        return x * w.view(*w.shape, 1, 1, 1)


class VTransition(nn.Module):
    """Single-level encoder-decoder block with channel-wise attention.

    One downsample and one upsample inside; output spatial size equals the
    input, which therefore needs even spatial dimensions.
    """

    def __init__(self, in_channels: int, out_channels: int, groups: int = 4):
        super().__init__()
        self.enc = SeparableConvBlock(
            in_channels, out_channels, _largest_valid_groups(groups, in_channels, out_channels)
        )
        self.bottom = SeparableConvBlock(
            out_channels, out_channels * 2, _largest_valid_groups(groups, out_channels, out_channels * 2)
        )
        self.dec = SeparableConvBlock(
            out_channels * 3, out_channels, _largest_valid_groups(groups, out_channels * 3, out_channels)
        )
        self.pool = nn.MaxPool3d(2)
        self.attention = ChannelAttention(out_channels)

    def forward(self, x):
        if any(s % 2 for s in x.shape[2:]):
            raise ValueError(f"spatial dims must be even, got {tuple(x.shape[2:])}")
        e = self.enc(x)
        b = self.bottom(self.pool(e))
        u = F.interpolate(b, size=e.shape[2:], mode="trilinear", align_corners=False)
        d = self.dec(torch.cat([u, e], dim=1))
        return self.attention(d)


class ConvBlock(nn.Module):
    """Two plain 3x3x3 convolutions with instance norm, for the backbone."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_channels, out_channels, 3, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.ReLU(),
            nn.Conv3d(out_channels, out_channels, 3, padding=1),
            nn.InstanceNorm3d(out_channels, affine=True),
            nn.ReLU(),
        )

    def forward(self, x):
        return self.block(x)


class Backbone(nn.Module):
    """U-Net encoder-decoder; exposes shallow, deep and full-resolution features."""

    def __init__(self, in_channels: int = 1, base_channels: int = 16, depth: int = 3):
        super().__init__()
        self.depth = depth
        chans = [base_channels * 2**i for i in range(depth + 1)]
        self.encoders = nn.ModuleList(
            [ConvBlock(in_channels if i == 0 else chans[i - 1], chans[i]) for i in range(depth)]
        )
        self.bottleneck = ConvBlock(chans[depth - 1], chans[depth])
        self.decoders = nn.ModuleList(
            [ConvBlock(chans[i + 1] + chans[i], chans[i]) for i in reversed(range(depth))]
        )
        self.pool = nn.MaxPool3d(2)

    def forward(self, x):
        if any(s % 2**self.depth for s in x.shape[2:]):
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by {2 ** self.depth}"
            )
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        high = x
        for dec, skip in zip(self.decoders, reversed(skips)):
            x = F.interpolate(x, size=skip.shape[2:], mode="trilinear", align_corners=False)
            x = dec(torch.cat([x, skip], dim=1))
        return skips[0], high, x


class ContourTransition(nn.Module):
    """Contour head: V-transition over shallow features, projecting to
    per-structure contour logits at full resolution."""

    def __init__(self, in_channels: int, n_structures: int, groups: int = 4):
        super().__init__()
        self.transition = VTransition(in_channels, in_channels, groups)
        self.project = nn.Conv3d(in_channels, n_structures, 1)

    def forward(self, low_feats):
        return self.project(self.transition(low_feats))


class DistanceTransition(nn.Module):
    """Distance head: deep features reduced, upsampled to full resolution,
    refined by a V-transition, regressing per-structure distance maps."""

    def __init__(self, in_channels: int, mid_channels: int, n_structures: int, groups: int = 4):
        super().__init__()
        self.reduce = nn.Conv3d(in_channels, mid_channels, 1)
        self.transition = VTransition(mid_channels, mid_channels, groups)
        self.project = nn.Conv3d(mid_channels, n_structures, 1)

    def forward(self, high_feats, out_size):
        x = self.reduce(high_feats)
        x = F.interpolate(x, size=out_size, mode="trilinear", align_corners=False)
        return self.project(self.transition(x))


class ShapeAwareAttention(nn.Module):
    """Spatial gate from concatenated backbone, contour and distance features.

    Produces a single-channel map A = sigmoid(convs(concat(...))) in (0, 1)
    and gates the input features elementwise: f_o = f_i * A.
    """

    def __init__(self, feat_channels: int, aux_channels: int, mid_channels: int = 16):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv3d(feat_channels + aux_channels, mid_channels, 3, padding=1),
            nn.ReLU(),
            nn.Conv3d(mid_channels, 1, 3, padding=1),
        )

    def forward(self, f_i, *aux):
        for a in aux:
            if a.shape[2:] != f_i.shape[2:]:
                raise ValueError(
                    f"spatial dims mismatch: features {tuple(f_i.shape[2:])} "
                    f"vs auxiliary {tuple(a.shape[2:])}"
                )
        attention = torch.sigmoid(self.convs(torch.cat([f_i, *aux], dim=1)))
        return f_i * attention, attention


class CBAM3d(nn.Module):
    """Convolutional block attention: channel gate then spatial gate."""

    def __init__(self, channels: int, reduction: int = 4, spatial_kernel: int = 7):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))
        self.spatial = nn.Conv3d(2, 1, spatial_kernel, padding=spatial_kernel // 2)

    def forward(self, x):
        avg = x.mean(dim=(2, 3, 4))
        mx = x.amax(dim=(2, 3, 4))
        cw = torch.sigmoid(self.mlp(avg) + self.mlp(mx))
        x = x * cw.view(*cw.shape, 1, 1, 1)
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return x * torch.sigmoid(self.spatial(pooled))


class CDANet(nn.Module):
    """Contour- and distance-transform-guided attention segmentation network."""

    def __init__(self, spec: ModelVariantSpec):
        super().__init__()
        self.spec = spec
        bc, depth = spec.base_channels, spec.depth
        self.backbone = Backbone(1, bc, depth)
        deep_channels = bc * 2**depth

        self.ctn = (
            ContourTransition(bc, spec.n_structures, spec.groups) if spec.has_ctn else None
        )
        self.dttn = (
            DistanceTransition(deep_channels, bc, spec.n_structures, spec.groups)
            if spec.has_dttn
            else None
        )
        if spec.has_attention:
            aux_channels = spec.n_structures * (int(spec.has_ctn) + int(spec.has_dttn))
            self.attention = ShapeAwareAttention(bc, aux_channels, spec.attention_mid_channels)
        else:
            self.attention = None
        self.cbam = CBAM3d(bc) if spec.has_cbam else None
        self.refine = VTransition(bc, bc, spec.groups)
        self.seg_head = nn.Conv3d(bc, spec.n_seg_classes, 1)

    def ctn_forward(self, low_feats):
        if self.ctn is None:
            raise ValueError(f"variant {self.spec.variant!r} has no contour transition head")
        return self.ctn(low_feats)

    def dttn_forward(self, high_feats, out_size):
        if self.dttn is None:
            raise ValueError(f"variant {self.spec.variant!r} has no distance transition head")
        return self.dttn(high_feats, out_size)

    def forward(self, x) -> dict[str, torch.Tensor]:
        low, high, dec = self.backbone(x)
        out: dict[str, torch.Tensor] = {}
        aux = []
        if self.ctn is not None:
            contour_logits = self.ctn_forward(low)
            out["contour_logits"] = contour_logits
            aux.append(torch.sigmoid(contour_logits))
        if self.dttn is not None:
            dt_pred = self.dttn_forward(high, x.shape[2:])
            out["dt_pred"] = dt_pred
            aux.append(dt_pred)
        if self.attention is not None:
            gated, attention = self.attention(dec, *aux)
            out["attention"] = attention
        elif self.cbam is not None:
            gated = self.cbam(dec)
        else:
            gated = dec
        out["seg_logits"] = self.seg_head(self.refine(gated))
        return out


def build_variant(spec: ModelVariantSpec) -> CDANet:
    """Instantiate the network for one ablation variant."""
    return CDANet(spec)


def cda_forward(model: CDANet, vol) -> dict[str, torch.Tensor]:
    """Inference pass on a single preprocessed volume.

    Accepts an IntensityVolume or a (D, H, W) array/tensor; returns the
    output dict without batch dimensions. Softmax over seg_logits gives
    per-voxel class probabilities summing to one.
    """
    if isinstance(vol, IntensityVolume):
        data = vol.voxels
    else:
        data = vol
    x = torch.as_tensor(np.asarray(data), dtype=next(model.parameters()).dtype)
    if x.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {tuple(x.shape)}")
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(x[None, None])
    finally:
        model.train(was_training)
    return {k: v[0] for k, v in out.items()}


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
