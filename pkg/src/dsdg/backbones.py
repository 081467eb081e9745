"""Depth feature extractors: every backbone maps a 3x256x256 image to a
64x32x32 feature map (other input sizes are resized to 32x32 at the
multi-scale fusion / head stage, so the output grid is always 32x32).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError

BACKBONE_KINDS = ("depthnet", "cdcn", "resnet", "mobilenetv2")
FEATURE_CHANNELS = 64
FEATURE_SIZE = 32


@dataclass
class BackboneSpec:
    kind: str = "cdcn"
    cdc_theta: float = 0.7
    width: float = 1.0

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigError(f"unknown backbone kind {self.kind!r}; pick one of {BACKBONE_KINDS}")
        if not 0.0 <= self.cdc_theta <= 1.0:
            raise ConfigError("cdc_theta must lie in [0, 1]")
        if self.width <= 0:
            raise ConfigError("width multiplier must be positive")


def cdc_conv(
    x: Tensor,
    weight: Tensor,
    theta: float,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 1,
) -> Tensor:
    """Central-difference convolution: the vanilla convolution minus theta
    times the center pixel scaled by the kernel sum.

    y(p) = sum_k w_k * x(p + k) - theta * x(p) * sum_k w_k
    """
    if weight.shape[-1] % 2 == 0 or weight.shape[-2] % 2 == 0:
        raise ValueError("cdc_conv requires odd kernel sizes")
    out = F.conv2d(x, weight, bias=bias, stride=stride, padding=padding)
    if theta == 0.0:
        return out
    kernel_sum = weight.sum(dim=(2, 3), keepdim=True)
    # 1x1 convolution picking the window-center pixel; offset accounts for
    # how much of the kernel's half-width the padding does not cover
    offset = weight.shape[-1] // 2 - padding
    if offset < 0:
        raise ValueError("padding larger than the kernel half-width is unsupported")
    center_in = x[..., offset:, offset:] if offset > 0 else x
    center = F.conv2d(center_in, kernel_sum, bias=None, stride=stride, padding=0)
    center = center[..., : out.shape[-2], : out.shape[-1]]
    return out - theta * center


class CDConv2d(nn.Module):
    """3x3 convolution with the central-difference term."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1, theta: float = 0.7):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)
        self.theta = theta

    def forward(self, x: Tensor) -> Tensor:
        return cdc_conv(x, self.conv.weight, self.theta, stride=self.conv.stride[0], padding=1)


def _plain_conv(in_channels: int, out_channels: int, stride: int = 1, theta: float = 0.0):
    return nn.Conv2d(in_channels, out_channels, 3, stride, 1, bias=False)


def _resize32(x: Tensor) -> Tensor:
    if x.shape[-2:] == (FEATURE_SIZE, FEATURE_SIZE):
        return x
    return F.interpolate(x, size=(FEATURE_SIZE, FEATURE_SIZE), mode="nearest")


def _cbr(conv_fn, cin: int, cout: int, theta: float) -> list[nn.Module]:
    return [conv_fn(cin, cout, 1, theta), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]


class _MultiScaleDepthNet(nn.Module):
    """Stem + three pooled blocks fused at 32x32 + a two-conv head.

    conv_fn selects vanilla (depthnet) or central-difference (cdcn) convs.
    """

    def __init__(self, conv_fn, theta: float, width: float):
        super().__init__()
        w = lambda c: max(8, int(round(c * width)))
        self.stem = nn.Sequential(*_cbr(conv_fn, 3, w(64), theta))

        def block(cin):
            return nn.Sequential(
                *_cbr(conv_fn, cin, w(128), theta),
                *_cbr(conv_fn, w(128), w(196), theta),
                *_cbr(conv_fn, w(196), w(128), theta),
                nn.MaxPool2d(3, 2, 1),
            )

        self.block_low = block(w(64))
        self.block_mid = block(w(128))
        self.block_high = block(w(128))
        self.head = nn.Sequential(
            *_cbr(conv_fn, 3 * w(128), w(128), theta),
            *_cbr(conv_fn, w(128), FEATURE_CHANNELS, theta),
        )

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        low = self.block_low(x)
        mid = self.block_mid(low)
        high = self.block_high(mid)
        fused = torch.cat([_resize32(low), _resize32(mid), _resize32(high)], dim=1)
        return self.head(fused)


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down: nn.Module | None = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x: Tensor) -> Tensor:
        identity = self.down(x) if self.down is not None else x
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


class _ModifiedResNet(nn.Module):
    """Stride-1 stem, four two-block stages (64/128/256/512), 128->64 head."""

    def __init__(self, width: float):
        super().__init__()
        w = lambda c: max(8, int(round(c * width)))
        self.stem = nn.Sequential(
            nn.Conv2d(3, w(64), 3, 1, 1, bias=False), nn.BatchNorm2d(w(64)), nn.ReLU(inplace=True)
        )
        stages = []
        cin = w(64)
        for cout, stride in ((w(64), 1), (w(128), 2), (w(256), 2), (w(512), 2)):
            stages.append(
                nn.Sequential(_BasicBlock(cin, cout, stride), _BasicBlock(cout, cout, 1))
            )
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.head = nn.Sequential(
            nn.Conv2d(cin, w(128), 3, 1, 1, bias=False),
            nn.BatchNorm2d(w(128)),
            nn.ReLU(inplace=True),
            nn.Conv2d(w(128), FEATURE_CHANNELS, 3, 1, 1, bias=False),
            nn.BatchNorm2d(FEATURE_CHANNELS),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.head(_resize32(self.stages(self.stem(x))))


class _InvertedResidual(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int, expand: int):
        super().__init__()
        hidden = cin * expand
        self.use_res = stride == 1 and cin == cout
        layers: list[nn.Module] = []
        if expand != 1:
            layers += [
                nn.Conv2d(cin, hidden, 1, bias=False),
                nn.BatchNorm2d(hidden),
                nn.ReLU6(inplace=True),
            ]
        layers += [
            nn.Conv2d(hidden, hidden, 3, stride, 1, groups=hidden, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU6(inplace=True),
            nn.Conv2d(hidden, cout, 1, bias=False),
            nn.BatchNorm2d(cout),
        ]
        self.body = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        out = self.body(x)
        return x + out if self.use_res else out


class _MobileNetV2(nn.Module):
    """Stride-1 stem (32ch), bottleneck stages per the architecture table,
    128->64 head at 32x32."""

    # (out_channels, stride) per bottleneck; expansion 6 throughout
    _STAGES = (
        ((16, 1), (24, 1)),
        ((32, 2),),
        ((64, 2), (96, 1)),
        ((160, 2), (320, 1)),
    )

    def __init__(self, width: float):
        super().__init__()
        w = lambda c: max(8, int(round(c * width)))
        self.stem = nn.Sequential(
            nn.Conv2d(3, w(32), 3, 1, 1, bias=False), nn.BatchNorm2d(w(32)), nn.ReLU6(inplace=True)
        )
        blocks: list[nn.Module] = []
        cin = w(32)
        for stage in self._STAGES:
            for cout, stride in stage:
                blocks.append(_InvertedResidual(cin, w(cout), stride, expand=6))
                cin = w(cout)
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Sequential(
            nn.Conv2d(cin, w(128), 3, 1, 1, bias=False),
            nn.BatchNorm2d(w(128)),
            nn.ReLU(inplace=True),
            nn.Conv2d(w(128), FEATURE_CHANNELS, 3, 1, 1, bias=False),
            nn.BatchNorm2d(FEATURE_CHANNELS),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.head(_resize32(self.blocks(self.stem(x))))


def build_backbone(spec: BackboneSpec) -> nn.Module:
    """Construct the chosen depth feature extractor."""
    if spec.kind == "depthnet":
        return _MultiScaleDepthNet(_plain_conv, 0.0, spec.width)
    if spec.kind == "cdcn":
        conv = lambda cin, cout, stride, theta: CDConv2d(cin, cout, stride, theta)
        return _MultiScaleDepthNet(conv, spec.cdc_theta, spec.width)
    if spec.kind == "resnet":
        return _ModifiedResNet(spec.width)
    if spec.kind == "mobilenetv2":
        return _MobileNetV2(spec.width)
    raise ConfigError(f"unknown backbone kind {spec.kind!r}")


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
