"""Three-branch sensing-area regressor.

Image branch: Nested ResNet (residual encoder + partial-upsampling decoder
with global skips). Depth branch: small strided CNN + MLP. Axis branch: MLP
over the sampled axis points. A fusion MLP maps the concatenated features to
a normalized (u, v) in [0, 1]^2.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError

BRANCHES = ("image", "depth", "axis")


@dataclass
class ModelConfig:
    base_channels: int = 16
    block_counts: tuple[int, int, int, int] = (3, 4, 6, 3)
    ebn_expansion: int = 4
    branches: tuple[str, ...] = BRANCHES
    decoder_stages: int = 2
    head_hidden_sizes: tuple[int, ...] = (256, 64)
    in_channels: int = 6
    n_axis_points: int = 50

    def __post_init__(self):
        self.block_counts = tuple(int(n) for n in self.block_counts)
        self.branches = tuple(self.branches)
        self.head_hidden_sizes = tuple(int(n) for n in self.head_hidden_sizes)
        if len(self.block_counts) != 4 or min(self.block_counts) < 1:
            raise ConfigError(f"block_counts must be 4 counts >= 1, got {self.block_counts}")
        if self.ebn_expansion not in (2, 4):
            raise ConfigError(f"ebn_expansion must be 2 or 4, got {self.ebn_expansion}")
        if not self.branches:
            raise ConfigError("at least one branch must be enabled")
        unknown = set(self.branches) - set(BRANCHES)
        if unknown:
            raise ConfigError(f"unknown branches {sorted(unknown)}")
        # keep canonical order so the fusion input layout is stable
        self.branches = tuple(b for b in BRANCHES if b in self.branches)
        if not 0 <= self.decoder_stages <= 4:
            raise ConfigError(f"decoder_stages must be in [0, 4], got {self.decoder_stages}")

    def to_dict(self):
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def conv_bn(cin, cout, kernel, stride=1):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(cout),
    )


class StandardBottleneck(nn.Module):
    """1x1 reduce to C/4, 3x3, 1x1 restore to C, identity skip. Shape preserving."""

    def __init__(self, channels):
        super().__init__()
        if channels % 4:
            raise ConfigError(f"standard bottleneck needs C divisible by 4, got {channels}")
        mid = channels // 4
        self.channels = channels
        self.reduce = conv_bn(channels, mid, 1)
        self.conv = conv_bn(mid, mid, 3)
        self.restore = conv_bn(mid, channels, 1)

    def forward(self, x):
        out = F.elu(self.reduce(x))
        out = F.elu(self.conv(out))
        out = self.restore(out)
        return F.elu(out + x)


class ExpandedBottleneck(nn.Module):
    """1x1 to C/2, strided 3x3, 1x1 up to expansion*C; the skip is a strided 1x1 conv."""

    def __init__(self, channels, stride=2, expansion=4):
        super().__init__()
        if channels % 2:
            raise ConfigError(f"expanded bottleneck needs even C, got {channels}")
        if stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {stride}")
        mid = channels // 2
        self.out_channels = expansion * channels
        self.stride = stride
        self.reduce = conv_bn(channels, mid, 1)
        self.conv = conv_bn(mid, mid, 3, stride=stride)
        self.expand = conv_bn(mid, self.out_channels, 1)
        self.skip = conv_bn(channels, self.out_channels, 1, stride=stride)

    def forward(self, x):
        out = F.elu(self.reduce(x))
        out = F.elu(self.conv(out))
        out = self.expand(out)
        return F.elu(out + self.skip(x))


class NestedResNetEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, cfg.base_channels, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(cfg.base_channels),
            nn.ELU(),
            nn.MaxPool2d(3, stride=1, padding=1),
        )
        self.stage_channels = [cfg.base_channels]
        modules = []
        ch = cfg.base_channels
        for n_blocks in cfg.block_counts:
            ebn = ExpandedBottleneck(ch, stride=2, expansion=cfg.ebn_expansion)
            ch = ebn.out_channels
            modules.append(nn.Sequential(ebn, *[StandardBottleneck(ch) for _ in range(n_blocks - 1)]))
            self.stage_channels.append(ch)
        self.stages = nn.ModuleList(modules)

    def forward(self, x):
        if x.shape[-1] % 32 or x.shape[-2] % 32:
            raise ConfigError(f"image H, W must be divisible by 32, got {tuple(x.shape[-2:])}")
        outs = [self.stem(x)]
        for stage in self.stages:
            outs.append(stage(outs[-1]))
        return outs


class UpBlock(nn.Module):
    """Nearest x2 upsample, 3x3 conv halving channels, plus a global skip."""

    def __init__(self, channels, skip_channels):
        super().__init__()
        self.conv = conv_bn(channels, channels // 2, 3)
        self.skip = nn.Conv2d(skip_channels, channels // 2, 1)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.elu(self.conv(x))
        return x + F.adaptive_avg_pool2d(self.skip(skip), x.shape[-2:])


class NestedResNetDecoder(nn.Module):
    def __init__(self, cfg: ModelConfig, stage_channels):
        super().__init__()
        if cfg.decoder_stages > 4:
            raise ConfigError("decoder_stages > 4")
        ch = stage_channels[-1]
        blocks = []
        for k in range(cfg.decoder_stages):
            # skip sources run m3, m2, m1, stem
            blocks.append(UpBlock(ch, stage_channels[3 - k]))
            ch //= 2
        self.blocks = nn.ModuleList(blocks)
        self.out_features = ch

    def forward(self, stage_outputs):
        x = stage_outputs[-1]
        for k, block in enumerate(self.blocks):
            x = block(x, stage_outputs[3 - k])
        return torch.flatten(F.adaptive_avg_pool2d(x, 1), 1)


class ImageBranch(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.encoder = NestedResNetEncoder(cfg)
        self.decoder = NestedResNetDecoder(cfg, self.encoder.stage_channels)
        self.out_features = self.decoder.out_features

    def forward(self, images):
        return self.decoder(self.encoder(images))


class DepthBranch(nn.Module):
    out_features = 64

    def __init__(self):
        super().__init__()
        layers = []
        for cin, cout in [(1, 16), (16, 32), (32, 64), (64, 128)]:
            layers += [conv_bn(cin, cout, 3, stride=2), nn.ELU()]
        self.convs = nn.Sequential(*layers)
        self.mlp = nn.Sequential(nn.Linear(128, 128), nn.ELU(), nn.Linear(128, 64), nn.ELU())

    def forward(self, depth):
        x = self.convs(depth)
        return self.mlp(torch.flatten(F.adaptive_avg_pool2d(x, 1), 1))


class AxisBranch(nn.Module):
    out_features = 64

    def __init__(self, n_points=50):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(2 * n_points, 128), nn.ELU(),
            nn.Linear(128, 128), nn.ELU(),
            nn.Linear(128, 64), nn.ELU(),
        )

    def forward(self, points):
        return self.mlp(points)


class FusionHead(nn.Module):
    def __init__(self, feature_sizes, hidden_sizes):
        super().__init__()
        self.feature_sizes = tuple(feature_sizes)
        layers = []
        width = sum(feature_sizes)
        self.in_features = width
        for h in hidden_sizes:
            layers += [nn.Linear(width, h), nn.ELU()]
            width = h
        layers.append(nn.Linear(width, 2))
        self.mlp = nn.Sequential(*layers)

    def forward(self, features):
        if len(features) != len(self.feature_sizes):
            raise ContractError(
                f"fusion head expects {len(self.feature_sizes)} feature vectors, got {len(features)}"
            )
        for f, n in zip(features, self.feature_sizes):
            if f.shape[-1] != n:
                raise ContractError(f"feature length {f.shape[-1]} != expected {n}")
        return torch.sigmoid(self.mlp(torch.cat(features, dim=1)))


class SensingAreaNet(nn.Module):
    """Full model. Disabled branches are never constructed."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.image = ImageBranch(cfg) if "image" in cfg.branches else None
        self.depth = DepthBranch() if "depth" in cfg.branches else None
        self.axis = AxisBranch(cfg.n_axis_points) if "axis" in cfg.branches else None
        sizes = [b.out_features for b in (self.image, self.depth, self.axis) if b is not None]
        self.head = FusionHead(sizes, cfg.head_hidden_sizes)
        init_weights(self)

    def forward(self, images=None, depths=None, axis_points=None):
        feats = []
        if self.image is not None:
            feats.append(self.image(images))
        if self.depth is not None:
            feats.append(self.depth(depths))
        if self.axis is not None:
            feats.append(self.axis(axis_points))
        return self.head(feats)


def init_weights(model):
    for m in model.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    # zero the last BN scale of each residual branch so blocks start as (ELU of) identity
    for m in model.modules():
        if isinstance(m, StandardBottleneck):
            nn.init.zeros_(m.restore[1].weight)
        elif isinstance(m, ExpandedBottleneck):
            nn.init.zeros_(m.expand[1].weight)


def build_model(cfg: ModelConfig, seed=0):
    torch.manual_seed(seed)
    return SensingAreaNet(cfg)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())
