"""Multi-scale fusion network: per-modality encoders with max-pool pyramids,
attention-based fusion blocks at every scale, and a coarse-to-fine decoder.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import AttentionVariant, ImagePair, ShapeMismatchError, TrainConfig

LEAKY_SLOPE = 0.2


def init_parameters(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled uniform init of every conv/linear, reproducible from seed."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (
                m.weight.shape[2] * m.weight.shape[3] if m.weight.ndim == 4 else 1
            )
            bound = 1.0 / float(fan_in) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=gen)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions, each followed by a leaky rectifier."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), LEAKY_SLOPE)
        return F.leaky_relu(self.conv2(x), LEAKY_SLOPE)


def efficient_attention(x: torch.Tensor, w_q: nn.Linear, w_k: nn.Linear,
                        w_v: nn.Linear) -> torch.Tensor:
    """Linear-cost global attention over the tokens of a (B, C, h, w) map.

    Tokens are the h*w spatial positions. The key matrix is normalized with a
    softmax over the token axis, the C x C context K_norm^T V is formed once,
    and queries read from it: O(N * C^2), no N x N map is ever materialized.
    """
    b, c, h, w = x.shape
    tokens = x.flatten(2).transpose(1, 2)  # (B, N, C)
    q = w_q(tokens)
    k = w_k(tokens)
    v = w_v(tokens)
    k_norm = torch.softmax(k, dim=1)            # over tokens, per channel
    context = k_norm.transpose(1, 2) @ v        # (B, C, C)
    out = q @ context                           # (B, N, C)
    return out.transpose(1, 2).reshape(b, c, h, w)


def strengthen(feat: torch.Tensor, attn: torch.Tensor) -> torch.Tensor:
    """Residual reinforcement: feat + feat * attn (elementwise)."""
    if feat.shape != attn.shape:
        raise ShapeMismatchError(f"feature {feat.shape} vs attention {attn.shape}")
    return feat + feat * attn


class SelfAttentionGate(nn.Module):
    """Efficient self-attention producing the reinforcement map."""

    def __init__(self, channels: int, bias: bool = False):
        super().__init__()
        self.w_q = nn.Linear(channels, channels, bias=bias)
        self.w_k = nn.Linear(channels, channels, bias=bias)
        self.w_v = nn.Linear(channels, channels, bias=bias)

    def forward(self, x):
        return efficient_attention(x, self.w_q, self.w_k, self.w_v)


class ChannelGate(nn.Module):
    """Squeeze-and-excitation gate: global pool, bottleneck, per-channel sigmoid."""

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        y = F.adaptive_avg_pool2d(x, 1)
        y = F.leaky_relu(self.fc1(y), LEAKY_SLOPE)
        return torch.sigmoid(self.fc2(y)).expand_as(x)


class SpatialGate(nn.Module):
    """Per-pixel gate from pooled channel statistics through a 7x7 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, 7, padding=3)

    def gate_map(self, x):
        pooled = torch.cat(
            [x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1
        )
        return torch.sigmoid(self.conv(pooled))  # (B, 1, h, w)

    def forward(self, x):
        return self.gate_map(x).expand_as(x)


class IdentityGate(nn.Module):
    """Strengthening disabled: zero attention leaves features untouched."""

    def forward(self, x):
        return torch.zeros_like(x)


def make_variant(variant: AttentionVariant, channels: int) -> nn.Module:
    """Build the strengthening map generator for one fusion-block branch."""
    variant = AttentionVariant(variant)
    if variant is AttentionVariant.SLA:
        return SelfAttentionGate(channels)
    if variant is AttentionVariant.CHA:
        return ChannelGate(channels)
    if variant is AttentionVariant.SPA:
        return SpatialGate(channels)
    if variant is AttentionVariant.NONE:
        return IdentityGate()
    raise ValueError(f"unknown attention variant: {variant}")


class FuseBlock(nn.Module):
    """Reinforce each modality's features independently, then average."""

    def __init__(self, channels: int, variant: AttentionVariant):
        super().__init__()
        self.gate_ir = make_variant(variant, channels)
        self.gate_vis = make_variant(variant, channels)

    def forward(self, f_ir, f_vis):
        if f_ir.shape != f_vis.shape:
            raise ShapeMismatchError(f"ir {f_ir.shape} vs vis {f_vis.shape}")
        s_ir = strengthen(f_ir, self.gate_ir(f_ir))
        s_vis = strengthen(f_vis, self.gate_vis(f_vis))
        return (s_ir + s_vis) / 2


class Encoder(nn.Module):
    """One modality's feature pyramid: conv block per scale, 2x2 max-pool between."""

    def __init__(self, scales: int, base_channels: int):
        super().__init__()
        self.scales = scales
        blocks = []
        for s in range(scales):
            in_ch = 1 if s == 0 else base_channels * 2 ** (s - 1)
            blocks.append(ConvBlock(in_ch, base_channels * 2**s))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x) -> list[torch.Tensor]:
        h, w = x.shape[2:]
        div = 2 ** (self.scales - 1)
        if h % div or w % div:
            raise ShapeMismatchError(f"{h}x{w} not divisible by {div}")
        feats = []
        for s, block in enumerate(self.blocks):
            if s > 0:
                x = F.max_pool2d(x, 2)
            x = block(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    """Coarse-to-fine: upsample 2x, concat the finer fused map, conv block;
    a final 1x1 conv + sigmoid yields the single-channel fused image."""

    def __init__(self, scales: int, base_channels: int):
        super().__init__()
        blocks = []
        for s in range(scales - 2, -1, -1):
            in_ch = base_channels * 2 ** (s + 1) + base_channels * 2**s
            blocks.append(ConvBlock(in_ch, base_channels * 2**s))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(base_channels, 1, 1)

    def forward(self, fused: list[torch.Tensor]) -> torch.Tensor:
        x = fused[-1]
        for block, skip in zip(self.blocks, reversed(fused[:-1])):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
        return torch.sigmoid(self.head(x))


class FusionNet(nn.Module):
    """The full fusion network; parameter layout is a deterministic function
    of (scales, base_channels, attention_variant) and init of the seed."""

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.config = config
        self.encoder_ir = Encoder(config.scales, config.base_channels)
        self.encoder_vis = Encoder(config.scales, config.base_channels)
        self.fuse_blocks = nn.ModuleList(
            FuseBlock(config.base_channels * 2**s, config.attention_variant)
            for s in range(config.scales)
        )
        self.decoder = Decoder(config.scales, config.base_channels)
        init_parameters(self, config.seed)

    def forward(self, ir: torch.Tensor, vis: torch.Tensor) -> torch.Tensor:
        feats_ir = self.encoder_ir(ir)
        feats_vis = self.encoder_vis(vis)
        fused = [
            block(fi, fv)
            for block, fi, fv in zip(self.fuse_blocks, feats_ir, feats_vis)
        ]
        return self.decoder(fused)


def pair_to_tensors(pair: ImagePair, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """ImagePair -> ((1,1,H,W) ir, (1,1,H,W) vis luminance)."""
    ir = torch.from_numpy(np.ascontiguousarray(pair.ir)).to(dtype)[None, None]
    vis = torch.from_numpy(np.ascontiguousarray(pair.vis_luma)).to(dtype)[None, None]
    return ir, vis


def fuse_pair(model: FusionNet, pair: ImagePair) -> np.ndarray:
    """Run the network on one validated pair; returns the fused (H, W) image."""
    ir, vis = pair_to_tensors(pair, dtype=next(model.parameters()).dtype)
    with torch.no_grad():
        fused = model(ir, vis)
    return fused[0, 0].numpy()
