"""Dense-tensor substrate shared by every other module.

All operations are pure functions over float32 torch tensors with
explicit, strictly-checked shapes.  No implicit broadcasting beyond
bias addition; shape mismatches raise ShapeError naming the offending
axis so callers can surface precise diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F


class ShapeError(ValueError):
    """Raised when tensor shapes violate an operation's contract."""


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 3D convolution.

    ``causal=True`` pads the temporal axis with ``kt - 1`` zero frames on
    the past side only, so output frame t never sees input frames > t.
    Spatial padding is not part of the spec; callers pad spatially before
    invoking :func:`conv3d`.
    """

    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    in_channels: int = 1
    out_channels: int = 1
    causal: bool = False

    def __post_init__(self):
        if any(k < 1 for k in self.kernel):
            raise ShapeError(f"kernel sizes must be >= 1, got {self.kernel}")
        if any(s < 1 for s in self.stride):
            raise ShapeError(f"strides must be >= 1, got {self.stride}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError(
                f"channel counts must be >= 1, got in={self.in_channels} out={self.out_channels}"
            )


def conv3d(x: torch.Tensor, spec: ConvSpec, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """3D convolution over an unbatched (C, T, H, W) tensor.

    Output sizes follow standard (valid) convolution arithmetic on the
    padded input; only causal specs receive implicit (past-side) padding.
    """
    if x.dim() != 4:
        raise ShapeError(f"expected (C, T, H, W) input, got rank {x.dim()}")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(
            f"input channel axis is {x.shape[0]}, spec expects {spec.in_channels}"
        )
    kt, kh, kw = spec.kernel
    expected_w = (spec.out_channels, spec.in_channels, kt, kh, kw)
    if tuple(weight.shape) != expected_w:
        raise ShapeError(f"weight shape {tuple(weight.shape)} != {expected_w}")
    if tuple(bias.shape) != (spec.out_channels,):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({spec.out_channels},)")
    xb = x.unsqueeze(0)
    if spec.causal and kt > 1:
        xb = F.pad(xb, (0, 0, 0, 0, kt - 1, 0))
    t_in, h_in, w_in = xb.shape[2], xb.shape[3], xb.shape[4]
    if t_in < kt:
        raise ShapeError(f"temporal extent {t_in} smaller than kernel {kt}")
    if h_in < kh or w_in < kw:
        raise ShapeError(f"spatial extent ({h_in}, {w_in}) smaller than kernel ({kh}, {kw})")
    out = F.conv3d(xb, weight, bias, stride=spec.stride)
    return out.squeeze(0)


def rms_norm(x: torch.Tensor, gain: torch.Tensor, eps: float = 1e-6, dim: int = -1) -> torch.Tensor:
    """RMS normalization along one axis; no cross-position statistics.

    y_c = x_c / sqrt(mean_c(x^2) + eps) * gain_c over the ``dim`` axis.
    Per-position normalization is what keeps temporally causal stacks
    causal, unlike GroupNorm-style whole-clip statistics.
    """
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    if gain.dim() != 1 or gain.shape[0] != x.shape[dim]:
        raise ShapeError(
            f"gain length {tuple(gain.shape)} does not match axis {dim} of {tuple(x.shape)}"
        )
    ms = x.pow(2).mean(dim=dim, keepdim=True)
    shape = [1] * x.dim()
    shape[dim] = gain.shape[0]
    return x * torch.rsqrt(ms + eps) * gain.view(shape)


def attention_weights(q: torch.Tensor, k: torch.Tensor) -> torch.Tensor:
    """Row-stochastic softmax(q k^T / sqrt(d)); rows sum to 1."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"head dims differ: q {q.shape[-1]} vs k {k.shape[-1]}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    return torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention; q (..., L, d), k/v (..., S, d)."""
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key count {k.shape[-2]} != value count {v.shape[-2]}")
    return attention_weights(q, k) @ v


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Affine map x @ weight^T + bias with weight (out, in)."""
    if weight.dim() != 2:
        raise ShapeError(f"weight must be rank 2, got {weight.dim()}")
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(
            f"input feature axis {x.shape[-1]} != weight in-features {weight.shape[1]}"
        )
    if bias is not None and tuple(bias.shape) != (weight.shape[0],):
        raise ShapeError(f"bias shape {tuple(bias.shape)} != ({weight.shape[0]},)")
    return F.linear(x, weight, bias)
