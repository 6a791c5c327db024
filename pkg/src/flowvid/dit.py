"""Diffusion transformer over patchified video latents.

Blocks run full (non-causal) spatio-temporal self-attention, embed the
text condition through cross-attention, and are modulated by six
(shift, scale, gate) vectors predicted from the time embedding by one
MLP shared across all blocks; each block only owns a bias added on top,
which is where the parameter saving of sharing comes from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tensorops import ShapeError, attention, rms_norm


@dataclass(frozen=True)
class DitConfig:
    depth: int = 4
    hidden: int = 64
    heads: int = 4
    in_channels: int = 16
    cond_channels: int = 0
    text_len: int = 512
    text_width: int = 32
    time_width: int = 64
    ffn_mult: int = 4
    positional: str = "rope3d"  # or "none"
    patch: tuple[int, int, int] = (1, 2, 2)

    def __post_init__(self):
        if self.hidden % self.heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.positional not in ("rope3d", "none"):
            raise ValueError(f"unknown positional scheme {self.positional!r}")
        if self.positional == "rope3d" and (self.hidden // self.heads) % 2 != 0:
            raise ValueError("rope3d needs an even head dimension")
        if self.patch != (1, 2, 2):
            raise ValueError(f"patch kernel is fixed at (1, 2, 2), got {self.patch}")
        if self.time_width % 2 != 0:
            raise ValueError(f"time_width must be even, got {self.time_width}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def token_count(latent_shape: tuple[int, ...]) -> int:
    """L = t * (h/2) * (w/2) after the (1, 2, 2) patchify kernel."""
    _, t, h, w = latent_shape
    if h % 2 != 0 or w % 2 != 0:
        raise ShapeError(f"latent spatial dims must be even, got ({h}, {w})")
    return t * (h // 2) * (w // 2)


def patchify(latent: torch.Tensor, weight: torch.Tensor,
             bias: torch.Tensor) -> torch.Tensor:
    """(B, c, t, h, w) -> (B, L, D) via the (1, 2, 2) stride-2 projection."""
    squeeze = latent.dim() == 4
    if squeeze:
        latent = latent.unsqueeze(0)
    if latent.dim() != 5:
        raise ShapeError(f"latent must be rank 4 or 5, got {latent.dim()}")
    if latent.shape[2] < 1 or latent.shape[3] % 2 or latent.shape[4] % 2:
        raise ShapeError(f"latent spatial dims must be even, got {tuple(latent.shape)}")
    tokens = F.conv3d(latent, weight, bias, stride=(1, 2, 2))
    tokens = tokens.flatten(2).transpose(1, 2)  # (B, L, D)
    return tokens.squeeze(0) if squeeze else tokens


def unpatchify(tokens: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor,
               latent_shape: tuple[int, ...]) -> torch.Tensor:
    """Inverse arrangement of patchify: tokens -> (B, c, t, h, w)."""
    squeeze = tokens.dim() == 2
    if squeeze:
        tokens = tokens.unsqueeze(0)
    c, t, h, w = latent_shape
    if tokens.shape[1] != t * (h // 2) * (w // 2):
        raise ShapeError(
            f"token count {tokens.shape[1]} inconsistent with latent shape {latent_shape}"
        )
    x = F.linear(tokens, weight, bias)  # (B, L, c*2*2)
    x = x.view(-1, t, h // 2, w // 2, c, 2, 2)
    x = x.permute(0, 4, 1, 2, 5, 3, 6).reshape(-1, c, t, h, w)
    return x.squeeze(0) if squeeze else x


def time_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of the diffusion time, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float().unsqueeze(-1) * freqs * 1000.0
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


@dataclass
class ModulationParams:
    """Six per-channel vectors; scale/gate act as (1 + value)."""

    shift_attn: torch.Tensor
    scale_attn: torch.Tensor
    gate_attn: torch.Tensor
    shift_mlp: torch.Tensor
    scale_mlp: torch.Tensor
    gate_mlp: torch.Tensor

    @classmethod
    def from_packed(cls, packed: torch.Tensor) -> "ModulationParams":
        if packed.shape[-2] != 6:
            raise ShapeError(f"expected 6 modulation groups, got {packed.shape[-2]}")
        return cls(*(packed[..., i, :] for i in range(6)))


def shared_adaln(time_emb: torch.Tensor, shared_weight: torch.Tensor,
                 block_bias: torch.Tensor) -> ModulationParams:
    """Modulation = SiLU-MLP(time embedding) + per-block bias.

    The MLP (one bias-free linear on SiLU features) is shared by every
    block; two blocks can only differ through their bias.
    """
    if block_bias.shape[-2:] != (6, shared_weight.shape[0] // 6):
        raise ShapeError(
            f"block bias {tuple(block_bias.shape)} incompatible with "
            f"shared output width {shared_weight.shape[0]}"
        )
    raw = F.linear(F.silu(time_emb), shared_weight)  # (B, 6*D)
    packed = raw.view(*raw.shape[:-1], 6, shared_weight.shape[0] // 6) + block_bias
    return ModulationParams.from_packed(packed)


def _rms_plain(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    return x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + eps)


def rope_angles(grid: tuple[int, int, int], head_dim: int) -> torch.Tensor:
    """Per-token rotation angles for the factorized 3D rotary encoding.

    The head dimension is split into three even chunks (time gets the
    remainder); each chunk rotates with its own axis coordinate.
    """
    t, h, w = grid
    d_sp = (head_dim // 3) & ~1
    d_t = head_dim - 2 * d_sp
    coords = torch.stack(torch.meshgrid(
        torch.arange(t, dtype=torch.float32),
        torch.arange(h, dtype=torch.float32),
        torch.arange(w, dtype=torch.float32), indexing="ij"), dim=-1).view(-1, 3)
    parts = []
    for axis, d_axis in ((0, d_t), (1, d_sp), (2, d_sp)):
        if d_axis == 0:
            continue
        freqs = 10000.0 ** (-torch.arange(d_axis // 2, dtype=torch.float32) / (d_axis // 2))
        parts.append(coords[:, axis:axis + 1] * freqs)
    return torch.cat(parts, dim=-1)  # (L, head_dim/2)


def apply_rope(x: torch.Tensor, angles: torch.Tensor) -> torch.Tensor:
    # x (..., L, head_dim); rotate consecutive pairs
    cos, sin = torch.cos(angles), torch.sin(angles)
    x0, x1 = x[..., 0::2], x[..., 1::2]
    out = torch.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], dim=-1)
    return out.flatten(-2)


class DitBlock(nn.Module):
    def __init__(self, config: DitConfig):
        super().__init__()
        d, wt = config.hidden, config.text_width
        self.heads = config.heads
        self.mod_bias = nn.Parameter(torch.zeros(6, d))
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)
        self.q_gain = nn.Parameter(torch.ones(d))
        self.k_gain = nn.Parameter(torch.ones(d))
        self.cross_q = nn.Linear(d, d)
        self.cross_k = nn.Linear(wt, d)
        self.cross_v = nn.Linear(wt, d)
        self.cross_o = nn.Linear(d, d)
        self.cross_q_gain = nn.Parameter(torch.ones(d))
        self.cross_k_gain = nn.Parameter(torch.ones(d))
        self.norm3_gain = nn.Parameter(torch.ones(d))
        self.ffn1 = nn.Linear(d, config.ffn_mult * d)
        self.ffn2 = nn.Linear(config.ffn_mult * d, d)

    def _heads(self, x):
        b, l, d = x.shape
        return x.view(b, l, self.heads, d // self.heads).transpose(1, 2)

    def _merge(self, x):
        b, hh, l, hd = x.shape
        return x.transpose(1, 2).reshape(b, l, hh * hd)

    def self_attention(self, x, angles):
        q = rms_norm(self.q(x), self.q_gain)
        k = rms_norm(self.k(x), self.k_gain)
        v = self.v(x)
        q, k, v = self._heads(q), self._heads(k), self._heads(v)
        if angles is not None:
            q, k = apply_rope(q, angles), apply_rope(k, angles)
        return self.o(self._merge(attention(q, k, v)))

    def cross_attention(self, x, context):
        q = rms_norm(self.cross_q(x), self.cross_q_gain)
        k = rms_norm(self.cross_k(context), self.cross_k_gain)
        v = self.cross_v(context)
        out = attention(self._heads(q), self._heads(k), self._heads(v))
        return self.cross_o(self._merge(out))

    def forward(self, x, context, mod: ModulationParams, angles=None,
                site_cache=None, step=None, block_idx=None):
        def gated(gate):
            return (1.0 + gate).unsqueeze(-2)

        h = _rms_plain(x) * (1.0 + mod.scale_attn.unsqueeze(-2)) + mod.shift_attn.unsqueeze(-2)
        sa = _cacheable(site_cache, step, (block_idx, "self"), lambda: self.self_attention(h, angles))
        x = x + gated(mod.gate_attn) * sa
        xc = rms_norm(x, self.norm3_gain)
        ca = _cacheable(site_cache, step, (block_idx, "cross"), lambda: self.cross_attention(xc, context))
        x = x + gated(mod.gate_attn) * ca
        h2 = _rms_plain(x) * (1.0 + mod.scale_mlp.unsqueeze(-2)) + mod.shift_mlp.unsqueeze(-2)
        x = x + gated(mod.gate_mlp) * self.ffn2(F.silu(self.ffn1(h2)))
        return x


def _cacheable(site_cache, step, site, fn):
    if site_cache is None:
        return fn()
    return site_cache.attention(step, site, fn)


class DitModel(nn.Module):
    """Velocity predictor u(x_t, context, t) over video latents.

    When ``cond_channels`` is set, inputs carry that many extra channels
    (condition latent + mask); they enter through a zero-initialized
    projection, so a freshly conditioned model predicts exactly what the
    unconditioned backbone would.
    """

    def __init__(self, config: DitConfig):
        super().__init__()
        self.config = config
        d, tw = config.hidden, config.time_width
        self.patch_conv = nn.Conv3d(config.in_channels, d, config.patch, stride=config.patch)
        if config.cond_channels > 0:
            self.cond_conv = nn.Conv3d(config.cond_channels, d, config.patch, stride=config.patch)
            nn.init.zeros_(self.cond_conv.weight)
            nn.init.zeros_(self.cond_conv.bias)
        else:
            self.cond_conv = None
        self.time_lin1 = nn.Linear(tw, tw)
        self.time_lin2 = nn.Linear(tw, tw)
        self.shared_mod = nn.Parameter(torch.zeros(6 * d, tw))
        nn.init.normal_(self.shared_mod, std=0.02)
        self.blocks = nn.ModuleList(DitBlock(config) for _ in range(config.depth))
        self.head_gain = nn.Parameter(torch.ones(d))
        self.head = nn.Linear(d, config.in_channels * 4)

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        return self.time_lin2(F.silu(self.time_lin1(time_features(t, self.config.time_width))))

    def forward(self, x, t, context, global_context=None, site_cache=None, step=None):
        cfg = self.config
        squeeze = x.dim() == 4
        if squeeze:
            x = x.unsqueeze(0)
        b = x.shape[0]
        want = cfg.in_channels + cfg.cond_channels
        if x.shape[1] != want:
            raise ShapeError(f"input has {x.shape[1]} channels, model expects {want}")
        if not torch.is_tensor(t):
            t = torch.full((b,), float(t))
        if t.dim() == 0:
            t = t.expand(b)
        if context.dim() == 2:
            context = context.unsqueeze(0).expand(b, -1, -1)
        if context.shape[-2] != cfg.text_len or context.shape[-1] != cfg.text_width:
            raise ShapeError(
                f"context must be ({cfg.text_len}, {cfg.text_width}), got {tuple(context.shape[-2:])}"
            )
        if global_context is not None:
            if global_context.shape[-1] != cfg.text_width:
                raise ShapeError(
                    f"global context width {global_context.shape[-1]} != {cfg.text_width}"
                )
            extra = global_context.view(-1, cfg.text_width)
            extra = extra.expand(b, -1).unsqueeze(1) if extra.shape[0] == 1 else extra.unsqueeze(1)
            context = torch.cat([context, extra], dim=1)

        lat_shape = (cfg.in_channels, x.shape[2], x.shape[3], x.shape[4])
        tokens = patchify(x[:, :cfg.in_channels], self.patch_conv.weight, self.patch_conv.bias)
        if self.cond_conv is not None:
            tokens = tokens + patchify(x[:, cfg.in_channels:], self.cond_conv.weight,
                                       self.cond_conv.bias)
        angles = None
        if cfg.positional == "rope3d":
            angles = rope_angles((x.shape[2], x.shape[3] // 2, x.shape[4] // 2), cfg.head_dim)
        t_emb = self.time_embedding(t)
        for i, block in enumerate(self.blocks):
            mod = shared_adaln(t_emb, self.shared_mod, block.mod_bias)
            tokens = block(tokens, context, mod, angles, site_cache, step, i)
        tokens = rms_norm(tokens, self.head_gain)
        out = unpatchify(tokens, self.head.weight, self.head.bias, lat_shape)
        return out.squeeze(0) if squeeze else out


def param_count(config: DitConfig, sharing_mode: str = "full_shared") -> int:
    """Exact parameter total under each modulation-sharing variant.

    full_shared is the instantiated layout: one bias-free modulation MLP
    plus a six-vector bias per block.  non_shared gives every block its
    own MLP.  half_shared keeps three of the six modulation groups on
    the shared MLP and lets each block predict the other three itself;
    every variant keeps the per-block bias vectors, so the counts differ
    only through MLP ownership and interpolate strictly for depth >= 2.
    """
    d, tw, wt, L = config.hidden, config.time_width, config.text_width, config.depth
    mlp_weight = tw * 6 * d          # the shared, bias-free linear
    block_bias = 6 * d
    if sharing_mode == "full_shared":
        modulation = mlp_weight + L * block_bias
    elif sharing_mode == "half_shared":
        modulation = mlp_weight // 2 + L * (mlp_weight // 2) + L * block_bias
    elif sharing_mode == "non_shared":
        modulation = L * mlp_weight + L * block_bias
    else:
        raise ValueError(f"unknown sharing mode {sharing_mode!r}")

    patch = d * config.in_channels * 4 + d
    if config.cond_channels > 0:
        patch += d * config.cond_channels * 4 + d
    time_mlp = 2 * (tw * tw + tw)
    self_attn = 4 * (d * d + d) + 2 * d
    cross_attn = 2 * (d * d + d) + 2 * (d * wt + d) + 2 * d + d
    ffn = config.ffn_mult * d * d + config.ffn_mult * d + d * config.ffn_mult * d + d
    per_block = self_attn + cross_attn + ffn
    head = d + config.in_channels * 4 * d + config.in_channels * 4
    return patch + time_mlp + L * per_block + modulation + head
