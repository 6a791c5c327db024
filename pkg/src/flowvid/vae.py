"""Causal 3D video autoencoder with chunk-streamed inference.

The encoder compresses (3, 1+T, H, W) pixels to (c, 1+T/s, H/p, W/p)
latents; the first frame is only spatially compressed, every later group
of ``s`` frames folds into one latent frame.  All temporal convolutions
are causal, so the model can run chunk-by-chunk with a small per-layer
frame cache and produce output identical to a whole-sequence pass: the
caches hold exactly the kt-1 trailing frames a stride-1 convolution
needs (one frame for stride-2 layers after the first chunk), and fresh
streams start from zero-filled history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tensorops import ShapeError, rms_norm


def _log2_exact(n: int, what: str) -> int:
    b = int(round(math.log2(n)))
    if n < 1 or 2**b != n:
        raise ValueError(f"{what} must be a power of two >= 1, got {n}")
    return b


@dataclass(frozen=True)
class VaeConfig:
    """Architecture knobs for the causal video autoencoder.

    ``temporal_kernel=1`` builds the purely spatial (image) twin used as
    the inflation source; everything else about the layout is identical
    so inflated weights line up one-to-one.
    """

    temporal_stride: int = 4
    spatial_stride: int = 8
    latent_channels: int = 16
    base_channels: int = 8
    temporal_down_stages: tuple[bool, ...] | None = None
    decoder_upsample_channel_halving: bool = True
    temporal_kernel: int = 3

    def __post_init__(self):
        if self.latent_channels < 1:
            raise ValueError(f"latent_channels must be >= 1, got {self.latent_channels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.temporal_kernel < 1:
            raise ValueError(f"temporal_kernel must be >= 1, got {self.temporal_kernel}")
        s_stages = _log2_exact(self.spatial_stride, "spatial_stride")
        t_stages = _log2_exact(self.temporal_stride, "temporal_stride")
        if t_stages > s_stages:
            raise ValueError(
                f"temporal_stride {self.temporal_stride} needs more stages than "
                f"spatial_stride {self.spatial_stride} provides"
            )
        if self.temporal_down_stages is not None:
            if len(self.temporal_down_stages) != s_stages:
                raise ValueError(
                    f"temporal_down_stages must list {s_stages} stages, "
                    f"got {len(self.temporal_down_stages)}"
                )
            if sum(self.temporal_down_stages) != t_stages:
                raise ValueError(
                    f"temporal_down_stages must mark exactly {t_stages} stages"
                )

    @property
    def num_down_stages(self) -> int:
        return _log2_exact(self.spatial_stride, "spatial_stride")

    def stage_plan(self) -> tuple[bool, ...]:
        """Per spatial stage: does it also downsample time (2x)?

        Defaults to pushing the temporal stages deepest, so early layers
        see full frame rate, mirroring a coarse-to-fine compressor.
        """
        if self.temporal_down_stages is not None:
            return tuple(self.temporal_down_stages)
        s_stages = self.num_down_stages
        t_stages = _log2_exact(self.temporal_stride, "temporal_stride")
        return tuple(i >= s_stages - t_stages for i in range(s_stages))

    def stage_dims(self) -> list[int]:
        # stem dim followed by one dim per stage, doubling each stage
        return [self.base_channels * 2**i for i in range(self.num_down_stages + 1)]


def validate_video_shape(config: VaeConfig, shape: tuple[int, ...]) -> None:
    if len(shape) != 4 or shape[0] != 3:
        raise ShapeError(f"video must be (3, frames, H, W), got {shape}")
    _, frames, h, w = shape
    s = config.temporal_stride
    if frames < 1 or (frames - 1) % s != 0:
        raise ShapeError(f"frame count {frames} must be 1 mod {s}")
    p = config.spatial_stride
    if h % p != 0 or w % p != 0:
        raise ShapeError(f"spatial size ({h}, {w}) must be divisible by {p}")


def latent_shape(config: VaeConfig, video_shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    """Latent shape for a pixel shape, by pure arithmetic (no compute)."""
    validate_video_shape(config, video_shape)
    _, frames, h, w = video_shape
    return (
        config.latent_channels,
        1 + (frames - 1) // config.temporal_stride,
        h // config.spatial_stride,
        w // config.spatial_stride,
    )


def video_shape(config: VaeConfig, lat_shape: tuple[int, ...]) -> tuple[int, int, int, int]:
    if len(lat_shape) != 4 or lat_shape[0] != config.latent_channels:
        raise ShapeError(
            f"latent must be ({config.latent_channels}, t, h, w), got {lat_shape}"
        )
    _, t, h, w = lat_shape
    if t < 1 or h < 1 or w < 1:
        raise ShapeError(f"latent dims must be >= 1, got {lat_shape}")
    return (3, 1 + (t - 1) * config.temporal_stride, h * config.spatial_stride,
            w * config.spatial_stride)


def plan_chunks(frame_count: int, temporal_stride: int = 4) -> list[int]:
    """Streaming chunk sizes: one leading frame, then stride-sized groups.

    Each chunk maps to exactly one latent frame, so the plan length is
    the latent frame count.
    """
    s = temporal_stride
    if frame_count < 1 or (frame_count - 1) % s != 0:
        raise ValueError(f"frame count {frame_count} must be 1 mod {s}")
    return [1] + [s] * ((frame_count - 1) // s)


class CausalConv3d(nn.Module):
    """Conv3d whose temporal receptive field covers only the past.

    A fresh pass implicitly prepends kt-1 zero frames; a streamed pass
    prepends the caller-held leftover frames instead.  Single-frame
    inputs with zero history skip the all-zero leading taps so that an
    inflated model reproduces its 2D source bit-for-bit.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int, int],
                 stride: tuple[int, int, int] = (1, 1, 1)):
        super().__init__()
        self.kernel = kernel
        self.stride = stride
        self.conv = nn.Conv3d(in_ch, out_ch, kernel, stride=stride)
        kt, kh, kw = kernel
        st, sh, sw = stride
        # stride-1 axes pad symmetrically; strided axes pad (0, k - s) so
        # even extents halve exactly
        self._spatial_pad = (
            (kw - 1) // 2 if sw == 1 else 0, (kw - 1) // 2 if sw == 1 else kw - sw,
            (kh - 1) // 2 if sh == 1 else 0, (kh - 1) // 2 if sh == 1 else kh - sh,
        )

    @property
    def is_stateful(self) -> bool:
        return self.kernel[0] > 1

    def forward(self, x, history=None, return_leftover: bool = False):
        # x: (B, C, T, H, W); history: leftover past frames or None (zeros)
        kt = self.kernel[0]
        st = self.stride[0]
        if kt == 1:
            out = self.conv(F.pad(x, self._spatial_pad))
            return (out, None) if return_leftover else out
        if history is None and x.shape[2] == 1:
            # single window over all-zero history: apply the live tap only
            out = F.conv3d(F.pad(x, self._spatial_pad), self.conv.weight[:, :, kt - 1:],
                           self.conv.bias, stride=(1,) + self.stride[1:])
            if not return_leftover:
                return out
            ext = torch.cat([x.new_zeros(x.shape[0], x.shape[1], kt - 1, *x.shape[3:]), x], dim=2)
            return out, ext[:, :, st:]
        if history is None:
            history = x.new_zeros(x.shape[0], x.shape[1], kt - 1, *x.shape[3:])
        ext = torch.cat([history, x], dim=2)
        n_ext = ext.shape[2]
        if n_ext < kt or (n_ext - kt) % st != 0:
            raise ShapeError(
                f"temporal extent {n_ext} misaligned for kernel {kt} stride {st}"
            )
        out = self.conv(F.pad(ext, self._spatial_pad))
        if not return_leftover:
            return out
        n_out = (n_ext - kt) // st + 1
        return out, ext[:, :, n_out * st:]


class DupTemporalUpsample(nn.Module):
    """Causal 2x temporal upsampling by frame duplication.

    The very first frame of a stream stays single (it decodes the
    image-like first latent frame); every later frame is emitted twice.
    """

    is_stateful = True
    kernel = (2, 1, 1)  # duplication factor, for cache bookkeeping only

    def forward(self, x, history=None, return_leftover: bool = False):
        seen_first = bool(history) if history is not None else False
        if seen_first:
            out = x.repeat_interleave(2, dim=2)
        else:
            out = torch.cat([x[:, :, :1], x[:, :, 1:].repeat_interleave(2, dim=2)], dim=2)
        return (out, True) if return_leftover else out


class ChannelRMSNorm(nn.Module):
    """Per-position RMS norm over channels; keeps temporal causality."""

    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.eps = eps

    def forward(self, x):
        return rms_norm(x, self.gain, eps=self.eps, dim=1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kt: int):
        super().__init__()
        self.norm1 = ChannelRMSNorm(in_ch)
        self.conv1 = CausalConv3d(in_ch, out_ch, (kt, 3, 3))
        self.norm2 = ChannelRMSNorm(out_ch)
        self.conv2 = CausalConv3d(out_ch, out_ch, (kt, 3, 3))
        self.skip = CausalConv3d(in_ch, out_ch, (1, 1, 1)) if in_ch != out_ch else None

    def forward(self, x, caches=None):
        h = _through(self.conv1, F.silu(self.norm1(x)), caches)
        h = _through(self.conv2, F.silu(self.norm2(h)), caches)
        return h + (self.skip(x) if self.skip is not None else x)


class SpatialDown(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = CausalConv3d(in_ch, out_ch, (1, 3, 3), stride=(1, 2, 2))

    def forward(self, x, caches=None):
        return self.conv(x)


class TemporalDown(nn.Module):
    def __init__(self, ch: int, kt: int):
        super().__init__()
        self.conv = CausalConv3d(ch, ch, (kt, 1, 1), stride=(2, 1, 1))

    def forward(self, x, caches=None):
        return _through(self.conv, x, caches)


class SpatialUp(nn.Module):
    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv = CausalConv3d(in_ch, out_ch, (1, 3, 3))

    def forward(self, x, caches=None):
        x = F.interpolate(x, scale_factor=(1.0, 2.0, 2.0), mode="nearest")
        return self.conv(x)


class TemporalUp(nn.Module):
    def __init__(self, ch: int, kt: int):
        super().__init__()
        self.dup = DupTemporalUpsample()
        self.conv = CausalConv3d(ch, ch, (kt, 1, 1))

    def forward(self, x, caches=None):
        return _through(self.conv, _through(self.dup, x, caches), caches)


def _through(layer, x, caches):
    """Route x through a possibly stateful layer, updating stream caches."""
    if caches is None or not layer.is_stateful:
        return layer(x)
    key = layer.cache_key
    y, leftover = layer(x, caches.get(key), return_leftover=True)
    caches[key] = leftover
    return y


class Encoder(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        kt = config.temporal_kernel
        dims = config.stage_dims()
        self.stem = CausalConv3d(3, dims[0], (kt, 3, 3))
        stages = []
        for i, t_down in enumerate(config.stage_plan()):
            stage = nn.ModuleDict({
                "res": ResBlock(dims[i], dims[i], kt),
                "sdown": SpatialDown(dims[i], dims[i + 1]),
            })
            if t_down:
                stage["tdown"] = TemporalDown(dims[i + 1], kt)
            stages.append(stage)
        self.stages = nn.ModuleList(stages)
        self.mid = ResBlock(dims[-1], dims[-1], kt)
        self.out_norm = ChannelRMSNorm(dims[-1])
        self.head = CausalConv3d(dims[-1], 2 * config.latent_channels, (kt, 3, 3))

    def forward(self, x, caches=None):
        x = _through(self.stem, x, caches)
        for stage in self.stages:
            x = stage["res"](x, caches)
            x = stage["sdown"](x, caches)
            if "tdown" in stage:
                x = stage["tdown"](x, caches)
        x = self.mid(x, caches)
        x = _through(self.head, F.silu(self.out_norm(x)), caches)
        mean, logvar = x.chunk(2, dim=1)
        return mean, logvar


class Decoder(nn.Module):
    def __init__(self, config: VaeConfig):
        super().__init__()
        kt = config.temporal_kernel
        dims = config.stage_dims()
        halve = config.decoder_upsample_channel_halving
        self.head = CausalConv3d(config.latent_channels, dims[-1], (kt, 3, 3))
        self.mid = ResBlock(dims[-1], dims[-1], kt)
        stages = []
        for i, t_down in reversed(list(enumerate(config.stage_plan()))):
            up_out = dims[i + 1] // 2 if halve else dims[i + 1]
            stage = nn.ModuleDict()
            if t_down:
                stage["tup"] = TemporalUp(dims[i + 1], kt)
            stage["sup"] = SpatialUp(dims[i + 1], up_out)
            stage["res"] = ResBlock(up_out, dims[i], kt)
            stages.append(stage)
        self.stages = nn.ModuleList(stages)
        self.out_norm = ChannelRMSNorm(dims[0])
        self.out_conv = CausalConv3d(dims[0], 3, (kt, 3, 3))

    def forward(self, z, caches=None):
        x = _through(self.head, z, caches)
        x = self.mid(x, caches)
        for stage in self.stages:
            if "tup" in stage:
                x = stage["tup"](x, caches)
            x = stage["sup"](x, caches)
            x = stage["res"](x, caches)
        return _through(self.out_conv, F.silu(self.out_norm(x)), caches)


class CausalVae(nn.Module):
    """Full model: encoder + decoder + streaming cache bookkeeping."""

    def __init__(self, config: VaeConfig):
        super().__init__()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)
        self._assign_cache_keys()

    def _assign_cache_keys(self):
        # cache slots are keyed by module path, so lookup order is irrelevant
        for prefix, root in (("enc", self.encoder), ("dec", self.decoder)):
            for name, mod in root.named_modules():
                if getattr(mod, "is_stateful", False):
                    mod.cache_key = f"{prefix}.{name}"

    def stateful_layers(self, which: str) -> list[tuple[str, nn.Module]]:
        root = self.encoder if which == "enc" else self.decoder
        return [(m.cache_key, m) for _, m in root.named_modules()
                if getattr(m, "is_stateful", False)]

    def encode(self, video: torch.Tensor):
        """(3, frames, H, W) -> (latent, mean, logvar); latent is the mean.

        Deterministic; drawing from the posterior is a separate explicit
        step (:func:`sample_posterior`).
        """
        validate_video_shape(self.config, tuple(video.shape))
        mean, logvar = self.encoder(video.unsqueeze(0))
        return mean.squeeze(0), mean.squeeze(0), logvar.squeeze(0)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.dim() != 4 or latent.shape[0] != self.config.latent_channels:
            raise ShapeError(
                f"latent must be ({self.config.latent_channels}, t, h, w), "
                f"got {tuple(latent.shape)}"
            )
        return self.decoder(latent.unsqueeze(0)).squeeze(0)


@dataclass
class ChunkStreamState:
    """Single-owner, strictly sequential state of one chunked stream."""

    config: VaeConfig
    caches: dict = field(default_factory=dict)
    frames_consumed: int = 0
    chunk_index: int = 0

    def cache_frame_counts(self, vae: CausalVae, which: str) -> dict[str, int]:
        counts = {}
        for key, mod in vae.stateful_layers(which):
            val = self.caches.get(key)
            if isinstance(val, torch.Tensor):
                counts[key] = val.shape[2]
        return counts

    def cache_numel(self) -> int:
        return sum(v.numel() for v in self.caches.values() if isinstance(v, torch.Tensor))


class StreamEncoder:
    """Chunk-wise encoder: one latent frame out per chunk in."""

    def __init__(self, vae: CausalVae):
        self.vae = vae
        self.state = ChunkStreamState(vae.config)

    def expected_chunk(self) -> int:
        return 1 if self.state.chunk_index == 0 else self.vae.config.temporal_stride

    def encode_chunk(self, chunk: torch.Tensor):
        if chunk.dim() != 4 or chunk.shape[0] != 3:
            raise ShapeError(f"chunk must be (3, n, H, W), got {tuple(chunk.shape)}")
        want = self.expected_chunk()
        if chunk.shape[1] != want:
            raise ShapeError(
                f"chunk {self.state.chunk_index} must carry {want} frame(s), "
                f"got {chunk.shape[1]}"
            )
        mean, logvar = self.vae.encoder(chunk.unsqueeze(0), self.state.caches)
        self.state.frames_consumed += chunk.shape[1]
        self.state.chunk_index += 1
        return mean.squeeze(0), logvar.squeeze(0)


class StreamDecoder:
    """Chunk-wise decoder: one latent frame in, 1 or s video frames out."""

    def __init__(self, vae: CausalVae):
        self.vae = vae
        self.state = ChunkStreamState(vae.config)

    def decode_chunk(self, latent_frame: torch.Tensor) -> torch.Tensor:
        c = self.vae.config.latent_channels
        if latent_frame.dim() != 4 or latent_frame.shape[0] != c or latent_frame.shape[1] != 1:
            raise ShapeError(
                f"latent chunk must be ({c}, 1, h, w), got {tuple(latent_frame.shape)}"
            )
        out = self.vae.decoder(latent_frame.unsqueeze(0), self.state.caches)
        self.state.frames_consumed += 1
        self.state.chunk_index += 1
        return out.squeeze(0)


def stream_encode(vae: CausalVae, video: torch.Tensor):
    """Encode a whole video through the chunked path (convenience)."""
    validate_video_shape(vae.config, tuple(video.shape))
    enc = StreamEncoder(vae)
    means, logvars = [], []
    pos = 0
    for size in plan_chunks(video.shape[1], vae.config.temporal_stride):
        m, lv = enc.encode_chunk(video[:, pos:pos + size])
        means.append(m)
        logvars.append(lv)
        pos += size
    return torch.cat(means, dim=1), torch.cat(logvars, dim=1)


def stream_decode(vae: CausalVae, latent: torch.Tensor) -> torch.Tensor:
    dec = StreamDecoder(vae)
    outs = [dec.decode_chunk(latent[:, i:i + 1]) for i in range(latent.shape[1])]
    return torch.cat(outs, dim=1)


def sample_posterior(mean: torch.Tensor, logvar: torch.Tensor,
                     generator: torch.Generator) -> torch.Tensor:
    """Draw z = mean + std * eps with caller-controlled randomness."""
    if mean.shape != logvar.shape:
        raise ShapeError(f"mean {tuple(mean.shape)} != logvar {tuple(logvar.shape)}")
    eps = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    return mean + torch.exp(0.5 * logvar) * eps


def vae_loss(recon: torch.Tensor, target: torch.Tensor, mean: torch.Tensor,
             logvar: torch.Tensor, l1_weight: float = 3.0,
             kl_weight: float = 3e-6) -> torch.Tensor:
    """Weighted L1 + KL objective (per-element mean KL reduction)."""
    if recon.shape != target.shape:
        raise ShapeError(f"recon {tuple(recon.shape)} != target {tuple(target.shape)}")
    if mean.shape != logvar.shape:
        raise ShapeError(f"mean {tuple(mean.shape)} != logvar {tuple(logvar.shape)}")
    l1 = (recon - target).abs().mean()
    kl = 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).mean()
    return l1_weight * l1 + kl_weight * kl


def make_image_vae(config: VaeConfig) -> CausalVae:
    """The spatial twin: same layout with all temporal kernels collapsed."""
    return CausalVae(_image_config(config))


def _image_config(config: VaeConfig) -> VaeConfig:
    return replace(config, temporal_kernel=1)


def inflate_2d_to_3d(weights_2d: dict[str, torch.Tensor], config: VaeConfig) -> dict[str, torch.Tensor]:
    """Lift image-twin weights into the video model.

    Each (out, in, 1, kh, kw) kernel lands on the last temporal tap of a
    zeroed (out, in, kt, kh, kw) kernel -- the unique zero-extension for
    which a single-frame input reproduces the 2D output exactly.
    """
    kt = config.temporal_kernel
    target = CausalVae(config)
    out = {}
    for name, ref in target.state_dict().items():
        if name not in weights_2d:
            raise ShapeError(f"missing 2D weight: {name}")
        w2 = weights_2d[name]
        if w2.shape == ref.shape:
            out[name] = w2.clone()
        elif w2.dim() == 5 and ref.dim() == 5 and w2.shape[2] == 1 \
                and ref.shape[2] == kt and w2.shape[:2] == ref.shape[:2] \
                and w2.shape[3:] == ref.shape[3:]:
            w3 = torch.zeros_like(ref)
            w3[:, :, kt - 1:] = w2
            out[name] = w3
        else:
            raise ShapeError(
                f"2D weight {name} {tuple(w2.shape)} incompatible with 3D {tuple(ref.shape)}"
            )
    return out


def inflate_image_vae(image_vae: CausalVae, config: VaeConfig) -> CausalVae:
    if _image_config(config) != image_vae.config:
        raise ValueError("image VAE layout does not match the target config")
    vae = CausalVae(config)
    vae.load_state_dict(inflate_2d_to_3d(image_vae.state_dict(), config))
    return vae
