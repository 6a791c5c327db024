"""Mask-guided frame conditioning and concept decoupling.

Provided frames are packed into a zero-filled pixel tensor and encoded
to a condition latent; a binary mask at latent spatial resolution says
which frames are preserved (1) versus generated (0).  The mask folds
its temporal axis into ``s`` channels per latent frame so that noise
latent, condition latent, and mask concatenate to a 2c+s channel input
for the conditioned velocity model.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch

from .tensorops import ShapeError
from .vae import CausalVae


class TaskKind(str, Enum):
    IMAGE_TO_VIDEO = "image_to_video"
    FIRST_LAST = "first_last"
    CONTINUATION = "continuation"
    INTERPOLATION = "interpolation"


@dataclass(frozen=True)
class ConditionTask:
    """Which frame indices of the clip are provided as conditions."""

    kind: TaskKind
    frame_indices: tuple[int, ...]
    frame_count: int

    def __post_init__(self):
        idx = self.frame_indices
        if list(idx) != sorted(set(idx)):
            raise ValueError(f"frame indices must be sorted and unique, got {idx}")
        if idx and (idx[0] < 0 or idx[-1] >= self.frame_count):
            raise ValueError(
                f"frame indices {idx} out of range for {self.frame_count} frames"
            )
        last = self.frame_count - 1
        expected = {
            TaskKind.IMAGE_TO_VIDEO: lambda: idx == (0,),
            TaskKind.FIRST_LAST: lambda: idx == (0, last),
            TaskKind.CONTINUATION: lambda: len(idx) >= 1 and idx == tuple(range(len(idx))),
            TaskKind.INTERPOLATION: lambda: len(idx) >= 1,
        }[self.kind]
        if not expected():
            raise ValueError(f"indices {idx} do not fit task kind {self.kind.value}")


def build_guidance(task: ConditionTask, provided_frames: torch.Tensor,
                   height: int, width: int) -> torch.Tensor:
    """Scatter provided frames into (3, frame_count, H, W); zeros elsewhere."""
    n = len(task.frame_indices)
    if tuple(provided_frames.shape) != (3, n, height, width):
        raise ShapeError(
            f"provided frames must be (3, {n}, {height}, {width}), "
            f"got {tuple(provided_frames.shape)}"
        )
    out = torch.zeros(3, task.frame_count, height, width, dtype=provided_frames.dtype)
    for slot, frame_idx in enumerate(task.frame_indices):
        out[:, frame_idx] = provided_frames[:, slot]
    return out


def latent_frame_count(frame_count: int, s: int) -> int:
    if frame_count < 1 or (frame_count - 1) % s != 0:
        raise ShapeError(f"frame count {frame_count} must be 1 mod {s}")
    return 1 + (frame_count - 1) // s


def build_mask(task: ConditionTask, h: int, w: int, s: int = 4):
    """Binary mask M (1, frames, h, w) plus its folded form (s, t, h, w).

    Folding: the first latent frame takes mask frame 0 replicated s
    times; each later latent frame takes its s source mask frames in
    temporal order along the channel axis.
    """
    mask = torch.zeros(1, task.frame_count, h, w)
    for idx in task.frame_indices:
        mask[:, idx] = 1.0
    return mask, fold_mask(mask, s)


def fold_mask(mask: torch.Tensor, s: int = 4) -> torch.Tensor:
    if mask.dim() != 4 or mask.shape[0] != 1:
        raise ShapeError(f"mask must be (1, frames, h, w), got {tuple(mask.shape)}")
    frames = mask.shape[1]
    t_lat = latent_frame_count(frames, s)
    h, w = mask.shape[2], mask.shape[3]
    folded = torch.empty(s, t_lat, h, w, dtype=mask.dtype)
    folded[:, 0] = mask[0, 0]
    if t_lat > 1:
        rest = mask[0, 1:].view(t_lat - 1, s, h, w)
        folded[:, 1:] = rest.permute(1, 0, 2, 3)
    return folded


def unfold_mask(folded: torch.Tensor, s: int = 4) -> torch.Tensor:
    if folded.dim() != 4 or folded.shape[0] != s:
        raise ShapeError(f"folded mask must be ({s}, t, h, w), got {tuple(folded.shape)}")
    t_lat, h, w = folded.shape[1], folded.shape[2], folded.shape[3]
    frames = 1 + (t_lat - 1) * s
    mask = torch.empty(1, frames, h, w, dtype=folded.dtype)
    mask[0, 0] = folded[0, 0]
    if t_lat > 1:
        mask[0, 1:] = folded[:, 1:].permute(1, 0, 2, 3).reshape(frames - 1, h, w)
    return mask


def encode_condition(guidance: torch.Tensor, vae: CausalVae) -> torch.Tensor:
    """Deterministic condition latent: the posterior mean of the VAE."""
    _, mean, _ = vae.encode(guidance)
    return mean


def assemble_input(z_t: torch.Tensor, z_c: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Concatenate noise latent, condition latent, and folded mask.

    Channel count is 2c + s; the conditioned model maps the extra
    channels through a zero-initialized projection, so at initialization
    the assembled input predicts exactly what z_t alone would.
    """
    if z_t.shape != z_c.shape:
        raise ShapeError(f"z_t {tuple(z_t.shape)} != z_c {tuple(z_c.shape)}")
    if m.shape[1:] != z_t.shape[1:]:
        raise ShapeError(
            f"mask grid {tuple(m.shape[1:])} != latent grid {tuple(z_t.shape[1:])}"
        )
    return torch.cat([z_t, z_c, m.to(z_t.dtype)], dim=0)


def split_assembled(x: torch.Tensor, c: int, s: int):
    """Inverse of assemble_input: recover (z_t, z_c, m) slices."""
    if x.shape[0] != 2 * c + s:
        raise ShapeError(f"assembled input has {x.shape[0]} channels, expected {2 * c + s}")
    return x[:c], x[c:2 * c], x[2 * c:]


def concept_decouple(frames: torch.Tensor, masks: torch.Tensor):
    """Split into reactive (to modify) and inactive (to keep) frames.

    F_c = F * M holds everything editable, F_k = F * (1 - M) everything
    preserved; the two always sum back to F exactly.
    """
    if frames.shape[-3:] != masks.shape[-3:] or masks.shape[0] not in (1, frames.shape[0]):
        raise ShapeError(
            f"frames {tuple(frames.shape)} and masks {tuple(masks.shape)} misaligned"
        )
    reactive = frames * masks
    inactive = frames * (1.0 - masks)
    return reactive, inactive
