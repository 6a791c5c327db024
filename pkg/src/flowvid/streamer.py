"""Sliding-window streaming generation over a denoise queue.

A window of w token slots holds tokens at strictly increasing noise
levels (level 0 = clean, level w = fresh noise).  Every step advances
each slot one level toward clean with its own solver update, dequeues
the now-clean leftmost token, and appends fresh noise on the right, so
after a w-step warmup the queue emits one finished token per step
forever.  Dequeued tokens are cached at level 0 and can re-enter the
window as frozen context for continuity.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import torch

from .tensorops import ShapeError


@dataclass(frozen=True)
class StreamConfig:
    """Window geometry; by default the window spans the solver steps."""

    window: int = 8
    token_shape: tuple[int, ...] = (4,)
    context_horizon: int = 4
    joint: bool = False  # one model call per window instead of per slot
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.context_horizon < 0:
            raise ValueError(f"context_horizon must be >= 0, got {self.context_horizon}")


@dataclass
class QueueSlot:
    token: torch.Tensor
    level: int  # 0 = clean .. window = pure noise
    entered_at: int  # step index at which this token was enqueued


def level_time(level: int, window: int) -> float:
    """Noise level -> flow-matching time on the straight path."""
    return 1.0 - level / window


class DenoiseQueue:
    """The sliding window; single-owner, strictly sequential."""

    def __init__(self, config: StreamConfig, model, context=None):
        self.config = config
        self.model = model
        self.context = context
        self.generator = torch.Generator().manual_seed(config.seed)
        self.step_index = 0
        self.warmup_remaining = config.window
        self.clean_cache: deque[torch.Tensor] = deque(maxlen=config.context_horizon)
        # leftmost slot carries the lowest level; fill back-to-front so the
        # first dequeue happens after exactly one pass over all levels
        self.slots: list[QueueSlot] = [
            QueueSlot(self._fresh_noise(), level=i + 1, entered_at=i - config.window)
            for i in range(config.window)
        ]

    def _fresh_noise(self) -> torch.Tensor:
        return torch.randn(self.config.token_shape, generator=self.generator)

    def levels(self) -> list[int]:
        return [slot.level for slot in self.slots]

    def _context_tokens(self) -> list[torch.Tensor]:
        return list(self.clean_cache)

    def step(self):
        """Advance every slot one level; emit the clean leftmost token.

        Returns (emitted_token | None, entered_at_step | None): None
        during warmup, where dequeued tokens are discarded.
        """
        w = self.config.window
        dt = 1.0 / w
        ctx = self._context_tokens()
        if self.config.joint:
            stacked = torch.stack([slot.token for slot in self.slots])
            times = torch.tensor([level_time(slot.level, w) for slot in self.slots])
            velocities = self.model(stacked, times, ctx)
            if velocities.shape != stacked.shape:
                raise ShapeError(
                    f"joint model returned {tuple(velocities.shape)}, "
                    f"expected {tuple(stacked.shape)}"
                )
            for slot, v in zip(self.slots, velocities):
                slot.token = slot.token + dt * v
                slot.level -= 1
        else:
            for slot in self.slots:
                t = level_time(slot.level, w)
                v = self.model(slot.token, t, ctx)
                if v.shape != slot.token.shape:
                    raise ShapeError(
                        f"model returned {tuple(v.shape)}, expected {tuple(slot.token.shape)}"
                    )
                slot.token = slot.token + dt * v
                slot.level -= 1

        head = self.slots.pop(0)
        assert head.level == 0, "leftmost slot must be clean after its final update"
        self.slots.append(QueueSlot(self._fresh_noise(), level=w,
                                    entered_at=self.step_index))
        self.step_index += 1

        if self.warmup_remaining > 0:
            self.warmup_remaining -= 1
            return None, None
        self.clean_cache.append(head.token)
        return head.token, head.entered_at

    def reintroduce_cached(self, cached_tokens: list[torch.Tensor]):
        """Add already-clean tokens as frozen attention context.

        They participate in subsequent window context without being
        re-denoised or re-emitted; rejects anything not token-shaped.
        """
        for tok in cached_tokens:
            if tuple(tok.shape) != self.config.token_shape:
                raise ShapeError(
                    f"cached token shape {tuple(tok.shape)} != {self.config.token_shape}"
                )
            self.clean_cache.append(tok)

    def state_numel(self) -> int:
        """Total floats held by the queue; bounded regardless of step count."""
        return (sum(s.token.numel() for s in self.slots)
                + sum(t.numel() for t in self.clean_cache))


def init_queue(config: StreamConfig, model, context=None) -> DenoiseQueue:
    return DenoiseQueue(config, model, context)


def make_training_window(token_sequence: torch.Tensor, window: int):
    """Split a 2w-token sequence into inputs and the warmup loss mask.

    The first w tokens only warm the model up; the loss mask is zero
    there and one on the last w tokens.
    """
    if token_sequence.shape[0] != 2 * window:
        raise ShapeError(
            f"training window needs exactly {2 * window} tokens, "
            f"got {token_sequence.shape[0]}"
        )
    mask = torch.zeros(2 * window)
    mask[window:] = 1.0
    return token_sequence, mask
