"""Step-scheduled reuse of attention and CFG outputs during sampling.

Two independent caches: attention sites inside blocks recompute only on
scheduled full steps and replay their stored output otherwise; the
unconditional CFG branch recomputes on its own schedule and is
otherwise reconstructed as conditional output plus the last observed
(uncond - cond) residual.  Degenerate schedules (interval 1) reproduce
the cache-free computation bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import flow
from .tensorops import ShapeError


@dataclass(frozen=True)
class CacheSchedule:
    """Which sampling steps run full attention / full CFG computes."""

    steps: int
    k_attn: int = 1
    k_cfg: int = 1
    head: int = 2
    tail: int = 2

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.k_attn < 1 or self.k_cfg < 1:
            raise ValueError("refresh intervals must be >= 1")
        if self.head < 1:
            raise ValueError("head must be >= 1 so step 0 is always a full compute")
        if self.tail < 0 or self.head + self.tail > self.steps:
            raise ValueError(
                f"head {self.head} + tail {self.tail} exceeds steps {self.steps}"
            )

    def _full(self, step: int, k: int) -> bool:
        if step < 0 or step >= self.steps:
            raise ValueError(f"step {step} outside schedule of {self.steps}")
        if step < self.head or step >= self.steps - self.tail:
            return True
        return (step - self.head) % k == 0

    def attn_full(self, step: int) -> bool:
        return self._full(step, self.k_attn)

    def cfg_full(self, step: int) -> bool:
        return self._full(step, self.k_cfg)


def plan_schedule(steps: int, k_attn: int, k_cfg: int, head: int = 2,
                  tail: int = 2) -> list[tuple[bool, bool]]:
    """Per-step (attention full?, cfg full?) flags."""
    sched = CacheSchedule(steps, k_attn, k_cfg, head, tail)
    return [(sched.attn_full(i), sched.cfg_full(i)) for i in range(steps)]


class AttentionSiteCache:
    """Stored attention outputs keyed by (block index, site name)."""

    def __init__(self, schedule: CacheSchedule):
        self.schedule = schedule
        self.store: dict = {}

    def attention(self, step: int, site, compute_fn):
        if step is None:
            raise ValueError("a cached forward pass needs its step index")
        if self.schedule.attn_full(step):
            out = compute_fn()
            self.store[site] = out.detach()
            return out
        if site not in self.store:
            raise RuntimeError(f"attention cache read before any write at site {site}")
        return self.store[site]


@dataclass
class CfgResidual:
    """Last fully-computed (uncond - cond) difference."""

    delta: torch.Tensor | None = None
    step: int | None = None


def cfg_cached_step(step: int, cond_output: torch.Tensor, residual: CfgResidual,
                    compute_uncond_fn, schedule: CacheSchedule):
    """Return (uncond_output, residual), recomputing only on full steps.

    Cached steps reconstruct uncond = cond + last residual; exact
    whenever the true (uncond - cond) gap is step-independent.
    """
    if schedule.cfg_full(step):
        uncond = compute_uncond_fn()
        if uncond.shape != cond_output.shape:
            raise ShapeError(
                f"uncond {tuple(uncond.shape)} != cond {tuple(cond_output.shape)}"
            )
        return uncond, CfgResidual(delta=(uncond - cond_output).detach(), step=step)
    if residual.delta is None:
        raise RuntimeError(f"CFG residual read before any full step (step {step})")
    return cond_output + residual.delta, residual


@dataclass(frozen=True)
class StepOps:
    """Operation counts of one model forward, split by cacheable share."""

    attention_ops: float
    other_ops: float
    cfg: bool = True  # whether sampling runs a second, unconditional forward

    def __post_init__(self):
        if self.attention_ops < 0 or self.other_ops <= 0:
            raise ValueError("op counts must be positive")


def op_savings(schedule: CacheSchedule, ops: StepOps) -> float:
    """(ops without caching) / (ops with caching) over the whole run.

    A cached-attention step skips the attention share of every forward
    that runs; a cached-CFG step skips the unconditional forward
    entirely.
    """
    forward = ops.attention_ops + ops.other_ops
    full_total = 0.0
    cached_total = 0.0
    for step in range(schedule.steps):
        n_forwards_full = 2 if ops.cfg else 1
        full_total += n_forwards_full * forward
        n_forwards = 1 + (1 if ops.cfg and schedule.cfg_full(step) else 0)
        per_forward = forward if schedule.attn_full(step) else ops.other_ops
        cached_total += n_forwards * per_forward
    return full_total / cached_total


def cached_euler_sample(model, text_context, shape, schedule: CacheSchedule,
                        guidance: flow.GuidanceConfig | None = None, seed: int = 0,
                        x0: torch.Tensor | None = None,
                        use_attention_cache: bool = True) -> torch.Tensor:
    """Euler sampling with both caches wired in.

    The model must accept (x, t, context, site_cache=..., step=...); the
    conditional and unconditional branches keep separate attention
    stores so cached replays never mix the two streams.
    """
    if x0 is None:
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(shape, generator=gen)
    else:
        x = x0.clone()
    attn_cond = AttentionSiteCache(schedule) if use_attention_cache else None
    attn_uncond = AttentionSiteCache(schedule) if use_attention_cache else None
    residual = CfgResidual()
    dt = 1.0 / schedule.steps
    for step in range(schedule.steps):
        t = step * dt
        v_cond = model(x, t, text_context, site_cache=attn_cond, step=step)
        if guidance is not None and guidance.scale != 1.0:
            if guidance.uncond_context is None:
                raise ValueError("guidance with scale != 1 needs an unconditional context")
            v_uncond, residual = cfg_cached_step(
                step, v_cond, residual,
                lambda: model(x, t, guidance.uncond_context,
                              site_cache=attn_uncond, step=step),
                schedule)
            v = flow.cfg_velocity(v_cond, v_uncond, guidance.scale)
        else:
            v = v_cond
        x = x + dt * v
    return x


def bench_rows(model, text_context, shape, steps: int, guidance,
               k_values: list[int], ops: StepOps, head: int = 2, tail: int = 2,
               seed: int = 0) -> list[dict]:
    """Grid over refresh intervals: final-sample error and op ratio."""
    baseline = cached_euler_sample(
        model, text_context, shape, CacheSchedule(steps, 1, 1, head, tail),
        guidance, seed=seed, use_attention_cache=False)
    rows = []
    for k_attn in k_values:
        for k_cfg in k_values:
            schedule = CacheSchedule(steps, k_attn, k_cfg, head, tail)
            sample = cached_euler_sample(model, text_context, shape, schedule,
                                         guidance, seed=seed)
            err = (sample - baseline).abs().max().item()
            rows.append({
                "k_attn": k_attn,
                "k_cfg": k_cfg,
                "error": err,
                "op_ratio": op_savings(schedule, ops),
            })
    return rows
