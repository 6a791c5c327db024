"""Analytic cost model for distributed training of the video DiT.

FLOPs follow L*(alpha*b*s*h^2 + beta*b*s^2*h) and activations gamma*L*b*s*h;
at the million-token regime the quadratic attention term dominates and
memory scales only linearly, which is what the planner's layout search,
offload-vs-checkpoint advisor, and strategy-switch accounting quantify.
Layout: Ulysses (head-sharding all-to-all) innermost, Ring attention
around it, FSDP around the context group, plain DP outermost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace


@dataclass(frozen=True)
class ModelShape:
    layers: int
    batch: int
    seq_len: int
    hidden: int

    def __post_init__(self):
        if min(self.layers, self.batch, self.seq_len, self.hidden) < 1:
            raise ValueError(f"all shape fields must be >= 1, got {self}")


@dataclass(frozen=True)
class CostCoeffs:
    """alpha: linear-layer cost, beta: attention cost, gamma: act bytes.

    beta is 4 forward / 8 backward for non-causal attention; the
    backward pass of the linear stack costs twice the forward, hence the
    3x total multiplier on alpha.
    """

    alpha_fwd: float = 24.0
    beta_fwd: float = 4.0
    beta_bwd: float = 8.0
    gamma: float = 60.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")

    def alpha(self, training: bool) -> float:
        return 3.0 * self.alpha_fwd if training else self.alpha_fwd

    def beta(self, training: bool) -> float:
        return self.beta_fwd + self.beta_bwd if training else self.beta_fwd


@dataclass(frozen=True)
class ClusterSpec:
    total_gpus: int
    gpus_per_node: int
    intra_bw: float = 300e9       # bytes/s inside a node
    inter_bw: float = 12.5e9      # bytes/s per GPU across nodes
    mem_bytes: float = 80e9
    pcie_bw: float = 1.2e9        # sustained host-offload bandwidth per GPU
    gpu_flops: float = 312e12

    def __post_init__(self):
        if self.total_gpus < 1 or self.gpus_per_node < 1:
            raise ValueError("GPU counts must be >= 1")
        if self.total_gpus % self.gpus_per_node != 0:
            raise ValueError(
                f"total {self.total_gpus} GPUs not divisible by "
                f"{self.gpus_per_node} per node"
            )


@dataclass(frozen=True)
class CommConstants:
    """Volume multipliers of the communication model; all overridable."""

    elem_bytes: float = 2.0            # bf16 activations on the wire
    ulysses_collectives: float = 8.0   # q/k/v/out all-to-alls, fwd + bwd
    ring_bytes_factor: float = 2.0     # K and V block per ring hop
    ring_passes: float = 3.0           # one forward + two backward sweeps
    fsdp_passes: float = 3.0           # gather fwd, gather bwd, reduce-scatter
    fsdp_overlap: float = 1.0          # share of FSDP traffic hidden by compute
    bytes_per_param: float = 14.0      # mixed-precision weights + grads + Adam
    params_per_layer_factor: float = 12.0  # ~12 h^2 per transformer layer
    broadcast_cost: float = 1e-4       # per-broadcast share of one iteration
    offload_overlap_budget: float = 3.0


@dataclass(frozen=True)
class ParallelConfig:
    """(DP, FSDP, Ulysses, Ring); context size cp = ulysses * ring."""

    dp_outer: int
    fsdp: int
    ulysses: int = 1
    ring: int = 1

    def __post_init__(self):
        if min(self.dp_outer, self.fsdp, self.ulysses, self.ring) < 1:
            raise ValueError(f"all parallel degrees must be >= 1, got {self}")

    @property
    def cp(self) -> int:
        return self.ulysses * self.ring

    @property
    def global_batch_multiple(self) -> int:
        return self.dp_outer * (self.fsdp // self.cp)


@dataclass(frozen=True)
class Verdict:
    feasible: bool
    reasons: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class PlanReport:
    config: ParallelConfig
    compute_time: float
    comm_time: float
    comm_fraction: float
    step_time: float
    activation_bytes_per_gpu: float
    weight_bytes_per_gpu: float
    global_batch_multiple: int
    verdict: Verdict
    breakdown: dict = field(default_factory=dict, compare=False)


def dit_flops(shape: ModelShape, coeffs: CostCoeffs, training: bool = True) -> float:
    """L * (alpha*b*s*h^2 + beta*b*s^2*h) with pass-appropriate coefficients."""
    b, s, h = shape.batch, shape.seq_len, shape.hidden
    linear = coeffs.alpha(training) * b * s * h * h
    attn = coeffs.beta(training) * b * s * s * h
    return shape.layers * (linear + attn)


def attention_fraction(shape: ModelShape, coeffs: CostCoeffs, training: bool = True) -> float:
    """Share of DiT compute spent in attention: beta*s / (alpha*h + beta*s)."""
    a = coeffs.alpha(training) * shape.hidden
    bt = coeffs.beta(training) * shape.seq_len
    return bt / (a + bt)


def activation_memory(shape: ModelShape, gamma: float) -> float:
    """gamma * L * b * s * h bytes, before any sharding."""
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return gamma * shape.layers * shape.batch * shape.seq_len * shape.hidden


def model_param_count(shape: ModelShape, constants: CommConstants = CommConstants()) -> float:
    return constants.params_per_layer_factor * shape.layers * shape.hidden ** 2


def weight_bytes_per_gpu(shape: ModelShape, config: ParallelConfig,
                         constants: CommConstants = CommConstants()) -> float:
    return model_param_count(shape, constants) * constants.bytes_per_param / config.fsdp


def _group_bw(group_extent: int, cluster: ClusterSpec) -> float:
    """Link bandwidth available to a rank group spanning ``group_extent`` ranks."""
    return cluster.intra_bw if group_extent <= cluster.gpus_per_node else cluster.inter_bw


def comm_time(config: ParallelConfig, shape: ModelShape, cluster: ClusterSpec,
              coeffs: CostCoeffs = CostCoeffs(),
              constants: CommConstants = CommConstants()) -> dict:
    """Per-step communication model; returns the component breakdown.

    Ulysses: all-to-all of the sharded q/k/v/out activations inside the
    innermost group.  Ring: (ring-1) pipelined K/V block hops, counted
    only beyond what inner attention compute can hide.  FSDP: per-layer
    parameter gather / gradient scatter, scaled by the overlap knob.
    """
    b, s, h, L = shape.batch, shape.seq_len, shape.hidden, shape.layers
    cp = config.cp
    shard_elems = b * (s / cp) * h

    uly_time = 0.0
    if config.ulysses > 1:
        vol = (constants.ulysses_collectives * shard_elems * constants.elem_bytes
               * (config.ulysses - 1) / config.ulysses)
        uly_time = L * vol / _group_bw(config.ulysses, cluster)

    ring_raw = 0.0
    if config.ring > 1:
        vol = (constants.ring_passes * (config.ring - 1) * constants.ring_bytes_factor
               * shard_elems * constants.elem_bytes)
        ring_raw = L * vol / _group_bw(config.ulysses * config.ring, cluster)
    attn_compute = (shape.layers * coeffs.beta(True) * b * s * s * h / cp
                    / cluster.gpu_flops)
    ring_time = max(0.0, ring_raw - attn_compute)

    fsdp_raw = 0.0
    if config.fsdp > 1:
        vol = (constants.fsdp_passes * model_param_count(shape, constants) / shape.layers
               * constants.elem_bytes * (config.fsdp - 1) / config.fsdp)
        fsdp_raw = L * vol / _group_bw(config.fsdp, cluster)
    fsdp_time = fsdp_raw * (1.0 - constants.fsdp_overlap)

    return {
        "ulysses": uly_time,
        "ring_raw": ring_raw,
        "ring": ring_time,
        "fsdp_raw": fsdp_raw,
        "fsdp": fsdp_time,
        "total": uly_time + ring_time + fsdp_time,
    }


def compute_time(shape: ModelShape, cluster: ClusterSpec, cp: int,
                 coeffs: CostCoeffs = CostCoeffs()) -> float:
    return dit_flops(shape, coeffs, training=True) / cp / cluster.gpu_flops


def feasible(config: ParallelConfig, shape: ModelShape, cluster: ClusterSpec,
             gamma: float = 60.0,
             constants: CommConstants = CommConstants()) -> Verdict:
    reasons = []
    warnings = []
    if config.dp_outer * config.fsdp != cluster.total_gpus:
        reasons.append(
            f"dp_outer x fsdp = {config.dp_outer * config.fsdp} "
            f"!= {cluster.total_gpus} GPUs"
        )
    if config.fsdp % config.cp != 0:
        reasons.append(f"cp {config.cp} does not divide fsdp {config.fsdp}")
    act = activation_memory(shape, gamma) / config.cp
    weights = weight_bytes_per_gpu(shape, config, constants)
    if act + weights > cluster.mem_bytes:
        reasons.append(
            f"activation memory {act:.3e} + sharded weights {weights:.3e} "
            f"exceed {cluster.mem_bytes:.3e} bytes per GPU"
        )
    if config.ulysses > cluster.gpus_per_node:
        warnings.append(
            f"ulysses {config.ulysses} spans nodes "
            f"({cluster.gpus_per_node} GPUs per node); keep it inside one"
        )
    return Verdict(feasible=not reasons, reasons=tuple(reasons), warnings=tuple(warnings))


def plan_report(config: ParallelConfig, shape: ModelShape, cluster: ClusterSpec,
                coeffs: CostCoeffs = CostCoeffs(), gamma: float | None = None,
                constants: CommConstants = CommConstants()) -> PlanReport:
    gamma = coeffs.gamma if gamma is None else gamma
    comm = comm_time(config, shape, cluster, coeffs, constants)
    compute = compute_time(shape, cluster, config.cp, coeffs)
    step = compute + comm["total"]
    return PlanReport(
        config=config,
        compute_time=compute,
        comm_time=comm["total"],
        comm_fraction=comm["total"] / step if step > 0 else 0.0,
        step_time=step,
        activation_bytes_per_gpu=activation_memory(shape, gamma) / config.cp,
        weight_bytes_per_gpu=weight_bytes_per_gpu(shape, config, constants),
        global_batch_multiple=config.global_batch_multiple,
        verdict=feasible(config, shape, cluster, gamma, constants),
        breakdown=comm,
    )


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def enumerate_configs(total_gpus: int) -> list[ParallelConfig]:
    """Every divisor-consistent (dp, fsdp, ulysses, ring) combination."""
    out = []
    for dp in _divisors(total_gpus):
        fsdp = total_gpus // dp
        for cp in _divisors(fsdp):
            for ulysses in _divisors(cp):
                out.append(ParallelConfig(dp, fsdp, ulysses, cp // ulysses))
    return out


class NoFeasibleConfig(RuntimeError):
    def __init__(self, binding: str):
        super().__init__(f"no feasible configuration: {binding}")
        self.binding = binding


def search(shape: ModelShape, cluster: ClusterSpec, coeffs: CostCoeffs = CostCoeffs(),
           objective: str = "min_step_time",
           constants: CommConstants = CommConstants()) -> list[PlanReport]:
    """Rank every feasible layout; deterministic total order.

    min_step_time sorts by step latency; max_throughput by global tokens
    per second.  Ties break toward more data parallelism, then less
    context parallelism -- once memory and latency are satisfied, DP is
    the preferred scaling axis.
    """
    if objective not in ("min_step_time", "max_throughput"):
        raise ValueError(f"unknown objective {objective!r}")
    reports = [plan_report(cfg, shape, cluster, coeffs, constants=constants)
               for cfg in enumerate_configs(cluster.total_gpus)]
    ok = [r for r in reports if r.verdict.feasible]
    if not ok:
        reasons = [reason for r in reports for reason in r.verdict.reasons]
        binding = max(set(reasons), key=reasons.count) if reasons else "empty search space"
        raise NoFeasibleConfig(binding)

    def key(r: PlanReport):
        primary = (r.step_time if objective == "min_step_time"
                   else -r.global_batch_multiple * shape.batch * shape.seq_len / r.step_time)
        return (primary, -r.config.dp_outer, r.config.cp, r.config.ulysses)

    return sorted(ok, key=key)


@dataclass(frozen=True)
class OffloadAdvice:
    transfer_time: float
    compute_time: float
    ratio: float
    recommendation: str  # "offload" or "checkpoint"


def offload_vs_gc(shape: ModelShape, coeffs: CostCoeffs, cluster: ClusterSpec,
                  constants: CommConstants = CommConstants()) -> OffloadAdvice:
    """Can one layer's activation transfer hide behind layer compute?

    ratio = PCIe transfer time / per-layer compute time; offloading wins
    while the ratio stays within the overlap budget (a few layers of
    compute), checkpointing wins for layers whose memory dwarfs their
    compute.
    """
    act_layer = coeffs.gamma * shape.batch * shape.seq_len * shape.hidden
    transfer = act_layer / cluster.pcie_bw
    per_layer = dit_flops(shape, coeffs, training=True) / shape.layers / cluster.gpu_flops
    if per_layer == 0:
        return OffloadAdvice(transfer, per_layer, math.inf, "checkpoint")
    ratio = transfer / per_layer
    rec = "offload" if ratio <= constants.offload_overlap_budget else "checkpoint"
    return OffloadAdvice(transfer, per_layer, ratio, rec)


def strategy_switch_overhead(cp: int, encoder_time_fraction: float,
                             broadcast_cost: float = CommConstants.broadcast_cost) -> float:
    """Encoder share of one iteration after DP->CP strategy switching.

    Devices inside a CP group read distinct batches, then loop-broadcast
    them so CP sees identical inputs; the encoder share divides by cp at
    the price of cp-1 sequential broadcasts.
    """
    if cp < 1:
        raise ValueError(f"cp must be >= 1, got {cp}")
    if not 0.0 <= encoder_time_fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {encoder_time_fraction}")
    return encoder_time_fraction / cp + (cp - 1) * broadcast_cost


def scenario_from_dict(cfg: dict) -> tuple[ModelShape, CostCoeffs, ClusterSpec, CommConstants]:
    """Build planner inputs from a flat key=value scenario mapping."""
    def num(key, default=None):
        if key in cfg:
            return float(cfg[key])
        if default is None:
            raise KeyError(f"scenario is missing required key {key!r}")
        return default

    shape = ModelShape(
        layers=int(num("model.layers")), batch=int(num("model.batch")),
        seq_len=int(num("model.seq_len")), hidden=int(num("model.hidden")))
    coeffs = CostCoeffs(
        alpha_fwd=num("coeffs.alpha_fwd", CostCoeffs.alpha_fwd),
        beta_fwd=num("coeffs.beta_fwd", CostCoeffs.beta_fwd),
        beta_bwd=num("coeffs.beta_bwd", CostCoeffs.beta_bwd),
        gamma=num("coeffs.gamma", CostCoeffs.gamma))
    cluster = ClusterSpec(
        total_gpus=int(num("cluster.gpus")),
        gpus_per_node=int(num("cluster.gpus_per_node")),
        intra_bw=num("cluster.intra_bw", ClusterSpec.intra_bw),
        inter_bw=num("cluster.inter_bw", ClusterSpec.inter_bw),
        mem_bytes=num("cluster.mem_bytes", ClusterSpec.mem_bytes),
        pcie_bw=num("cluster.pcie_bw", ClusterSpec.pcie_bw),
        gpu_flops=num("cluster.gpu_flops", ClusterSpec.gpu_flops))
    constants = CommConstants(
        fsdp_overlap=num("constants.fsdp_overlap", CommConstants.fsdp_overlap),
        broadcast_cost=num("constants.broadcast_cost", CommConstants.broadcast_cost))
    return shape, coeffs, cluster, constants
