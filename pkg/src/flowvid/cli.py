"""Command-line surface: vae-check, train-toy, generate, stream, plan, cache-bench.

Every command is deterministic given (config file, seed): RNG comes only
from the seed, file formats are canonical, and torch runs single
threaded.  Exit codes: 0 ok, 2 no feasible plan, 3 I/O or format
problem, 4 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import cache, conditioning, dit, fileio, flow, planner, streamer, vae
from .fileio import FormatError
from .textembed import ToyTextEmbedder

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


class RunConfig:
    """Key=value config with typed getters; flags override file values."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    @classmethod
    def load(cls, path: str | None, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = fileio.read_config(path) if path else {}
        values.update(overrides or {})
        return cls(values)

    def get(self, key: str, default=None) -> str:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        return int(self.values.get(key, default))

    def get_float(self, key: str, default: float) -> float:
        return float(self.values.get(key, default))

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        if raw.lower() not in ("true", "false"):
            raise ValueError(f"{key} must be true/false, got {raw!r}")
        return raw.lower() == "true"

    def get_ints(self, key: str, default: str) -> list[int]:
        raw = self.values.get(key, default)
        return [int(tok) for tok in raw.split(",") if tok.strip()]


def vae_config_from(cfg: RunConfig) -> vae.VaeConfig:
    return vae.VaeConfig(
        temporal_stride=cfg.get_int("vae.temporal_stride", 4),
        spatial_stride=cfg.get_int("vae.spatial_stride", 8),
        latent_channels=cfg.get_int("vae.latent_channels", 16),
        base_channels=cfg.get_int("vae.base_channels", 8),
        decoder_upsample_channel_halving=cfg.get_bool("vae.decoder_halving", True),
    )


def dit_config_from(cfg: RunConfig) -> dit.DitConfig:
    return dit.DitConfig(
        depth=cfg.get_int("model.depth", 2),
        hidden=cfg.get_int("model.hidden", 32),
        heads=cfg.get_int("model.heads", 4),
        in_channels=cfg.get_int("model.in_channels", 4),
        cond_channels=cfg.get_int("model.cond_channels", 0),
        text_len=cfg.get_int("model.text_len", 512),
        text_width=cfg.get_int("model.text_width", 16),
        time_width=cfg.get_int("model.time_width", 32),
        positional=cfg.get("model.positional", "rope3d"),
    )


def latent_shape_from(cfg: RunConfig) -> tuple[int, int, int, int]:
    dims = cfg.get_ints("data.latent_shape", "4,1,4,4")
    if len(dims) != 4:
        raise ValueError(f"data.latent_shape must have 4 dims, got {dims}")
    return tuple(dims)


# ---------------------------------------------------------------- checkpoints

def _dit_header(config: dit.DitConfig, extra: dict | None = None) -> dict:
    header = {
        "model.depth": config.depth, "model.hidden": config.hidden,
        "model.heads": config.heads, "model.in_channels": config.in_channels,
        "model.cond_channels": config.cond_channels, "model.text_len": config.text_len,
        "model.text_width": config.text_width, "model.time_width": config.time_width,
        "model.ffn_mult": config.ffn_mult, "model.positional": config.positional,
    }
    header.update(extra or {})
    return header


def save_dit_checkpoint(path, model: dit.DitModel, trainer: flow.Trainer | None = None,
                        extra: dict | None = None):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if trainer is not None:
        params = list(model.parameters())
        for i, p in enumerate(params):
            state = trainer.optimizer.state.get(p)
            if not state:
                continue
            tensors[f"opt.{i}.exp_avg"] = state["exp_avg"]
            tensors[f"opt.{i}.exp_avg_sq"] = state["exp_avg_sq"]
            tensors[f"opt.{i}.step"] = torch.as_tensor(state["step"], dtype=torch.float32)
    fileio.save_checkpoint(path, fileio.DIT_MAGIC, _dit_header(model.config, extra),
                           tensors)


def load_dit_checkpoint(path) -> tuple[dit.DitModel, dict, dict]:
    header, tensors = fileio.load_checkpoint(path, fileio.DIT_MAGIC)
    config = dit.DitConfig(
        depth=int(header["model.depth"]), hidden=int(header["model.hidden"]),
        heads=int(header["model.heads"]), in_channels=int(header["model.in_channels"]),
        cond_channels=int(header["model.cond_channels"]),
        text_len=int(header["model.text_len"]), text_width=int(header["model.text_width"]),
        time_width=int(header["model.time_width"]), ffn_mult=int(header["model.ffn_mult"]),
        positional=header["model.positional"])
    model = dit.DitModel(config)
    model.load_state_dict({k[len("model."):]: v for k, v in tensors.items()
                           if k.startswith("model.")})
    opt_state = {k: v for k, v in tensors.items() if k.startswith("opt.")}
    return model, header, opt_state


def restore_trainer(trainer: flow.Trainer, opt_state: dict):
    params = list(trainer.model.parameters())
    for i, p in enumerate(params):
        key = f"opt.{i}.exp_avg"
        if key not in opt_state:
            continue
        trainer.optimizer.state[p] = {
            "step": torch.as_tensor(float(opt_state[f"opt.{i}.step"])),
            "exp_avg": opt_state[key].clone(),
            "exp_avg_sq": opt_state[f"opt.{i}.exp_avg_sq"].clone(),
        }


def save_vae_checkpoint(path, model: vae.CausalVae, extra: dict | None = None):
    c = model.config
    header = {
        "vae.temporal_stride": c.temporal_stride, "vae.spatial_stride": c.spatial_stride,
        "vae.latent_channels": c.latent_channels, "vae.base_channels": c.base_channels,
        "vae.decoder_halving": c.decoder_upsample_channel_halving,
        "vae.temporal_kernel": c.temporal_kernel,
        "vae.kl_reduction": "element_mean",
    }
    header.update(extra or {})
    fileio.save_checkpoint(path, fileio.VAE_MAGIC, header, dict(model.state_dict()))


def load_vae_checkpoint(path) -> tuple[vae.CausalVae, dict]:
    header, tensors = fileio.load_checkpoint(path, fileio.VAE_MAGIC)
    config = vae.VaeConfig(
        temporal_stride=int(header["vae.temporal_stride"]),
        spatial_stride=int(header["vae.spatial_stride"]),
        latent_channels=int(header["vae.latent_channels"]),
        base_channels=int(header["vae.base_channels"]),
        decoder_upsample_channel_halving=header["vae.decoder_halving"] == "true",
        temporal_kernel=int(header["vae.temporal_kernel"]))
    model = vae.CausalVae(config)
    model.load_state_dict(tensors)
    return model, header


# ------------------------------------------------------------------ toy data

class MixtureData:
    """Two-component Gaussian mixture over a fixed latent shape."""

    def __init__(self, shape, mu_a: float, mu_b: float, sigma: float, seed: int):
        self.shape = tuple(shape)
        self.mu_a, self.mu_b, self.sigma = mu_a, mu_b, sigma
        self.generator = torch.Generator().manual_seed(seed)

    def sample_data(self, n: int) -> torch.Tensor:
        pick = torch.rand(n, generator=self.generator) < 0.5
        mu = torch.where(pick, torch.tensor(self.mu_a), torch.tensor(self.mu_b))
        noise = torch.randn((n, *self.shape), generator=self.generator)
        return mu.view(n, *([1] * len(self.shape))) + self.sigma * noise

    def target_moments(self, flat_dim: int):
        mean = 0.5 * (self.mu_a + self.mu_b)
        spread = 0.25 * (self.mu_a - self.mu_b) ** 2
        target_mean = torch.full((flat_dim,), mean)
        target_cov = torch.full((flat_dim, flat_dim), spread)
        target_cov += self.sigma ** 2 * torch.eye(flat_dim)
        return target_mean, target_cov


def make_training_batches(cfg: RunConfig, shape, seed: int):
    """Yield (FlowSample list) batches per step, per the configured mode.

    'fixed' presamples one reusable buffer (a pure regression target the
    model can drive to ~zero loss); 'mixture' draws fresh noise/data
    every step (the distribution-matching objective with a nonzero
    floor).
    """
    mode = cfg.get("train.mode", "fixed")
    batch = cfg.get_int("train.batch", 16)
    data = MixtureData(shape, cfg.get_float("data.mu_a", 1.2),
                       cfg.get_float("data.mu_b", -0.4),
                       cfg.get_float("data.sigma", 0.2), seed=seed)
    tsampler = flow.TimestepSampler(seed=seed + 1)
    noise_gen = torch.Generator().manual_seed(seed + 2)

    def fresh(n):
        x1 = data.sample_data(n)
        x0 = torch.randn((n, *shape), generator=noise_gen)
        ts = tsampler.sample(n)
        return [flow.make_flow_sample(x0[i], x1[i], float(ts[i])) for i in range(n)]

    if mode == "fixed":
        buffer = fresh(cfg.get_int("train.buffer", 64))
        def batches(step):
            start = (step * batch) % len(buffer)
            idx = [(start + j) % len(buffer) for j in range(batch)]
            return [buffer[i] for i in idx]
    elif mode == "mixture":
        def batches(step):
            return fresh(batch)
    else:
        raise ValueError(f"unknown train.mode {mode!r}")
    return data, batches


# ------------------------------------------------------------------ commands

def cmd_vae_check(args) -> int:
    cfg = RunConfig.load(args.config)
    torch.manual_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    vcfg = vae_config_from(cfg)
    tolerance = cfg.get_float("check.tolerance", 1e-5)
    size = cfg.get_int("check.size", 32)

    fixture_paths = [p for p in (cfg.get("check.fixtures", "") or "").split(",") if p]
    if not fixture_paths:
        frames = cfg.get_ints("check.frame_counts", "5,17")
        for i, fc in enumerate(frames):
            gen = torch.Generator().manual_seed(args.seed + i)
            video = torch.rand((3, fc, size, size), generator=gen) * 2 - 1
            path = out_dir / f"fixture_{i}.wvt"
            fileio.write_tensor(path, video)
            fixture_paths.append(str(path))

    model = vae.CausalVae(vcfg)
    model.eval()
    failed = False
    for i, path in enumerate(fixture_paths):
        try:
            video = fileio.read_tensor(path)
        except (FormatError, FileNotFoundError, OSError) as exc:
            print(f"fixture {path}: {exc}")
            return EXIT_IO
        try:
            vae.validate_video_shape(vcfg, tuple(video.shape))
        except Exception as exc:
            print(f"fixture {path}: {exc}")
            return EXIT_IO
        with torch.no_grad():
            _, mean, logvar = model.encode(video)
            s_mean, s_logvar = vae.stream_encode(model, video)
            dec = model.decode(mean)
            s_dec = vae.stream_decode(model, mean)
        err = max((mean - s_mean).abs().max().item(),
                  (logvar - s_logvar).abs().max().item(),
                  (dec - s_dec).abs().max().item())
        status = "PASS" if err <= tolerance else "FAIL"
        failed |= status == "FAIL"
        print(f"case={i} frames={video.shape[1]} max_abs={err:.3e} {status}")
    return EXIT_OK if not failed else 1


def cmd_train_toy(args) -> int:
    cfg = RunConfig.load(args.config)
    torch.manual_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = latent_shape_from(cfg)
    steps = args.steps if args.steps is not None else cfg.get_int("train.steps", 400)
    threshold = cfg.get_float("train.threshold", 0.1)
    lr = cfg.get_float("train.lr", 1e-4)

    start_step = 0
    if args.resume:
        try:
            model, header, opt_state = load_dit_checkpoint(args.resume)
        except (FormatError, FileNotFoundError, OSError) as exc:
            print(f"resume checkpoint: {exc}")
            return EXIT_IO
        start_step = int(header.get("train.step", 0))
        trainer = flow.Trainer(model, lr=lr, weight_decay=cfg.get_float("train.weight_decay", 1e-3))
        restore_trainer(trainer, opt_state)
    else:
        mcfg = dit_config_from(cfg)
        if mcfg.in_channels != shape[0]:
            raise ValueError(
                f"model.in_channels {mcfg.in_channels} != latent channels {shape[0]}"
            )
        model = dit.DitModel(mcfg)
        trainer = flow.Trainer(model, lr=lr, weight_decay=cfg.get_float("train.weight_decay", 1e-3))

    embedder = ToyTextEmbedder(width=model.config.text_width,
                               context_len=model.config.text_len)
    context = embedder.embed(cfg.get("train.prompt", "toy latent video"))
    _, batches = make_training_batches(cfg, shape, args.seed)

    log_lines = []
    loss = float("nan")
    for step in range(start_step, start_step + steps):
        batch = batches(step)
        try:
            loss = trainer.train_step(batch, [context] * len(batch))
        except FloatingPointError as exc:
            print(f"diverged at step {step}: {exc}")
            return EXIT_DIVERGED
        t_mean = sum(s.t for s in batch) / len(batch)
        line = flow.format_train_log(step, loss, t_mean)
        log_lines.append(line)
        if args.verbose and (step % 50 == 0 or step == start_step + steps - 1):
            print(line)

    (out_dir / "train_log.txt").write_text("\n".join(log_lines) + "\n")
    save_dit_checkpoint(out_dir / "dit.ckpt", model, trainer,
                        extra={"train.step": start_step + steps,
                               "train.final_loss": f"{loss:.6f}",
                               "data.latent_shape": ",".join(str(d) for d in shape)})
    print(f"final_loss={loss:.6f} threshold={threshold}")
    return EXIT_OK if loss < threshold else 1


def _load_task(path: str, vcfg: vae.VaeConfig):
    task_cfg = fileio.read_config(path)
    kind = conditioning.TaskKind(task_cfg["task.kind"])
    indices = tuple(int(i) for i in task_cfg["task.frames"].split(","))
    frame_count = int(task_cfg["task.frame_count"])
    frame_files = [p for p in task_cfg["task.files"].split(",") if p]
    frames = torch.stack([fileio.read_tensor(p) for p in frame_files], dim=1)
    task = conditioning.ConditionTask(kind, indices, frame_count)
    return task, frames


def cmd_generate(args) -> int:
    cfg = RunConfig.load(args.config)
    torch.manual_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model, header, _ = load_dit_checkpoint(args.checkpoint)
    except (FormatError, FileNotFoundError, OSError) as exc:
        print(f"checkpoint: {exc}")
        return EXIT_IO
    model.eval()
    shape = tuple(int(d) for d in header["data.latent_shape"].split(","))
    steps = args.steps if args.steps is not None else cfg.get_int("sample.steps", 50)
    embedder = ToyTextEmbedder(width=model.config.text_width,
                               context_len=model.config.text_len)
    context = embedder.embed(args.prompt)
    guidance = flow.GuidanceConfig(scale=args.guidance,
                                   uncond_context=embedder.null_context())

    vae_model = None
    if args.vae_checkpoint:
        try:
            vae_model, _ = load_vae_checkpoint(args.vae_checkpoint)
        except (FormatError, FileNotFoundError, OSError) as exc:
            print(f"vae checkpoint: {exc}")
            return EXIT_IO
        vae_model.eval()

    if args.task:
        if vae_model is None:
            print("conditioned generation needs --vae-checkpoint for the condition latent")
            return EXIT_IO
        vcfg = vae_model.config
        try:
            task, frames = _load_task(args.task, vcfg)
        except (FormatError, FileNotFoundError, OSError, KeyError) as exc:
            print(f"task file: {exc}")
            return EXIT_IO
        height, width = frames.shape[-2], frames.shape[-1]
        guidance_frames = conditioning.build_guidance(task, frames, height, width)
        with torch.no_grad():
            z_c = conditioning.encode_condition(guidance_frames, vae_model)
        _, m = conditioning.build_mask(task, z_c.shape[-2], z_c.shape[-1],
                                       vcfg.temporal_stride)

        def velocity(x, t, ctx):
            return model(conditioning.assemble_input(x, z_c, m), t, ctx)

        lat_shape = tuple(z_c.shape)
    else:
        velocity = model
        lat_shape = shape

    with torch.no_grad():
        latent = flow.euler_sample(velocity, context, lat_shape, steps,
                                   guidance, seed=args.seed)
    latent_path = out_dir / "latent.wvt"
    fileio.write_tensor(latent_path, latent)
    print(f"latent={latent_path} shape={tuple(latent.shape)}")

    if vae_model is not None and latent.shape[0] == vae_model.config.latent_channels:
        with torch.no_grad():
            decoded = vae_model.decode(latent)
        for f in range(decoded.shape[1]):
            fileio.write_ppm(out_dir / f"frame_{f:04d}.ppm", decoded[:, f])
        print(f"frames={decoded.shape[1]}")
    return EXIT_OK


def cmd_stream(args) -> int:
    cfg = RunConfig.load(args.config)
    torch.manual_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        model, header, _ = load_dit_checkpoint(args.checkpoint)
    except (FormatError, FileNotFoundError, OSError) as exc:
        print(f"checkpoint: {exc}")
        return EXIT_IO
    model.eval()
    shape = tuple(int(d) for d in header["data.latent_shape"].split(","))
    token_shape = (shape[0], 1, shape[2], shape[3])
    window = cfg.get_int("stream.window", 4)
    horizon = cfg.get_int("stream.horizon", 2)
    embedder = ToyTextEmbedder(width=model.config.text_width,
                               context_len=model.config.text_len)
    context = embedder.embed(args.prompt)

    def velocity(token, t, context_tokens):
        x = token if not context_tokens else torch.cat([*context_tokens, token], dim=1)
        with torch.no_grad():
            v = model(x, t, context)
        return v[:, -token.shape[1]:]

    queue = streamer.init_queue(
        streamer.StreamConfig(window=window, token_shape=token_shape,
                              context_horizon=horizon, seed=args.seed), velocity)
    manifest = []
    emitted = 0
    step = 0
    while emitted < args.emit:
        token, _ = queue.step()
        step += 1
        if token is None:
            continue
        path = out_dir / f"token_{emitted:05d}.wvt"
        fileio.write_tensor(path, token)
        hist = " ".join(str(l) for l in queue.levels())
        manifest.append(f"step={step} emitted={path} level_histogram={hist}")
        emitted += 1
    (out_dir / "manifest.txt").write_text("\n".join(manifest) + "\n")
    print(f"emitted={emitted} steps={step} warmup={window}")
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = RunConfig.load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        shape, coeffs, cluster, constants = planner.scenario_from_dict(cfg.values)
    except (KeyError, ValueError) as exc:
        print(f"scenario: {exc}")
        return EXIT_IO
    try:
        reports = planner.search(shape, cluster, coeffs, objective=args.objective,
                                 constants=constants)
    except planner.NoFeasibleConfig as exc:
        print(exc)
        return EXIT_INFEASIBLE
    header = (f"{'dp':>4} {'fsdp':>5} {'uly':>4} {'ring':>4} {'gbm':>4} "
              f"{'step_s':>10} {'comm_frac':>9} {'act_GB':>8}")
    lines = [header]
    for r in reports:
        c = r.config
        lines.append(f"{c.dp_outer:>4} {c.fsdp:>5} {c.ulysses:>4} {c.ring:>4} "
                     f"{r.global_batch_multiple:>4} {r.step_time:>10.4f} "
                     f"{r.comm_fraction:>9.4f} {r.activation_bytes_per_gpu / 1e9:>8.2f}")
    table = "\n".join(lines)
    print(table)
    (out_dir / "plan.txt").write_text(table + "\n")
    report_lines = []
    for r in reports:
        c = r.config
        report_lines.append(
            f"dp={c.dp_outer} fsdp={c.fsdp} ulysses={c.ulysses} ring={c.ring} "
            f"gbm={r.global_batch_multiple} step_time={r.step_time:.6e} "
            f"comm_fraction={r.comm_fraction:.6e} "
            f"act_bytes={r.activation_bytes_per_gpu:.6e} "
            f"weight_bytes={r.weight_bytes_per_gpu:.6e}")
    (out_dir / "plan_report.txt").write_text("\n".join(report_lines) + "\n")
    return EXIT_OK


def cmd_cache_bench(args) -> int:
    cfg = RunConfig.load(args.config)
    torch.manual_seed(args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        try:
            model, header, _ = load_dit_checkpoint(args.checkpoint)
        except (FormatError, FileNotFoundError, OSError) as exc:
            print(f"checkpoint: {exc}")
            return EXIT_IO
        shape = tuple(int(d) for d in header["data.latent_shape"].split(","))
    else:
        model = dit.DitModel(dit_config_from(cfg))
        shape = latent_shape_from(cfg)
    model.eval()
    embedder = ToyTextEmbedder(width=model.config.text_width,
                               context_len=model.config.text_len)
    context = embedder.embed(args.prompt)
    guidance = flow.GuidanceConfig(scale=cfg.get_float("sample.guidance", 2.0),
                                   uncond_context=embedder.null_context())
    steps = cfg.get_int("sample.steps", 12)
    k_values = cfg.get_ints("bench.k_values", "1,2,4")
    ops = cache.StepOps(attention_ops=cfg.get_float("bench.attention_ops", 0.95),
                        other_ops=cfg.get_float("bench.other_ops", 0.05))
    with torch.no_grad():
        rows = cache.bench_rows(model, context, shape, steps, guidance, k_values, ops,
                                head=cfg.get_int("bench.head", 2),
                                tail=cfg.get_int("bench.tail", 2), seed=args.seed)
    lines = [f"{'k_attn':>6} {'k_cfg':>6} {'error':>12} {'op_ratio':>9}"]
    for row in rows:
        lines.append(f"{row['k_attn']:>6} {row['k_cfg']:>6} "
                     f"{row['error']:>12.3e} {row['op_ratio']:>9.4f}")
    table = "\n".join(lines)
    print(table)
    (out_dir / "cache_bench.txt").write_text(table + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- entrypoint

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowvid",
                                     description="desk-scale video diffusion engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="out", help="output directory")
        return p

    common(sub.add_parser("vae-check", help="full-vs-streamed VAE equivalence"))

    p = common(sub.add_parser("train-toy", help="train the toy velocity model"))
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--verbose", action="store_true")

    p = common(sub.add_parser("generate", help="sample latents from a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vae-checkpoint", default=None)
    p.add_argument("--task", default=None, help="frame-conditioning task file")
    p.add_argument("--prompt", default="toy latent video")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--guidance", type=float, default=1.0)

    p = common(sub.add_parser("stream", help="sliding-window streaming generation"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--emit", type=int, default=8)
    p.add_argument("--prompt", default="toy latent video")

    p = common(sub.add_parser("plan", help="parallel layout search"))
    p.add_argument("--objective", default="min_step_time",
                   choices=["min_step_time", "max_throughput"])

    p = common(sub.add_parser("cache-bench", help="diffusion cache accuracy/savings"))
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--prompt", default="toy latent video")

    return parser


COMMANDS = {
    "vae-check": cmd_vae_check,
    "train-toy": cmd_train_toy,
    "generate": cmd_generate,
    "stream": cmd_stream,
    "plan": cmd_plan,
    "cache-bench": cmd_cache_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(1)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
