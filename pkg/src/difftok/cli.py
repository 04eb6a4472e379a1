"""Command-line interface.

Commands: gen-data, train, tokenize, detokenize, evaluate, verify, sweep.
Exit codes: 0 success, 2 configuration error, 3 corrupt token stream,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from . import datasets, sweep as sweep_mod, verify
from .errors import (ConfigError, CorruptStreamError, DomainError,
                     ScheduleInfeasibleError, VerificationError)
from .metrics import mse, psnr, ssim
from .mixture import AnalyticBackend, GaussianMixture
from .schedules import ModelFamily
from .streamio import decode_stream, encode_stream
from .tokenizer import (DEFAULT_FINAL_SAMPLE_STEPS, InitStrategy,
                        TokenizerConfig, detokenize, tokenize)
from .training import ToyBackend, ToyDenoiser, TrainConfig, train_epsilon, train_flow

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORRUPT = 3
EXIT_VERIFY = 4


def tokenizer_config_from_dict(spec: dict) -> TokenizerConfig:
    """Build a TokenizerConfig from the JSON form (see README schema)."""
    try:
        return TokenizerConfig(
            family=ModelFamily.parse(spec["family"]),
            p=float(spec["p"]),
            n_tokens=int(spec["tokens"]),
            codebook_size=int(spec["codebook_size"]),
            seed=int(spec["seed"]),
            start_time=float(spec["start_time"]),
            end_time=None if spec.get("end_time") is None else float(spec["end_time"]),
            intervals=int(spec.get("intervals", 4)),
            dt_min=float(spec.get("dt_min", 0.002)),
            dt_max=float(spec.get("dt_max", 0.02)),
            rho=float(spec.get("rho", 7.0)),
            sigma_max=float(spec.get("sigma_max", 80.0)),
            init_strategy=InitStrategy.parse(spec.get("init_strategy", "random_noise")),
            final_sample_steps=int(spec.get("final_sample_steps",
                                            DEFAULT_FINAL_SAMPLE_STEPS)),
        )
    except KeyError as exc:
        raise ConfigError(f"tokenizer config missing field {exc}") from exc


def load_experiment(path: str) -> tuple[GaussianMixture, TokenizerConfig]:
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if "mixture" not in spec or "tokenizer" not in spec:
        raise ConfigError("experiment config needs 'mixture' and 'tokenizer' sections")
    return (datasets.mixture_from_dict(spec["mixture"]),
            tokenizer_config_from_dict(spec["tokenizer"]))


def _apply_overrides(cfg: TokenizerConfig, args) -> TokenizerConfig:
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if getattr(args, "family", None) is not None:
        updates["family"] = ModelFamily.parse(args.family)
    if getattr(args, "p", None) is not None:
        updates["p"] = args.p
    if getattr(args, "tokens", None) is not None:
        updates["n_tokens"] = args.tokens
    if getattr(args, "codebook_size", None) is not None:
        updates["codebook_size"] = args.codebook_size
    return replace(cfg, **updates) if updates else cfg


def _backend_for(mixture: GaussianMixture, cfg: TokenizerConfig, model_path):
    if model_path is None:
        return AnalyticBackend(mixture, cfg.family)
    with open(model_path, "rb") as fh:
        model = ToyDenoiser.from_bytes(fh.read())
    if model.family is not cfg.family:
        raise ConfigError(
            f"model family {model.family.value} does not match config "
            f"{cfg.family.value}")
    return ToyBackend(model, anchor=mixture.mean)


def _cmd_gen_data(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            mixture = datasets.mixture_from_dict(json.load(fh)["mixture"])
        width = height = None
    else:
        mixture = datasets.prototype_image_mixture()
        width = height = datasets.PROTO_SIDE
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    samples = mixture.sample(rng, args.count)
    datasets.save_dataset(args.out, samples, width=width, height=height)
    print(f"wrote {args.count} samples of dim {mixture.dim} to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            mixture = datasets.mixture_from_dict(json.load(fh)["mixture"])
    else:
        mixture = datasets.prototype_image_mixture()
    cfg = TrainConfig(steps=args.steps, batch=args.batch,
                      learning_rate=args.lr,
                      seed=args.seed if args.seed is not None else 0)
    train = train_epsilon if args.objective == "epsilon" else train_flow
    model = train(mixture, cfg)
    with open(args.out, "wb") as fh:
        fh.write(model.to_bytes())
    hist = model.loss_history
    print(f"trained {args.objective} model: loss {hist[0]:.4f} -> {hist[-1]:.4f}; "
          f"wrote {args.out}")
    return EXIT_OK


def _load_target(path: str, index: int) -> np.ndarray:
    samples, _, _ = datasets.load_dataset(path)
    if not 0 <= index < samples.shape[0]:
        raise ConfigError(f"sample index {index} outside dataset of {samples.shape[0]}")
    return samples[index]


def _cmd_tokenize(args) -> int:
    mixture, cfg = load_experiment(args.config)
    cfg = _apply_overrides(cfg, args)
    backend = _backend_for(mixture, cfg, args.model)
    target = _load_target(args.input, args.index)
    stream, result = tokenize(cfg, target, backend)
    blob = encode_stream(stream)
    with open(args.out, "wb") as fh:
        fh.write(blob)
    print(f"wrote {len(blob)} bytes ({stream.n_tokens} tokens, "
          f"K={stream.codebook_size}) to {args.out}; "
          f"reconstruction mse {mse(result.x_r, target):.6g}")
    return EXIT_OK


def _cmd_detokenize(args) -> int:
    mixture, cfg = load_experiment(args.config)
    with open(args.input, "rb") as fh:
        stream = decode_stream(fh.read())
    backend = _backend_for(mixture, replace(cfg, family=stream.family), args.model)
    result = detokenize(stream, backend, final_sample_steps=args.final_steps)
    np.save(args.out, result.x_r)
    print(f"wrote reconstruction of dim {result.x_r.size} to {args.out}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    mixture, cfg = load_experiment(args.config)
    cfg = _apply_overrides(cfg, args)
    backend = _backend_for(mixture, cfg, args.model)
    samples, width, height = datasets.load_dataset(args.input)
    limit = samples.shape[0] if args.limit is None else min(args.limit, samples.shape[0])
    lines = ["index,mse,psnr,ssim"]
    for i in range(limit):
        target = samples[i]
        sample_cfg = replace(cfg, seed=(cfg.seed + i) & 0xFFFFFFFFFFFFFFFF)
        stream, result = tokenize(sample_cfg, target, backend)
        replay = detokenize(decode_stream(encode_stream(stream)), backend,
                            final_sample_steps=sample_cfg.final_sample_steps)
        if not np.array_equal(replay.x_r, result.x_r):
            raise VerificationError(f"sample {i}: replay is not bit-identical")
        err = mse(result.x_r, target)
        if width is not None:
            a = result.x_r.reshape(height, width)
            b = target.reshape(height, width)
            lines.append(f"{i},{err!r},{psnr(np.clip(a, 0, 1), b)!r},"
                         f"{ssim(np.clip(a, 0, 1), b)!r}")
        else:
            lines.append(f"{i},{err!r},,")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(f"wrote {limit} metric rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.check == "theorem1":
        res = verify.order_accuracy_check(seed=seed)
        print(f"jump-vs-euler discrepancy ratio: {res.ratio} "
              f"(band {res.band[0]}..{res.band[1]})")
        if not res.passed:
            raise VerificationError("order-accuracy ratio outside band")
    elif args.check == "marginal":
        rows = verify.marginal_preservation_check(seed=seed)
        worst = max(max(r.max_mean_dev, r.max_var_dev) for r in rows)
        for r in rows:
            print(f"p={r.p:3.1f} t={r.t:7.4f} mean-dev {r.max_mean_dev:.3f} "
                  f"var-dev {r.max_var_dev:.3f} (of the 4-SE band)")
        if worst > 1.0:
            raise VerificationError("moment deviation exceeded the 4-SE band")
    else:
        res = verify.selection_ablation_check(seed=seed)
        print(f"mean mse aligned={res.mse_aligned:.6g} "
              f"random={res.mse_random:.6g} "
              f"paired diff={res.paired_mean_diff:.6g}")
        if not res.passed:
            raise VerificationError("aligned selection did not beat random")
    print("verification passed")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        spec = json.load(fh)
    try:
        mixture = datasets.mixture_from_dict(spec["mixture"])
        grid_spec = spec["grid"]
        family = ModelFamily.parse(spec["family"])
        seed = int(spec.get("seed", 0))
        grid = sweep_mod.SweepGrid(
            family=family, seed=seed,
            objective=spec.get("objective", "mse"),
            p=tuple(grid_spec.get("p", (0.0,))),
            n_tokens=tuple(grid_spec.get("tokens", (64,))),
            codebook_size=tuple(grid_spec.get("codebook_size", (16,))),
            start_time=tuple(grid_spec.get("start_time", (0.15,))),
            end_time=tuple(grid_spec.get("end_time", (None,))),
            intervals=tuple(grid_spec.get("intervals", (4,))),
            dt_min=tuple(grid_spec.get("dt_min", (0.002,))),
            dt_max=tuple(grid_spec.get("dt_max", (0.02,))),
            rho=tuple(grid_spec.get("rho", (7.0,))),
            sigma_max=tuple(grid_spec.get("sigma_max", (80.0,))),
            init_strategy=tuple(InitStrategy.parse(s) for s in
                                grid_spec.get("init_strategy", ("random_noise",))),
            final_sample_steps=int(spec.get("final_sample_steps",
                                            DEFAULT_FINAL_SAMPLE_STEPS)),
        )
        n_validation = int(spec.get("validation_count", 128))
    except KeyError as exc:
        raise ConfigError(f"sweep config missing field {exc}") from exc
    backend = AnalyticBackend(mixture, family)
    rng = np.random.default_rng(seed)
    targets = mixture.sample(rng, n_validation)
    rows = sweep_mod.sweep(grid, backend, targets,
                           image_shape=_image_shape_of(spec), workers=args.workers)
    text = sweep_mod.rows_to_csv(rows)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    best = rows[0]
    print(f"wrote {len(rows)} rows to {args.out}; best {best.objective}="
          f"{best.value} at N={best.config.n_tokens} K={best.config.codebook_size}")
    return EXIT_OK


def _image_shape_of(spec: dict):
    mix = spec.get("mixture", {})
    if mix.get("preset") == "prototype-images":
        return (datasets.PROTO_SIDE, datasets.PROTO_SIDE)
    shape = spec.get("image_shape")
    return tuple(shape) if shape else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="difftok",
        description="Tokenize samples into seeded noise-codebook indices "
                    "with diffusion-model samplers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="draw samples from a mixture into an .npz")
    p.add_argument("--config", help="experiment JSON with a 'mixture' section")
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the toy denoiser")
    p.add_argument("--config", help="experiment JSON with a 'mixture' section")
    p.add_argument("--objective", choices=["epsilon", "flow"], default="epsilon")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("tokenize", help="encode one dataset sample")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="dataset .npz")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--model", help="toy model blob instead of the exact backend")
    p.add_argument("--seed", type=int)
    p.add_argument("--family")
    p.add_argument("--p", type=float)
    p.add_argument("--tokens", type=int)
    p.add_argument("--codebook-size", type=int, dest="codebook_size")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_tokenize)

    p = sub.add_parser("detokenize", help="replay a token stream")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="token blob")
    p.add_argument("--model")
    p.add_argument("--final-steps", type=int, default=DEFAULT_FINAL_SAMPLE_STEPS)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_detokenize)

    p = sub.add_parser("evaluate",
                       help="tokenize+replay a dataset and emit metric rows")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--limit", type=int)
    p.add_argument("--model")
    p.add_argument("--seed", type=int)
    p.add_argument("--family")
    p.add_argument("--p", type=float)
    p.add_argument("--tokens", type=int)
    p.add_argument("--codebook-size", type=int, dest="codebook_size")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("verify", help="run a numerical verification")
    p.add_argument("check", choices=["theorem1", "marginal", "selection"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("sweep", help="grid-search parameters on a validation set")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, ScheduleInfeasibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptStreamError as exc:
        print(f"corrupt stream: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
