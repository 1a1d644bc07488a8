"""Command-line interface.

Subcommands:
    gen-data   draw samples from a named target density
    train      fit a score-based (sgm) or denoising-diffusion (ddpm) model
    sample     generate rotations from a trained checkpoint
    eval-c2st  classifier two-sample test between two sample sets
    eval-ed    orientation-correlation curve of an oriented point cloud
    plot       Mollweide scatter plot of a sample set

Options may come from flags or from an INI config file (section [run])
passed with --config; explicit flags win over the file. All randomness is
driven by --seed, and outputs are byte-deterministic given identical
inputs and seed.

Exit codes: 0 success, 2 configuration or usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from . import ddpm, evaluation, igso3, plotting, sgm, so3, targets
from .errors import ConfigError, So3DiffusionError, UnknownTarget
from .sampleset import (
    SAMPLESET_MAGIC,
    SampleSet,
    load_sample_set,
    load_sample_set_text,
    save_sample_set,
    save_sample_set_text,
)


def _add_option(parser, table, name, required=False, **kwargs):
    """Registers --name and records its type for config-file coercion.

    Required options are enforced after the config overlay so they may be
    supplied by either a flag or the config file.
    """
    action = parser.add_argument(f"--{name}", **kwargs)
    table["types"][action.dest] = kwargs.get("type", str)
    if required:
        table["required"].add(action.dest)
    if "choices" in kwargs:
        table["choices"][action.dest] = tuple(kwargs["choices"])
    return action


def _add_flag(parser, table, name, help=None):
    """Registers a boolean --name flag (config files may set it textually)."""
    action = parser.add_argument(f"--{name}", action="store_true", help=help)
    table["types"][action.dest] = bool
    return action


def _coerce_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _load_config(path) -> dict:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if "run" not in parser:
        raise ConfigError(f"config file {path} has no [run] section")
    return dict(parser["run"])


def _apply_config(args, table: dict, argv: list) -> None:
    """Overlay config-file values onto args for flags not given on the CLI,
    then enforce options that must come from one of the two sources."""
    explicit = {
        tok.split("=", 1)[0].lstrip("-").replace("-", "_")
        for tok in argv
        if tok.startswith("--")
    }
    if args.config:
        raw = _load_config(args.config)
        for key, value in raw.items():
            dest = key.replace("-", "_")
            if dest not in table["types"]:
                raise ConfigError(f"unknown config key {key!r} for this subcommand")
            if dest in explicit:
                continue
            typ = table["types"][dest]
            if typ is bool:
                typ = _coerce_bool
            try:
                coerced = typ(value)
            except ValueError as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from exc
            allowed = table["choices"].get(dest)
            if allowed and coerced not in allowed:
                raise ConfigError(
                    f"config key {key!r} must be one of {', '.join(allowed)}"
                )
            setattr(args, dest, coerced)
            explicit.add(dest)
    args._explicit = explicit
    missing = [d for d in sorted(table["required"]) if getattr(args, d) is None]
    if missing:
        names = ", ".join("--" + d.replace("_", "-") for d in missing)
        raise ConfigError(f"missing required option(s): {names}")


def _parse_hidden(raw: str) -> tuple:
    try:
        widths = tuple(int(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"bad hidden widths {raw!r}") from exc
    if not widths or any(w < 1 for w in widths):
        raise ConfigError(f"bad hidden widths {raw!r}")
    return widths


def _parse_floats(raw: str) -> np.ndarray:
    try:
        vals = np.array([float(tok) for tok in raw.split(",") if tok.strip()])
    except ValueError as exc:
        raise ConfigError(f"bad float list {raw!r}") from exc
    if vals.size == 0:
        raise ConfigError(f"bad float list {raw!r}")
    return vals


def load_any_sample_set(path) -> SampleSet:
    """Load a sample set, accepting both the binary and the text format."""
    with open(path, "rb") as fh:
        head = fh.read(len(SAMPLESET_MAGIC))
    if head == SAMPLESET_MAGIC:
        return load_sample_set(path)
    return load_sample_set_text(path)


def _save_output_set(path, samples: SampleSet, as_text: bool) -> None:
    if as_text:
        save_sample_set_text(path, samples)
    else:
        save_sample_set(path, samples)


def _cmd_gen_data(args) -> int:
    rng = np.random.default_rng(args.seed)
    samples = targets.sample_target(args.target, args.n, rng)
    samples.seed = args.seed
    _save_output_set(args.out, samples, args.text)
    print(f"wrote {len(samples)} samples of {args.target!r} to {args.out}")
    return 0


def _reject_resume_conflicts(args, stored: dict) -> None:
    """Explicit flags that contradict a resumed checkpoint are errors, not
    silently ignored."""
    for flag, (given, kept) in stored.items():
        if flag in args._explicit and given != kept:
            raise ConfigError(
                f"--{flag.replace('_', '-')} {given!r} conflicts with the "
                f"resumed checkpoint ({kept!r}); drop the flag or train fresh"
            )


def _cmd_train(args) -> int:
    data = load_any_sample_set(args.data)
    rng = np.random.default_rng(args.seed)
    hidden = _parse_hidden(args.hidden)
    if args.model == "sgm":
        context_dim = data.context_dim if data.contexts is not None else 0
        if args.resume:
            model, adam_state = sgm.load_model(args.resume)
            _reject_resume_conflicts(
                args,
                {
                    "hidden": (hidden, tuple(model.net.widths[1:-1])),
                    "t_max": (args.t_max, model.schedule.t_max),
                    "eps_min": (args.eps_min, model.schedule.eps_min),
                    "sigma_eps": (args.sigma_eps, model.schedule.sigma_eps),
                },
            )
        else:
            schedule = sgm.VESchedule(
                t_max=args.t_max, eps_min=args.eps_min, sigma_eps=args.sigma_eps
            )
            model = sgm.make_score_model(
                rng, hidden=hidden, schedule=schedule, context_dim=context_dim
            )
            adam_state = None
        if model.context_dim != context_dim:
            raise ConfigError(
                f"checkpoint expects context width {model.context_dim}, "
                f"data has {context_dim}"
            )
        config = sgm.TrainConfig(
            iterations=args.iterations,
            batch_size=args.batch_size,
            lr=args.lr,
            log_every=args.log_every,
            checkpoint_path=args.out,
            checkpoint_every=args.checkpoint_every,
        )
        model, history, state = sgm.train(model, data, config, rng, adam_state)
        sgm.save_model(args.out, model, adam_state=state)
    else:
        if data.contexts is not None and not args.ignore_context:
            raise ConfigError(
                "ddpm training is unconditional; pass --ignore-context to "
                "drop the stored context columns"
            )
        if args.resume:
            model, opt_state = ddpm.load_model(args.resume)
            _reject_resume_conflicts(
                args,
                {
                    "hidden": (hidden, tuple(model.delta_net.widths[1:-1])),
                    "n_timesteps": (
                        args.n_timesteps,
                        model.schedule.n_timesteps,
                    ),
                },
            )
            if {"schedule", "beta_min", "beta_max"} & args._explicit:
                wanted = ddpm.make_schedule(
                    args.schedule,
                    n_timesteps=model.schedule.n_timesteps,
                    beta_min=args.beta_min,
                    beta_max=args.beta_max,
                ).betas
                if not np.array_equal(wanted, model.schedule.betas):
                    raise ConfigError(
                        "schedule flags conflict with the resumed checkpoint; "
                        "drop them or train fresh"
                    )
        else:
            schedule = ddpm.make_schedule(
                args.schedule,
                n_timesteps=args.n_timesteps,
                beta_min=args.beta_min,
                beta_max=args.beta_max,
            )
            model = ddpm.make_reverse_model(rng, hidden=hidden, schedule=schedule)
            opt_state = None
        config = ddpm.DdpmTrainConfig(
            iterations=args.iterations,
            batch_size=args.batch_size,
            lr=args.lr,
            log_every=args.log_every,
            checkpoint_path=args.out,
            checkpoint_every=args.checkpoint_every,
        )
        model, history, state = ddpm.train(
            model, SampleSet(data.rotations), config, rng, opt_state
        )
        ddpm.save_model(args.out, model, opt_state=state)
    if args.loss_out:
        with open(args.loss_out, "w", encoding="utf-8") as fh:
            fh.write("# step\tloss\n")
            for step, loss in history:
                fh.write(f"{int(step)}\t{float(loss)!r}\n")
    final = history[-1, 1] if len(history) else float("nan")
    print(
        f"trained {args.model} for {args.iterations} iterations "
        f"(step={state.step}, final logged loss {final:.6f}); "
        f"checkpoint at {args.out}"
    )
    return 0


def _cmd_sample(args) -> int:
    from . import checkpoint as ckpt

    meta, _ = ckpt.load_checkpoint(args.checkpoint)
    kind = meta.get("kind")
    rng = np.random.default_rng(args.seed)
    if kind == "sgm":
        model, _ = sgm.load_model(args.checkpoint)
        context = None
        if model.context_dim:
            if args.context_value is None:
                raise ConfigError(
                    "checkpoint is conditional; pass --context-value"
                )
            row = _parse_floats(args.context_value)
            if row.size != model.context_dim:
                raise ConfigError(
                    f"context width {row.size} != model width {model.context_dim}"
                )
            context = np.tile(row, (args.n, 1))
        rotations = sgm.sample(
            model, args.n, rng, n_steps=args.steps, context=context
        )
        samples = SampleSet(
            rotations, context, label=f"sgm:{args.checkpoint}", seed=args.seed
        )
    elif kind == "ddpm":
        model, _ = ddpm.load_model(args.checkpoint)
        rotations = ddpm.sample(model, args.n, rng)
        samples = SampleSet(
            rotations, None, label=f"ddpm:{args.checkpoint}", seed=args.seed
        )
    else:
        raise ConfigError(f"checkpoint kind {kind!r} is not sampleable")
    _save_output_set(args.out, samples, args.text)
    print(f"wrote {args.n} samples from {kind} checkpoint to {args.out}")
    return 0


def _cmd_eval_c2st(args) -> int:
    a = load_any_sample_set(args.a)
    b = load_any_sample_set(args.b)
    mean, std = evaluation.c2st(
        a.rotations, b.rotations, k_folds=args.folds, random_state=args.seed
    )
    line = (
        f"c2st accuracy={mean:.4f} std={std:.4f} "
        f"folds={args.folds} n_a={len(a)} n_b={len(b)}"
    )
    print(line)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return 0


def _load_cloud(path) -> evaluation.OrientedPointCloud:
    rows = np.loadtxt(path, ndmin=2)
    if rows.shape[1] == 6:
        axes = rows[:, 3:6]
        axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        return evaluation.OrientedPointCloud(rows[:, :3], axes)
    if rows.shape[1] == 7:
        R = so3.from_quaternion(rows[:, 3:7])
        return evaluation.OrientedPointCloud(rows[:, :3], R[:, :, 2])
    raise ConfigError(
        f"point cloud {path} must have 6 columns (x y z axis) or "
        f"7 columns (x y z quaternion), got {rows.shape[1]}"
    )


def _cmd_eval_ed(args) -> int:
    cloud = _load_cloud(args.cloud)
    if args.bins:
        edges = _parse_floats(args.bins)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigError("--bins must be increasing with at least 2 edges")
    else:
        if args.r_max is None:
            raise ConfigError("pass either --bins or --r-max")
        edges = np.linspace(0.0, args.r_max, args.n_bins + 1)
    r_bins = list(zip(edges[:-1], edges[1:]))
    omega, err = evaluation.ed_correlation(
        cloud, r_bins, n_jackknife=args.jackknife
    )
    lines = ["# r_lo\tr_hi\tomega\terr"]
    for (lo, hi), o, e in zip(r_bins, omega, err):
        lines.append(f"{float(lo)!r}\t{float(hi)!r}\t{float(o)!r}\t{float(e)!r}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    return 0


def _cmd_plot(args) -> int:
    samples = load_any_sample_set(args.data)
    title = args.title if args.title is not None else samples.label
    plotting.scatter_svg(args.out, samples.rotations, title=title)
    print(f"wrote plot of {len(samples)} samples to {args.out}")
    return 0


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="so3diffusion",
        description="Diffusion generative models on the rotation group SO(3).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    tables: dict = {}

    def new_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        table: dict = {"types": {}, "required": set(), "choices": {}}
        p.set_defaults(func=func, _table=table)
        tables[name] = table
        _add_option(p, table, "config", default=None, help="INI file, section [run]")
        _add_option(p, table, "seed", type=int, default=0, help="RNG seed")
        return p, table

    p, t = new_cmd("gen-data", _cmd_gen_data, "sample a named target density")
    _add_option(
        p, t, "target", required=True,
        help=f"one of: {', '.join(targets.target_names())}",
    )
    _add_option(p, t, "n", type=int, default=10_000, help="number of samples")
    _add_option(p, t, "out", required=True, help="output sample-set path")
    _add_flag(p, t, "text", help="write the text format instead of binary")

    p, t = new_cmd("train", _cmd_train, "train a generative model")
    _add_option(p, t, "model", choices=("sgm", "ddpm"), required=True)
    _add_option(p, t, "data", required=True, help="training sample set")
    _add_option(p, t, "out", required=True, help="checkpoint output path")
    _add_option(p, t, "iterations", type=int, default=50_000)
    _add_option(p, t, "batch-size", type=int, default=256)
    _add_option(p, t, "lr", type=float, default=1e-4)
    _add_option(p, t, "hidden", default="256,256,256", help="comma widths")
    _add_option(p, t, "log-every", type=int, default=500)
    _add_option(p, t, "checkpoint-every", type=int, default=5000)
    _add_option(p, t, "loss-out", default=None, help="TSV loss-curve path")
    _add_option(p, t, "resume", default=None, help="checkpoint to continue from")
    _add_option(p, t, "t-max", type=float, default=sgm.DEFAULT_T_MAX)
    _add_option(p, t, "eps-min", type=float, default=sgm.DEFAULT_EPS_MIN)
    _add_option(p, t, "sigma-eps", type=float, default=sgm.DEFAULT_SIGMA_EPS)
    _add_option(p, t, "schedule", choices=("cosine", "linear"), default="cosine",
                help="ddpm noise schedule")
    _add_option(p, t, "n-timesteps", type=int, default=ddpm.DEFAULT_N_TIMESTEPS)
    _add_option(p, t, "beta-min", type=float, default=ddpm.DEFAULT_BETA_MIN)
    _add_option(p, t, "beta-max", type=float, default=ddpm.DEFAULT_BETA_MAX)
    _add_flag(p, t, "ignore-context",
              help="train ddpm on the rotations of a conditional set")

    p, t = new_cmd("sample", _cmd_sample, "generate from a checkpoint")
    _add_option(p, t, "checkpoint", required=True)
    _add_option(p, t, "n", type=int, default=10_000)
    _add_option(p, t, "out", required=True)
    _add_option(p, t, "steps", type=int, default=sgm.DEFAULT_N_STEPS,
                help="integration steps (sgm only)")
    _add_option(p, t, "context-value", default=None,
                help="comma floats broadcast to all samples (conditional sgm)")
    _add_flag(p, t, "text", help="write the text format instead of binary")

    p, t = new_cmd("eval-c2st", _cmd_eval_c2st, "two-sample test of sample sets")
    _add_option(p, t, "a", required=True, help="first sample set")
    _add_option(p, t, "b", required=True, help="second sample set")
    _add_option(p, t, "folds", type=int, default=5)
    _add_option(p, t, "out", default=None, help="optional report path")

    p, t = new_cmd("eval-ed", _cmd_eval_ed, "orientation correlation curve")
    _add_option(p, t, "cloud", required=True,
                help="text file: x y z + axis (6 cols) or quaternion (7 cols)")
    _add_option(p, t, "bins", default=None, help="comma-separated bin edges")
    _add_option(p, t, "r-max", type=float, default=None)
    _add_option(p, t, "n-bins", type=int, default=16)
    _add_option(p, t, "jackknife", type=int, default=8)
    _add_option(p, t, "out", default=None, help="optional TSV output path")

    p, t = new_cmd("plot", _cmd_plot, "Mollweide scatter of a sample set")
    _add_option(p, t, "data", required=True, help="sample set to plot")
    _add_option(p, t, "out", required=True, help="SVG output path")
    _add_option(p, t, "title", default=None)

    return parser, tables


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, _ = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, args._table, argv)
        return args.func(args)
    except (ConfigError, UnknownTarget) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (So3DiffusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
