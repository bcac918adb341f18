"""Command-line entry point: ``infonoise <subcommand> [flags]``.

Every subcommand writes its artifacts plus ``manifest.json`` into an output
directory (``--out``, else ``$INFONOISE_OUT``, else ``./infonoise-out``).
``infonoise replay manifest.json`` re-runs a recorded invocation.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocate import OnsetPivot, PowerLawPivot, Weighting, baseline_sampler
from .errors import ConfigError, DataError, InfoNoiseError
from .experiments import reference_schedule, simulate, two_point_atom
from .grid import SigmaRange, build_log_grid
from .infer import grid_uniformity, heun_nfe, heun_sample, infogrid, reference_grid
from .io import (
    Schedule,
    read_dataset,
    read_grid_csv,
    read_json,
    read_profile_csv,
    write_dataset,
    write_grid_csv,
    write_json,
    write_jsonl,
    write_profile_csv,
    write_table_csv,
)
from .oracle import Dataset, bayes_denoiser, entropy_rate_profile, mmse_profile
from .scheduler import FixedSchedule, Scheduler, SchedulerConfig
from .toy import TwoPointModel, hessian_at_zero, positive_branch, toy_mmse_profile
from .train import MlpDenoiser, TrainConfig, forward, train_loop

OUT_ENV = "INFONOISE_OUT"

# fixed ids keep each component's random stream stable when others change
STREAMS = {
    "profile/mc": 1,
    "scheduler": 2,
    "train": 3,
    "sample": 4,
    "init": 5,
    "reference": 6,
    "heldout": 7,
}


def substream(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(STREAMS[name],))


def stream_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream(seed, name))


def stream_int(seed: int, name: str) -> int:
    return int(substream(seed, name).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- helpers


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "infonoise-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, args, inputs: dict, outputs: list[str], resolved: dict | None = None) -> None:
    recorded = {k: v for k, v in vars(args).items() if k != "func"}
    recorded["out"] = str(out)
    write_json(
        out / "manifest.json",
        {
            "subcommand": args.command,
            "args": recorded,
            "config": resolved or {},
            "seed": getattr(args, "seed", None),
            "inputs": inputs,
            "outputs": outputs,
            "version": __version__,
        },
    )


def _range(args) -> SigmaRange:
    defaults = SigmaRange()
    lo = defaults.sigma_min if args.sigma_min is None else args.sigma_min
    hi = defaults.sigma_max if args.sigma_max is None else args.sigma_max
    return SigmaRange(lo, hi)


def _pivot(args):
    if args.pivot == "onset":
        return OnsetPivot(args.onset_p)
    return PowerLawPivot(args.pl_window, args.pl_slope_tol)


def _weighting(args) -> Weighting:
    return Weighting(args.weighting, args.sigma_data)


def _scheduler_config(args) -> SchedulerConfig:
    base = SchedulerConfig.load(args.config).to_dict() if args.config else SchedulerConfig().to_dict()
    for name in ("sigma_min", "sigma_max", "K", "N_warm", "M", "B", "beta", "n_gate", "N_min",
                 "pi_base_mean", "pi_base_std", "smoothing", "ema_from_zero", "clear_buffers", "pi_base"):
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
    if args.weighting is not None:
        base["weighting"] = _weighting(args).to_dict()
    if args.pivot is not None:
        base["pivot"] = _pivot(args).to_dict()
    return SchedulerConfig.from_dict(base)


def _load_data(args) -> Dataset:
    return read_dataset(args.data, header=args.header)


def _net_scale(data: Dataset) -> float:
    s = float(np.sqrt(data.variance() / data.d))
    return s if s > 0 else 1.0


# ------------------------------------------------------------- subcommands


def cmd_profile(args) -> int:
    data = _load_data(args)
    grid = build_log_grid(_range(args), args.K)
    if args.method == "toy":
        a = two_point_atom(data)
        if a is None:
            raise ConfigError("--method toy needs a symmetric two-point 1D dataset")
        mmse = toy_mmse_profile(TwoPointModel(a), grid)
    else:
        mmse = mmse_profile(data, grid, n_mc=args.n_mc, seed=stream_int(args.seed, "profile/mc"))
    rate = entropy_rate_profile(mmse)
    out = _out_dir(args)
    write_profile_csv(out / "mmse.csv", mmse)
    write_profile_csv(out / "rate.csv", rate)
    _manifest(out, args, {"data": args.data}, ["mmse.csv", "rate.csv"])
    k = int(np.argmax(rate.values))
    print(f"wrote {out / 'rate.csv'}; rate peaks at sigma={grid.centers[k]:.4g} (cell {k} of {grid.K})")
    return 0


def cmd_schedule(args) -> int:
    rate = read_profile_csv(args.profile)
    sched = Schedule.from_rate(rate, _weighting(args), args.n_gate, _pivot(args), args.smoothing)
    out = _out_dir(args)
    sched.save(out / "schedule.json")
    _manifest(out, args, {"profile": args.profile}, ["schedule.json"])
    print(f"wrote {out / 'schedule.json'}; pivot c={sched.gate.c:.6g}")
    return 0


def cmd_simulate(args) -> int:
    data = _load_data(args)
    config = _scheduler_config(args)
    reference = None
    if args.reference != "none":
        reference = reference_schedule(
            data, config, method=args.reference, n_mc=args.n_mc, seed=stream_int(args.seed, "reference")
        )
    sched = Scheduler(config)
    records = simulate(data, sched, args.steps, stream_rng(args.seed, "scheduler"), reference)
    out = _out_dir(args)
    last = {}

    def keep(stream):
        for rec in stream:
            last.clear()
            last.update(rec)
            yield rec

    n = write_jsonl(out / "refresh.jsonl", keep(records))
    _manifest(out, args, {"data": args.data, "config": args.config}, ["refresh.jsonl"], config.to_dict())
    msg = f"wrote {n} refresh records to {out / 'refresh.jsonl'}"
    if "tv_reference" in last:
        msg += f"; final TV to reference {last['tv_reference']:.4g}"
    print(msg)
    return 0


def cmd_train(args) -> int:
    data = _load_data(args)
    config = _scheduler_config(args)
    if args.sampler == "infonoise":
        sched = Scheduler(config)
    else:
        sched = FixedSchedule(baseline_sampler(args.sampler, config.grid, config.pi_base_mean, config.pi_base_std))
    scale = None if args.raw_output else (args.net_sigma_data or _net_scale(data))
    mlp = MlpDenoiser.init(data.d, args.hidden, stream_rng(args.seed, "init"), sigma_data=scale)
    cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        steps=args.steps,
        optimizer=args.optimizer,
        momentum=args.momentum,
        seed=args.seed,
        sigma_per_batch=args.sigma_per_batch,
        log_every=args.log_every,
    )
    res = train_loop(data, sched, mlp, cfg, weighting=config.weighting, rng=stream_rng(args.seed, "train"))
    out = _out_dir(args)
    mlp.save(out / "checkpoint.json")
    write_table_csv(
        out / "train_log.csv",
        ["step", "mean_loss", "snapshot_version"],
        ([r["step"], r["mean_loss"], r["snapshot_version"]] for r in res.train_log),
    )
    write_jsonl(out / "refresh.jsonl", res.refresh_log)
    _manifest(
        out,
        args,
        {"data": args.data, "config": args.config},
        ["checkpoint.json", "train_log.csv", "refresh.jsonl"],
        {"scheduler": config.to_dict(), "train": cfg.to_dict(), "net_sigma_data": scale},
    )
    print(f"trained {cfg.steps} steps, {len(res.refresh_log)} refreshes; wrote {out / 'checkpoint.json'}")
    return 0


def _build_grid(args, mode: str):
    if mode == "infogrid":
        if not args.profile:
            raise ConfigError("--mode infogrid needs --profile")
        rate = read_profile_csv(args.profile)
        return infogrid(rate, args.N), rate
    return reference_grid(args.N, _range(args), args.rho_exp), None


def cmd_grid(args) -> int:
    if args.nfe_check is not None:
        print(f"NFE {heun_nfe(args.nfe_check)}")
        if args.mode is None:
            return 0
    mode = args.mode or "reference"
    grid, rate = _build_grid(args, mode)
    out = _out_dir(args)
    write_grid_csv(out / "grid.csv", grid)
    _manifest(out, args, {"profile": args.profile}, ["grid.csv"])
    msg = f"wrote {grid.N + 1} nodes to {out / 'grid.csv'}"
    if rate is not None:
        msg += f"; max information-step deviation {grid_uniformity(grid, rate):.3g}"
    print(msg)
    return 0


def cmd_sample(args) -> int:
    if (args.data is None) == (args.checkpoint is None):
        raise ConfigError("give exactly one of --data (oracle denoiser) or --checkpoint")
    if args.data is not None:
        data = _load_data(args)
        d = data.d

        def denoiser(x, sigma):
            return bayes_denoiser(data, x, sigma)
    else:
        net = MlpDenoiser.load(args.checkpoint)
        d = net.d

        def denoiser(x, sigma):
            return forward(net, x, sigma)

    if args.grid:
        grid = read_grid_csv(args.grid)
    else:
        grid, _ = _build_grid(args, args.mode or "reference")
    rng = stream_rng(args.seed, "sample")
    x = heun_sample(denoiser, grid, rng.standard_normal((args.n, d)) * grid.nodes[0])
    out = _out_dir(args)
    write_dataset(out / "samples.csv", x)
    _manifest(out, args, {"data": args.data, "checkpoint": args.checkpoint, "grid": args.grid}, ["samples.csv"])
    msg = f"wrote {args.n} samples ({heun_nfe(grid.N)} denoiser calls each) to {out / 'samples.csv'}"
    if args.data is not None:
        dist = np.sqrt(((x[:, None, :] - data.samples[None]) ** 2).sum(-1)).min(axis=1)
        msg += f"; {np.mean(dist <= args.tol):.4f} within {args.tol} of a data point"
    print(msg)
    return 0


def cmd_toy(args) -> int:
    m = TwoPointModel(args.a)
    lo = args.a / 100 if args.sigma_min is None else args.sigma_min
    hi = args.a * 100 if args.sigma_max is None else args.sigma_max
    grid = build_log_grid(SigmaRange(lo, hi), args.K)
    mmse = toy_mmse_profile(m, grid)
    rate = entropy_rate_profile(mmse)
    rows = (
        [s, v, r, positive_branch(m, s), hessian_at_zero(m, s)]
        for s, v, r in zip(grid.centers, mmse.values, rate.values)
    )
    out = _out_dir(args)
    write_table_csv(out / "toy.csv", ["sigma", "mmse", "entropy_rate", "x_star_pos", "hessian_at_zero"], rows)
    _manifest(out, args, {}, ["toy.csv"])
    print(f"wrote {grid.K} rows to {out / 'toy.csv'}")
    return 0


def four_atom_dataset() -> Dataset:
    return Dataset(np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]))


def cmd_compare(args) -> int:
    data = _load_data(args) if args.data else four_atom_dataset()
    config = _scheduler_config(args)
    grid = config.grid
    levels = np.geomspace(max(grid.sigma_min, 0.01), min(grid.sigma_max, 20.0), args.n_levels)
    hrng = stream_rng(args.seed, "heldout")
    per = args.n_heldout
    x0 = data.samples[hrng.integers(data.N, size=(args.n_levels, per))]
    eps = hrng.standard_normal(x0.shape)
    bayes = [
        float(np.mean(np.sum((bayes_denoiser(data, x0[i] + s * eps[i], s) - x0[i]) ** 2, axis=1)))
        for i, s in enumerate(levels)
    ]
    scale = _net_scale(data)
    pooled, by_level = [], []

    def evaluator(name):
        def cb(step, mlp, sched):
            if step % args.eval_every and step != args.steps:
                return
            errs = [
                float(np.mean(np.sum((forward(mlp, x0[i] + s * eps[i], s) - x0[i]) ** 2, axis=1)))
                for i, s in enumerate(levels)
            ]
            pooled.append([step, name, float(np.mean(errs))])
            by_level.extend([step, name, s, e, b] for s, e, b in zip(levels, errs, bayes))

        return cb

    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, steps=args.steps, seed=args.seed)
    for name in ("infonoise", "log_uniform"):
        sched = Scheduler(config) if name == "infonoise" else FixedSchedule(baseline_sampler("log_uniform", grid))
        mlp = MlpDenoiser.init(data.d, args.hidden, stream_rng(args.seed, "init"), sigma_data=scale)
        train_loop(data, sched, mlp, cfg, weighting=config.weighting,
                   rng=stream_rng(args.seed, "train"), callback=evaluator(name))
    out = _out_dir(args)
    write_table_csv(out / "compare.csv", ["step", "sampler", "heldout_mse"], pooled)
    write_table_csv(out / "compare_by_sigma.csv", ["step", "sampler", "sigma", "heldout_mse", "bayes_mse"], by_level)
    _manifest(out, args, {"data": args.data}, ["compare.csv", "compare_by_sigma.csv"], config.to_dict())
    final = {row[1]: row[2] for row in pooled if row[0] == args.steps}
    print("final held-out MSE: " + ", ".join(f"{k} {v:.4g}" for k, v in final.items()))
    return 0


def cmd_replay(args) -> int:
    man = read_json(args.manifest)
    try:
        recorded = dict(man["args"])
        command = man["subcommand"]
    except (KeyError, TypeError):
        raise DataError(f"{args.manifest}: not a run manifest") from None
    if args.out:
        recorded["out"] = args.out
    parser = build_parser()
    replayed = argparse.Namespace(**recorded)
    replayed.func = parser._subcommands[command]
    return replayed.func(replayed)


# ------------------------------------------------------------------ parser


def _add_out(p, seed=True):
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./infonoise-out)")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="dataset CSV, one sample per row")
    p.add_argument("--header", action="store_true", help="skip the first line of the dataset")


def _add_range(p, K=128):
    p.add_argument("--sigma-min", "--sigma_min", dest="sigma_min", type=float)
    p.add_argument("--sigma-max", "--sigma_max", dest="sigma_max", type=float)
    p.add_argument("--K", type=int, default=K)


def _add_allocation(p, defaults=True):
    p.add_argument("--weighting", choices=["unit", "edm"], default="unit" if defaults else None)
    p.add_argument("--sigma-data", "--sigma_data", dest="sigma_data", type=float, default=0.5)
    p.add_argument("--n-gate", "--n_gate", dest="n_gate", type=float, default=3.0 if defaults else None)
    p.add_argument("--pivot", choices=["onset", "powerlaw"], default="onset" if defaults else None)
    p.add_argument("--onset-p", dest="onset_p", type=float, default=0.002)
    p.add_argument("--pl-window", dest="pl_window", type=int, default=9)
    p.add_argument("--pl-slope-tol", dest="pl_slope_tol", type=float, default=0.15)


def _add_scheduler(p):
    p.add_argument("--config", help="JSON file with scheduler config fields")
    p.add_argument("--sigma-min", "--sigma_min", dest="sigma_min", type=float)
    p.add_argument("--sigma-max", "--sigma_max", dest="sigma_max", type=float)
    p.add_argument("--K", type=int)
    p.add_argument("--pi-base", "--pi_base", dest="pi_base", choices=["log_uniform", "log_normal"])
    p.add_argument("--pi-base-mean", "--pi_base_mean", dest="pi_base_mean", type=float)
    p.add_argument("--pi-base-std", "--pi_base_std", dest="pi_base_std", type=float)
    p.add_argument("--N-warm", "--N_warm", dest="N_warm", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--N-min", "--N_min", dest="N_min", type=int)
    p.add_argument("--smoothing", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--ema-from-zero", "--ema_from_zero", dest="ema_from_zero",
                   action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--clear-buffers", "--clear_buffers", dest="clear_buffers",
                   action=argparse.BooleanOptionalAction, default=None)
    _add_allocation(p, defaults=False)


def _hidden(text: str) -> list[int]:
    try:
        sizes = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden sizes must be comma-separated integers, got {text!r}")
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


def _add_grid_choice(p):
    p.add_argument("--mode", choices=["infogrid", "reference"])
    p.add_argument("--N", type=int, default=18, help="number of solver steps")
    p.add_argument("--profile", help="entropy-rate profile CSV (infogrid mode)")
    p.add_argument("--rho-exp", dest="rho_exp", type=float, default=7.0)
    p.add_argument("--sigma-min", "--sigma_min", dest="sigma_min", type=float)
    p.add_argument("--sigma-max", "--sigma_max", dest="sigma_max", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infonoise", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    table = {}

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        table[name] = func
        return p

    p = add("profile", cmd_profile, "MMSE and entropy-rate profiles of a dataset")
    _add_data(p)
    _add_range(p)
    p.add_argument("--n-mc", "--n_mc", dest="n_mc", type=int, default=10_000)
    p.add_argument("--method", choices=["mc", "toy"], default="mc")
    _add_out(p)

    p = add("schedule", cmd_schedule, "allocation and training schedule from a rate profile")
    p.add_argument("--profile", required=True)
    _add_allocation(p)
    p.add_argument("--smoothing", action=argparse.BooleanOptionalAction, default=False)
    _add_out(p, seed=False)

    p = add("simulate", cmd_simulate, "drive the online scheduler with oracle losses")
    _add_data(p)
    _add_scheduler(p)
    p.add_argument("--steps", type=int, default=30_000)
    p.add_argument("--reference", choices=["none", "auto", "toy", "mc"], default="auto")
    p.add_argument("--n-mc", "--n_mc", dest="n_mc", type=int, default=20_000)
    _add_out(p)

    p = add("train", cmd_train, "train a small MLP denoiser")
    _add_data(p)
    _add_scheduler(p)
    p.add_argument("--sampler", choices=["infonoise", "log_uniform", "log_normal"], default="infonoise")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", "--batch_size", dest="batch_size", type=int, default=64)
    p.add_argument("--optimizer", choices=["sgd", "momentum"], default="momentum")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--hidden", type=_hidden, default=[64, 64])
    p.add_argument("--net-sigma-data", dest="net_sigma_data", type=float,
                   help="data scale for the skip connection (default: dataset std)")
    p.add_argument("--raw-output", dest="raw_output", action="store_true",
                   help="network output is the estimate itself, no skip connection")
    p.add_argument("--sigma-per-batch", "--sigma_per_batch", dest="sigma_per_batch", action="store_true")
    p.add_argument("--log-every", "--log_every", dest="log_every", type=int, default=100)
    _add_out(p)

    p = add("grid", cmd_grid, "inference sigma grid (InfoGrid or power-law reference)")
    _add_grid_choice(p)
    p.add_argument("--nfe-check", dest="nfe_check", type=int, help="print the denoiser-call count for N steps")
    _add_out(p, seed=False)

    p = add("sample", cmd_sample, "generate points with the Heun ODE solver")
    _add_data(p, required=False)
    p.add_argument("--checkpoint")
    p.add_argument("--grid", help="grid CSV; otherwise built from --mode/--N")
    _add_grid_choice(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--tol", type=float, default=0.01)
    _add_out(p)

    p = add("toy", cmd_toy, "two-point model curves")
    p.add_argument("--a", type=float, default=1.0)
    _add_range(p)
    _add_out(p, seed=False)

    p = add("compare", cmd_compare, "InfoNoise vs log-uniform training, held-out MSE curves")
    _add_data(p, required=False)
    _add_scheduler(p)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--eval-every", dest="eval_every", type=int, default=250)
    p.add_argument("--n-heldout", dest="n_heldout", type=int, default=512, help="points per sigma level")
    p.add_argument("--n-levels", dest="n_levels", type=int, default=7)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", "--batch_size", dest="batch_size", type=int, default=64)
    p.add_argument("--hidden", type=_hidden, default=[64, 64])
    _add_out(p)

    p = add("replay", cmd_replay, "re-run the invocation recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out")

    parser._subcommands = table
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args) or 0)
    except InfoNoiseError as exc:
        print(f"infonoise {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"infonoise {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
