"""Command-line interface: train / eval / sweep / cost / export-plots / gen-data.

Every subcommand prints its fully resolved configuration (all defaults
materialized) before doing anything, and is deterministic given its flags
and seed. Exit codes are script-friendly:

    0  success
    2  usage errors (bad flags, invariant violations, malformed grids)
    3  data or file errors (IDX/checkpoint/config files)
    4  numeric failures (divergence, non-finite values)
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import data as data_mod
from .data import IdxFormatError
from .hwmodel import HwConfig, HwConfigError, estimate, load_hw_config
from .learning import DivergenceError, TrainConfig, evaluate, train
from .network import (
    ArchError,
    CheckpointError,
    load_checkpoint,
    make_network,
    save_checkpoint,
)
from .neuron import LifParams, SurrogateSpec
from .numerics import NonFiniteError, derive_seed, make_rng
from .sweep import (
    GridError,
    compare,
    frontier,
    load_grid,
    read_result_csv,
    run_sweep,
    write_metrics_csv,
)

SYNTH_CLASSES = 10


def _print_config(name: str, args: argparse.Namespace) -> None:
    print(f"[{name}] resolved configuration:")
    for key in sorted(vars(args)):
        if key == "func":
            continue
        print(f"  {key} = {getattr(args, key)}")


def _load_dataset(data_arg: str, seed: int, n_per_class: int, side: int, noise: float):
    """'synth' builds the generator dataset (seeded from the run seed);
    anything else is a directory holding images.idx / labels.idx."""
    if data_arg == "synth":
        return data_mod.synth_digits(n_per_class, SYNTH_CLASSES, side, noise, derive_seed(seed, "data"))
    root = Path(data_arg)
    return data_mod.load_idx(root / "images.idx", root / "labels.idx")


def _split(dataset, seed: int):
    return data_mod.split_train_test(dataset, 0.8, derive_seed(seed, "split"))


def cmd_train(args) -> int:
    _print_config("train", args)
    dataset = _load_dataset(args.data, args.seed, args.synth_n, args.synth_side, args.synth_noise)
    spec = make_network(
        args.arch,
        dataset.input_shape,
        args.timesteps,
        LifParams(args.beta, args.theta),
        SurrogateSpec(args.surrogate, args.scale),
    )
    cfg = TrainConfig(
        epochs=args.epochs,
        batch=args.batch,
        lr=args.lr,
        optimizer=args.optimizer,
        seed=args.seed,
        encoder=args.encoder,
        clip_norm=args.clip_norm,
    )
    state, metrics = train(spec, dataset, cfg)
    save_checkpoint(args.out, spec, state, args.seed)
    write_metrics_csv(args.metrics, metrics)
    if metrics:
        last = metrics[-1]
        print(
            f"trained {cfg.epochs} epochs: test_acc={last.test_acc:.4f} "
            f"mean_fire_rate={last.mean_fire_rate:.4f}"
        )
    else:
        print("0 epochs requested: wrote initialized weights")
    print(f"checkpoint -> {args.out}")
    print(f"metrics    -> {args.metrics}")
    return 0


def _restore(args):
    spec, state, seed = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data, seed, args.synth_n, args.synth_side, args.synth_noise)
    _, test_set = _split(dataset, seed)
    encoder = data_mod.Encoder(args.encoder, spec.timesteps)
    rng = make_rng(derive_seed(seed, "final-eval"))
    acc, report = evaluate(spec, state, test_set, encoder, rng)
    return spec, state, seed, test_set, acc, report


def cmd_eval(args) -> int:
    _print_config("eval", args)
    spec, _, _, test_set, acc, report = _restore(args)
    print(f"test accuracy: {acc:.4f}  ({test_set.images.shape[0]} samples)")
    print(f"{'stream':<16}{'spikes':>12}{'slots':>12}{'rate':>10}")
    for entry in report.layers:
        print(f"{entry.name:<16}{entry.spikes:>12}{entry.slots:>12}{entry.rate:>10.4f}")
    print(f"aggregate firing rate (LIF layers): {report.aggregate_rate:.4f}")
    return 0


def cmd_cost(args) -> int:
    _print_config("cost", args)
    hw = load_hw_config(args.hw_config) if args.hw_config else HwConfig()
    spec, _, _, _, acc, report = _restore(args)
    cost = estimate(spec, report, hw, pipeline=args.pipeline)
    print(cost.table())
    if args.pipeline:
        print(f"pipelined steady-state FPS: {cost.pipelined_fps:.2f}")
    print(f"test accuracy: {acc:.4f}")
    if args.out:
        header = "arch,encoder,test_acc,latency_s,dyn_energy_j,avg_power_w,fps,fps_per_w,pipelined_fps\n"
        line = (
            f"{spec.arch},{args.encoder},{acc!r},{cost.latency_s!r},{cost.dyn_energy_j!r},"
            f"{cost.avg_power_w!r},{cost.fps!r},{cost.fps_per_w!r},{cost.pipelined_fps!r}\n"
        )
        path = Path(args.out)
        new_file = not path.exists()
        with open(path, "a") as f:
            if new_file:
                f.write(header)
            f.write(line)
        print(f"cost row   -> {args.out}")
    return 0


def cmd_sweep(args) -> int:
    _print_config("sweep", args)
    grid = load_grid(args.grid)
    hw = load_hw_config(args.hw_config) if args.hw_config else HwConfig()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / "results.csv"
    result = run_sweep(grid, out_csv, hw=hw, workers=args.workers, resume=args.resume)
    ok_rows = [r for r in result.rows if r.status == "ok"]
    print(f"sweep complete: {len(ok_rows)}/{len(result.rows)} runs ok -> {out_csv}")
    front = frontier(result)
    print("pareto frontier (accuracy vs FPS/W):")
    for row in front:
        print(f"  {row.point_key}: acc={row.test_acc:.4f} fps/w={row.fps_per_w:.2f}")
    best_acc = max(
        (r for r in result.aggregates if r.test_acc is not None),
        key=lambda r: (r.test_acc, r.fps_per_w),
    )
    best_eff = max(
        (r for r in result.aggregates if r.test_acc is not None),
        key=lambda r: (r.fps_per_w, r.test_acc),
    )
    if best_acc.point_key != best_eff.point_key:
        delta = compare(result, best_eff.point_key, best_acc.point_key)
        print(
            f"best-efficiency vs best-accuracy: latency {delta.d_latency * 100:+.1f}%, "
            f"accuracy {delta.d_acc * 100:+.2f}%, FPS/W ratio {delta.fpsw_ratio:.2f}x"
        )
    return 0


def cmd_export_plots(args) -> int:
    _print_config("export-plots", args)
    result = read_result_csv(args.csv)
    if not result.aggregates:
        raise GridError(f"{args.csv}: no aggregate rows to export")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    surrogates = sorted({r.surrogate for r in result.aggregates})
    scales = sorted({r.scale for r in result.aggregates})
    if len(scales) > 1:
        for surrogate in surrogates:
            rows = sorted(
                (r for r in result.aggregates if r.surrogate == surrogate and r.test_acc is not None),
                key=lambda r: r.scale,
            )
            path = out_dir / f"scale_series_{surrogate}.tsv"
            with open(path, "w") as f:
                f.write("scale\ttest_acc\tmean_fire_rate\tfps_per_w\n")
                for r in rows:
                    f.write(f"{r.scale:g}\t{r.test_acc!r}\t{r.mean_fire_rate!r}\t{r.fps_per_w!r}\n")
            written.append(path)

    betas = sorted({r.beta for r in result.aggregates})
    thetas = sorted({r.theta for r in result.aggregates})
    if len(betas) > 1 or len(thetas) > 1:
        path = out_dir / "beta_theta_table.tsv"
        with open(path, "w") as f:
            f.write("beta\ttheta\ttest_acc\tmean_fire_rate\tlatency_s\tfps_per_w\n")
            for r in sorted(result.aggregates, key=lambda r: (r.beta, r.theta)):
                if r.test_acc is None:
                    f.write(f"{r.beta:g}\t{r.theta:g}\tfailed\tfailed\tfailed\tfailed\n")
                else:
                    f.write(
                        f"{r.beta:g}\t{r.theta:g}\t{r.test_acc!r}\t{r.mean_fire_rate!r}"
                        f"\t{r.latency_s!r}\t{r.fps_per_w!r}\n"
                    )
        written.append(path)

    path = out_dir / "frontier.tsv"
    with open(path, "w") as f:
        f.write("point_key\ttest_acc\tfps_per_w\tlatency_s\n")
        for r in frontier(result):
            f.write(f"{r.point_key}\t{r.test_acc!r}\t{r.fps_per_w!r}\t{r.latency_s!r}\n")
    written.append(path)

    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_gen_data(args) -> int:
    _print_config("gen-data", args)
    dataset = data_mod.synth_digits(args.n_per_class, args.classes, args.side, args.noise, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_mod.save_idx(dataset, out / "images.idx", out / "labels.idx")
    print(f"wrote {out / 'images.idx'} and {out / 'labels.idx'} ({dataset.images.shape[0]} images)")
    return 0


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--synth-n", type=int, default=48, help="synthetic images per class")
    p.add_argument("--synth-side", type=int, default=12, help="synthetic image side length (pixels)")
    p.add_argument("--synth-noise", type=float, default=0.3, help="synthetic uniform noise amplitude")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snnkit",
        description="Spiking-network training, sparsity profiling, and accelerator cost modeling",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="train a spiking network", formatter_class=fmt)
    p.add_argument("--arch", default="8C3-MP2-32-10", help="architecture string, e.g. 32C3-P2-32C3-MP2-256-10")
    p.add_argument("--surrogate", default="fast_sigmoid", choices=["arctangent", "fast_sigmoid"])
    p.add_argument("--scale", type=float, default=1.0, help="surrogate derivative scale (alpha or k)")
    p.add_argument("--beta", type=float, default=0.25, help="membrane leak factor in [0,1]")
    p.add_argument("--theta", type=float, default=1.0, help="firing threshold (> 0)")
    p.add_argument("--timesteps", type=int, default=10, help="simulation steps per sample")
    p.add_argument("--epochs", type=int, default=25, help="training epochs (cosine-annealed lr)")
    p.add_argument("--lr", type=float, default=1e-3, help="base learning rate")
    p.add_argument("--batch", type=int, default=16, help="batch size")
    p.add_argument("--seed", type=int, default=42, help="master seed (weights, shuffles, encoders)")
    p.add_argument("--data", default="synth", help="'synth' or a directory with images.idx/labels.idx")
    p.add_argument("--encoder", default="direct_current", choices=list(data_mod.ENCODER_KINDS))
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--clip-norm", type=float, default=None, help="global-norm gradient clip (off when unset)")
    p.add_argument("--out", default="model.snnb", help="checkpoint output path")
    p.add_argument("--metrics", default="metrics.csv", help="per-epoch metrics CSV output path")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synth", help="'synth' or a directory with images.idx/labels.idx")
    p.add_argument("--encoder", default="direct_current", choices=list(data_mod.ENCODER_KINDS))
    _add_synth_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", help="model accelerator cost for a checkpoint", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="synth", help="'synth' or a directory with images.idx/labels.idx")
    p.add_argument("--encoder", default="direct_current", choices=list(data_mod.ENCODER_KINDS))
    p.add_argument("--hw-config", default=None, help="hardware config file (key = value); defaults built in")
    p.add_argument("--pipeline", action="store_true", help="also report pipelined steady-state FPS")
    p.add_argument("--out", default=None, help="append a summary CSV row here")
    _add_synth_flags(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("sweep", help="run a hyperparameter sweep from a grid file", formatter_class=fmt)
    p.add_argument("--grid", required=True, help="sweep definition file")
    p.add_argument("--out-dir", default="sweep_out", help="output directory (results.csv)")
    p.add_argument("--workers", type=int, default=1, help="parallel training processes")
    p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=True,
                   help="skip (point, repeat) rows already in results.csv")
    p.add_argument("--hw-config", default=None, help="hardware config file; defaults built in")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-plots", help="derive plot-ready TSV series from a sweep CSV", formatter_class=fmt)
    p.add_argument("--csv", required=True, help="sweep results.csv")
    p.add_argument("--out-dir", default="plot_data")
    p.set_defaults(func=cmd_export_plots)

    p = sub.add_parser("gen-data", help="materialize the synthetic dataset as IDX files", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-per-class", type=int, default=48)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--side", type=int, default=12)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IdxFormatError, CheckpointError, HwConfigError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except (DivergenceError, NonFiniteError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except (ArchError, GridError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
