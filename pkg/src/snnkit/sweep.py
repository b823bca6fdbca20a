"""Hyperparameter sweeps: grids over surrogate/scale/beta/theta.

A sweep trains one network per grid point (times `repeats`), evaluates
test accuracy and layer firing rates, runs the hardware cost model, and
streams everything into one CSV - the single source of truth downstream
tools (frontier, compare, plot export) read from.

Reproducibility rules:

* every run's seed is SHA-256-derived from (grid seed, point key, repeat),
  so any single point can be rerun in isolation;
* the dataset is built once from the grid seed and shared by all points
  (runs differ only in hyperparameters and training randomness);
* rows are written in canonical point order regardless of worker
  completion order, so repeated sweeps produce identical bytes apart from
  wall-clock columns;
* a killed sweep leaves a valid CSV prefix; rerunning with resume skips
  every (point, repeat) already present and computes only the rest.

CSV schema v1 (layer-rate columns expand with the architecture):

    point_key, surrogate, scale, beta, theta, repeat, seed, test_acc,
    mean_fire_rate, l1_rate, ..., latency_s, dyn_energy_j, avg_power_w,
    fps, fps_per_w, status, wallclock_s

Per-repeat rows have status ok/failed; one aggregate row per point
(repeat='agg', status='aggregate') carries means over successful repeats.

Grid files are key = value text: listing several comma-separated values
for surrogate/scale/beta/theta makes that key a sweep axis; everything
else is the shared run configuration (see `load_grid`).
"""

from __future__ import annotations

import csv
import multiprocessing
import os
import time
from dataclasses import dataclass

import numpy as np

from . import data as data_mod
from .hwmodel import HwConfig, estimate
from .learning import DivergenceError, TrainConfig, evaluate, train
from .network import NetworkSpec, make_network
from .neuron import LifParams, SurrogateSpec
from .numerics import NonFiniteError, derive_seed, make_rng

CSV_VERSION_LINE = "# snnkit sweep results v1"
METRICS_HEADER = ["epoch", "lr", "train_loss", "test_acc", "mean_fire_rate", "wallclock_s"]


class GridError(ValueError):
    """Sweep grid file is malformed or over budget."""


@dataclass(frozen=True)
class SweepGrid:
    surrogates: tuple[str, ...] = ("fast_sigmoid",)
    scales: tuple[float, ...] = (1.0,)
    betas: tuple[float, ...] = (0.25,)
    thetas: tuple[float, ...] = (1.0,)
    repeats: int = 3
    budget: int = 500
    seed: int = 42
    arch: str = "8C3-MP2-32-10"
    timesteps: int = 10
    epochs: int = 8
    batch: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    encoder: str = data_mod.DIRECT_CURRENT
    data: str = "synth"
    n_per_class: int = 48
    side: int = 12
    noise: float = 0.3
    classes: int = 10

    def __post_init__(self):
        for name in ("surrogates", "scales", "betas", "thetas"):
            if not getattr(self, name):
                raise GridError(f"axis {name} must be non-empty")
        if self.repeats < 1:
            raise GridError("repeats must be >= 1")
        n_runs = len(self.points()) * self.repeats
        if n_runs > self.budget:
            raise GridError(f"{n_runs} runs exceed the budget of {self.budget}")

    def points(self) -> list["Point"]:
        """Cartesian product of the axes in canonical (sorted) order."""
        return [
            Point(s, sc, b, th)
            for s in sorted(self.surrogates)
            for sc in sorted(self.scales)
            for b in sorted(self.betas)
            for th in sorted(self.thetas)
        ]


@dataclass(frozen=True)
class Point:
    surrogate: str
    scale: float
    beta: float
    theta: float

    def key(self) -> str:
        return f"{self.surrogate},scale={self.scale:g},beta={self.beta:g},theta={self.theta:g}"


_GRID_FLOAT_AXES = {"scale", "beta", "theta"}
_GRID_SCALARS = {
    "repeats": int,
    "budget": int,
    "seed": int,
    "arch": str,
    "timesteps": int,
    "epochs": int,
    "batch": int,
    "lr": float,
    "optimizer": str,
    "encoder": str,
    "data": str,
    "n_per_class": int,
    "side": int,
    "noise": float,
    "classes": int,
}


def load_grid(path) -> SweepGrid:
    """Parse a sweep definition file (key = value, '#' comments)."""
    kwargs = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise GridError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            try:
                if key == "surrogate":
                    kwargs["surrogates"] = tuple(v.strip() for v in raw.split(","))
                elif key in _GRID_FLOAT_AXES:
                    kwargs[key + "s"] = tuple(float(v) for v in raw.split(","))
                elif key in _GRID_SCALARS:
                    kwargs[key] = _GRID_SCALARS[key](raw)
                else:
                    raise GridError(f"{path}:{lineno}: unknown key {key!r}")
            except GridError:
                raise
            except ValueError as e:
                raise GridError(f"{path}:{lineno}: bad value for {key}: {e}") from None
    return SweepGrid(**kwargs)


@dataclass
class SweepRow:
    point_key: str
    surrogate: str
    scale: float
    beta: float
    theta: float
    repeat: str  # '0', '1', ... or 'agg'
    seed: str
    test_acc: float | None
    mean_fire_rate: float | None
    layer_rates: tuple[float, ...] | None
    latency_s: float | None
    dyn_energy_j: float | None
    avg_power_w: float | None
    fps: float | None
    fps_per_w: float | None
    status: str  # 'ok' | 'failed' | 'aggregate'
    wallclock_s: float


@dataclass
class SweepResult:
    rows: list[SweepRow]
    aggregates: list[SweepRow]
    layer_names: list[str]

    def aggregate(self, point_key: str) -> SweepRow:
        for row in self.aggregates:
            if row.point_key == point_key:
                return row
        raise KeyError(f"no sweep point with key {point_key!r}")


def _spiking_layer_names(grid: SweepGrid) -> list[str]:
    spec = _point_spec(grid, grid.points()[0])
    from .network import _lif_layer_names

    return [n for n, layer in zip(_lif_layer_names(spec), spec.layers) if layer.kind != "pool"]


def _point_spec(grid: SweepGrid, point: Point) -> NetworkSpec:
    input_shape = (1, grid.side, grid.side)
    if grid.data != "synth":
        dataset = _grid_dataset(grid)
        input_shape = dataset.input_shape
    return make_network(
        grid.arch,
        input_shape,
        grid.timesteps,
        LifParams(point.beta, point.theta),
        SurrogateSpec(point.surrogate, point.scale),
    )


_DATASET_CACHE: dict = {}


def _grid_dataset(grid: SweepGrid) -> data_mod.LabeledDataset:
    key = (grid.data, grid.n_per_class, grid.side, grid.noise, grid.classes, grid.seed)
    if key not in _DATASET_CACHE:
        if grid.data == "synth":
            _DATASET_CACHE[key] = data_mod.synth_digits(
                grid.n_per_class, grid.classes, grid.side, grid.noise, derive_seed(grid.seed, "data")
            )
        else:
            _DATASET_CACHE[key] = data_mod.load_idx(
                f"{grid.data}/images.idx", f"{grid.data}/labels.idx"
            )
    return _DATASET_CACHE[key]


def run_point(grid: SweepGrid, point: Point, repeat: int, hw: HwConfig) -> SweepRow:
    """Train and cost one (point, repeat); failures become a 'failed' row."""
    t0 = time.perf_counter()
    seed = derive_seed(grid.seed, point.key(), repeat)
    empty = dict(
        test_acc=None,
        mean_fire_rate=None,
        layer_rates=None,
        latency_s=None,
        dyn_energy_j=None,
        avg_power_w=None,
        fps=None,
        fps_per_w=None,
    )
    base = dict(
        point_key=point.key(),
        surrogate=point.surrogate,
        scale=point.scale,
        beta=point.beta,
        theta=point.theta,
        repeat=str(repeat),
        seed=str(seed),
    )
    try:
        dataset = _grid_dataset(grid)
        spec = _point_spec(grid, point)
        cfg = TrainConfig(
            epochs=grid.epochs,
            batch=grid.batch,
            lr=grid.lr,
            optimizer=grid.optimizer,
            seed=seed,
            encoder=grid.encoder,
        )
        train_set, test_set = data_mod.split_train_test(dataset, 0.8, derive_seed(seed, "split"))
        state, _ = train(spec, train_set, cfg, test_set=test_set)
        encoder = data_mod.Encoder(grid.encoder, grid.timesteps)
        acc, report = evaluate(spec, state, test_set, encoder, make_rng(derive_seed(seed, "final-eval")))
        cost = estimate(spec, report, hw)
        return SweepRow(
            **base,
            test_acc=acc,
            mean_fire_rate=report.aggregate_rate,
            layer_rates=tuple(e.rate for e in report.lif_layers()),
            latency_s=cost.latency_s,
            dyn_energy_j=cost.dyn_energy_j,
            avg_power_w=cost.avg_power_w,
            fps=cost.fps,
            fps_per_w=cost.fps_per_w,
            status="ok",
            wallclock_s=time.perf_counter() - t0,
        )
    except (DivergenceError, NonFiniteError):
        return SweepRow(**base, **empty, status="failed", wallclock_s=time.perf_counter() - t0)


def _aggregate_rows(grid: SweepGrid, rows: list[SweepRow]) -> list[SweepRow]:
    by_point: dict[str, list[SweepRow]] = {}
    for row in rows:
        by_point.setdefault(row.point_key, []).append(row)
    aggregates = []
    for point in grid.points():
        group = by_point.get(point.key(), [])
        ok = [r for r in group if r.status == "ok"]
        base = dict(
            point_key=point.key(),
            surrogate=point.surrogate,
            scale=point.scale,
            beta=point.beta,
            theta=point.theta,
            repeat="agg",
            seed="",
            status="aggregate",
            wallclock_s=float(np.sum([r.wallclock_s for r in group])) if group else 0.0,
        )
        if not ok:
            aggregates.append(
                SweepRow(
                    **base,
                    test_acc=None,
                    mean_fire_rate=None,
                    layer_rates=None,
                    latency_s=None,
                    dyn_energy_j=None,
                    avg_power_w=None,
                    fps=None,
                    fps_per_w=None,
                )
            )
            continue

        def mean(field):
            return float(np.mean([getattr(r, field) for r in ok]))

        n_layers = len(ok[0].layer_rates)
        aggregates.append(
            SweepRow(
                **base,
                test_acc=mean("test_acc"),
                mean_fire_rate=mean("mean_fire_rate"),
                layer_rates=tuple(
                    float(np.mean([r.layer_rates[i] for r in ok])) for i in range(n_layers)
                ),
                latency_s=mean("latency_s"),
                dyn_energy_j=mean("dyn_energy_j"),
                avg_power_w=mean("avg_power_w"),
                fps=mean("fps"),
                fps_per_w=mean("fps_per_w"),
            )
        )
    return aggregates


def _csv_header(layer_names: list[str]) -> list[str]:
    return (
        ["point_key", "surrogate", "scale", "beta", "theta", "repeat", "seed", "test_acc", "mean_fire_rate"]
        + [f"l{i + 1}_rate" for i in range(len(layer_names))]
        + ["latency_s", "dyn_energy_j", "avg_power_w", "fps", "fps_per_w", "status", "wallclock_s"]
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row_fields(row: SweepRow, n_layers: int) -> list[str]:
    rates = list(row.layer_rates) if row.layer_rates is not None else [None] * n_layers
    if len(rates) < n_layers:
        rates = rates + [None] * (n_layers - len(rates))
    return (
        [row.point_key, row.surrogate, _fmt(row.scale), _fmt(row.beta), _fmt(row.theta), row.repeat, row.seed]
        + [_fmt(row.test_acc), _fmt(row.mean_fire_rate)]
        + [_fmt(r) for r in rates]
        + [
            _fmt(row.latency_s),
            _fmt(row.dyn_energy_j),
            _fmt(row.avg_power_w),
            _fmt(row.fps),
            _fmt(row.fps_per_w),
            row.status,
            f"{row.wallclock_s:.3f}",
        ]
    )


def _parse_row(fields: list[str], n_layers: int) -> SweepRow:
    def opt_float(s):
        return float(s) if s else None

    rates = [opt_float(s) for s in fields[9 : 9 + n_layers]]
    tail = fields[9 + n_layers :]
    return SweepRow(
        point_key=fields[0],
        surrogate=fields[1],
        scale=float(fields[2]),
        beta=float(fields[3]),
        theta=float(fields[4]),
        repeat=fields[5],
        seed=fields[6],
        test_acc=opt_float(fields[7]),
        mean_fire_rate=opt_float(fields[8]),
        layer_rates=None if any(r is None for r in rates) else tuple(rates),
        latency_s=opt_float(tail[0]),
        dyn_energy_j=opt_float(tail[1]),
        avg_power_w=opt_float(tail[2]),
        fps=opt_float(tail[3]),
        fps_per_w=opt_float(tail[4]),
        status=tail[5],
        wallclock_s=float(tail[6]) if tail[6] else 0.0,
    )


def read_result_csv(path) -> SweepResult:
    with open(path, newline="") as f:
        lines = [ln for ln in f.read().splitlines() if ln and not ln.startswith("#")]
    if not lines:
        return SweepResult([], [], [])
    reader = csv.reader(lines)
    header = next(reader)
    n_layers = sum(1 for h in header if h.endswith("_rate") and h != "mean_fire_rate")
    rows, aggregates = [], []
    expected = len(header)
    for fields in reader:
        if len(fields) != expected:
            continue  # tolerate a truncated tail line from a killed run
        row = _parse_row(fields, n_layers)
        (aggregates if row.repeat == "agg" else rows).append(row)
    layer_names = [f"l{i + 1}" for i in range(n_layers)]
    return SweepResult(rows, aggregates, layer_names)


def _pool_worker(args):
    grid, point, repeat, hw = args
    return run_point(grid, point, repeat, hw)


def run_sweep(
    grid: SweepGrid,
    out_csv,
    hw: HwConfig | None = None,
    workers: int = 1,
    resume: bool = True,
) -> SweepResult:
    """Execute the grid, streaming rows to `out_csv` in canonical order.

    With resume, rows already present in the CSV are kept verbatim and
    their runs skipped. Aggregate rows are recomputed at the end of every
    invocation (they are derived data).
    """
    hw = hw or HwConfig()
    layer_names = _spiking_layer_names(grid)
    jobs = [(point, repeat) for point in grid.points() for repeat in range(grid.repeats)]
    cached: dict[tuple[str, str], SweepRow] = {}
    if resume and os.path.exists(out_csv):
        for row in read_result_csv(out_csv).rows:
            cached[(row.point_key, row.repeat)] = row
    pending = [
        (grid, point, repeat, hw)
        for point, repeat in jobs
        if (point.key(), str(repeat)) not in cached
    ]

    n_layers = len(layer_names)
    rows: list[SweepRow] = []
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        f.write(CSV_VERSION_LINE + "\n")
        writer.writerow(_csv_header(layer_names))
        f.flush()

        def emit(row: SweepRow):
            rows.append(row)
            writer.writerow(_row_fields(row, n_layers))
            f.flush()

        if workers <= 1 or not pending:
            for point, repeat in jobs:
                key = (point.key(), str(repeat))
                if key in cached:
                    emit(cached[key])
                else:
                    emit(run_point(grid, point, repeat, hw))
        else:
            with multiprocessing.Pool(processes=workers) as pool:
                results = pool.imap(_pool_worker, pending)
                for point, repeat in jobs:
                    key = (point.key(), str(repeat))
                    if key in cached:
                        emit(cached[key])
                    else:
                        emit(next(results))

        aggregates = _aggregate_rows(grid, rows)
        for agg in aggregates:
            writer.writerow(_row_fields(agg, n_layers))
        f.flush()
    return SweepResult(rows, aggregates, layer_names)


@dataclass(frozen=True)
class DeltaReport:
    """compare() output: (A - B)/B percentage deltas and the FPS/W ratio."""

    key_a: str
    key_b: str
    d_acc: float
    d_latency: float
    fpsw_ratio: float


def frontier(result: SweepResult) -> list[SweepRow]:
    """Pareto-optimal aggregate rows under (max accuracy, max FPS/W).

    A row is dominated if another row is at least as good on both axes and
    strictly better on one. Exact ties are kept. Failed points are ignored.
    """
    candidates = [r for r in result.aggregates if r.status == "aggregate" and r.test_acc is not None]
    if not candidates and result.rows:
        candidates = [r for r in result.rows if r.status == "ok"]
    if not candidates:
        raise ValueError("no successful rows to build a frontier from")
    keep = []
    for row in candidates:
        dominated = False
        for other in candidates:
            if other is row:
                continue
            if (
                other.test_acc >= row.test_acc
                and other.fps_per_w >= row.fps_per_w
                and (other.test_acc > row.test_acc or other.fps_per_w > row.fps_per_w)
            ):
                dominated = True
                break
        if not dominated:
            keep.append(row)
    keep.sort(key=lambda r: (-r.test_acc, -r.fps_per_w, r.point_key))
    return keep


def compare(result: SweepResult, key_a: str, key_b: str) -> DeltaReport:
    """Relative deltas between two sweep points (on their aggregate rows)."""
    a = result.aggregate(key_a)
    b = result.aggregate(key_b)
    if a.test_acc is None or b.test_acc is None:
        raise ValueError("cannot compare failed points")
    return DeltaReport(
        key_a=key_a,
        key_b=key_b,
        d_acc=(a.test_acc - b.test_acc) / b.test_acc,
        d_latency=(a.latency_s - b.latency_s) / b.latency_s,
        fpsw_ratio=a.fps_per_w / b.fps_per_w,
    )


def write_metrics_csv(path, metrics) -> None:
    """Per-epoch training metrics CSV (schema: METRICS_HEADER)."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for m in metrics:
            writer.writerow(
                [m.epoch, repr(m.lr), repr(m.train_loss), repr(m.test_acc), repr(m.mean_fire_rate), f"{m.wallclock_s:.3f}"]
            )
