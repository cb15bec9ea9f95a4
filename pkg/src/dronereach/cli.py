"""Experiment runner: sweeps of simulation variants written out as CSV."""

from __future__ import annotations

import argparse
import itertools
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .simharness import MetricsRow, SimConfig, SimResult, run_simulation
from .strategies import STRATEGIES

CSV_HEADER = "request,accepted,success,aborted,recall,precision,edge_coverage,acc_rate,succ_rate,del_rate"
AGG_METRICS = ("recall", "precision", "edge_coverage", "acc_rate", "succ_rate", "del_rate")


@dataclass(frozen=True)
class ExperimentSpec:
    variants: tuple[SimConfig, ...]
    out_dir: Path
    jobs: int = 1
    snapshots: bool = False

    def __post_init__(self):
        if not self.variants:
            raise ValueError("an experiment needs at least one variant")


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _strategy_list(text: str) -> list[str]:
    vals = [t.strip() for t in text.split(",") if t.strip()]
    bad = [v for v in vals if v not in STRATEGIES]
    if bad or not vals:
        raise argparse.ArgumentTypeError(f"invalid choice {bad[0] if bad else text!r} (choose from {', '.join(STRATEGIES)})")
    return vals


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dronereach", description="Run delivery-drone exploration experiments.")
    p.add_argument("--config", metavar="FILE", help="key=value file; command-line flags override it")
    p.add_argument("--map", default="random:200,5", help="map file, random:n,k, grid:r,c or osm:file")
    p.add_argument("--strategy", type=_strategy_list, default=["frontier"],
                   help=f"one or more of {', '.join(STRATEGIES)} (comma-separated)")
    p.add_argument("--requests", type=_positive_int, default=2000)
    p.add_argument("--phi", type=float, default=0.95)
    p.add_argument("--alpha", type=_float_list, default=[0.0], help="comma-separated sweep values")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--kappa", type=float, default=0.95)
    p.add_argument("--safety", type=_on_off, default=False, metavar="{on,off}")
    p.add_argument("--e-max", type=float, default=None, help="fixed e_max (default: largest believed edge energy)")
    p.add_argument("--budget-fraction", type=float, default=0.6)
    p.add_argument("--prior-k", type=float, default=0.06)
    p.add_argument("--seed", type=_int_list, default=[0], help="comma-separated seeds")
    p.add_argument("--out", default="results", metavar="DIR")
    p.add_argument("--jobs", type=_positive_int, default=1)
    p.add_argument("--snapshots", action="store_true", help="also dump final belief snapshots as JSON")
    return p


def _config_argv(path: str, parser: argparse.ArgumentParser) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        parser.error(f"argument --config: cannot read {path}: {exc.strerror}")
    argv: list[str] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("_", "-")
        if not sep or not key or key == "config":
            parser.error(f"argument --config: {path}:{n}: expected key=value")
        flag = "--" + key
        if flag not in parser._option_string_actions:
            parser.error(f"argument --config: {path}:{n}: unknown key {key!r}")
        if flag == "--snapshots":
            if value.strip() in ("1", "true", "on", "yes"):
                argv.append(flag)
            continue
        argv += [flag, value.strip()]
    return argv


def parse_args(argv: Sequence[str] | None = None) -> ExperimentSpec:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        argv = _config_argv(pre.config, parser) + argv
    args = parser.parse_args(argv)
    variants = []
    for strategy, alpha, seed in itertools.product(args.strategy, args.alpha, args.seed):
        try:
            variants.append(
                SimConfig(
                    map_source=args.map,
                    strategy=strategy,
                    requests=args.requests,
                    phi=args.phi,
                    alpha=alpha,
                    beta=args.beta,
                    kappa=args.kappa,
                    safety=args.safety,
                    e_max=args.e_max,
                    budget_fraction=args.budget_fraction,
                    prior_k=args.prior_k,
                    seed=seed,
                )
            )
        except ValueError as exc:
            parser.error(str(exc))
    return ExperimentSpec(tuple(variants), Path(args.out), args.jobs, args.snapshots)


def variant_name(cfg: SimConfig) -> str:
    return f"{cfg.strategy}_alpha{cfg.alpha:g}_seed{cfg.seed}"


def format_row(r: MetricsRow) -> str:
    return (
        f"{r.request},{int(r.accepted)},{int(r.success)},{int(r.aborted)},"
        f"{r.recall:.6f},{r.precision:.6f},{r.edge_coverage:.6f},"
        f"{r.acc_rate:.6f},{r.succ_rate:.6f},{r.del_rate:.6f}"
    )


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    return "\n".join([CSV_HEADER, *(format_row(r) for r in rows)]) + "\n"


def aggregate_csv(results: Sequence[SimResult]) -> str:
    """Mean and population std of each run's final row, per (strategy, alpha)."""
    groups: dict[tuple[str, float], list[MetricsRow]] = {}
    for res in results:
        groups.setdefault((res.config.strategy, res.config.alpha), []).append(res.rows[-1])
    cols = ["strategy", "alpha", "runs"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "std")]
    lines = [",".join(cols)]
    for (strategy, alpha), finals in sorted(groups.items()):
        cells = [strategy, f"{alpha:.6f}", str(len(finals))]
        for m in AGG_METRICS:
            vals = [getattr(r, m) for r in finals]
            cells += [f"{statistics.fmean(vals):.6f}", f"{statistics.pstdev(vals):.6f}"]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def run_experiment(spec: ExperimentSpec) -> int:
    """Run every variant and write its CSV plus ``aggregate.csv``; 0 iff all variants completed."""
    try:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {spec.out_dir}: {exc}", file=sys.stderr)
        return 1
    results: list[SimResult | None] = [None] * len(spec.variants)
    failed = 0

    def finish(i: int, res: SimResult) -> None:
        results[i] = res
        name = variant_name(res.config)
        _write(spec.out_dir / f"{name}.csv", metrics_csv(res.rows))
        if spec.snapshots:
            _write(spec.out_dir / f"{name}.beliefs.json", res.bank.dumps_snapshot())

    if spec.jobs > 1 and len(spec.variants) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            futures = [pool.submit(run_simulation, cfg) for cfg in spec.variants]
            for i, fut in enumerate(futures):
                try:
                    finish(i, fut.result())
                except Exception as exc:  # noqa: BLE001 - report and keep the rest
                    failed += 1
                    print(f"error: {variant_name(spec.variants[i])}: {exc}", file=sys.stderr)
    else:
        for i, cfg in enumerate(spec.variants):
            try:
                finish(i, run_simulation(cfg))
            except Exception as exc:  # noqa: BLE001
                failed += 1
                print(f"error: {variant_name(cfg)}: {exc}", file=sys.stderr)

    done = [r for r in results if r is not None]
    if done:
        try:
            _write(spec.out_dir / "aggregate.csv", aggregate_csv(done))
        except OSError as exc:
            print(f"error: cannot write aggregate: {exc}", file=sys.stderr)
            return 1
        for line in aggregate_csv(done).splitlines():
            print(line)
    return 0 if failed == 0 else 1


def main(argv: Sequence[str] | None = None) -> int:
    return run_experiment(parse_args(argv))
