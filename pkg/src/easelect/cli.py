"""Command-line front-end.

Subcommands: ``fit`` (sample at a fixed epsilon), ``tune`` (grid selection
by BIC or CV), ``simulate`` (write a synthetic dataset), ``benchmark``
(replicated experiment on a named preset), ``summarize`` (render a saved
chain summary as text tables).

CSV files store observations as rows (n x q responses, n x p predictors)
and are transposed on load into the column-observation orientation used
internally.  Results go to stdout or ``--out``; progress and diagnostics go
to stderr.  Exit codes: 0 ok, 2 input error, 3 initialization failure,
4 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import InitializationFailed
from .model_core import Dataset, ModelIndexSet
from .sampler import ChainConfig, ChainSummary, ProposalWeights, run_chain
from .simstudy import PRESETS, MethodSpec, generate, run_experiment
from .tuning import EpsilonGrid, tune_bic, tune_cv
from .matstat import RngStream

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INIT = 3
EXIT_CONFIG = 4


class CliInputError(Exception):
    """A problem with an input file (exit code 2)."""


class _Parser(argparse.ArgumentParser):
    # Flag/usage mistakes are configuration errors, not input errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _read_matrix_csv(path: str, header: bool) -> np.ndarray:
    """Read a numeric CSV with observations as rows."""
    rows: list[list[float]] = []
    width = None
    try:
        handle = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise CliInputError(f"cannot open {path}: {exc}") from exc
    with handle:
        for lineno, line in enumerate(handle, start=1):
            if header and lineno == 1:
                continue
            text = line.strip()
            if not text:
                continue
            fields = text.split(",")
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise CliInputError(f"{path}: line {lineno}: {exc}") from exc
            if any(not np.isfinite(v) for v in values):
                raise CliInputError(f"{path}: line {lineno}: non-finite entry")
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CliInputError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(values)}"
                )
            rows.append(values)
    if not rows:
        raise CliInputError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


def _write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    """Write observations-as-rows CSV at full float precision."""
    with open(path, "w", encoding="utf-8") as handle:
        for row in matrix:
            handle.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_dataset(args) -> Dataset:
    y = _read_matrix_csv(args.y, args.header)
    x = _read_matrix_csv(args.x, args.header)
    if y.shape[0] != x.shape[0]:
        raise CliInputError(
            f"row counts differ: {args.y} has {y.shape[0]}, {args.x} has {x.shape[0]}"
        )
    data = Dataset(y.T, x.T)
    if args.center:
        data = data.center()
    return data


def _emit(payload: str, out: str | None) -> None:
    if out:
        Path(out).write_text(payload, encoding="utf-8")
        print(f"wrote {out}", file=sys.stderr)
    else:
        sys.stdout.write(payload)


def _emit_json(obj: dict, out: str | None) -> None:
    _emit(json.dumps(obj, indent=2) + "\n", out)


def _weights_for(data: Dataset, spec: str) -> ProposalWeights:
    if spec == "corr":
        return ProposalWeights.correlation(data)
    if spec == "uniform":
        return ProposalWeights.uniform(data.p)
    values = _read_matrix_csv(spec, header=False).ravel()
    if values.size != data.p:
        raise CliInputError(
            f"weights file has {values.size} values, expected {data.p}"
        )
    return ProposalWeights(values, kind="file")


def _summary_tables(summary_dict: dict, top: int = 20) -> str:
    lines = [f"{'model':<44}{'prob':>9}{'visits':>8}{'log_mass':>14}"]
    for entry in summary_dict["models"][:top]:
        label = "{" + ",".join(str(j) for j in entry["indices"]) + "}"
        if len(label) > 42:
            label = label[:39] + "..."
        lines.append(
            f"{label:<44}{entry['prob']:>9.4f}{entry['visits']:>8}{entry['log_mass']:>14.3f}"
        )
    lines.append("")
    lines.append(f"{'predictor':<12}{'inclusion':>10}")
    inclusion = summary_dict["inclusion"]
    order = sorted(inclusion, key=lambda k: (-inclusion[k], int(k)))
    for key in order:
        if inclusion[key] < 0.005:
            continue
        lines.append(f"{key:<12}{inclusion[key]:>10.4f}")
    lines.append("")
    lines.append(f"acceptance_rate: {summary_dict['acceptance_rate']:.4f}")
    return "\n".join(lines) + "\n"


def _chain_config(args, data: Dataset, epsilon: float) -> ChainConfig:
    return ChainConfig(
        epsilon=epsilon,
        steps=args.steps,
        burnin=args.burnin,
        rng=RngStream(args.seed),
        weights=_weights_for(data, args.weights),
        initial_model=None,
    )


def _cmd_fit(args) -> int:
    data = _load_dataset(args)
    cfg = _chain_config(args, data, args.epsilon)
    summary = run_chain(data, cfg)
    payload = summary.to_dict()
    if args.format == "table":
        _emit(_summary_tables(payload), args.out)
    else:
        _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_tune(args) -> int:
    data = _load_dataset(args)
    try:
        grid = EpsilonGrid.parse(args.grid)
    except ValueError as exc:
        print(f"bad grid: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = _chain_config(args, data, grid.values[0])
    if args.method == "bic":
        result = tune_bic(data, grid, base, threads=args.threads)
    else:
        result = tune_cv(
            data,
            grid,
            base,
            folds=args.folds,
            final_steps=args.final_steps,
            final_burnin=args.final_burnin,
            threads=args.threads,
        )
    print(f"chosen epsilon: {result.chosen_epsilon}", file=sys.stderr)
    payload = result.to_dict()
    if args.format == "table":
        _emit(_summary_tables(payload["final_chain"]), args.out)
    else:
        _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    if args.preset not in PRESETS:
        print(f"unknown preset: {args.preset}", file=sys.stderr)
        return EXIT_CONFIG
    design = PRESETS[args.preset]
    data, model, b0, v0 = generate(design, RngStream(args.seed))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    _write_matrix_csv(outdir / "y.csv", data.y.T)
    _write_matrix_csv(outdir / "x.csv", data.x.T)
    truth = {
        "design": args.preset,
        "seed": args.seed,
        "true_model": list(model),
        "b0": [[float(v) for v in row] for row in b0],
        "v0": [[float(v) for v in row] for row in v0],
    }
    (outdir / "truth.json").write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {outdir}/y.csv, x.csv, truth.json", file=sys.stderr)
    return EXIT_OK


def _cmd_benchmark(args) -> int:
    if args.preset not in PRESETS:
        print(f"unknown preset: {args.preset}", file=sys.stderr)
        return EXIT_CONFIG
    design = PRESETS[args.preset]
    method = MethodSpec(
        tuner=args.method,
        grid=EpsilonGrid.parse(args.grid) if args.grid else None,
        epsilon=args.epsilon,
        steps=args.steps,
        burnin=args.burnin,
        folds=args.folds,
        weights=args.weights if args.weights in ("corr", "uniform") else "corr",
    )
    report = run_experiment(
        design, args.reps, method, seed=args.seed, threads=args.threads
    )
    print(report.to_table(), file=sys.stderr)
    if args.format == "table":
        _emit(report.to_table() + "\n", args.out)
    else:
        _emit_json(report.to_dict(), args.out)
    return EXIT_OK


def _cmd_summarize(args) -> int:
    try:
        payload = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliInputError(f"cannot open {args.input}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliInputError(f"{args.input}: invalid JSON: {exc}") from exc
    if "final_chain" in payload:
        payload = payload["final_chain"]
    if "models" not in payload:
        raise CliInputError(f"{args.input}: not a chain summary")
    _emit(_summary_tables(payload, top=args.top), args.out)
    return EXIT_OK


def _add_common(sub, *, data: bool) -> None:
    if data:
        sub.add_argument("--y", required=True, help="response CSV (n x q)")
        sub.add_argument("--x", required=True, help="predictor CSV (n x p)")
        sub.add_argument("--header", action="store_true", help="CSV files carry a header row")
        sub.add_argument("--center", action="store_true", help="mean-center each variable")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="write results to this file")
    sub.add_argument("--format", choices=("json", "table"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="easelect", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    fit = subs.add_parser("fit", help="sample the model distribution at a fixed epsilon")
    _add_common(fit, data=True)
    fit.add_argument("--epsilon", type=float, required=True)
    fit.add_argument("--steps", type=int, default=10_000)
    fit.add_argument("--burnin", type=int, default=5_000)
    fit.add_argument("--weights", default="corr", help="corr, uniform, or a weights file")

    tune = subs.add_parser("tune", help="select epsilon over a grid")
    _add_common(tune, data=True)
    tune.add_argument("--grid", default="0.05:10:24", help="grid spec lo:hi:k")
    tune.add_argument("--method", choices=("bic", "cv"), default="bic")
    tune.add_argument("--folds", type=int, default=10)
    tune.add_argument("--steps", type=int, default=None)
    tune.add_argument("--burnin", type=int, default=None)
    tune.add_argument("--final-steps", dest="final_steps", type=int, default=10_000)
    tune.add_argument("--final-burnin", dest="final_burnin", type=int, default=5_000)
    tune.add_argument("--threads", type=int, default=1)
    tune.add_argument("--weights", default="corr")

    sim = subs.add_parser("simulate", help="write one synthetic dataset from a preset")
    _add_common(sim, data=False)
    sim.add_argument("--preset", required=True)
    sim.set_defaults(out="simdata")

    bench = subs.add_parser("benchmark", help="replicated experiment on a preset")
    _add_common(bench, data=False)
    bench.add_argument("--preset", required=True)
    bench.add_argument("--reps", type=int, default=10)
    bench.add_argument("--method", choices=("bic", "cv", "fixed"), default="bic")
    bench.add_argument("--grid", default=None)
    bench.add_argument("--epsilon", type=float, default=None)
    bench.add_argument("--steps", type=int, default=None)
    bench.add_argument("--burnin", type=int, default=None)
    bench.add_argument("--folds", type=int, default=10)
    bench.add_argument("--threads", type=int, default=1)
    bench.add_argument("--weights", default="corr")

    summ = subs.add_parser("summarize", help="render a saved summary as tables")
    summ.add_argument("input", help="chain-summary or tuning-result JSON file")
    summ.add_argument("--top", type=int, default=20)
    summ.add_argument("--out", default=None)
    summ.set_defaults(format="table")
    return parser


_COMMANDS = {
    "fit": _cmd_fit,
    "tune": _cmd_tune,
    "simulate": _cmd_simulate,
    "benchmark": _cmd_benchmark,
    "summarize": _cmd_summarize,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except CliInputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InitializationFailed as exc:
        print(f"initialization failed: {exc}", file=sys.stderr)
        return EXIT_INIT
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
