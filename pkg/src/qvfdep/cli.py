"""
Command-line entry point: ``qvfdep <command> [options]``.

Commands: graph, simulate, moments, correlation, validate, fit, predict,
dic-scan.  Every output file carries the seed, a hash of the inputs and the
package version; nothing time-dependent is written, so reruns with the same
seed are byte-identical.

Exit status: 0 success, 2 unreadable input, 3 invalid model or data,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import families as fam
from . import inference as inf
from . import io
from .families import FamilySpec
from .graph import AdjacencyList, NeighborhoodGraph, spatial_graph, temporal_graph, validate
from .process import ModelSpec, correlation_matrix, mc_validate, simulate_many, summarize_replicates

EXIT_PARSE, EXIT_INVALID, EXIT_NUMERIC = 2, 3, 4
SEED_ENV = "QVFDEP_SEED"

LATTICE_EDGES = ((0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4))
PRESET_N0 = {"fig3-temporal": (0.01, 0.1, 1.0, 10.0), "fig4-spatial": (0.1, 1.0, 10.0)}
PRESET_S0 = 2.0  # correlations do not depend on s0


class CliError(Exception):
    def __init__(self, status: int, kind: str, message: str):
        super().__init__(message)
        self.status, self.kind = status, kind


def lattice() -> AdjacencyList:
    """Five regions; region 3 borders all others."""
    return AdjacencyList(5, LATTICE_EDGES)


def preset_graph(name: str) -> NeighborhoodGraph:
    if name == "fig3-temporal":
        return temporal_graph(16, 2)
    if name in ("fig4-spatial", "fig2-lattice"):
        return spatial_graph(lattice())
    raise CliError(EXIT_PARSE, "parse", f"unknown preset {name!r}")


def preset_specs(name: str, n0: float | None) -> list[tuple[str, ModelSpec]]:
    """``(scenario label, spec)`` pairs; all preset n0 values unless `n0` is given."""
    if name not in PRESET_N0:
        raise CliError(EXIT_PARSE, "parse", f"preset {name!r} has no model; use one of {sorted(PRESET_N0)}")
    graph = preset_graph(name)
    values = PRESET_N0[name] if n0 is None else (n0,)
    return [
        (f"{name}/n0={v:g}", ModelSpec(FamilySpec(fam.FamilyKind.GAMMA_POISSON, PRESET_S0, v), graph, np.ones(graph.m)))
        for v in values
    ]


# ---------------------------------------------------------------------------
# input helpers
# ---------------------------------------------------------------------------


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{path}: {exc}") from exc


def _model_specs(args) -> list[tuple[str, ModelSpec]]:
    if args.preset:
        return preset_specs(args.preset, args.n0)
    if not args.spec:
        raise CliError(EXIT_PARSE, "parse", "need --spec or --preset")
    data = _load_json(args.spec)
    if args.n0 is not None:
        data["n0"] = args.n0
    try:
        spec = ModelSpec.from_dict(data)
    except KeyError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{args.spec}: missing field {exc}") from exc
    return [(Path(args.spec).stem, spec)]


def _data_graph(args, m: int) -> NeighborhoodGraph:
    if args.adjacency:
        try:
            return spatial_graph(io.read_adjacency_csv(args.adjacency, m))
        except FileNotFoundError as exc:
            raise CliError(EXIT_PARSE, "parse", f"{args.adjacency}: file not found") from exc
    return temporal_graph(m, 0 if args.q is None else _single_q(args.q))


def _single_q(q) -> int:
    qs = _q_list(q)
    if len(qs) != 1:
        raise CliError(EXIT_PARSE, "parse", "--q takes a single order for this command")
    return qs[0]


def _q_list(text) -> list[int]:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise CliError(EXIT_PARSE, "parse", f"bad --q value {text!r}") from exc


def _read_data(args) -> np.ndarray:
    if not args.data:
        raise CliError(EXIT_PARSE, "parse", "need --data")
    try:
        return io.read_series_csv(args.data)
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{args.data}: file not found") from exc
    except (ValueError, IndexError) as exc:
        raise CliError(EXIT_PARSE, "parse", f"{args.data}: {exc}") from exc


def _mcmc(args) -> tuple[inf.Priors, inf.McmcConfig]:
    iters = args.iters
    burnin = args.burnin if args.burnin is not None else min(5000, iters // 3)
    thin = args.thin if args.thin is not None else (5 if iters - burnin >= 50 else 1)
    return inf.Priors(), inf.McmcConfig(iters, burnin, thin, args.chains)


def _fit_inputs(y, graph, priors, config) -> dict:
    return {
        "y": y.tolist(),
        "graph": graph.to_dict(),
        "priors": priors.__dict__,
        "mcmc": {k: v for k, v in config.__dict__.items()},
    }


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _emit(args, payload: dict, rows: list[dict] | None, columns: list[str] | None, meta: dict):
    """Write CSV (rows) or JSON (payload) to ``--out``, or stdout when absent."""
    if args.format == "csv" and rows is not None:
        text = io.render_csv(rows, columns, meta)
    else:
        text = io.render_json(payload, meta)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_graph(args, seed):
    if args.preset:
        graph = preset_graph(args.preset)
    elif args.adjacency:
        graph = spatial_graph(io.read_adjacency_csv(args.adjacency, args.m))
    elif args.spec:
        data = _load_json(args.spec)
        graph = io.graph_from_dict(data.get("graph", data))
    elif args.m is not None:
        q = 0 if args.q is None else _single_q(args.q)
        graph = io.graph_from_dict(
            {"type": "seasonal", "m": args.m, "q": q, "season": args.season}
            if args.season
            else {"type": "temporal", "m": args.m, "q": q}
        )
    else:
        raise CliError(EXIT_PARSE, "parse", "need --preset, --adjacency, --spec or --m")
    problems = validate(graph)
    if problems:
        raise CliError(EXIT_INVALID, "validation", "; ".join(f"{p.kind} at unit {p.unit + 1}: {p.detail}" for p in problems))
    meta = io.metadata(seed, graph.to_dict())
    rows = [{"unit": i + 1, "neighbors": " ".join(str(j + 1) for j in nb)} for i, nb in enumerate(graph.neighbors)]
    _emit(args, {"graph": graph.to_dict()}, rows, ["unit", "neighbors"], meta)


def cmd_simulate(args, seed):
    specs = _model_specs(args)
    seq = np.random.SeedSequence(seed)
    rows, payload = [], {"scenarios": []}
    for (label, spec), child in zip(specs, seq.spawn(len(specs))):
        u, s, y = simulate_many(spec, args.replicates, child)
        payload["scenarios"].append({"scenario": label, "spec": spec.to_dict(), "u": u, "s": s, "y": y})
        for r in range(args.replicates):
            for i in range(spec.m):
                rows.append({"scenario": label, "replicate": r + 1, "i": i + 1, "u": u[r], "s": s[r, i], "y": y[r, i]})
    meta = io.metadata(seed, [spec.to_dict() for _, spec in specs])
    _emit(args, payload, rows, ["scenario", "replicate", "i", "u", "s", "y"], meta)


def cmd_moments(args, seed):
    specs = _model_specs(args)
    rows, payload = [], {"scenarios": []}
    for label, spec in specs:
        fs = spec.family
        q = fs.qvf
        entry = {
            "scenario": label,
            "family": fs.kind.value,
            "s0": fs.s0,
            "n0": fs.n0,
            "nu0": q.nu0,
            "nu1": q.nu1,
            "nu2": q.nu2,
            "mean": fs.mean,
            "variance": fs.variance,
            "expected_variance_function": fs.n0 * fs.variance,
        }
        rows.append(entry)
        payload["scenarios"].append({**entry, "n_star": spec.n_star()})
    meta = io.metadata(seed, [spec.to_dict() for _, spec in specs])
    _emit(args, payload, rows, list(rows[0]), meta)


def cmd_correlation(args, seed):
    specs = _model_specs(args)
    seq = np.random.SeedSequence(seed)
    rows = []
    for (label, spec), child in zip(specs, seq.spawn(len(specs))):
        corr = correlation_matrix(spec)
        mc = None
        if args.replicates:
            _, _, y = simulate_many(spec, args.replicates, child)
            mc = {(c.i, c.k): c for c in summarize_replicates(spec, y, corr) if c.check == "correlation"}
        # the temporal preset reports the first row only (unit 1 against all)
        firsts = range(1) if label.startswith("fig3-temporal") else range(spec.m)
        for i in firsts:
            for k in range(spec.m):
                row = {"scenario": label, "i": i + 1, "k": k + 1, "analytic": float(corr[i, k]),
                       "mc_estimate": None, "mc_se": None}
                if mc is not None:
                    if i == k:
                        row["mc_estimate"], row["mc_se"] = 1.0, 0.0
                    else:
                        c = mc[(min(i, k), max(i, k))]
                        row["mc_estimate"], row["mc_se"] = c.estimate, c.se
                rows.append(row)
    meta = io.metadata(seed, [spec.to_dict() for _, spec in specs])
    columns = ["scenario", "i", "k", "analytic", "mc_estimate", "mc_se"]
    _emit(args, {"rows": rows}, rows, columns, meta)


def cmd_validate(args, seed):
    specs = _model_specs(args)
    seq = np.random.SeedSequence(seed)
    rows, payload = [], {"scenarios": []}
    for (label, spec), child in zip(specs, seq.spawn(len(specs))):
        report = mc_validate(spec, args.replicates, child)
        payload["scenarios"].append({"scenario": label, **report.to_dict(), "max_abs_z": report.max_abs_z()})
        for r in report.to_rows():
            rows.append({"scenario": label, **r, "i": r["i"] + 1, "k": r["k"] + 1})
    meta = io.metadata(seed, [spec.to_dict() for _, spec in specs])
    columns = ["scenario", "check", "i", "k", "analytic", "estimate", "se", "z"]
    _emit(args, payload, rows, columns, meta)


def _fit_summary(traces, data) -> dict:
    d, d_bar, p_d = inf.dic(traces, data)
    point, lower, upper = inf.posterior_predict(traces, data, np.random.default_rng(0))
    conv = inf.convergence_summary(traces)
    keep = ("alpha", "beta", "u", "hyper_rate", "deviance")
    return {
        "dic": d,
        "d_bar": d_bar,
        "p_d": p_d,
        "predictions": [
            {"unit": i + 1, "point": point[i], "lower95": lower[i], "upper95": upper[i]} for i in range(data.m)
        ],
        "posterior_mean": {k: float(np.mean(np.concatenate([t.scalars()[k] for t in traces]))) for k in keep},
        "rhat": {k: conv.rhat[k] for k in keep},
        "ess": {k: conv.ess[k] for k in keep},
        "acceptance": conv.acceptance,
    }


def cmd_fit(args, seed):
    y = _read_data(args)
    graph = _data_graph(args, y.size)
    priors, config = _mcmc(args)
    data = inf.Dataset(y, graph)
    traces = inf.run_chains(data, priors, config, seed)
    meta = io.metadata(seed, _fit_inputs(y, graph, priors, config))
    summary = _fit_summary(traces, data)
    out = Path(args.out) if args.out else None
    if out is None:
        raise CliError(EXIT_PARSE, "parse", "fit needs --out DIR")
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / "trace.csv", inf.trace_rows(traces), ["chain", "iter", "name", "value"], meta)
    io.write_json(out / "summary.json", summary, meta)


def cmd_predict(args, seed):
    y = _read_data(args)
    graph = _data_graph(args, y.size)
    if not args.trace:
        raise CliError(EXIT_PARSE, "parse", "need --trace")
    try:
        traces = inf.traces_from_rows(io.read_csv_rows(args.trace))
    except FileNotFoundError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{args.trace}: file not found") from exc
    except (KeyError, ValueError) as exc:
        raise CliError(EXIT_PARSE, "parse", f"{args.trace}: malformed trace ({exc})") from exc
    data = inf.Dataset(y, graph)
    if traces and traces[0].s.shape[1] != data.m:
        raise CliError(EXIT_INVALID, "validation", f"trace has {traces[0].s.shape[1]} units, data has {data.m}")
    point, lower, upper = inf.posterior_predict(traces, data, np.random.default_rng(seed))
    rows = [{"unit": i + 1, "y": y[i], "point": point[i], "lower95": lower[i], "upper95": upper[i]} for i in range(data.m)]
    meta = io.metadata(seed, {"y": y.tolist(), "graph": graph.to_dict(), "trace": Path(args.trace).read_text()})
    _emit(args, {"predictions": rows}, rows, ["unit", "y", "point", "lower95", "upper95"], meta)


def dic_scan(y, q_list, priors: inf.Priors, config: inf.McmcConfig, seed) -> list[dict]:
    """
    Fit one temporal model per order in `q_list` and tabulate DIC.

    Fits that fail are reported with an ``error`` entry instead of aborting
    the scan; the smallest DIC among successful fits is flagged ``best``.
    """
    y = np.asarray(y, dtype=float)
    seq = np.random.SeedSequence(seed)
    rows = []
    for q, child in zip(q_list, seq.spawn(len(q_list))):
        try:
            data = inf.Dataset(y, temporal_graph(y.size, q))
            traces = inf.run_chains(data, priors, config, child)
            d, d_bar, p_d = inf.dic(traces, data)
            rows.append({"q": q, "dic": d, "d_bar": d_bar, "p_d": p_d, "best": False, "error": ""})
        except (ValueError, FloatingPointError) as exc:
            rows.append({"q": q, "dic": None, "d_bar": None, "p_d": None, "best": False, "error": str(exc).splitlines()[0]})
    ok = [r for r in rows if r["dic"] is not None]
    if ok:
        min(ok, key=lambda r: r["dic"])["best"] = True
    return rows


def cmd_dic_scan(args, seed):
    y = _read_data(args)
    qs = _q_list(args.q if args.q is not None else "0,1,2,3")
    if not qs:
        raise CliError(EXIT_PARSE, "parse", "empty --q list")
    priors, config = _mcmc(args)
    rows = dic_scan(y, qs, priors, config, seed)
    meta = io.metadata(seed, {"y": y.tolist(), "q": qs, "priors": priors.__dict__, "mcmc": config.__dict__})
    ok = [r for r in rows if r["dic"] is not None]
    table = ok if ok else []
    _emit(args, {"table": table, "failures": [r for r in rows if r["dic"] is None]}, table,
          ["q", "dic", "d_bar", "p_d", "best"], meta)
    if not ok:
        raise CliError(EXIT_NUMERIC, "numeric", "every fit in the scan failed")


COMMANDS = {
    "graph": cmd_graph,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "correlation": cmd_correlation,
    "validate": cmd_validate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "dic-scan": cmd_dic_scan,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="model spec JSON (or graph JSON for 'graph')")
    common.add_argument("--data", help="CSV with a 'y' column")
    common.add_argument("--adjacency", help="CSV of 1-based region pairs i,j")
    common.add_argument("--preset", choices=["fig3-temporal", "fig4-spatial", "fig2-lattice"])
    common.add_argument("--q", help="temporal order, or comma list for dic-scan")
    common.add_argument("--n0", type=float, help="override n0 (presets: single scenario)")
    common.add_argument("--m", type=int, help="number of units for 'graph'")
    common.add_argument("--season", type=int, help="season length for a seasonal graph")
    common.add_argument("--replicates", type=int, default=None)
    common.add_argument("--iters", type=int, default=15_000)
    common.add_argument("--burnin", type=int, default=None)
    common.add_argument("--thin", type=int, default=None)
    common.add_argument("--chains", type=int, default=2)
    common.add_argument("--trace", help="trace CSV written by 'fit'")
    common.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    common.add_argument("--out", help="output file (directory for 'fit')")
    common.add_argument("--format", choices=["csv", "json"], default="csv")

    parser = argparse.ArgumentParser(prog="qvfdep", description=__doc__.splitlines()[1])
    parser.add_argument("--version", action="version", version=f"qvfdep {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _default_replicates(command: str) -> int:
    return {"simulate": 1, "validate": 10_000, "correlation": 0}.get(command, 0)


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise CliError(EXIT_PARSE, "parse", f"{SEED_ENV}={env!r} is not an integer") from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on bad flags
    try:
        seed = _resolve_seed(args.seed)
        if seed < 0:
            raise CliError(EXIT_PARSE, "parse", "seed must be nonnegative")
        if args.replicates is None:
            args.replicates = _default_replicates(args.command)
        print(f"qvfdep {args.command}: seed={seed}", file=sys.stderr)
        COMMANDS[args.command](args, seed)
    except CliError as exc:
        return _fail(exc.status, exc.kind, str(exc))
    except (fam.DomainError, fam.ParameterError) as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    except (FloatingPointError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc).splitlines()[0])
    except (ValueError, IndexError) as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    return 0


def _fail(status: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "status": status, "message": message}), file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
