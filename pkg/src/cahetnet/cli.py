"""Command-line front end.

Subcommands: ``rate``, ``sweep``, ``validate``, ``compare-deployments``,
``dump-derived``. Exit codes: 0 success, 1 invalid input or failed check,
2 numerical failure, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analytic import (
    LN2,
    PreconditionError,
    RateReport,
    derive,
    deployment_comparison,
    single_flow_rate,
)
from .configio import (
    DENSITY_KEYS,
    ConfigSchemaError,
    apply_overrides,
    config_from_document,
    default_document,
    document_hash,
    load_document,
    set_path,
)
from .model import ConfigError, NetworkConfig, require_valid
from .quadrature import QuadratureError
from .simulate import SimParams, SimulationError, run_monte_carlo

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
METHODS = ("analytic", "mc")
FLOAT_FORMAT = ".12g"
SINGLE_TIER_THRESHOLD = 0.05
MULTI_TIER_THRESHOLD = 0.10


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format(float(v), FLOAT_FORMAT)
    return str(v)


def parse_values(text: str) -> list:
    """``"2,4,8"`` or an inclusive range ``"0:20:1"``; entries may be JSON literals."""
    text = text.strip()
    if ":" in text and not text.startswith("["):
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ValueError(f"range must be start:stop:step with step > 0, got {text!r}")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [float(format(start + j * step, FLOAT_FORMAT)) for j in range(n)]
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(json.loads(item))
        except json.JSONDecodeError:
            out.append(item)
    if not out:
        raise ValueError("empty value list")
    return out


@dataclass(frozen=True)
class SweepSpec:
    params: tuple[tuple[str, tuple], ...]  # (path, values)
    methods: tuple[str, ...] = ("analytic",)
    deployments: tuple[str, ...] = ()  # empty: keep the config's deployment

    def __post_init__(self):
        if not self.params:
            raise ValueError("a sweep needs at least one parameter")
        for path, values in self.params:
            if not values:
                raise ValueError(f"parameter {path!r} has an empty value list")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def points(self):
        """Value tuples in lexicographic order."""
        grids = [sorted(values, key=_sort_key) for _, values in self.params]
        return list(itertools.product(*grids))


def _sort_key(v):
    return (0, float(v), "") if isinstance(v, (int, float)) and not isinstance(v, bool) else (1, 0.0, str(v))


@dataclass
class SweepResult:
    header: list[str]
    rows: list[list[str]]
    manifest: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)
        return buf.getvalue()


def _sim_params(args, workers: int = 1) -> SimParams:
    return SimParams(
        area_side=args.area_km * 1000.0,
        iterations=args.iterations,
        master_seed=args.seed,
        boundary_mode=args.boundary,
        workers=workers,
    )


def _load(args) -> tuple[NetworkConfig, dict]:
    doc = load_document(args.config) if args.config else default_document()
    doc = apply_overrides(doc, args.set)
    return config_from_document(doc), doc


def _write(path, text: str) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _report_lines(report: RateReport, units: str) -> list[str]:
    total, matrix = report.in_units(units)
    lines = [f"method: {report.method}", f"total rate: {fmt(total)} {units}/s"]
    for i, row in enumerate(matrix):
        for k, v in enumerate(row):
            if v:
                lines.append(f"  band {i + 1}, tier {k + 1}: {fmt(v)} {units}/s")
    return lines


# ---------------------------------------------------------------------------
# subcommands


def cmd_rate(args) -> int:
    config, doc = _load(args)
    require_valid(config)
    out: dict = {"config_hash": document_hash(doc), "units": args.units}
    lines = []
    scale = 1.0 if args.units == "nats" else 1.0 / LN2
    analytic = mc = None
    if args.method in ("analytic", "both"):
        analytic = single_flow_rate(config)
        lines += _report_lines(analytic, args.units)
        out["analytic"] = {
            "method": analytic.method,
            "total": analytic.total * scale,
            "per_band_tier": (analytic.matrix * scale).tolist(),
        }
    if args.method in ("mc", "both"):
        mc = run_monte_carlo(config, _sim_params(args, args.workers))
        lines += [
            "method: monte-carlo",
            f"total rate: {fmt(mc.mean_rate * scale)} {args.units}/s (std error {fmt(mc.std_error * scale)})",
            f"iterations used: {mc.iterations_used}",
        ]
        out["monte_carlo"] = {
            "total": mc.mean_rate * scale,
            "std_error": mc.std_error * scale,
            "per_band_tier": (np.array(mc.per_band_tier) * scale).tolist(),
            "iterations_used": mc.iterations_used,
            "seed": args.seed,
        }
    if analytic and mc:
        gap = (mc.mean_rate - analytic.total) / analytic.total
        lines.append(f"relative gap (mc - analytic) / analytic: {fmt(gap)}")
        out["relative_gap"] = gap
    print("\n".join(lines))
    _write(args.out, json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _row_values(config: NetworkConfig, method: str, sim: SimParams):
    """(total, std_error, per-(band,tier) matrix) in nats/s."""
    if method == "analytic":
        rep = single_flow_rate(config)
        return rep.total, None, rep.matrix
    est = run_monte_carlo(config, sim)
    return est.mean_rate, est.std_error, np.array(est.per_band_tier)


def run_sweep(doc: dict, spec: SweepSpec, sim: SimParams, workers: int = 1) -> SweepResult:
    base = config_from_document(doc)
    M, K = base.n_bands, base.n_tiers
    deployments = spec.deployments or (None,)
    tasks = [
        (point, dep, method)
        for point in spec.points()
        for dep in deployments
        for method in spec.methods
    ]

    def evaluate(task):
        point, dep, method = task
        row_doc = doc
        for (path, _), value in zip(spec.params, point):
            row_doc = set_path(row_doc, path, value)
        if dep is not None:
            row_doc = set_path(row_doc, "deployment", dep)
        dep_text = str(row_doc["deployment"]) if isinstance(row_doc["deployment"], str) else json.dumps(row_doc["deployment"])
        cells = [fmt(v) for v in point] + [dep_text, method]
        try:
            config = config_from_document(row_doc)
            require_valid(config, simulation=method == "mc")
            if config.n_bands != M or config.n_tiers != K:
                raise ConfigError(["sweep rows must keep the band and tier counts"])
            total, se, matrix = _row_values(config, method, sim)
            derived = derive(config)
            cells += [fmt(total), fmt(total / LN2), fmt(se)]
            cells += [fmt(v) for v in matrix.ravel()]
            cells += [fmt(v) for v in derived.coverage]
            cells += [fmt(v) for v in derived.load.ravel()]
            cells.append("")
        except (ConfigError, ConfigSchemaError, QuadratureError, SimulationError, ValueError) as exc:
            cells += [""] * (3 + 2 * M * K + K)
            cells.append(str(exc).replace("\n", " "))
        return cells

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(evaluate, tasks))
    else:
        rows = [evaluate(t) for t in tasks]

    header = [path for path, _ in spec.params] + ["deployment", "method", "total_rate_nats", "total_rate_bits", "std_error_nats"]
    header += [f"rate_b{i + 1}_t{k + 1}_nats" for i in range(M) for k in range(K)]
    header += [f"coverage_t{k + 1}" for k in range(K)]
    header += [f"load_b{i + 1}_t{k + 1}" for i in range(M) for k in range(K)]
    header.append("error")
    manifest = {
        "tool": "cahetnet",
        "version": __version__,
        "config_hash": document_hash(doc),
        "config": doc,
        "sweep": {
            "params": [[p, list(v)] for p, v in spec.params],
            "methods": list(spec.methods),
            "deployments": list(spec.deployments),
        },
        "simulation": {
            "seed": sim.master_seed,
            "iterations": sim.iterations,
            "area_side_m": sim.area_side,
            "boundary_mode": sim.boundary_mode,
        },
    }
    return SweepResult(header, rows, manifest)


def _parse_param(item: str) -> tuple[str, tuple]:
    if "=" not in item:
        raise ValueError(f"--param must be path=values, got {item!r}")
    path, values = item.split("=", 1)
    return path.strip(), tuple(parse_values(values))


def cmd_sweep(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        doc = manifest["config"]
        sw, sim_doc = manifest["sweep"], manifest["simulation"]
        spec = SweepSpec(
            tuple((p, tuple(v)) for p, v in sw["params"]),
            tuple(sw["methods"]),
            tuple(sw["deployments"]),
        )
        sim = SimParams(
            area_side=sim_doc["area_side_m"],
            iterations=sim_doc["iterations"],
            master_seed=sim_doc["seed"],
            boundary_mode=sim_doc["boundary_mode"],
        )
    else:
        doc = load_document(args.config) if args.config else default_document()
        doc = apply_overrides(doc, args.set)
        methods = ("analytic", "mc") if args.method == "both" else (args.method,)
        spec = SweepSpec(tuple(_parse_param(p) for p in args.param or ()), methods, tuple(args.deployment or ()))
        sim = _sim_params(args)
        for path, _ in spec.params:
            set_path(doc, path, 0)  # fail early on unresolvable paths
    result = run_sweep(doc, spec, sim, workers=args.workers)
    text = result.to_csv()
    if args.out:
        _write(args.out, text)
        _write(str(args.out) + ".manifest.json", json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
        print(f"wrote {len(result.rows)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _split_by_band(doc: dict) -> list[tuple[str, dict]]:
    """One single-band document per band, keeping the tiers that use it."""
    config = config_from_document(doc)
    out = []
    for i in range(config.n_bands):
        tiers = config.deployment.tiers_of(i)
        sub = json.loads(json.dumps(doc))
        sub_tiers = []
        for k in tiers:
            t = {key: v for key, v in doc["tiers"][k].items() if key not in DENSITY_KEYS}
            sub_tiers.append(dict(t, bs_density=float(config.densities[k])))
        sub["tiers"] = sub_tiers
        sub["bands"] = [doc["bands"][i]]
        sub["deployment"] = [[1] * len(tiers)]
        share = np.asarray(doc["ue_bandwidth_share"], dtype=float)
        sub["ue_bandwidth_share"] = float(share) if share.ndim == 0 else [[float(share[i, k]) for k in tiers]]
        sub.pop("ue_density_ratio", None)
        sub.pop("ue_density_reference_tier", None)
        sub["ue_density"] = config.ue_density
        out.append((f"band{i + 1}", sub))
    return out


def validation_grid(doc: dict, ratios, sim: SimParams, per_band: bool = False) -> list[dict]:
    """Analytic vs Monte Carlo rate over UE densities ``ratio * lambda_1``."""
    cases = []
    for ratio in ratios:
        base = set_path(set_path(doc, "ue_density_ratio", ratio), "ue_density_reference_tier", 1)
        parts = _split_by_band(base) if per_band else [("all", base)]
        for label, sub in parts:
            config = config_from_document(sub)
            require_valid(config, simulation=True)
            an = single_flow_rate(config).total
            mc = run_monte_carlo(config, sim)
            gap = abs(mc.mean_rate - an) / an
            threshold = SINGLE_TIER_THRESHOLD if config.n_tiers == 1 else MULTI_TIER_THRESHOLD
            cases.append(
                {
                    "ue_density_ratio": ratio,
                    "part": label,
                    "n_tiers": config.n_tiers,
                    "analytic": an,
                    "monte_carlo": mc.mean_rate,
                    "std_error": mc.std_error,
                    "relative_gap": gap,
                    "threshold": threshold,
                    "pass": gap <= threshold,
                }
            )
    return cases


def cmd_validate(args) -> int:
    if args.iterations < 1:
        raise ValueError("iterations must be >= 1")
    _, doc = _load(args)
    ratios = parse_values(args.grid)
    cases = validation_grid(doc, ratios, _sim_params(args, args.workers), per_band=args.per_band)
    cols = ["ue_density_ratio", "part", "n_tiers", "analytic", "monte_carlo", "std_error", "relative_gap", "threshold", "pass"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for c in cases:
        writer.writerow([fmt(c[k]) for k in cols])
    for c in cases:
        print(
            f"{'PASS' if c['pass'] else 'FAIL'} ratio={fmt(c['ue_density_ratio'])} part={c['part']} "
            f"analytic={fmt(c['analytic'])} mc={fmt(c['monte_carlo'])} gap={c['relative_gap']:.4f} "
            f"(threshold {c['threshold']})"
        )
    _write(args.out, buf.getvalue())
    return EXIT_OK if all(c["pass"] for c in cases) else EXIT_INVALID


def cmd_compare(args) -> int:
    config, doc = _load(args)
    result = deployment_comparison(config)
    scale = 1.0 if args.units == "nats" else 1.0 / LN2
    data = {k: (v * scale if k != "density_ratio" else v) for k, v in result.as_dict().items()}
    for k, v in data.items():
        unit = "" if k == "density_ratio" else f" {args.units}/s"
        print(f"{k}: {fmt(v)}{unit}")
    _write(args.out, json.dumps(dict(data, units=args.units, config_hash=document_hash(doc)), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_dump_derived(args) -> int:
    config, _ = _load(args)
    d = derive(config)
    print("tier  k*  coverage  mean_cell_users  G_m2")
    for k, t in enumerate(d.per_tier, 1):
        print(f"{k:>4}  {t.k_star + 1:>2}  {fmt(t.coverage)}  {fmt(t.mean_users)}  {fmt(t.G)}")
    for name, mat in (("load", d.load), ("admission", d.admission), ("noise_w", d.noise), ("mean_connecting", d.mean_connecting)):
        print(f"{name} [band x tier]:")
        for row in mat:
            print("  " + "  ".join(fmt(v) for v in row))
    payload = {
        "per_tier": [asdict(t) for t in d.per_tier],
        "per_band_tier": [[asdict(c) for c in row] for row in d.per_band_tier],
    }
    _write(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config (default: shipped tableI.json)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. tier[2].bias_db=10")
    common.add_argument("--out", help="output file")
    common.add_argument("--units", choices=("nats", "bits"), default="nats")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--iterations", type=int, default=100)
    common.add_argument("--area-km", type=float, default=20.0)
    common.add_argument("--boundary", choices=("large-area", "toroidal"), default="large-area")
    common.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(prog="cahetnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", parents=[common], help="UE ergodic rate of one config")
    p.add_argument("--method", choices=("analytic", "mc", "both"), default="analytic")
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("sweep", parents=[common], help="rate over a parameter grid (CSV)")
    p.add_argument("--param", action="append", metavar="PATH=VALUES", help="e.g. tier[2].bias_db=0:20:1 or tier[2].bs_density_ratio=2,4,8")
    p.add_argument("--deployment", action="append", metavar="SHORTHAND", help="deployment to compare, repeatable")
    p.add_argument("--method", choices=("analytic", "mc", "both"), default="analytic")
    p.add_argument("--manifest", help="re-run the sweep recorded in a manifest")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common], help="analytic vs Monte Carlo over a UE density grid")
    p.add_argument("--grid", default="5:49:4", help="UE density as multiples of tier 1 density")
    p.add_argument("--per-band", action="store_true", help="simulate each band as its own network")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("compare-deployments", parents=[common], help="fully-loaded deployment comparison")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dump-derived", parents=[common], help="coverage, load, admission and mean cell users")
    p.set_defaults(func=cmd_dump_derived)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "sweep" and not args.manifest and not args.param:
        print("error: sweep needs --param or --manifest", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QuadratureError, SimulationError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ConfigSchemaError, PreconditionError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
