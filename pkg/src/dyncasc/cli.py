"""Command-line front end: simulate, cluster, analyze, backtest, bound, replay.

Every command resolves its configuration (file values overridden by flags),
writes its outputs as CSV, and drops a ``manifest.json`` recording the
resolved configuration, input digests and output paths.  ``replay`` re-runs
a manifest and reproduces the numeric outputs byte for byte.

Exit codes: 0 success, 2 usage/config, 3 data ingest, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .clustering import run_casc_dc, select_k
from .errors import ConfigurationError, IngestError, NumericalError
from .evaluation import (
    ALL_GROUPS,
    BoundParams,
    contrarian_backtest,
    group_centrality,
    group_connections,
    misclustering_upper_bound,
)
from .netbuild import (
    ContractAttributes,
    LassoConfig,
    ReturnPanel,
    contract_adjacency,
    covariate_dummies,
    return_network,
)
from .sbm import DynamicNetwork, MembershipSeries
from .similarity import build_series
from .sweeps import ALGORITHMS, SweepConfig, run_sweep

logger = logging.getLogger(__name__)

try:
    from importlib.metadata import version as _version

    VERSION = _version("dyncasc")
except Exception:  # pragma: no cover - not installed
    VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# Flat TOML-style config files
# ---------------------------------------------------------------------------


def _parse_scalar(text: str):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [] if not inner else [_parse_scalar(p) for p in inner.split(",")]
    if (text.startswith('"') and text.endswith('"')) or (
        text.startswith("'") and text.endswith("'")
    ):
        return text[1:-1]
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def read_config(path) -> dict:
    """Parse a flat ``key = value`` config file (TOML-style scalars/lists)."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "#" in line and '"' not in line and "'" not in line:
            line = line.split("#", 1)[0].strip()
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_scalar(value)
    return out


def _require(config: dict, key: str):
    if key not in config:
        raise ConfigurationError(f"missing required config key {key!r}")
    return config[key]


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def write_manifest(out_dir: Path, command: str, config: dict, seed,
                   inputs: list, outputs: list, wall_time: float) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [
            str(Path(p).resolve().relative_to(out_dir.resolve())) for p in outputs
        ],
        "wall_time_s": wall_time,
        "version": VERSION,
    }
    path = out_dir / "manifest.json"
    with path.open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path: Path, header: list, rows: list) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _sweep_config_from(config: dict) -> SweepConfig:
    sweep = str(_require(config, "sweep"))
    values = config.get("values")
    if values is None and sweep == "n":
        values = config.get("n_values")
        if values is None:
            lo = int(config.get("n_min", 10))
            hi = int(config.get("n_max", 100))
            step = int(config.get("n_step", 5))
            values = list(range(lo, hi + 1, step))
    elif values is None:
        values = _require(config, "s_values")
    kwargs = {}
    for key in ("n_nodes", "n_periods", "n_groups", "replications", "kernel_order",
                "restarts", "eps", "covariate_mode", "degree_mode", "churn_rule", "seed"):
        if key in config:
            kwargs[key] = config[key]
    if "algorithms" in config:
        kwargs["algorithms"] = tuple(config["algorithms"])
    return SweepConfig(sweep=sweep, values=tuple(values), **kwargs)


def cmd_simulate(args) -> int:
    config = read_config(args.config) if args.config else {}
    if args.seed is not None:
        config["seed"] = args.seed
    if args.kernel_order is not None:
        config["kernel_order"] = args.kernel_order
    if args.eps is not None:
        config["eps"] = args.eps
    sweep_cfg = _sweep_config_from(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    rows = run_sweep(sweep_cfg, threads=args.threads)
    wall = time.perf_counter() - started

    out_path = out_dir / "sweep.csv"
    _write_csv(
        out_path,
        ["value", "algorithm", "mean_misclustering", "stderr", "replications"],
        [
            [r["value"], r["algorithm"], _fmt(r["mean_misclustering"]),
             _fmt(r["stderr"]), r["replications"]]
            for r in rows
        ],
    )
    resolved = dict(config)
    resolved.update(
        sweep=sweep_cfg.sweep, values=list(sweep_cfg.values), seed=sweep_cfg.seed,
        replications=sweep_cfg.replications, algorithms=list(sweep_cfg.algorithms),
    )
    inputs = [args.config] if args.config else []
    write_manifest(out_dir, "simulate", resolved, sweep_cfg.seed, inputs, [out_path], wall)
    print(f"wrote {out_path} ({len(rows)} rows, {wall:.1f}s)")
    return 0


# ---------------------------------------------------------------------------
# cluster
# ---------------------------------------------------------------------------


def _load_attribute_covariates(attributes_path, panel: ReturnPanel):
    attrs = ContractAttributes.from_json(attributes_path)
    missing = [a for a in panel.assets if a not in set(attrs.ids)]
    if missing:
        raise IngestError(f"attributes missing for panel assets: {missing}")
    return covariate_dummies(attrs.subset(panel.assets))


def cmd_cluster(args) -> int:
    config = read_config(args.config) if args.config else {}
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    eps = args.eps if args.eps is not None else float(config.get("eps", 0.01))
    kernel_order = (
        args.kernel_order if args.kernel_order is not None
        else int(config.get("kernel_order", 4))
    )
    window = int(config.get("window", 60))
    step = int(config.get("step", 1))
    mode = str(config.get("window_mode", "expanding"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    panel = ReturnPanel.from_csv(args.returns)
    covariates = None
    if args.attributes:
        covariates = _load_attribute_covariates(args.attributes, panel)
    else:
        logger.warning("no attributes file: running the covariate-free pipeline")

    lasso = LassoConfig(min_window=min(window, LassoConfig.min_window))
    network = return_network(panel, step=step, window=window, mode=mode, config=lasso)

    if args.k == "auto":
        base = build_series(network, None, 1)
        k_range = config.get("k_range", list(range(2, min(9, panel.n_assets - 1) + 1)))
        n_groups = select_k(base.similarities, [int(k) for k in k_range], seed=seed)
    else:
        try:
            n_groups = int(args.k)
        except ValueError:
            raise ConfigurationError(f"--k must be an integer or 'auto', got {args.k!r}") from None
    run = run_casc_dc(network, covariates, n_groups, eps=eps,
                      kernel_order=kernel_order, seed=seed)
    wall = time.perf_counter() - started

    member_path = out_dir / "memberships.csv"
    _write_csv(
        member_path,
        ["t", "node_id", "label"],
        [
            [t, network.node_ids[i], int(run.memberships.labels[t, i])]
            for t in range(run.memberships.n_periods)
            for i in range(run.memberships.n_nodes)
        ],
    )
    outputs = [member_path]
    outputs += network.save(out_dir / "network")
    if args.verbose:
        diag_path = out_dir / "diagnostics.csv"
        _write_csv(
            diag_path,
            ["t", "alpha", "r_hat"],
            [
                [t, _fmt(float(run.alphas[t])), int(run.bandwidths[t])]
                for t in range(run.memberships.n_periods)
            ],
        )
        outputs.append(diag_path)

    resolved = dict(config)
    resolved.update(
        k=n_groups, eps=eps, kernel_order=kernel_order, seed=seed,
        window=window, step=step, window_mode=mode,
        alphas=[float(a) for a in run.alphas],
        bandwidths=[int(b) for b in run.bandwidths],
        group_sizes=[int(c) for c in np.bincount(run.memberships.labels[-1],
                                                 minlength=n_groups)],
        flags=[f for f in run.flags if f],
    )
    inputs = [args.returns] + ([args.attributes] if args.attributes else []) \
        + ([args.config] if args.config else [])
    write_manifest(out_dir, "cluster", resolved, seed, inputs, outputs, wall)
    print(f"wrote {member_path} (K={n_groups}, T={run.memberships.n_periods})")
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------


def cmd_analyze(args) -> int:
    started = time.perf_counter()
    network = DynamicNetwork.load(args.network)
    memberships, node_ids = MembershipSeries.from_csv(args.membership)
    mismatched = [i for i in node_ids if i not in set(str(n) for n in network.node_ids)]
    mismatched += [str(n) for n in network.node_ids if str(n) not in set(node_ids)]
    if mismatched:
        raise IngestError(f"node ids do not match between inputs: {sorted(set(mismatched))}")
    order = [node_ids.index(str(n)) for n in network.node_ids]
    memberships = MembershipSeries(memberships.labels[:, order])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = group_connections(network, memberships)
    conn_path = out_dir / "group_connections.csv"
    _write_csv(
        conn_path,
        ["group", "within", "cross", "diff", "tstat"],
        [[r.group, _fmt(r.within), _fmt(r.cross), _fmt(r.diff), _fmt(r.tstat)] for r in rows],
    )
    outputs = [conn_path]

    if args.attributes:
        attrs = ContractAttributes.from_json(args.attributes)
        attrs = attrs.subset([str(n) for n in network.node_ids])
        adjacency = contract_adjacency(attrs)
        centrality = group_centrality(adjacency, memberships.labels[-1])
        cent_path = out_dir / "group_centrality.csv"
        _write_csv(
            cent_path,
            ["group", "centrality"],
            [[g, _fmt(float(c))] for g, c in enumerate(centrality)],
        )
        outputs.append(cent_path)

    wall = time.perf_counter() - started
    inputs = [args.membership] + ([args.attributes] if args.attributes else [])
    write_manifest(out_dir, "analyze", {"network": str(args.network)}, None,
                   inputs, outputs, wall)
    print(f"wrote {', '.join(str(p) for p in outputs)}")
    return 0


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


def cmd_backtest(args) -> int:
    started = time.perf_counter()
    panel = ReturnPanel.from_csv(args.returns)
    memberships, node_ids = MembershipSeries.from_csv(args.membership)
    missing = [a for a in panel.assets if a not in set(node_ids)]
    if missing:
        raise IngestError(f"membership file lacks panel assets: {missing}")
    labels = np.array(
        [memberships.labels[-1, node_ids.index(a)] for a in panel.assets], dtype=np.int64
    )

    if args.start and args.end and args.start > args.end:
        raise ConfigurationError(f"empty date range: {args.start} > {args.end}")
    date_range = (args.start, args.end) if (args.start or args.end) else None
    result = contrarian_backtest(panel, labels, quantile=args.quantile,
                                 date_range=date_range)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    daily_path = out_dir / "backtest_daily.csv"
    rows = []
    for key in result.daily:
        for idx, date in enumerate(result.dates):
            rows.append([date, key, _fmt(float(result.daily[key][idx])),
                         _fmt(float(result.cumulative[key][idx]))])
    _write_csv(daily_path, ["date", "group", "ret", "cumret"], rows)
    spread_path = out_dir / "backtest_spreads.csv"
    _write_csv(
        spread_path,
        ["group_a", "group_b", "mean_diff", "tstat", "pvalue"],
        [[a, b, _fmt(d), _fmt(t), _fmt(p)] for a, b, d, t, p in result.spreads],
    )
    wall = time.perf_counter() - started
    write_manifest(
        out_dir, "backtest",
        {"quantile": args.quantile, "start": args.start, "end": args.end},
        None, [args.returns, args.membership], [daily_path, spread_path], wall,
    )
    print(f"wrote {daily_path} and {spread_path}")
    return 0


# ---------------------------------------------------------------------------
# bound
# ---------------------------------------------------------------------------

_BOUND_KEYS = (
    "n_nodes", "n_periods", "n_groups", "bandwidth", "churn", "max_block",
    "min_degree", "lambda_k_max", "min_block_fraction", "kernel_max_weight",
    "covariate_noise", "approx_eps", "smoothness_scale", "smoothness_exponent",
    "kernel_order", "confidence",
)


def cmd_bound(args) -> int:
    config = read_config(args.config)
    missing = [k for k in _BOUND_KEYS if k not in config]
    if missing:
        raise ConfigurationError(f"bound config is missing keys: {missing}")
    params = BoundParams(**{k: config[k] for k in _BOUND_KEYS})
    result = misclustering_upper_bound(params)
    print(f"bound = {result.value!r} (vacuous: {result.vacuous})")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "bound.csv"
    _write_csv(out_path, ["bound", "vacuous"], [[_fmt(result.value), result.vacuous]])
    write_manifest(out_dir, "bound", dict(config), None, [args.config], [out_path], 0.0)
    return 0


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


def cmd_replay(args) -> int:
    with Path(args.manifest).open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    out_dir = args.out_dir or str(Path(args.manifest).parent)
    if command == "simulate":
        # Rebuild the sweep directly from the stored resolved config.
        cfg = _sweep_config_from(manifest["config"])
        rows = run_sweep(cfg, threads=args.threads)
        out_path = Path(out_dir) / "sweep.csv"
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write_csv(
            out_path,
            ["value", "algorithm", "mean_misclustering", "stderr", "replications"],
            [
                [r["value"], r["algorithm"], _fmt(r["mean_misclustering"]),
                 _fmt(r["stderr"]), r["replications"]]
                for r in rows
            ],
        )
        print(f"replayed simulate into {out_path}")
        return 0
    raise ConfigurationError(f"replay supports 'simulate' manifests, got {command!r}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyncasc",
        description="Dynamic covariate-assisted spectral clustering toolkit",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging and diagnostics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo sweep")
    p.add_argument("--config", help="sweep config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--kernel-order", dest="kernel_order", type=int)
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cluster", help="cluster a return panel")
    p.add_argument("--returns", required=True)
    p.add_argument("--attributes")
    p.add_argument("--k", default="auto", help="group count or 'auto'")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--kernel-order", dest="kernel_order", type=int)
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("analyze", help="group connection and centrality tables")
    p.add_argument("--network", required=True, help="directory written by DynamicNetwork.save")
    p.add_argument("--membership", required=True)
    p.add_argument("--attributes")
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("backtest", help="contrarian backtest per group")
    p.add_argument("--returns", required=True)
    p.add_argument("--membership", required=True)
    p.add_argument("--start")
    p.add_argument("--end")
    p.add_argument("--quantile", type=float, default=0.2)
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("bound", help="evaluate the misclustering bound")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", dest="out_dir", default="out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IngestError as exc:
        print(f"ingest error: {exc}", file=sys.stderr)
        return 3
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
