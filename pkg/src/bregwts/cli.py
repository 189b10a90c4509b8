"""Command-line front end.

Commands
--------
``run-synthetic``    run the weak-to-strong pipeline, write CSV/JSON/SVG
``sweep-k``          rerun the strong stage for several mixture sizes
``verify-geometry``  divergence identities and projection checks
``verify-bounds``    Jensen-gap, Pinsker and log-ratio bound checks

Exit status: 0 success, 1 verification failure or no completed tasks,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .experiment import PROFILES, SyntheticConfig, run_pipeline, sweep_k
from .report import (
    line_svg,
    scatter_svg,
    write_json,
    write_records_csv,
    write_sweep_csv,
)
from .verify import BoundsSettings, GeometrySettings, run_bounds_suite, run_geometry_suite

log = logging.getLogger("bregwts")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    pass


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items: Sequence[str]) -> dict[str, Any]:
    """``["a=1", "strong_opt.max_iters=50"]`` -> nested dict."""
    out: dict[str, Any] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        node = out
        *parents, leaf = key.strip().split(".")
        for p in parents:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting overrides for {key!r}")
        node[leaf] = _parse_value(value.strip())
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _load_file(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def build_config(args) -> SyntheticConfig:
    """Profile preset, then config file, then ``--seed``, then ``--set``."""
    d = _merge(SyntheticConfig.from_profile(args.profile).to_dict(), _load_file(args.config))
    if args.seed is not None:
        d["seed"] = args.seed
    d = _merge(d, parse_overrides(args.set))
    try:
        return SyntheticConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _settings(cls, args):
    """Build a verification settings object from file, seed and ``--set``."""
    d = _merge(_load_file(args.config), parse_overrides(args.set))
    if args.seed is not None:
        d["seed"] = args.seed
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown settings: {sorted(unknown)}")
    for key, value in d.items():
        if isinstance(value, list):
            d[key] = tuple(value)
    try:
        return replace(cls(), **d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def manifest(args, extra: dict | None = None) -> dict[str, Any]:
    """Echo of the invocation written into every output.  The thread count is
    left out because it must not change any output."""
    m = {
        "command": args.command,
        "config_path": args.config,
        "overrides": list(args.set),
        "seed": args.seed,
        "profile": args.profile,
        "version": __version__,
    }
    m.update(extra or {})
    return m


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_run_synthetic(args) -> int:
    cfg = build_config(args)
    out = _out_dir(args)
    man = manifest(args, {"config": cfg.to_dict()})
    result = run_pipeline(cfg, threads=args.threads)
    write_records_csv(out / "records.csv", result.records)
    summary = {"manifest": man, "k": result.k, "c": cfg.c, **result.summary}
    if result.reference_summary is not None:
        write_records_csv(out / "records_reference.csv", result.reference_records)
        summary["reference_evaluation"] = result.reference_summary
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", man)
    (out / "gain_vs_misfit.svg").write_text(scatter_svg(
        [r.misfit_kl for r in result.records], [r.gain for r in result.records],
        title=f"gain vs misfit (c={cfg.c}, k={result.k})", metadata=man), encoding="utf-8")
    s = result.summary
    print(f"completed {s['completed_tasks']}/{s['total_tasks']} tasks; "
          f"pearson(gain, misfit) = {s['pearson_gain_misfit']}; "
          f"frac(slack >= -{cfg.slack_tol}) = {s['frac_slack_ge_neg_tol']}")
    for f in s["failures"]:
        print(f"  failed: {f}", file=sys.stderr)
    return EXIT_OK if s["completed_tasks"] > 0 else EXIT_FAIL


def cmd_sweep_k(args) -> int:
    cfg = build_config(args)
    try:
        ks = [int(k) for k in args.ks.split(",") if k.strip()]
    except ValueError as exc:
        raise ConfigError(f"--ks must be a comma-separated list of integers: {exc}") from exc
    if not ks or ks != sorted(set(ks)) or ks[0] < 1:
        raise ConfigError("--ks must be positive, strictly ascending integers")
    out = _out_dir(args)
    man = manifest(args, {"config": cfg.to_dict(), "ks": ks})
    results = sweep_k(cfg, ks, threads=args.threads)
    rows, per_k = [], {}
    for r in results:
        write_records_csv(out / f"records_k{r.k}.csv", r.records)
        d = r.summary["misfit_minus_gain"]
        rows.append((r.k, d["median"], d["mean"]))
        per_k[str(r.k)] = r.summary
    write_sweep_csv(out / "misfit_minus_gain_vs_k.csv", rows)
    write_json(out / "summary.json", {"manifest": man, "per_k": per_k})
    write_json(out / "manifest.json", man)
    (out / "misfit_minus_gain_vs_k.svg").write_text(line_svg(
        [k for k, _, _ in rows],
        {"median(misfit - gain)": [m for _, m, _ in rows],
         "mean(misfit - gain)": [m for _, _, m in rows]},
        title=f"misfit - gain vs k (c={cfg.c})", ylabel="nats", metadata=man), encoding="utf-8")
    for k, med, mean in rows:
        print(f"k={k}: median_diff={med} mean_diff={mean}")
    return EXIT_OK if all(r.summary["completed_tasks"] > 0 for r in results) else EXIT_FAIL


def _verify(args, cls, runner, filename: str) -> int:
    settings = _settings(cls, args)
    out = _out_dir(args)
    report = runner(settings)
    report["manifest"] = manifest(args)
    report.pop("seconds", None)  # keep the report deterministic
    write_json(out / filename, report)
    for c in report["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: worst={c['worst']:.3e} tol={c['tol']:.3e}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_verify_geometry(args) -> int:
    return _verify(args, GeometrySettings, run_geometry_suite, "geometry_report.json")


def cmd_verify_bounds(args) -> int:
    return _verify(args, BoundsSettings, run_bounds_suite, "bounds_report.json")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON file with settings")
    common.add_argument("--seed", type=int, help="master seed (non-negative integer)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk",
                        help="size preset for the synthetic pipeline")
    common.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a setting; nested keys use dots, e.g. strong_opt.max_iters=500")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bregwts", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run-synthetic", parents=[common], help="run the synthetic pipeline") \
        .set_defaults(func=cmd_run_synthetic)
    sk = sub.add_parser("sweep-k", parents=[common], help="vary the number of strong heads")
    sk.add_argument("--ks", default="1,10,50,100", help="comma-separated ascending k values")
    sk.set_defaults(func=cmd_sweep_k)
    sub.add_parser("verify-geometry", parents=[common], help="check divergence identities") \
        .set_defaults(func=cmd_verify_geometry)
    sub.add_parser("verify-bounds", parents=[common], help="check approximation bounds") \
        .set_defaults(func=cmd_verify_bounds)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
