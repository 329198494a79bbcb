"""Command line entry point: ``fovex explain | evaluate | sweep | stub-predictor | make-benchmark``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .foveation import ALPHA_MODES, GRADIENT_MODES, FovexConfig

logger = logging.getLogger("fovex")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

# flag dest -> FovexConfig field
CONFIG_FLAGS = {
    "sigma_blur": "sigma_blur",
    "blur_filter_size": "blur_filter_size",
    "sigma_fovea": "sigma_fovea",
    "beta": "forgetting",
    "lr": "step_size",
    "opt_steps": "optimization_steps",
    "random_restarts": "random_restarts",
    "restart_patience": "restart_patience",
    "scanpath_length": "scanpath_length",
    "alpha_mode": "alpha_mode",
    "grad_mode": "gradient_mode",
    "fd_step": "fd_step",
}


class UsageError(Exception):
    pass


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from exc


def resolve_seed(cli_seed, file_seed, env=None) -> int:
    """``--seed`` wins, then the config file, then ``FOVEX_SEED``, then 0."""
    env = os.environ if env is None else env
    if cli_seed is not None:
        return int(cli_seed)
    if file_seed is not None:
        return int(file_seed)
    raw = env.get("FOVEX_SEED")
    if raw not in (None, ""):
        try:
            return int(raw)
        except ValueError as exc:
            raise UsageError(f"FOVEX_SEED must be an integer, got {raw!r}") from exc
    return 0


def build_config(args) -> FovexConfig:
    data = _read_json(args.config, "config") if args.config else {}
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    file_seed = data.pop("seed", None)
    try:
        cfg = FovexConfig.from_dict(data)
        overrides = {field: getattr(args, dest) for dest, field in CONFIG_FLAGS.items() if getattr(args, dest) is not None}
        return replace(cfg, seed=resolve_seed(args.seed, file_seed), **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _predictor_options(args):
    if not getattr(args, "predictor_config", None):
        return None
    opts = _read_json(args.predictor_config, "predictor config")
    if not isinstance(opts, dict):
        raise UsageError("predictor config must hold a JSON object")
    return opts


def _manifest(args):
    from .manifest import load_manifest

    try:
        return load_manifest(args.manifest)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _metric_list(text):
    from .runner import ALL_METRICS

    items = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in items if m not in ALL_METRICS]
    if bad or not items:
        raise argparse.ArgumentTypeError(f"metrics must be a comma list drawn from {','.join(ALL_METRICS)}")
    return items


def _unit_interval(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


def _add_config_flags(p):
    g = p.add_argument_group("explainer configuration")
    g.add_argument("--config", help="JSON file with configuration fields")
    g.add_argument("--sigma-blur", type=float)
    g.add_argument("--blur-filter-size", type=int)
    g.add_argument("--sigma-fovea", type=float, help="fovea width in pixels (default 0.1 * min(H, W))")
    g.add_argument("--beta", type=float, help="forgetting factor in [0, 1]")
    g.add_argument("--lr", type=float, help="gradient step size")
    g.add_argument("--opt-steps", type=int)
    g.add_argument("--random-restarts", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--restart-patience", type=int)
    g.add_argument("--scanpath-length", type=int)
    g.add_argument("--alpha-mode", choices=ALPHA_MODES)
    g.add_argument("--grad-mode", choices=GRADIENT_MODES)
    g.add_argument("--fd-step", type=float)
    g.add_argument("--seed", type=int)


def _add_run_flags(p, metrics=False):
    p.add_argument("--manifest", required=True, help="dataset manifest (JSON)")
    p.add_argument("--predictor", required=True, help="builtin:<kind> | exec:<command> | tcp:<host:port>")
    p.add_argument("--predictor-config", help="JSON options for builtin predictors")
    p.add_argument("--target-class", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    if metrics:
        from .metrics import DEFAULT_STEP_FRACTION
        from .runner import ALL_METRICS

        p.add_argument("--metrics", type=_metric_list, default=list(ALL_METRICS))
        p.add_argument("--step-fraction", type=_unit_interval, default=DEFAULT_STEP_FRACTION)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fovex", description="Foveation-based explanations for image classifiers.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="write attribution maps for every manifest entry")
    _add_run_flags(p)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="score saved maps")
    _add_run_flags(p, metrics=True)
    _add_config_flags(p)
    p.add_argument("--maps", required=True, help="explain output directory or its maps/ folder")
    p.add_argument("--dump-curves", action="store_true", help="also write per-image deletion/insertion curves")

    p = sub.add_parser("sweep", help="explain + evaluate over a parameter grid")
    _add_run_flags(p, metrics=True)
    _add_config_flags(p)
    p.add_argument("--grid", required=True, help="JSON grid: {mode, parameters: {name: [values]}}")

    p = sub.add_parser("stub-predictor", help="serve a builtin predictor over the wire protocol")
    p.add_argument("--kind", required=True, choices=("linear", "planted", "pair", "constant"))
    p.add_argument("--predictor-config", help="JSON options (input size, classes, boxes, ...)")
    p.add_argument("--input-size", help="HxWxC, e.g. 16x16x3")
    p.add_argument("--listen", default="stdio", help="stdio or tcp:<host:port>")

    p = sub.add_parser("make-benchmark", help="write a seeded planted-patch desk benchmark")
    p.add_argument("--kind", choices=("localization", "pair"), default="localization")
    p.add_argument("--n-images", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _parse_size(text):
    try:
        h, w, c = (int(t) for t in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--input-size must look like HxWxC, got {text!r}") from exc
    return h, w, c


def run_explain(args) -> int:
    from .runner import cmd_explain

    cfg, manifest, opts = build_config(args), _manifest(args), _predictor_options(args)
    record = cmd_explain(manifest, cfg, args.predictor, args.out, args.workers, args.target_class, opts)
    t = record["totals"]
    print(f"explained {t['ok']}/{t['entries']} entries; mean wall clock {record['mean_wall_clock_s']} s -> {args.out}")
    return EXIT_OK if t["ok"] else EXIT_FAILED


def run_evaluate(args) -> int:
    from .runner import cmd_evaluate

    cfg, manifest, opts = build_config(args), _manifest(args), _predictor_options(args)
    report = cmd_evaluate(manifest, args.maps, args.predictor, args.out, args.metrics, args.step_fraction, cfg,
                          args.workers, args.target_class, opts, dump_curves=args.dump_curves)
    for key, value in report["summary"].items():
        note = f" ({report['excluded'][key]} excluded)" if report["excluded"][key] else ""
        print(f"{key}: {'absent' if value is None else f'{value:.6g}'}{note}")
    return EXIT_OK if report["totals"]["ok"] else EXIT_FAILED


def run_sweep(args) -> int:
    from .runner import cmd_sweep, parse_grid

    cfg, manifest, opts = build_config(args), _manifest(args), _predictor_options(args)
    grid = _read_json(args.grid, "grid")
    try:
        parse_grid(grid, cfg)
    except (TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"invalid sweep grid: {exc}") from exc
    result = cmd_sweep(manifest, cfg, grid, args.predictor, args.out, args.metrics, args.step_fraction, args.workers,
                       args.target_class, opts)
    print(f"{len(result['runs'])} sweep points -> {Path(args.out) / 'sweep.csv'}")
    return EXIT_OK if any(r["ok"] for r in result["runs"]) else EXIT_FAILED


def run_stub(args) -> int:
    from .predictors.registry import build_builtin
    from .predictors.stub import make_tcp_server, serve_stdio

    opts = _predictor_options(args) or {}
    shape = _parse_size(args.input_size) if args.input_size else None
    try:
        predictor = build_builtin(args.kind, shape, opts)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.listen == "stdio":
        serve_stdio(predictor)
        return EXIT_OK
    scheme, _, addr = args.listen.partition(":")
    host, _, port = addr.rpartition(":")
    if scheme != "tcp" or not port.isdigit():
        raise UsageError("--listen must be stdio or tcp:<host:port>")
    server = make_tcp_server(predictor, host or "127.0.0.1", int(port))
    print(f"listening on {server.server_address[0]}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def run_make_benchmark(args) -> int:
    from .desk import make_localization_benchmark, make_pair_benchmark
    from .runner import write_benchmark

    make = make_localization_benchmark if args.kind == "localization" else make_pair_benchmark
    try:
        bench = make(n_images=args.n_images, size=args.size, patch=args.patch, channels=args.channels, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    path = write_benchmark(bench, args.out)
    print(f"wrote {len(bench.cases)} images -> {path}")
    return EXIT_OK


COMMANDS = {
    "explain": run_explain,
    "evaluate": run_evaluate,
    "sweep": run_sweep,
    "stub-predictor": run_stub,
    "make-benchmark": run_make_benchmark,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fovex: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
