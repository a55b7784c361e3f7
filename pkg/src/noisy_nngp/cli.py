"""Command-line interface: ``noisy-nngp <subcommand> [flags]``.

Subcommands
    sweep     accuracy grid over (sigma_w2, mu2, depth) on an image dataset -> CSV
    trace     per-layer kernel values for one input pair -> CSV
    demo1d    1-D regression demo at critical parameters -> JSON
    classify  one kernel configuration on an image dataset -> JSON
    limits    regime of a parameter setting, or the critical boundary as CSV
    verify    Monte-Carlo checks of the kernel recursion -> JSON

Config files (``--config FILE``) hold one ``key = value`` pair per line.
Keys are long flag names with or without the leading dashes; ``-`` and
``_`` are interchangeable.  Values are taken verbatim after stripping
whitespace and optional surrounding quotes.  ``true``/``false`` switch
boolean flags.  Blank lines and lines starting with ``#`` are ignored.
A flag given on the command line wins over the same key in the file.

Grid flags accept either a comma list (``1.0,1.25,2``) or an inclusive
range ``start:stop:step``.  Wherever a single sigma_w2 is expected the
token ``critical`` selects 2/mu2 exactly.

Exit codes: 0 success, 1 fatal error (including bad flags), 2 partial
failure (some sweep cells overflowed or failed to factorise, or some
verification checks failed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import NORMALIZE_MODES, load_split, normalize_inputs
from .errors import NNGPError
from .experiments import (
    CSV_COLUMNS,
    DEFAULT_LATTICE,
    SweepConfig,
    depth_trace,
    evaluate_classifier,
    run_1d_demo,
    run_sweep,
)
from .gram import gram_snapshots
from .kernel import KernelParams, NoiseMode, NoiseSpec, classify_regime
from .mc_oracle import run_oracle_suite, unit_pair
from .plotting import heatmap_svg, lines_svg

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


class ArgParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 rather than argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FATAL, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# flag value parsing
# ---------------------------------------------------------------------------


def parse_grid(text: str) -> tuple:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"empty or invalid range {text!r}")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        # rounding removes accumulated step error so 1.0:2.0:0.2 gives 1.2, not 1.2000000000000002
        return tuple(round(start + i * step, 12) for i in range(n))
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def parse_int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def parse_sw2(text: str):
    """A float, or the token ``critical``."""
    if text.strip().lower() == "critical":
        return "critical"
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"sigma_w2 must be a number or 'critical', got {text!r}") from exc


def parse_sw2_list(text: str) -> tuple:
    return tuple(parse_sw2(t) for t in text.split(",") if t.strip())


def resolve_params(sw2, mu2: float, sb2: float, noise: str, depth: int) -> KernelParams:
    spec = NoiseSpec(NoiseMode.parse(noise), mu2)
    if sw2 == "critical":
        return KernelParams.critical(spec, depth, sb2)
    return KernelParams(sw2, sb2, spec, depth)


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------


def read_config(path) -> list:
    """Turn a ``key = value`` file into argv tokens."""
    tokens = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = "--" + key.lstrip("-").replace("_", "-")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        if value.lower() == "true":
            tokens.append(key)
        elif value.lower() == "false":
            continue
        else:
            tokens.append(f"{key}={value}")
    return tokens


def _config_path(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def metadata(args) -> dict:
    flags = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())
             if k not in ("func", "config")}
    return {"tool": "noisy-nngp", "version": __version__, "command": args.command, "flags": flags}


def _emit(text: str, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            fh.write(text)


def write_csv(out, meta: dict, header, rows):
    buf = io.StringIO()
    buf.write(f"# {json.dumps(meta, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    _emit(buf.getvalue(), out)


def write_json(out, meta: dict, payload: dict):
    _emit(json.dumps({"metadata": meta, **payload}, indent=1, sort_keys=True) + "\n", out)


def _fmt(v) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _sweep_config(args) -> SweepConfig:
    sw2 = parse_grid("1.0:2.0:0.01") if args.full_grid else args.sw2_grid
    mu2 = parse_grid("1.0:2.0:0.01") if args.full_grid else args.mu2_grid
    return SweepConfig(sw2, mu2, args.depths, args.sb2, args.noise, args.dataset, args.data_dir,
                       args.n_train, args.n_test, args.sigma_eps2, args.normalize, args.threads, args.seed)


def cmd_sweep(args) -> int:
    cfg = _sweep_config(args)
    cells = run_sweep(cfg)
    write_csv(args.out, metadata(args), CSV_COLUMNS, [c.as_row() for c in cells])
    if args.plot:
        for depth in cfg.depths:
            grid = np.full((len(cfg.mu2_grid), len(cfg.sigma_w2_grid)), np.nan)
            for c in cells:
                if c.depth == depth and c.ok:
                    grid[cfg.mu2_grid.index(c.mu2), cfg.sigma_w2_grid.index(c.sigma_w2)] = c.accuracy
            path = args.plot if len(cfg.depths) == 1 else _suffixed(args.plot, f"_L{depth}")
            heatmap_svg(path, grid, [f"{m:g}" for m in cfg.mu2_grid], [f"{s:g}" for s in cfg.sigma_w2_grid],
                        title=f"test accuracy, L={depth}", xlabel="sigma_w^2", ylabel="mu_2", vmin=0.0, vmax=1.0)
    failed = sum(not c.ok for c in cells)
    print(f"{len(cells)} cells, {failed} failed", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


def _suffixed(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix + p.suffix)


def cmd_trace(args) -> int:
    params = [resolve_params(sw, mu, args.sb2, args.noise, args.depth) for mu in args.mu2 for sw in args.sw2]
    pair = unit_pair(args.d0, args.rho, args.seed)
    traces = depth_trace(pair, params)
    rows = []
    for tr in traces:
        p = tr.params
        for layer, (kxx, kyy, kxy) in enumerate(zip(tr.k_xx, tr.k_yy, tr.k_xy)):
            rows.append([_fmt(p.noise.mu2), _fmt(p.sigma_w2), _fmt(p.sigma_b2), str(layer),
                         _fmt(kxx), _fmt(kyy), _fmt(kxy)])
        if tr.overflow_layer is not None:
            print(f"mu2={p.noise.mu2:g} sigma_w2={p.sigma_w2:g}: overflow at layer {tr.overflow_layer}",
                  file=sys.stderr)
    write_csv(args.out, metadata(args), ("mu2", "sigma_w2", "sigma_b2", "layer", "k_xx", "k_yy", "k_xy"), rows)
    if args.plot:
        for which, attr in (("diag", "k_xx"), ("offdiag", "k_xy")):
            series = [(f"mu2={t.params.noise.mu2:g} sw2={t.params.sigma_w2:.4g}",
                       np.arange(len(getattr(t, attr))), getattr(t, attr)) for t in traces]
            lines_svg(_suffixed(args.plot, "_" + which), series, title=f"{attr} by layer",
                      xlabel="layer", ylabel=attr, logy=args.logy)
    return EXIT_OK


def cmd_demo1d(args) -> int:
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    bundles = run_1d_demo(args.mu2, args.sb2, args.depth, grid, args.seed, args.n_train,
                          noise_sd=args.noise_sd, sigma_eps2=args.sigma_eps2, n_prior_samples=args.n_samples)
    write_json(args.out, metadata(args), {"bundles": [b.to_dict() for b in bundles]})
    if args.plot:
        for b in bundles:
            tag = f"_mu2_{b.mu2:g}"
            lines_svg(_suffixed(args.plot, tag + "_prior"),
                      [(f"sample {i}", b.grid, s) for i, s in enumerate(b.prior_samples)],
                      title=f"prior samples, mu2={b.mu2:g}", xlabel="x", ylabel="f(x)")
            sd = np.sqrt(b.fit_var)
            lines_svg(_suffixed(args.plot, tag + "_fit"),
                      [("mean", b.grid, b.fit_mean), ("mean+2sd", b.grid, b.fit_mean + 2 * sd),
                       ("mean-2sd", b.grid, b.fit_mean - 2 * sd)],
                      title=f"posterior fit, mu2={b.mu2:g}", xlabel="x", ylabel="y")
            heatmap_svg(_suffixed(args.plot, tag + "_gram"), b.gram[::-1][::4, ::4],
                        [""] * len(b.gram[::4]), [""] * len(b.gram[::4]), title=f"Gram, mu2={b.mu2:g}")
    return EXIT_OK


def cmd_classify(args) -> int:
    params = resolve_params(args.sw2, args.mu2, args.sb2, args.noise, args.depth)
    train = normalize_inputs(load_split(args.dataset, args.data_dir, "train", args.n_train), args.normalize)
    test = normalize_inputs(load_split(args.dataset, args.data_dir, "test", args.n_test), args.normalize)
    ((gram, cross, psi0),) = gram_snapshots(train, test, params, [params.depth]).values()
    acc, mvar = evaluate_classifier(gram, cross, psi0, train, test, args.sigma_eps2)
    result = {"accuracy": acc, "mean_var": mvar, "sigma_w2": params.sigma_w2,
              "regime": str(classify_regime(params))}
    write_json(args.out, metadata(args), result)
    print(f"accuracy {acc:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_limits(args) -> int:
    if args.boundary:
        rows = [[_fmt(m), _fmt(2.0 / m)] for m in args.mu2_grid]
        write_csv(args.out, metadata(args), ("mu2", "sigma_w2"), rows)
        return EXIT_OK
    params = resolve_params(args.sw2, args.mu2, args.sb2, args.noise, 1)
    _emit(f"{classify_regime(params)}\n", args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_oracle_suite(args.n_configs, args.n_samples, args.width, args.n_networks, args.seed)
    for c in checks:
        print(c.line(), file=sys.stderr)
    payload = {"checks": [{"name": c.name, "analytic": float(c.analytic), "estimate": float(c.estimate),
                           "std_err": float(c.std_err), "tolerance": float(c.tolerance),
                           "passed": bool(c.passed)} for c in checks]}
    write_json(args.out, metadata(args), payload)
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _add_kernel_flags(p, sb2_default=0.0, multi=False):
    if multi:
        p.add_argument("--sw2", type=parse_sw2_list, default=("critical",),
                       help="comma list of sigma_w2 values or 'critical' (default: critical)")
        p.add_argument("--mu2", type=parse_grid, default=(1.0,), help="comma list or range of mu2")
    else:
        p.add_argument("--sw2", type=parse_sw2, default="critical", help="sigma_w2 or 'critical'")
        p.add_argument("--mu2", type=float, default=1.0)
    p.add_argument("--sb2", type=_nonneg_float, default=sb2_default)
    p.add_argument("--noise", choices=["mult", "add", "none"], default="mult")


def _add_data_flags(p):
    p.add_argument("--dataset", choices=["mnist", "cifar10", "csv"], default="mnist")
    p.add_argument("--data-dir", default=os.environ.get("NNGP_DATA_DIR", "data"),
                   help="dataset directory (default: $NNGP_DATA_DIR or ./data)")
    p.add_argument("--n-train", type=_positive_int, default=1000)
    p.add_argument("--n-test", type=_positive_int, default=1000)
    p.add_argument("--normalize", choices=NORMALIZE_MODES, default="unit_norm")
    p.add_argument("--sigma-eps2", type=_nonneg_float, default=1e-6)


def build_parser() -> ArgParser:
    parser = ArgParser(prog="noisy-nngp", description="Noise-regularised NNGP kernels and experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgParser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file; command-line flags win")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("sweep", cmd_sweep, "accuracy grid over sigma_w2, mu2 and depth")
    _add_data_flags(p)
    p.add_argument("--depths", type=parse_int_list, default=(20,))
    p.add_argument("--sw2-grid", type=parse_grid, default=parse_grid("1.0:2.0:0.2"))
    p.add_argument("--mu2-grid", type=parse_grid, default=(1.0, 1.25, 1.5, 2.0))
    p.add_argument("--full-grid", action="store_true", help="use the 101 x 101 grid on [1, 2] with step 0.01")
    p.add_argument("--sb2", type=_nonneg_float, default=0.0)
    p.add_argument("--noise", choices=["mult", "add"], default="mult")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", default="results.csv")
    p.add_argument("--plot", help="SVG heatmap path (one file per depth)")

    p = add("trace", cmd_trace, "per-layer kernel values for a pair of inputs")
    _add_kernel_flags(p, multi=True)
    p.add_argument("--depth", type=_positive_int, default=50)
    p.add_argument("--rho", type=float, default=0.5, help="input correlation of the pair")
    p.add_argument("--d0", type=_positive_int, default=64, help="input dimension of the pair")
    p.add_argument("--out", default="trace.csv")
    p.add_argument("--plot", help="SVG path prefix for diagonal and off-diagonal line charts")
    p.add_argument("--logy", action="store_true")

    p = add("demo1d", cmd_demo1d, "1-D regression demo at critical parameters")
    p.add_argument("--mu2", type=parse_grid, default=(1.0, 1.001, 2.0))
    p.add_argument("--sb2", type=_nonneg_float, default=0.05)
    p.add_argument("--depth", type=_positive_int, default=20)
    p.add_argument("--grid-min", type=float, default=float(DEFAULT_LATTICE[0]))
    p.add_argument("--grid-max", type=float, default=float(DEFAULT_LATTICE[-1]))
    p.add_argument("--grid-points", type=_positive_int, default=len(DEFAULT_LATTICE))
    p.add_argument("--n-train", type=_positive_int, default=4)
    p.add_argument("--noise-sd", type=_nonneg_float, default=0.1)
    p.add_argument("--sigma-eps2", type=_nonneg_float, default=0.01)
    p.add_argument("--n-samples", type=_positive_int, default=5)
    p.add_argument("--out", default="demo1d.json")
    p.add_argument("--plot", help="SVG path prefix for prior, fit and Gram plots")

    p = add("classify", cmd_classify, "classify a test set with one kernel configuration")
    _add_data_flags(p)
    _add_kernel_flags(p)
    p.add_argument("--depth", type=_positive_int, default=20)
    p.add_argument("--out", default="classify.json")

    p = add("limits", cmd_limits, "depth-limit regime of a parameter setting")
    _add_kernel_flags(p)
    p.add_argument("--boundary", action="store_true", help="emit the critical curve sigma_w2 = 2/mu2 as CSV")
    p.add_argument("--mu2-grid", type=parse_grid, default=parse_grid("1.0:2.0:0.01"))
    p.add_argument("--out", default="-")

    p = add("verify", cmd_verify, "Monte-Carlo checks of the kernel recursion")
    p.add_argument("--n-configs", type=_positive_int, default=50)
    p.add_argument("--n-samples", type=_positive_int, default=10**6)
    p.add_argument("--width", type=_positive_int, default=4096)
    p.add_argument("--n-networks", type=_positive_int, default=2000)
    p.add_argument("--out", default="verify.json")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        cfg = _config_path(argv)
        if cfg:
            # the subcommand comes first; file tokens go before the user's flags so the flags win
            argv = argv[:1] + read_config(cfg) + argv[1:]
    except (OSError, ValueError) as exc:
        print(f"noisy-nngp: config error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help and --version exit 0, usage errors exit 1
        return exc.code if isinstance(exc.code, int) else EXIT_FATAL
    try:
        return args.func(args)
    except (NNGPError, ValueError, OSError, OverflowError, ArithmeticError) as exc:
        print(f"noisy-nngp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
