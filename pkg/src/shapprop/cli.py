"""Command-line entry point.

Commands::

    shapprop attribute --model m.json --input x.json --method dasp --K 8 --class 0 --out r.json
    shapprop oracle    --model m.json --input x.json --out exact.json
    shapprop compare   --config bench.json --out report.csv
    shapprop gen-model --arch 18-32-relu-32-relu-1 --seed 0 --out m.json
    shapprop moments-check

Exit status: 0 success, 1 computation failure (or a failed check),
2 usage error, 66 missing input file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import secrets
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import checks
from .attribution import MAX_EXACT_FEATURES, METHODS, AttributionResult, run_method
from .errors import ShapPropError
from .harness import CSV_HEADER, ComparisonConfig, run_comparison
from .network import Model, generate_random_model, load_model, model_from_dict, model_to_dict

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_USAGE = 2
EXIT_NOINPUT = 66

COMMANDS = ("attribute", "compare", "oracle", "gen-model", "moments-check")


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    model_path: Optional[str] = None
    input_path: Optional[str] = None
    input_seed: Optional[int] = None
    method: Optional[str] = None
    K: Optional[int] = None
    M: Optional[int] = None
    steps: int = 64
    class_index: int = 0
    output_path: Optional[str] = None
    seed: Optional[int] = None
    baseline: Optional[str] = None
    scaling: str = "corrected"
    config_path: Optional[str] = None
    arch: Optional[str] = None
    jobs: Optional[int] = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _add_common_input(p):
    p.add_argument("--model", dest="model_path", required=True, help="model JSON file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", dest="input_path",
                     help="input vector as a JSON array or single-column CSV")
    src.add_argument("--input-seed", type=int, help="draw the input from N(0, 1) with this seed")
    p.add_argument("--class", dest="class_index", type=int, default=0, help="output unit (default 0)")
    p.add_argument("--baseline",
                   help="constant baseline value or a vector file (default: model baseline or zeros)")
    p.add_argument("--out", dest="output_path", required=True, help="result JSON path")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shapprop",
                     description="Shapley-value attributions for small feed-forward networks.")
    parser.add_argument("--seed", type=int, help="seed for all randomness (fresh if omitted)")
    parser.add_argument("--jobs", type=int, help="parallel workers (default: CPU count)")
    # the same flags after the command name; SUPPRESS keeps a top-level value
    shared = _Parser(add_help=False)
    shared.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for all randomness (fresh if omitted)")
    shared.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="parallel workers (default: CPU count)")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("attribute", parents=[shared], help="attribute one input with one method")
    _add_common_input(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--K", type=int, help="DASP coalition sizes (default N)")
    p.add_argument("--M", type=int, help="sampling permutations")
    p.add_argument("--steps", type=int, default=64, help="integrated-gradient steps (default 64)")
    p.add_argument("--paper-verbatim-scaling", action="store_true",
                   help="DASP variance factor k(N-k)/(N-1) instead of k(M-k)/(M-1), M=N-1")

    p = sub.add_parser("oracle", parents=[shared], help=f"exact Shapley values (2^N forwards, N <= {MAX_EXACT_FEATURES})")
    _add_common_input(p)

    p = sub.add_parser("compare", parents=[shared], help="run a benchmark config and write the report CSV")
    p.add_argument("--config", dest="config_path", required=True)
    p.add_argument("--out", dest="output_path", required=True)

    p = sub.add_parser("gen-model", parents=[shared], help="write a random model")
    p.add_argument("--arch", required=True, help="e.g. 18-32-relu-32-relu-1 or 8x8x1-conv2d:3x3:4-relu-maxpool:2x2-flatten-10")
    p.add_argument("--out", dest="output_path", required=True)

    p = sub.add_parser("moments-check", parents=[shared], help="Monte Carlo validation of moment matching")
    p.add_argument("--out", dest="output_path", help="optional JSON summary path")
    return parser


def parse_cli(argv) -> CliConfig:
    parser = build_parser()
    ns = parser.parse_args(list(argv))
    if ns.command is None:
        raise UsageError(parser.format_usage().strip() + "\nshapprop: error: a command is required")
    cfg = CliConfig(command=ns.command, seed=ns.seed, jobs=ns.jobs)
    for name in ("model_path", "input_path", "input_seed", "method", "K", "M", "steps",
                 "class_index", "output_path", "baseline", "config_path", "arch"):
        if hasattr(ns, name):
            setattr(cfg, name, getattr(ns, name))
    if getattr(ns, "paper_verbatim_scaling", False):
        cfg.scaling = "verbatim"
    if cfg.command == "attribute":
        if cfg.method == "sampling" and cfg.M is None:
            raise UsageError("shapprop attribute: --method sampling requires --M")
        if cfg.K is not None and cfg.method != "dasp":
            raise UsageError("shapprop attribute: --K only applies to --method dasp")
        if cfg.M is not None and cfg.method != "sampling":
            raise UsageError("shapprop attribute: --M only applies to --method sampling")
        if cfg.K is not None and cfg.K < 1 or cfg.M is not None and cfg.M < 1 or cfg.steps < 1:
            raise UsageError("shapprop attribute: --K, --M and --steps must be positive")
    if cfg.jobs is not None and cfg.jobs < 1:
        raise UsageError("shapprop: --jobs must be positive")
    return cfg


# ---------------------------------------------------------------------------
# helpers


def read_vector(path) -> np.ndarray:
    """JSON array (possibly nested) or a single-column CSV."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        return np.asarray(json.loads(text), dtype=np.float64)
    values = []
    for lineno, row in enumerate(csv.reader(text.splitlines())):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 1:
            raise ShapPropError(f"{path}: line {lineno + 1}: expected a single column")
        try:
            values.append(float(row[0]))
        except ValueError:
            if lineno == 0 and not values:
                continue  # header
            raise ShapPropError(f"{path}: line {lineno + 1}: not a number: {row[0]!r}")
    return np.asarray(values, dtype=np.float64)


def _input(cfg: CliConfig, model: Model) -> np.ndarray:
    if cfg.input_path is not None:
        x = read_vector(cfg.input_path)
        if x.size != model.n_features:
            raise ShapPropError(f"input has {x.size} values, model expects {model.n_features}")
        return x.reshape(model.input_shape)
    return np.random.default_rng(cfg.input_seed).normal(size=model.input_shape)


def _baseline(cfg: CliConfig, model: Model):
    if cfg.baseline is None:
        return None
    try:
        return np.full(model.input_shape, float(cfg.baseline))
    except ValueError:
        pass
    b = read_vector(cfg.baseline)
    if b.size != model.n_features:
        raise ShapPropError(f"baseline has {b.size} values, model expects {model.n_features}")
    return b.reshape(model.input_shape)


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is None:
        seed = secrets.randbits(32)
        print(f"seed: {seed}", file=sys.stderr)
    return seed


def _write_validated(path, text: str, validate) -> None:
    """Write via a temporary file; only a validated file replaces the target."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    try:
        validate(tmp.read_text(encoding="utf-8"))
    except Exception:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, path)


def _validate_result(text):
    res = AttributionResult.from_dict(json.loads(text))
    if not np.all(np.isfinite(res.values)):
        raise ShapPropError("attribution contains non-finite values")


def _validate_csv(text):
    lines = text.split("\n")
    if lines[0] != ",".join(CSV_HEADER):
        raise ShapPropError("report header mismatch")


# ---------------------------------------------------------------------------
# commands


def cmd_attribute(cfg: CliConfig) -> int:
    model = load_model(cfg.model_path)
    x = _input(cfg, model)
    params = {}
    seed = None
    if cfg.method == "dasp":
        params = {"K": cfg.K, "scaling": cfg.scaling}
    elif cfg.method == "sampling":
        seed = _resolve_seed(cfg.seed)
        params = {"M": cfg.M}
    elif cfg.method == "integrated_gradients":
        params = {"steps": cfg.steps}
    res = run_method(cfg.method, model, x, cfg.class_index, _baseline(cfg, model), seed=seed,
                     **params)
    _write_validated(cfg.output_path, res.to_json() + "\n", _validate_result)
    return EXIT_OK


def cmd_oracle(cfg: CliConfig) -> int:
    model = load_model(cfg.model_path)
    N = model.n_features
    if N > MAX_EXACT_FEATURES:
        print(f"shapprop oracle: refusing N={N} features: the exact oracle costs 2^{N} = "
              f"{2 ** N:,} network evaluations (limit N <= {MAX_EXACT_FEATURES}); "
              f"use 'attribute --method sampling' instead", file=sys.stderr)
        return EXIT_COMPUTE
    x = _input(cfg, model)
    res = run_method("exact", model, x, cfg.class_index, _baseline(cfg, model))
    _write_validated(cfg.output_path, res.to_json() + "\n", _validate_result)
    return EXIT_OK


def cmd_compare(cfg: CliConfig) -> int:
    conf = ComparisonConfig.load(cfg.config_path)
    raw = json.loads(Path(cfg.config_path).read_text(encoding="utf-8"))
    if cfg.seed is not None:
        conf.seed = cfg.seed
    elif "seed" not in raw:
        conf.seed = _resolve_seed(None)
    report = run_comparison(conf, jobs=cfg.jobs)
    _write_validated(cfg.output_path, report.to_csv(), _validate_csv)
    for row in report.summary():
        print(f"{row['method']:<22} {row['params']:<12} evals={row['eval_count']:<10g} "
              f"rmse={row['rmse_mean']:.4g}±{row['rmse_std']:.2g} "
              f"spearman={row['spearman_mean']:.4f}±{row['spearman_std']:.2g}")
    if report.approximate_ground_truth:
        print("note: ground truth approximated by permutation sampling for some samples")
    return EXIT_OK


def cmd_gen_model(cfg: CliConfig) -> int:
    seed = _resolve_seed(cfg.seed)
    model = generate_random_model(seed, cfg.arch)
    _write_validated(cfg.output_path, json.dumps(model_to_dict(model)) + "\n",
                     lambda text: model_from_dict(json.loads(text)))
    return EXIT_OK


def cmd_moments_check(cfg: CliConfig) -> int:
    seed = 0 if cfg.seed is None else cfg.seed
    results = checks.run_all(seed=seed)
    for r in results:
        print(r.line())
    if cfg.output_path:
        summary = [{"name": r.name, "passed": r.passed, "worst": r.worst, "detail": r.detail}
                   for r in results]
        _write_validated(cfg.output_path, json.dumps(summary, indent=2) + "\n", json.loads)
    return EXIT_OK if all(r.passed for r in results) else EXIT_COMPUTE


_DISPATCH = {
    "attribute": cmd_attribute,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
    "gen-model": cmd_gen_model,
    "moments-check": cmd_moments_check,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_cli(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    try:
        return _DISPATCH[cfg.command](cfg)
    except FileNotFoundError as exc:
        print(f"shapprop: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_NOINPUT
    except (ShapPropError, ValueError, KeyError) as exc:
        print(f"shapprop {cfg.command}: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
