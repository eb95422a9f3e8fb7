"""Benchmark runner: ground truth, RMSE/Spearman metrics and budget rows.

A comparison config (JSON) looks like::

    {
      "models": {"arch": "10-32-relu-1", "count": 5, "seed": 0},
      "samples": 1,
      "class_index": 0,
      "methods": [
        {"name": "occlusion"},
        {"name": "dasp", "K": [1, 2, 5, 10]},
        {"name": "sampling", "M": [10, 100]},
        {"name": "integrated_gradients", "steps": [16, 64]},
        {"name": "grad_x_input"}
      ],
      "ground_truth": {"exact_max_features": 20, "permutations": 20000},
      "seed": 0
    }

``models`` may instead be ``{"path": "m.json"}`` or ``{"paths": [...]}``;
``inputs`` may name a JSON file holding a list of input vectors.
"""

from __future__ import annotations

import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attribution import MAX_EXACT_FEATURES, METHODS, run_method
from .counter import EvalCounter
from .errors import ConfigError, DegenerateInput, LengthMismatch, ShapPropError
from .network import Model, generate_random_model, load_model

__all__ = ["EvalCounter", "rmse", "spearman", "average_ranks", "ComparisonConfig",
           "ComparisonReport", "ReportRow", "run_comparison", "strict_mode"]

CSV_HEADER = ("model_id", "sample_id", "method", "params", "eval_count", "rmse",
              "spearman", "gt_method", "gt_evals", "seed")
EXACT_THRESHOLD = 20
_BUDGET_KEY = {"dasp": "K", "sampling": "M", "integrated_gradients": "steps"}


def strict_mode() -> bool:
    return os.environ.get("SHAPPROP_STRICT", "") == "1"


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    if a.size == 0:
        raise LengthMismatch("vectors must be non-empty")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def average_ranks(a) -> np.ndarray:
    """1-based ranks; tied values share the mean of their positions."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size)
    sorted_a = a[order]
    start = 0
    for end in range(1, a.size + 1):
        if end == a.size or sorted_a[end] != sorted_a[start]:
            ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
            start = end
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation (Pearson correlation of average ranks)."""
    a, b = _pair(a, b)
    if a.size < 2:
        raise LengthMismatch("Spearman correlation needs at least two values")
    ra = average_ranks(a) - (a.size + 1) / 2.0
    rb = average_ranks(b) - (b.size + 1) / 2.0
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0.0:
        raise DegenerateInput("Spearman correlation is undefined for a constant vector")
    return float(np.clip(ra @ rb / den, -1.0, 1.0))


# ---------------------------------------------------------------------------
# config


@dataclass
class MethodSpec:
    name: str
    budgets: list = field(default_factory=lambda: [None])
    scaling: str = "corrected"

    @property
    def budget_key(self) -> Optional[str]:
        return _BUDGET_KEY.get(self.name)


@dataclass
class ComparisonConfig:
    models: list                       # Model instances
    model_ids: list
    methods: list                      # MethodSpec
    samples: int = 1
    inputs: Optional[list] = None      # explicit input vectors, reused for every model
    class_index: int = 0
    baseline: object = None
    exact_max_features: int = EXACT_THRESHOLD
    gt_permutations: int = 20000
    seed: int = 0

    @classmethod
    def from_dict(cls, obj: dict, root: Path = Path(".")) -> "ComparisonConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {"models", "samples", "inputs", "class_index", "baseline", "methods",
                 "ground_truth", "seed"}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        src = obj.get("models")
        if not isinstance(src, dict):
            raise ConfigError("'models' must be an object with 'arch', 'path' or 'paths'")
        try:
            if "arch" in src:
                base = int(src.get("seed", 0))
                seeds = [base + j for j in range(int(src.get("count", 1)))]
                models = [generate_random_model(s, src["arch"]) for s in seeds]
                ids = [f"gen-{s}" for s in seeds]
            elif "path" in src or "paths" in src:
                paths = [src["path"]] if "path" in src else list(src["paths"])
                models = [load_model(root / p) for p in paths]
                ids = [Path(p).stem for p in paths]
            else:
                raise ConfigError("'models' needs 'arch', 'path' or 'paths'")
        except ShapPropError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad model source: {exc}") from exc
        if not models:
            raise ConfigError("no models configured")

        methods = []
        for entry in obj.get("methods", []):
            name = entry.get("name") if isinstance(entry, dict) else None
            if name not in METHODS:
                raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
            spec = MethodSpec(name, scaling=entry.get("scaling", "corrected"))
            key = spec.budget_key
            if key is not None:
                budgets = entry.get(key)
                if budgets is None:
                    if name == "sampling":
                        raise ConfigError("sampling needs a budget list 'M'")
                    budgets = [None]
                spec.budgets = list(np.atleast_1d(budgets).tolist())
            methods.append(spec)
        if not methods:
            raise ConfigError("no methods configured")

        inputs = None
        if "inputs" in obj:
            raw = obj["inputs"]
            if isinstance(raw, str):
                raw = json.loads((root / raw).read_text(encoding="utf-8"))
            inputs = [np.asarray(v, dtype=np.float64) for v in raw]
        gt = obj.get("ground_truth", {})
        exact_max = int(gt.get("exact_max_features", EXACT_THRESHOLD))
        if exact_max > MAX_EXACT_FEATURES:
            raise ConfigError(f"exact_max_features cannot exceed {MAX_EXACT_FEATURES}")
        return cls(models=models, model_ids=ids, methods=methods,
                   samples=int(obj.get("samples", 1)), inputs=inputs,
                   class_index=int(obj.get("class_index", 0)), baseline=obj.get("baseline"),
                   exact_max_features=exact_max,
                   gt_permutations=int(gt.get("permutations", 20000)),
                   seed=int(obj.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "ComparisonConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(obj, root=path.parent)


# ---------------------------------------------------------------------------
# report


@dataclass
class ReportRow:
    model_id: str
    sample_id: int
    method: str
    params: str
    eval_count: float
    rmse: float
    spearman: float
    gt_method: str
    gt_evals: float
    seed: Optional[int]
    order: tuple = field(default=(), repr=False, compare=False)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


@dataclass
class ComparisonReport:
    rows: list

    @property
    def approximate_ground_truth(self) -> bool:
        return any(r.gt_method != "exact" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(CSV_HEADER) + "\n")
        for r in self.rows:
            fields = [r.model_id, str(r.sample_id), r.method, r.params, _fmt(r.eval_count),
                      _fmt(r.rmse), _fmt(r.spearman), r.gt_method, _fmt(r.gt_evals),
                      _fmt(r.seed)]
            buf.write(",".join(fields) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    def summary(self) -> list[dict]:
        """Mean and std of RMSE/Spearman per (method, params) budget point."""
        groups: dict = {}
        for r in self.rows:
            groups.setdefault((r.order[2:], r.method, r.params), []).append(r)
        out = []
        for (_, method, params), rows in sorted(groups.items(), key=lambda kv: kv[0][0]):
            e = np.array([r.rmse for r in rows])
            s = np.array([r.spearman for r in rows])
            s = s[~np.isnan(s)]
            out.append({"method": method, "params": params,
                        "eval_count": float(np.mean([r.eval_count for r in rows])),
                        "rmse_mean": float(e.mean()), "rmse_std": float(e.std()),
                        "spearman_mean": float(s.mean()) if s.size else float("nan"),
                        "spearman_std": float(s.std()) if s.size else float("nan"),
                        "n": len(rows)})
        return out


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _params_str(spec: MethodSpec, budget) -> str:
    items = []
    if spec.budget_key is not None and budget is not None:
        items.append(f"{spec.budget_key}={budget}")
    if spec.name == "dasp" and spec.scaling != "corrected":
        items.append(f"scaling={spec.scaling}")
    return ";".join(items)


def _ground_truth(cfg: ComparisonConfig, model: Model, x, mi: int, si: int):
    if model.n_features <= cfg.exact_max_features:
        res = run_method("exact", model, x, cfg.class_index, cfg.baseline)
        return res, "exact"
    seed = derive_seed(cfg.seed, mi, si, 0)
    res = run_method("sampling", model, x, cfg.class_index, cfg.baseline, seed=seed,
                     M=cfg.gt_permutations)
    return res, "sampling"


def _sample_input(cfg: ComparisonConfig, model: Model, mi: int, si: int):
    if cfg.inputs is not None:
        return np.asarray(cfg.inputs[si], dtype=np.float64).reshape(model.input_shape)
    rng = np.random.default_rng(derive_seed(cfg.seed, mi, si, 1))
    return rng.normal(size=model.input_shape)


def _run_sample(cfg: ComparisonConfig, mi: int, si: int) -> list[ReportRow]:
    model = cfg.models[mi]
    x = _sample_input(cfg, model, mi, si)
    gt, gt_method = _ground_truth(cfg, model, x, mi, si)
    rows = []
    for pi, spec in enumerate(cfg.methods):
        for bi, budget in enumerate(spec.budgets):
            params = {}
            if spec.budget_key is not None and budget is not None:
                params[spec.budget_key] = budget
            if spec.name == "dasp":
                params["scaling"] = spec.scaling
            seed = derive_seed(cfg.seed, mi, si, 2, pi, bi) if spec.name == "sampling" else None
            res = run_method(spec.name, model, x, cfg.class_index, cfg.baseline, seed=seed,
                             **params)
            try:
                rho = spearman(res.values, gt.values)
            except DegenerateInput:
                rho = float("nan")
            rows.append(ReportRow(cfg.model_ids[mi], si, spec.name, _params_str(spec, budget),
                                  res.eval_count, rmse(res.values, gt.values), rho,
                                  gt_method, gt.eval_count, seed, order=(mi, si, pi, bi)))
    return rows


def run_comparison(cfg: ComparisonConfig, jobs: Optional[int] = None) -> ComparisonReport:
    """Run every method at every budget on every (model, sample) pair.

    Ground truth is computed once per sample: exact enumeration when the
    feature count is at most ``exact_max_features``, long-run permutation
    sampling otherwise. Rows come back in canonical order whatever the
    degree of parallelism.
    """
    if cfg.inputs is not None and len(cfg.inputs) < cfg.samples:
        raise ConfigError(f"{cfg.samples} samples requested but only {len(cfg.inputs)} inputs given")
    tasks = [(mi, si) for mi in range(len(cfg.models)) for si in range(cfg.samples)]
    if jobs is None:
        jobs = os.cpu_count() or 1
    if strict_mode():
        jobs = 1
    if jobs <= 1:
        chunks = [_run_sample(cfg, mi, si) for mi, si in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(lambda t: _run_sample(cfg, *t), tasks))
    rows = sorted((r for chunk in chunks for r in chunk), key=lambda r: r.order)
    return ComparisonReport(rows)
