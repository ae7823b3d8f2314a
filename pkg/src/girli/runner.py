"""Config-driven reconstruction experiments and their on-disk outputs.

A config is a JSON object; see :data:`PRESETS` for complete examples and the
README for the field reference.  Step sizes and the DDIRLI coefficient may be
given as plain numbers or as ``{"relative": c}``:

* ``omega = {"relative": c}`` means ``omega = c / |R|^2``;
* ``ddirli_c = {"relative": c}`` means ``C = c / (|A|^2 |y^delta|^2)``, so the
  first DDIRLI correction from ``u_0 = 0`` has ``beta_0 |A|^2 = c``.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import re
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (Dataset, NoiseSpec, PhantomSpec, add_noise, generate_phantoms,
                   load_idx_dataset, relative_error)
from .operators import MaskedOperator, RadonOperator, default_angles, estimate_operator_norm
from .priors import PriorSet, build_handcrafted_operator
from .schemes import (AdaptConfig, LambdaSequence, SchemeConfig, SchemeKind, StoppingRule,
                      run_scheme)
from .theory import L_SAFETY, TheoryConstants, check_assumptions

logger = logging.getLogger(__name__)

__all__ = [
    "CSV_COLUMNS",
    "ExperimentConfig",
    "RunRecord",
    "load_config",
    "preset",
    "PRESETS",
    "run_experiment",
    "select_initial_guess",
    "emit_outputs",
    "write_pgm",
    "read_pgm",
]

CSV_COLUMNS = ["method", "sigma2", "delta", "tau", "iterations", "wall_time_s",
               "rel_error_l2", "stop_reason"]
TRACE_COLUMNS = ["k", "residual", "error", "active_priors"]


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    dataset: dict
    schemes: list
    priors: dict = field(default_factory=lambda: {"n": None})
    targets: list = field(default_factory=lambda: [0])
    geometry: dict = field(default_factory=dict)
    noise: dict = field(default_factory=lambda: {"sigma2": 0.0, "seed": 0})
    initial_guess: dict = field(default_factory=dict)
    theory: dict = field(default_factory=dict)
    output: str | None = None
    name: str = "experiment"

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        if "dataset" not in raw or "schemes" not in raw:
            raise ValueError("config needs 'dataset' and 'schemes'")
        cfg = cls(**copy.deepcopy(raw))
        cfg._resolve_paths(base_dir)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {name: copy.deepcopy(getattr(self, name)) for name in self.__dataclass_fields__}

    def _resolve_paths(self, base_dir):
        if self.dataset.get("kind") != "idx":
            return
        base = Path(base_dir) if base_dir else Path.cwd()
        for key in ("train_images", "train_labels", "validation_images", "validation_labels"):
            if self.dataset.get(key):
                p = Path(self.dataset[key])
                self.dataset[key] = str(p if p.is_absolute() else base / p)

    def validate(self):
        kind = self.dataset.get("kind", "phantom")
        if kind == "idx":
            for key in ("train_images", "train_labels", "validation_images", "validation_labels"):
                path = self.dataset.get(key)
                if path and not Path(path).exists():
                    raise FileNotFoundError(f"dataset.{key}: {path} does not exist")
            if not self.dataset.get("train_images"):
                raise ValueError("dataset.train_images is required for idx datasets")
        elif kind != "phantom":
            raise ValueError(f"dataset.kind must be 'phantom' or 'idx', got {kind!r}")
        window = self.geometry.get("angle_window_deg")
        if window is not None:
            lo, hi = window
            if not 0 <= lo < hi <= 180:
                raise ValueError(f"angle window {window} is not a sub-interval of [0, 180]")
            if not self.angle_mask().any():
                raise ValueError(f"angle window {window} contains none of the projection angles")
        for raw in self.schemes:
            _scheme_from_dict(raw, omega=1.0, c_coef=1.0, delta=0.0).validate()
        return self

    def angles(self) -> np.ndarray:
        return default_angles(int(self.geometry.get("n_angles", 180)))

    def angle_mask(self):
        window = self.geometry.get("angle_window_deg")
        if window is None:
            return None
        deg = np.degrees(self.angles())
        return (deg >= window[0] - 1e-9) & (deg < window[1] - 1e-9)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    with open(path) as fh:
        raw = json.load(fh)
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


def _scalar_or_relative(value, scale, name):
    if isinstance(value, dict):
        if set(value) != {"relative"}:
            raise ValueError(f"{name}: expected a number or {{'relative': c}}, got {value}")
        return float(value["relative"]) * scale
    return float(value)


def _scheme_from_dict(raw: dict, omega: float, c_coef: float, delta: float) -> SchemeConfig:
    raw = dict(raw)
    kind = SchemeKind.parse(raw.pop("kind"))
    lam = raw.pop("lambda", {"kind": "CONSTANT", "lambda0": 0.01})
    adapt = raw.pop("adapt", None)
    tau = raw.pop("tau", 1.1)
    max_it = int(raw.pop("max_iterations", 1000))
    label = raw.pop("label", None)
    mu = float(raw.pop("mu", 1e-3))
    omega_spec = raw.pop("omega", 1e-2)
    c_spec = raw.pop("ddirli_c", 77e-6)
    raw.pop("guess_index", None)
    if raw:
        raise ValueError(f"unknown scheme fields for {kind.value}: {sorted(raw)}")
    return SchemeConfig(
        kind=kind,
        omega=_scalar_or_relative(omega_spec, omega, "omega"),
        lambda_seq=LambdaSequence(**lam),
        mu=mu,
        ddirli_c=_scalar_or_relative(c_spec, c_coef, "ddirli_c"),
        adapt=None if adapt is None else AdaptConfig(**adapt),
        stop=StoppingRule(tau=float(tau), delta=delta),
        max_iterations=max_it,
        label=label,
    )


# ---------------------------------------------------------------------------
# presets

def _test_preset(n: int) -> dict:
    four = [
        {"kind": "GIRLI"},
        {"kind": "DDIRLI", "ddirli_c": {"relative": 1.0}},
        {"kind": "IRLI"},
        {"kind": "LANDWEBER"},
    ]
    adapt = {"kind": "GIRLI_ADAPT", "adapt": {"k0": 10, "tol": 6.5}}
    base = {
        "name": f"test{n}",
        "dataset": {"kind": "phantom", "size": 28, "classes": list(range(10)),
                    "train_per_class": 15, "validation_per_class": 3, "jitter": 1.0,
                    "seed": 0},
        "priors": {"n": 150},
        "targets": [9],
        "geometry": {"n_angles": 180},
        "noise": {"sigma2": 0.5, "seed": 1},
        "initial_guess": {"mode": "per_scheme"},
        "theory": {"kappa": 0.5},
    }
    tau = 1.1
    if n == 1:
        schemes = four
    elif n == 2:
        schemes = [adapt] + four
    elif n == 3:
        schemes = four
    elif n == 4:
        schemes = [adapt] + four
    elif n == 5:
        base["priors"] = {"class": 3, "n": 14}
        schemes = [
            {"kind": "GIRLI"},
            {"kind": "GIRLI_GM"},
            {"kind": "GIRLI_GM", "label": "GIRLI-GM(lambda=0.05)",
             "lambda": {"kind": "CONSTANT", "lambda0": 0.05}},
        ]
    elif n == 6:
        base["priors"] = {"class": 3, "n": 14}
        base["initial_guess"] = {"mode": "shared", "index": 10}
        schemes = [{"kind": "GIRLI"}, {"kind": "GIRLI_GM"}]
    elif n == 7:
        base["priors"] = {"class": 3, "n": 14}
        schemes = [{"kind": "GIRLI"}, {"kind": "IRLI_REVISED", "mu": 1e-3}]
    else:
        raise ValueError(f"no preset for test {n}; choose 1..7")
    if n in (3, 4):
        base["geometry"]["angle_window_deg"] = [0.0, 120.0]
        base["noise"]["sigma2"] = 0.03
        tau = 5.0
    out = []
    for s in schemes:
        s = dict(s)
        s.setdefault("omega", {"relative": 0.2})
        s.setdefault("lambda", {"kind": "CONSTANT", "lambda0": 0.01})
        s.setdefault("tau", tau)
        s.setdefault("max_iterations", 1000)
        out.append(s)
    base["schemes"] = out
    return base


PRESETS = {n: _test_preset(n) for n in range(1, 8)}


def preset(n: int, **overrides) -> ExperimentConfig:
    raw = copy.deepcopy(PRESETS[n])
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# records

@dataclass
class RunRecord:
    method: str
    sigma2: float
    delta: float
    tau: float
    iterations: int | None
    wall_time_s: float
    rel_error_l2: float
    stop_reason: str
    assumption_report: dict | None = None
    target: int = 0
    error: str | None = None
    trace: object = field(default=None, repr=False)
    reconstruction: np.ndarray | None = field(default=None, repr=False)
    initial_guess: np.ndarray | None = field(default=None, repr=False)

    def csv_row(self) -> list[str]:
        return [
            self.method,
            repr(float(self.sigma2)),
            repr(float(self.delta)),
            repr(float(self.tau)),
            "" if self.iterations is None else str(self.iterations),
            f"{self.wall_time_s:.4f}",
            repr(float(self.rel_error_l2)),
            self.stop_reason,
        ]


# ---------------------------------------------------------------------------
# experiment

def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    d = dict(cfg.dataset)
    kind = d.pop("kind", "phantom")
    if kind == "idx":
        return load_idx_dataset(
            d["train_images"], d.get("train_labels"), d.get("validation_images"),
            d.get("validation_labels"), d.get("n_train"), d.get("n_validation"),
        )
    seed = int(d.pop("seed", 0))
    if "classes" in d:
        d["classes"] = tuple(d["classes"])
    return generate_phantoms(PhantomSpec(**d), seed)


def _select_priors(cfg: ExperimentConfig, ds: Dataset) -> list[int]:
    p = cfg.priors or {}
    indices = list(range(len(ds.train)))
    if p.get("class") is not None:
        indices = ds.train_of_class(p["class"])
        if not indices:
            raise ValueError(f"no training images of class {p['class']!r}")
    if p.get("n") is not None:
        indices = indices[: int(p["n"])]
    if not indices:
        raise ValueError("prior selection is empty")
    return indices


def select_initial_guess(config: ExperimentConfig, scheme_kind, priors: PriorSet,
                         validation_pool: Dataset, target_index: int,
                         guess_index: int | None = None) -> np.ndarray:
    """Starting iterate for one scheme.

    LANDWEBER / IRLI / IRLI_REVISED start from a same-class validation image
    other than the target, DDIRLI from zero, GIRLI(-adapt) from the prior
    mean and GIRLI-GM from the geometric mean.  ``initial_guess.mode =
    "shared"`` overrides all of these with one validation image.
    """
    kind = SchemeKind.parse(scheme_kind) if not isinstance(scheme_kind, SchemeKind) else scheme_kind
    ig = config.initial_guess or {}
    val = validation_pool.validation
    if not val:
        raise ValueError("validation pool is empty")
    if ig.get("mode") == "shared":
        return np.array(val[int(ig["index"])], dtype=np.float64)
    if kind in (SchemeKind.GIRLI, SchemeKind.GIRLI_ADAPT):
        return priors.mean.copy()
    if kind is SchemeKind.GIRLI_GM:
        return priors.geometric_mean.copy()
    if kind is SchemeKind.DDIRLI:
        return np.zeros(priors.shape)
    if guess_index is None:
        guess_index = ig.get("index")
    if guess_index is not None:
        return np.array(val[int(guess_index)], dtype=np.float64)
    labels = validation_pool.validation_labels
    label = labels[target_index] if labels else None
    for i, lab in enumerate(labels):
        if i != target_index and lab is not None and lab == label:
            return np.array(val[i], dtype=np.float64)
    warnings.warn(f"no same-class validation image for target {target_index}; "
                  "using the prior mean", RuntimeWarning, stacklevel=2)
    return priors.mean.copy()


def _theory_report(cfg, scheme, priors, truth, u0, op, op_norm):
    t = cfg.theory or {}
    kappa = float(t.get("kappa", 0.5))
    eta = float(t.get("eta", 0.0))
    lam_max = float(t.get("lambda_max") or scheme.lambda_seq.lambda_max)
    L = float(t.get("L") or L_SAFETY * math.sqrt(scheme.omega) * op_norm)
    d0 = float(np.linalg.norm(truth - u0))
    rho = float(t.get("rho") or max(1.1 * d0, 1e-12))
    consts = TheoryConstants(rho=rho, L=L, eta=eta, kappa=kappa, lambda_max=lam_max)
    rep = check_assumptions(priors, truth, u0, consts, op=op, omega=scheme.omega,
                            tau=scheme.stop.tau, op_norm=op_norm)
    out = rep.as_dict()
    out["constants"] = consts.as_dict()
    return out


def _prepare(cfg: ExperimentConfig):
    ds = _load_dataset(cfg)
    ds.check_disjoint()
    h, w = ds.train[0].shape
    radon = RadonOperator(w, h, cfg.angles(), cfg.geometry.get("bins"))
    mask = cfg.angle_mask()
    op = radon if mask is None else MaskedOperator(radon, mask)
    op_norm = estimate_operator_norm(op, iterations=100, seed=0)
    idx = _select_priors(cfg, ds)
    labels = [ds.train_labels[i] for i in idx] if ds.train_labels else None
    priors = PriorSet([ds.train[i] for i in idx], [op.apply(ds.train[i]) for i in idx], labels)
    return ds, op, op_norm, mask, priors, idx


def run_experiment(config: ExperimentConfig, outdir=None) -> list[RunRecord]:
    """Run every scheme on every target and optionally write outputs.

    All schemes see the same noisy data for a given target.  A scheme that
    raises is recorded with ``stop_reason = "ERROR"`` and does not stop the
    others.
    """
    cfg = config
    ds, op, op_norm, mask, priors, prior_idx = _prepare(cfg)
    noise = NoiseSpec(float(cfg.noise.get("sigma2", 0.0)), int(cfg.noise.get("seed", 0)))
    records: list[RunRecord] = []
    data_log = []
    for t in cfg.targets:
        truth = np.asarray(ds.validation[int(t)], dtype=np.float64)
        y = op.apply(truth)
        y_delta, delta = add_noise(y, noise, mask=mask)
        data_log.append({"target": int(t), "delta": delta,
                         "y_norm": float(np.linalg.norm(y))})
        for raw in cfg.schemes:
            records.append(_run_one(cfg, raw, op, op_norm, y_delta, delta, truth, priors, ds,
                                    int(t), noise))
    if outdir is None:
        outdir = cfg.output
    if outdir is not None:
        meta = {
            "name": cfg.name,
            "config": cfg.to_dict(),
            "seeds": {"dataset": cfg.dataset.get("seed"), "noise": noise.seed,
                      "rng": "numpy.random.PCG64"},
            "operator": {"norm_estimate": op_norm, "shape": [list(op.range_shape), list(op.domain_shape)],
                         "angle_mask": None if mask is None else mask.astype(int).tolist()},
            "priors": {"indices": prior_idx, "n": len(priors)},
            "data": data_log,
        }
        extra_images = {"prior_mean": priors.mean}
        try:
            extra_images["prior_gm"] = priors.geometric_mean
        except ValueError:
            pass
        for t in cfg.targets:
            extra_images[f"target_{int(t)}"] = ds.validation[int(t)]
        emit_outputs(records, outdir, meta, extra_images)
    return records


def _run_one(cfg, raw, op, op_norm, y_delta, delta, truth, priors, ds, target, noise):
    kind = SchemeKind.parse(raw["kind"])
    name = raw.get("label") or kind.display
    tau = float(raw.get("tau", 1.1))
    try:
        start = time.perf_counter()
        a_op = None
        c_scale = 1.0
        if kind is SchemeKind.DDIRLI:
            a_op = build_handcrafted_operator(priors)
            a_norm = estimate_operator_norm(a_op, iterations=100, seed=0)
            c_scale = 1.0 / (a_norm**2 * float(np.vdot(y_delta, y_delta)))
        scheme = _scheme_from_dict(raw, omega=1.0 / op_norm**2, c_coef=c_scale, delta=delta)
        u0 = select_initial_guess(cfg, kind, priors, ds, target, raw.get("guess_index"))
        setup = time.perf_counter() - start
        u, trace = run_scheme(scheme, op, y_delta, u0, priors, truth, a_op=a_op,
                              op_norm=op_norm)
        wall = setup + trace.wall_time
        report = _theory_report(cfg, scheme, priors, truth, u0, op, op_norm)
        if a_op is not None:
            report["handcrafted_operator"] = a_op.provenance
        return RunRecord(name, noise.sigma2, delta, tau, trace.stop_index, wall,
                         relative_error(truth, u), trace.stop_reason.value, report, target,
                         trace=trace, reconstruction=u, initial_guess=u0)
    except Exception as exc:  # one failing scheme must not abort the others
        logger.error("%s failed: %s", name, exc)
        return RunRecord(name, noise.sigma2, delta, tau, None, 0.0, float("nan"), "ERROR",
                         None, target, error=f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# outputs

def _slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def write_pgm(image, path):
    """Write ``image`` (values clipped to ``[0, 1]``) as an 8-bit binary PGM."""
    arr = np.rint(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255).astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM into ``[0, 1]`` floats."""
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(blob, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported, maxval {maxval}")
    pos += 1
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


def _write_png(image, path):
    from PIL import Image

    arr = np.rint(np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def emit_outputs(records, outdir, metadata: dict | None = None, images: dict | None = None,
                 png: bool = False) -> list[Path]:
    """Write ``results.csv``, per-scheme traces, PGM images and ``run.json``.

    Returns the list of written paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    multi = len({r.target for r in records}) > 1

    def _write(path, fn):
        try:
            fn(path)
        except OSError as exc:
            raise OSError(f"failed to write {path}: {exc}") from exc
        written.append(path)

    def _results(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in records:
                w.writerow(r.csv_row())

    _write(outdir / "results.csv", _results)

    for r in records:
        stem = _slug(r.method) + (f"_t{r.target}" if multi else "")
        if r.trace is not None:
            def _trace(path, trace=r.trace):
                with open(path, "w", newline="") as fh:
                    w = csv.writer(fh, lineterminator="\n")
                    w.writerow(TRACE_COLUMNS)
                    for rec in trace.records:
                        w.writerow([rec.k, repr(rec.residual_norm),
                                    "" if rec.error_norm is None else repr(rec.error_norm),
                                    "" if rec.active_prior_count is None else rec.active_prior_count])
            _write(outdir / f"trace_{stem}.csv", _trace)
        if r.reconstruction is not None:
            _write(outdir / f"rec_{stem}.pgm", lambda p, u=r.reconstruction: write_pgm(u, p))
            if png:
                _write(outdir / f"rec_{stem}.png", lambda p, u=r.reconstruction: _write_png(u, p))
    for name, img in (images or {}).items():
        _write(outdir / f"{_slug(name)}.pgm", lambda p, u=img: write_pgm(u, p))
        if png:
            _write(outdir / f"{_slug(name)}.png", lambda p, u=img: _write_png(u, p))

    meta = dict(metadata or {})
    meta["runs"] = [
        {
            "method": r.method, "target": r.target, "iterations": r.iterations,
            "stop_reason": r.stop_reason, "delta": r.delta, "tau": r.tau,
            "rel_error_l2": None if math.isnan(r.rel_error_l2) else r.rel_error_l2,
            "wall_time_s": r.wall_time_s,
            "error": r.error, "assumption_report": r.assumption_report,
            "active_priors": None if r.trace is None else r.trace.active_indices,
            "events": None if r.trace is None else r.trace.events,
        }
        for r in records
    ]

    def _meta(path):
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    _write(outdir / "run.json", _meta)
    return written


def check_experiment(config: ExperimentConfig) -> list[dict]:
    """Assumption reports for every scheme and target, without iterating."""
    ds, op, op_norm, mask, priors, _ = _prepare(config)
    out = []
    for t in config.targets:
        truth = np.asarray(ds.validation[int(t)], dtype=np.float64)
        for raw in config.schemes:
            kind = SchemeKind.parse(raw["kind"])
            scheme = _scheme_from_dict(raw, omega=1.0 / op_norm**2, c_coef=1.0, delta=0.0)
            u0 = select_initial_guess(config, kind, priors, ds, int(t), raw.get("guess_index"))
            rep = _theory_report(config, scheme, priors, truth, u0, op, op_norm)
            out.append({"method": scheme.name, "target": int(t), "report": rep})
    return out
