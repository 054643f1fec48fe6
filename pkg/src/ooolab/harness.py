"""Sweep orchestration, run persistence, rank correlations and CSV export.

Directory layout of a sweep (``out_dir``)::

    sweep.json                 the resolved config
    index.json                 run records; written only by the scheduler
    runs/<run_id>/model.ckpt   trained checkpoint
    runs/<run_id>/train.json   wall and CPU seconds of training
    runs/<run_id>/report.json  metric report (with its own timings)
    wren/<source>_s<seed>/curve.csv, timing.json

Stages are resumable independently: a run whose artefact already exists is
skipped, so re-running a finished sweep performs no training.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, OooLabError, UndefinedCorrelationError

SWEEP_KINDS = ("beta_vae", "beta_tcvae", "ada_gvae", "tvae")
METRIC_NAMES = ("beta_vae", "factor_vae", "dci", "triplet")
SCORE_COLUMNS = ("run_id", "kind", "hyper", "seed") + METRIC_NAMES
UNDEFINED = "undefined"
STAGES = ("train", "eval", "wren")


def fmt(x) -> str:
    """17 significant digits; parses back to the identical double."""
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


@dataclass
class SweepConfig:
    kinds: tuple = SWEEP_KINDS
    hypers: dict = field(default_factory=lambda: {k: list(models.SWEEP_HYPERS[k])
                                                  for k in SWEEP_KINDS})
    seeds: tuple = (0, 1)
    steps: int = 10_000
    dataset_seed: int = 0
    out_dir: str = "runs/desk"
    m_train: int = 10_000
    m_test: int = 5_000
    mlp_epochs: int = 30
    wren_steps: int = 10_000
    wren_eval_every: int = 1_000
    wren_eval_batches: int = 100
    wren: bool = True
    metric_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.kinds or not self.seeds:
            raise ConfigurationError("sweep needs at least one kind and one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("duplicate seeds")
        for kind in self.kinds:
            if kind not in models.KINDS:
                raise ConfigurationError(f"unknown model kind {kind!r}")
            hs = self.hypers.get(kind)
            if not hs:
                raise ConfigurationError(f"no hyperparameters given for {kind!r}")
            for h in hs:
                models.check_hyper(kind, h)
        self.hypers = {k: [float(h) for h in self.hypers[k]] for k in self.kinds}
        for name in ("steps", "m_train", "m_test", "mlp_epochs", "wren_steps",
                     "wren_eval_every", "wren_eval_batches"):
            if int(getattr(self, name)) < (0 if name == "steps" else 1):
                raise ConfigurationError(f"{name} must be positive")
        if self.wren and self.wren_steps < self.wren_eval_every:
            raise ConfigurationError("wren_steps must be at least wren_eval_every")
        self.metric_overrides = dict(self.metric_overrides)
        self.metric_config(0)

    @property
    def n_runs(self) -> int:
        return sum(len(self.hypers[k]) * len(self.seeds) for k in self.kinds)

    def run_specs(self):
        for kind in self.kinds:
            for hyper in self.hypers[kind]:
                for seed in self.seeds:
                    yield kind, hyper, seed

    def metric_config(self, seed):
        """Metric budgets; ``metric_overrides`` may set any other MetricConfig field."""
        from .metrics import MetricConfig
        fixed = {"m_train", "m_test", "mlp_epochs", "seed"}
        bad = set(self.metric_overrides) - (set(MetricConfig.__dataclass_fields__) - fixed)
        if bad:
            raise ConfigurationError(f"unknown or reserved metric overrides: {sorted(bad)}")
        return MetricConfig(m_train=self.m_train, m_test=self.m_test,
                            mlp_epochs=self.mlp_epochs, seed=seed, **self.metric_overrides)

    def to_dict(self):
        d = asdict(self)
        d["kinds"], d["seeds"] = list(self.kinds), list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown sweep keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, OooLabError):
                raise
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"cannot read sweep config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("sweep config must be a JSON object")
        cfg = cls.from_dict(data)
        if os.environ.get("OOO_LAB_OUT"):
            cfg.out_dir = os.environ["OOO_LAB_OUT"]
        return cfg


def run_id(kind, hyper, seed) -> str:
    return f"{kind}_h{float(hyper):g}_s{int(seed)}"


@dataclass
class RunRecord:
    run_id: str
    kind: str
    hyper: float
    seed: int
    checkpoint: str | None = None
    scores: dict | None = None
    train_seconds: float = 0.0
    eval_seconds: float = 0.0
    train_cpu_seconds: float = 0.0
    eval_cpu_seconds: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _write_json(path: Path, obj):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    tmp.replace(path)


def _log(msg):
    print(msg, flush=True)


# ----------------------------------------------------------------- stages


def _train_stage(cfg, rec, run_dir, log):
    ckpt_path = run_dir / "model.ckpt"
    meta_path = run_dir / "train.json"
    if ckpt_path.exists():
        rec.checkpoint = str(ckpt_path)
        if meta_path.exists():
            meta = json.loads(meta_path.read_text())
            rec.train_seconds = meta["seconds"]
            rec.train_cpu_seconds = meta.get("cpu_seconds", 0.0)
        return
    t0, c0 = time.perf_counter(), time.process_time()
    every = max(1, cfg.steps // 10)

    def progress(step, loss):
        if (step + 1) % every == 0:
            log(f"  {rec.run_id} step {step + 1}/{cfg.steps} loss {loss:.2f}")

    ckpt = models.train(rec.kind, rec.hyper, rec.seed, cfg.steps, progress=progress)
    save_checkpoint(ckpt, ckpt_path)
    rec.train_seconds = time.perf_counter() - t0
    rec.train_cpu_seconds = time.process_time() - c0
    _write_json(meta_path, {"seconds": rec.train_seconds, "cpu_seconds": rec.train_cpu_seconds})
    rec.checkpoint = str(ckpt_path)


def _eval_stage(cfg, rec, run_dir, log):
    from .metrics import evaluate_checkpoint
    report_path = run_dir / "report.json"
    if report_path.exists():
        report = json.loads(report_path.read_text())
        rec.scores = report["scores"]
        rec.eval_seconds = report.get("seconds", 0.0)
        rec.eval_cpu_seconds = report.get("cpu_seconds", 0.0)
        return
    t0, c0 = time.perf_counter(), time.process_time()
    ckpt = load_checkpoint(rec.checkpoint)
    report = evaluate_checkpoint(ckpt, cfg.metric_config(cfg.dataset_seed), model_id=rec.run_id)
    rec.eval_seconds = time.perf_counter() - t0
    rec.eval_cpu_seconds = time.process_time() - c0
    report["seconds"] = rec.eval_seconds
    report["cpu_seconds"] = rec.eval_cpu_seconds
    _write_json(report_path, report)
    rec.scores = report["scores"]
    log(f"  {rec.run_id} scores " + " ".join(f"{k}={v:.3f}" for k, v in rec.scores.items()))


def wren_sources(cfg, records):
    """Per seed: each kind's best-Triplet-Score checkpoint plus gt and scratch."""
    out = []
    for seed in cfg.seeds:
        out.append(("gt", "gt", seed))
        out.append(("scratch", "scratch", seed))
        for kind in cfg.kinds:
            cands = [r for r in records if r.kind == kind and r.seed == seed
                     and r.ok and r.scores]
            if not cands:
                continue
            best = max(cands, key=lambda r: (r.scores["triplet"], -r.hyper))
            out.append((kind, f"ckpt:{best.checkpoint}", seed))
    return out


def _wren_stage(cfg, records, out_dir, log, failures):
    from .reasoning import train_wren, write_curve
    done = []
    for name, source, seed in wren_sources(cfg, records):
        wdir = out_dir / "wren" / f"{name}_s{seed}"
        curve_path = wdir / "curve.csv"
        entry = {"name": name, "source": source, "seed": seed, "curve": str(curve_path)}
        if not curve_path.exists():
            wdir.mkdir(parents=True, exist_ok=True)
            log(f"wren {name} seed {seed}")
            c0 = time.process_time()
            try:
                curve = train_wren(source, cfg.wren_steps, cfg.wren_eval_every, seed,
                                   eval_batches=cfg.wren_eval_batches)
            except OooLabError as exc:
                entry["error"] = f"{type(exc).__name__}: {exc}"
                failures.append(entry)
                done.append(entry)
                continue
            write_curve(curve, curve_path)
            _write_json(wdir / "timing.json", {"cpu_seconds": time.process_time() - c0})
        timing = wdir / "timing.json"
        if timing.exists():
            entry["cpu_seconds"] = json.loads(timing.read_text())["cpu_seconds"]
        done.append(entry)
    return done


def run_sweep(cfg: SweepConfig, stages=STAGES, log=_log):
    """Execute (or resume) a sweep; returns (records, wren entries, failures)."""
    for s in stages:
        if s not in STAGES:
            raise ConfigurationError(f"unknown stage {s!r}")
    out_dir = Path(cfg.out_dir).resolve()
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = out_dir / "sweep.json"
    if cfg_path.exists():
        previous = {**SweepConfig().to_dict(), **json.loads(cfg_path.read_text())}
        mine = cfg.to_dict()
        mine.pop("out_dir"), previous.pop("out_dir", None)
        if previous != mine:
            raise ConfigurationError(f"{out_dir} holds a sweep with a different config")
    _write_json(cfg_path, cfg.to_dict())

    records, failures = [], []
    for kind, hyper, seed in cfg.run_specs():
        rec = RunRecord(run_id(kind, hyper, seed), kind, hyper, seed)
        run_dir = out_dir / "runs" / rec.run_id
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            if "train" in stages or (run_dir / "model.ckpt").exists():
                if "train" in stages:
                    log(f"train {rec.run_id}")
                _train_stage(cfg, rec, run_dir, log)
            if "eval" in stages and rec.checkpoint:
                _eval_stage(cfg, rec, run_dir, log)
        except (OooLabError, FloatingPointError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            failures.append(rec)
            log(f"  {rec.run_id} FAILED {rec.error}")
        records.append(rec)
        _write_json(out_dir / "index.json", {"runs": [asdict(r) for r in records]})

    wrens = []
    if "wren" in stages and cfg.wren:
        wrens = _wren_stage(cfg, records, out_dir, log, failures)
    _write_json(out_dir / "index.json",
                {"runs": [asdict(r) for r in records], "wren": wrens})
    return records, wrens, failures


# ---------------------------------------------------------- loading results


def load_records(out_dir):
    out_dir = Path(out_dir)
    index = out_dir / "index.json"
    if not index.exists():
        raise ConfigurationError(f"no sweep index in {out_dir}")
    data = json.loads(index.read_text())
    return [RunRecord(**r) for r in data["runs"]], data.get("wren", [])


def read_curve(path):
    with open(path, newline="") as fh:
        return [(int(r["step"]), float(r["accuracy"]), float(r["loss"]))
                for r in csv.DictReader(fh)]


# -------------------------------------------------------------- correlate


def correlate(records, wrens=()):
    """Spearman table over the metrics and per-step WReN accuracy columns.

    Returns ``(names, matrix)`` where ``matrix`` is a list of rows holding
    floats or the ``UNDEFINED`` marker.  WReN accuracy for a run is that of the
    WReN trained on its kind's selected checkpoint at the same seed, so the
    downstream columns only cover the selected runs.
    """
    from .metrics import spearman
    scored = [r for r in records if r.ok and r.scores]
    if len(scored) < 3:
        raise ConfigurationError("correlate needs at least three scored runs")
    columns = {m: [r.scores[m] for r in scored] for m in METRIC_NAMES}

    wren_acc = {}
    for w in wrens:
        if w.get("error") or not str(w["source"]).startswith("ckpt:"):
            continue
        ckpt = w["source"][len("ckpt:"):]
        for step, acc, _ in read_curve(w["curve"]):
            wren_acc.setdefault(step, {})[ckpt] = acc
    names = list(METRIC_NAMES)
    wren_cols = {}
    for step in sorted(wren_acc):
        names.append(f"wren@{step}")
        wren_cols[names[-1]] = wren_acc[step]

    def pair(a, b):
        if a in columns and b in columns:
            return columns[a], columns[b]
        rows = [r for r in scored if all(
            r.checkpoint in wren_cols[n] for n in (a, b) if n in wren_cols)]
        def col(n):
            if n in columns:
                return [r.scores[n] for r in rows]
            return [wren_cols[n][r.checkpoint] for r in rows]
        return col(a), col(b)

    matrix = []
    for a in names:
        row = []
        for b in names:
            x, y = pair(a, b)
            try:
                row.append(1.0 if a == b and len(set(x)) > 1 else spearman(x, y))
            except (UndefinedCorrelationError, ValueError):
                row.append(UNDEFINED)
        matrix.append(row)
    return names, matrix


# ----------------------------------------------------------------- export


def scores_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS)
    for r in records:
        if not r.scores:
            continue
        w.writerow([r.run_id, r.kind, fmt(r.hyper), r.seed]
                   + [fmt(r.scores[m]) for m in METRIC_NAMES])
    return buf.getvalue()


def correlations_csv(names, matrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric"] + list(names))
    for n, row in zip(names, matrix):
        w.writerow([n] + [fmt(v) for v in row])
    return buf.getvalue()


def curves_csv(wrens) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["source", "seed", "step", "accuracy", "loss"])
    for entry in wrens:
        if entry.get("error"):
            continue
        for step, acc, loss in read_curve(entry["curve"]):
            w.writerow([entry["name"], entry["seed"], step, fmt(acc), fmt(loss)])
    return buf.getvalue()


EXPORT_KINDS = ("scores_csv", "correlations_csv", "curves_csv")


def export(records, kind, wrens=(), out_path=None) -> str:
    if kind == "scores_csv":
        text = scores_csv(records)
    elif kind == "correlations_csv":
        text = correlations_csv(*correlate(records, wrens))
    elif kind == "curves_csv":
        text = curves_csv(wrens)
    else:
        raise ConfigurationError(f"unknown export kind {kind!r}")
    if out_path is not None:
        Path(out_path).write_text(text, encoding="utf-8")
    return text


def parse_scores_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        r["hyper"] = float(r["hyper"])
        r["seed"] = int(r["seed"])
        for m in METRIC_NAMES:
            r[m] = float(r[m])
    return rows


def seed_means(records, metric):
    """Mean score per kind over hypers and seeds."""
    out = {}
    for kind in {r.kind for r in records}:
        vals = [r.scores[metric] for r in records if r.kind == kind and r.scores]
        out[kind] = float(np.mean(vals)) if vals else math.nan
    return out
