"""Seeded multi-run orchestration and metrics files.

Each (mode, seed) job builds its own stream, source model and engine, so jobs
can run in separate processes; results are merged sorted by (run_id, step)
before anything is written, which keeps the output independent of ``jobs``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass
from pathlib import Path

import numpy as np

from . import engine, model, rng, stream
from .config import RunConfig, parse_mode

log = logging.getLogger(__name__)

CSV_HEADER = (
    "run_id,seed,mode,step,domain_id,online_accuracy,loss,distance,"
    "alpha,kept,refined,discarded,restored_fraction"
)


@dataclass(frozen=True)
class MetricsRow:
    run_id: str
    seed: int
    mode: str
    step: int
    domain_id: int
    online_accuracy: float
    loss: float | None
    distance: float | None
    alpha: float | None
    kept: int
    refined: int
    discarded: int
    restored_fraction: float | None


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    buf.write(CSV_HEADER + "\n")
    for row in rows:
        writer.writerow([_cell(v) for v in astuple(row)])
    return buf.getvalue()


@dataclass(frozen=True)
class Job:
    cfg: RunConfig
    mode_spec: str
    seed: int

    @property
    def label(self) -> str:
        mode, alpha = parse_mode(self.mode_spec, self.cfg.alpha)
        return f"{mode}:{alpha:g}" if alpha is not None else mode

    @property
    def run_id(self) -> str:
        return f"{self.label}/seed{self.seed}"


def source_model(cfg: RunConfig, source: stream.DomainSpec, seed: int) -> model.ModelParams:
    """Train the source model on labelled source-domain samples (the only labels ever used)."""
    batch = stream.sample_batch(source, cfg.source_samples, rng.derive(seed, rng.SOURCE), 0)
    return model.fit_source(
        batch.x, batch.y, cfg.n_classes, hidden=cfg.hidden, seed=seed, epochs=cfg.source_epochs, lr=cfg.source_lr
    )


def build(cfg: RunConfig, seed: int) -> tuple[stream.StreamSchedule, model.ModelParams]:
    source, schedule = stream.preset_schedule(
        cfg.preset,
        dim=cfg.dim,
        n_classes=cfg.n_classes,
        steps_per_domain=cfg.steps_per_domain,
        batch_size=cfg.batch_size,
        seed=seed,
        label_noise=cfg.label_noise,
        separation=cfg.separation,
        shuffle=cfg.shuffle,
    )
    return schedule, source_model(cfg, source, seed)


def run_job(job: Job) -> tuple[list[MetricsRow], list[dict]]:
    schedule, theta_0 = build(job.cfg, job.seed)
    ecfg = job.cfg.engine_config(job.mode_spec, job.seed)
    metrics = engine.run(ecfg, schedule, theta_0)
    rows, events = [], []
    for r in metrics.reports:
        rows.append(
            MetricsRow(
                run_id=job.run_id,
                seed=job.seed,
                mode=job.label,
                step=r.step,
                domain_id=r.domain_id,
                online_accuracy=r.accuracy,
                loss=r.loss,
                distance=r.distance,
                alpha=r.alpha,
                kept=r.kept,
                refined=r.refined,
                discarded=r.discarded,
                restored_fraction=r.restored_fraction,
            )
        )
        event = {
            "event": "skip" if r.skipped else "step",
            "run_id": job.run_id,
            "step": r.step,
            "domain_id": r.domain_id,
            "decisions": {"direct": r.direct, "refined": r.refined, "discarded": r.discarded},
        }
        if r.n_seen is not None:
            event["tracker"] = {"n_seen": r.n_seen, "distance": r.distance}
        if r.skipped:
            log.warning("%s step %d skipped (non-finite update)", job.run_id, r.step)
        events.append(event)
    return rows, events


def summarize(rows: list[MetricsRow]) -> dict:
    """Per-mode, per-domain mean online accuracy over every row (all seeds pooled)."""
    by_mode: dict[str, dict[int, list[float]]] = {}
    for row in rows:
        by_mode.setdefault(row.mode, {}).setdefault(row.domain_id, []).append(row.online_accuracy)
    modes = {}
    for mode, domains in sorted(by_mode.items()):
        per_domain = {str(d): float(np.mean(v)) for d, v in sorted(domains.items())}
        pooled = [a for v in domains.values() for a in v]
        modes[mode] = {"per_domain": per_domain, "mean": float(np.mean(pooled)), "steps": len(pooled)}
    return {"modes": modes}


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def jobs_for(cfg: RunConfig) -> list[Job]:
    return [Job(cfg, spec, seed) for spec in cfg.mode_specs() for seed in cfg.seeds]


def run_all(cfg: RunConfig) -> tuple[list[MetricsRow], list[dict]]:
    jobs = jobs_for(cfg)
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(jobs))) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]
    rows = sorted((r for rs, _ in results for r in rs), key=lambda r: (r.run_id, r.step))
    events = sorted((e for _, es in results for e in es), key=lambda e: (e["run_id"], e["step"]))
    return rows, events


def run_experiment(cfg: RunConfig, out: Path | str | None = None) -> dict:
    """Run every (mode, seed) job and write metrics.csv, events.jsonl and summary.json.

    Returns the summary dict.
    """
    out_dir = Path(out if out is not None else cfg.out)
    rows, events = run_all(cfg)
    summary = summarize(rows)
    summary["seeds"] = list(cfg.seeds)
    write_atomic(out_dir / "metrics.csv", format_csv(rows))
    write_atomic(out_dir / "events.jsonl", "".join(json.dumps(e, sort_keys=True) + "\n" for e in events))
    write_atomic(out_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
