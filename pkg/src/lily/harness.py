"""Experiment orchestration: config-driven generation, identifiability
audits, multi-seed training, few-shot adaptation, and machine-readable
reports with plot-ready CSV exports.

An experiment directory looks like

    outputs/
      config.json            resolved configuration echo
      dataset/               generated data (datagen directory format)
      audit/audit.json       per-theorem verdicts (when audit is on)
      seeds/seed_<s>/model/  checkpoint per training seed
      seeds/seed_<s>/mcc.json
      report.json            ExperimentReport (wall-clock excluded from
                             determinism guarantees)
      plots/*.csv            emit_plots output

Everything except wall-clock timing is a pure function of the config, so a
rerun with the same config rewrites identical artifacts. Seeds can run as
parallel worker processes (capped by the LILY_THREADS environment variable);
each job pins one torch thread so results do not depend on the level of
parallelism.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import auditor, datagen, estimator, metrics

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
REPORT_VERSION = 1
AUDIT_POINTS = 24


class HarnessError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclasses.dataclass
class ExperimentConfig:
    name: str
    regime: str
    seeds: list
    outputs: str
    datagen: dict = dataclasses.field(default_factory=dict)
    train: dict = dataclasses.field(default_factory=dict)
    audit: bool = True
    adapt: dict | None = None
    eval_method: str = "pearson"
    paper_scale: bool = False

    def __post_init__(self):
        if not self.name or not self.outputs:
            raise ValueError("name and outputs must be nonempty")
        if self.regime not in datagen.REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be unique")
        if self.eval_method not in metrics.METHODS:
            raise ValueError(f"eval_method must be one of {metrics.METHODS}")
        if self.adapt is not None:
            segs = int(self.adapt.get("segments", 0))
            samples = int(self.adapt.get("samples", 0))
            if segs < 1 or samples < 1:
                raise ValueError("adapt needs positive 'segments' and 'samples'")
            self.adapt = {"segments": segs, "samples": samples}

    @classmethod
    def from_json(cls, source):
        """Build from a dict or a JSON file path with a versioned schema."""
        if isinstance(source, (str, os.PathLike)):
            with open(source) as fh:
                obj = json.load(fh)
        else:
            obj = dict(source)
        version = obj.pop("version", None)
        if version != CONFIG_VERSION:
            raise ValueError(
                f"config version {version!r} unsupported (expected {CONFIG_VERSION})"
            )
        return cls(**obj)

    def to_json(self) -> dict:
        out = {"version": CONFIG_VERSION}
        out.update(dataclasses.asdict(self))
        return out


@dataclasses.dataclass
class ExperimentReport:
    name: str
    regime: str
    seeds: list
    train_segments: int
    val_count: int
    mcc_per_seed: list
    mcc_mean: float
    mcc_std: float
    elbo_curves: dict
    audit: dict | None
    adaptation: list | None
    wall_clock: dict
    outputs: str
    # per-seed {"true": (N, n), "est": (N, n)} arrays for emit_plots; not
    # serialized into report.json
    scatter: dict = dataclasses.field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "name": self.name,
            "regime": self.regime,
            "seeds": self.seeds,
            "train_segments": self.train_segments,
            "val_count": self.val_count,
            "mcc_per_seed": self.mcc_per_seed,
            "mcc_mean": self.mcc_mean,
            "mcc_std": self.mcc_std,
            "elbo_curves": self.elbo_curves,
            "audit": self.audit,
            "adaptation": self.adaptation,
            "wall_clock": self.wall_clock,
        }


def build_spec(cfg: ExperimentConfig) -> datagen.LatentProcessSpec:
    """The generation spec implied by a config: regime plus overrides, with
    paper-scale sample counts substituted when requested and extra segments
    appended for held-out adaptation."""
    fields = dict(cfg.datagen)
    fields.pop("regime", None)
    spec = datagen.LatentProcessSpec(regime=cfg.regime, **fields)
    resolved = spec.resolved()
    if cfg.paper_scale and "samples_per_segment" not in fields:
        scale = (
            datagen.PAPER_SAMPLES_SINGLE
            if resolved.num_segments == 1
            else datagen.PAPER_SAMPLES_MULTI
        )
        spec = dataclasses.replace(spec, samples_per_segment=scale)
    if cfg.adapt is not None:
        spec = dataclasses.replace(
            spec,
            num_segments=resolved.num_segments + cfg.adapt["segments"],
            samples_per_segment=spec.samples_per_segment
            or resolved.samples_per_segment,
        )
    return spec


def build_train_config(cfg: ExperimentConfig, spec) -> estimator.TrainConfig:
    resolved = spec.resolved()
    fields = dict(cfg.train)
    fields.setdefault("latent_dim", resolved.n_latent)
    fields.setdefault("lag", resolved.lag)
    return estimator.TrainConfig(**fields)


def audit_spec(spec, num_points=AUDIT_POINTS, seed=0) -> dict:
    """Regime-appropriate identifiability audit of a generation spec:
    {"reports": [per-theorem dicts], "overall": verdict}."""
    resolved = spec.resolved()
    if resolved.regime == "modular":
        reports = auditor.audit_modular(resolved, num_points, seed)
    else:
        families = auditor.families_from_spec(resolved)
        if resolved.regime == "changing_dyn":
            reports = [
                auditor.audit_changing(
                    families["changing"], resolved.n_changing, num_points, seed
                )
            ]
        else:
            reports = [
                auditor.audit_fixed(
                    families["fixed"], resolved.n_fixed, num_points, seed
                )
            ]
    return {
        "reports": [r.to_json() for r in reports],
        "overall": auditor.overall_verdict(reports),
    }


def _correlate_theta(thetas, truth):
    """Per-coordinate Pearson r of estimated change factors against the true
    scalar modulation, plus the strongest coordinate."""
    thetas = np.asarray(thetas, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    rs = []
    for j in range(thetas.shape[1]):
        col = thetas[:, j]
        if col.std() == 0.0 or truth.std() == 0.0:
            rs.append(0.0)
        else:
            rs.append(float(np.corrcoef(col, truth)[0, 1]))
    best = int(np.argmax(np.abs(rs)))
    return rs, best, float(abs(rs[best]))


def _seed_job(payload):
    """One training seed, run to completion: fit, checkpoint, validation MCC,
    and optional few-shot adaptation on held-out segments. Runs on one torch
    thread so outcomes do not depend on worker scheduling."""
    import torch

    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        t0 = time.perf_counter()
        ds_train = payload["ds_train"]
        cfg: estimator.TrainConfig = payload["train_cfg"]
        seed = payload["seed"]
        seed_dir = payload["seed_dir"]
        params, history = estimator.train(ds_train, cfg, seed=seed)
        run_cfg = dataclasses.replace(cfg, seed=seed)
        estimator.save_model(
            os.path.join(seed_dir, "model"), params, run_cfg, history
        )

        dw = estimator.dataset_windows(ds_train, cfg)
        val_idx = dw["val_idx"]
        est_means = estimator.window_latent_means(
            params, dw["windows"][val_idx], dw["labels"][val_idx]
        )
        true_latents = dw["latents"][val_idx]
        report = metrics.mcc(true_latents, est_means, method=payload["eval_method"])
        with open(os.path.join(seed_dir, "mcc.json"), "w") as fh:
            json.dump(report.to_json(), fh, indent=1)

        adaptation = None
        if payload["ds_holdout"] is not None:
            ds_h = payload["ds_holdout"]
            samples = payload["adapt_samples"]
            thetas = []
            for seg in range(ds_h.spec.num_segments):
                rows = np.where(ds_h.segments == seg)[0][:samples]
                wins, _, _ = estimator.window_stack(
                    ds_h.observations[rows], np.zeros(rows.size, dtype=int), cfg.lag
                )
                thetas.append(estimator.correct_shift(params, wins, run_cfg))
            adaptation = {"seed": seed, "thetas": [t.tolist() for t in thetas]}
            truth = payload["adapt_truth"]
            if truth is not None:
                rs, best, strength = _correlate_theta(thetas, truth)
                adaptation.update(
                    {
                        "truth": list(truth),
                        "per_coordinate_r": rs,
                        "best_coordinate": best,
                        "correlation": strength,
                    }
                )
        return {
            "seed": seed,
            "history": history,
            "mcc": report.mcc,
            "true": true_latents,
            "est": est_means,
            "adaptation": adaptation,
            "seconds": time.perf_counter() - t0,
        }
    finally:
        torch.set_num_threads(old_threads)


def _worker_cap() -> int:
    raw = os.environ.get("LILY_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise HarnessError(f"LILY_THREADS must be an integer, got {raw!r}")
    return max(1, cap)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Full pipeline: generate -> (audit) -> train per seed -> evaluate ->
    (adapt) -> report. All artifacts land under cfg.outputs; a failing stage
    writes a stub report naming itself and leaves earlier artifacts behind."""
    outdir = cfg.outputs
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.json"), "w") as fh:
        json.dump(cfg.to_json(), fh, indent=1, sort_keys=True)

    timings = {}

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except Exception as exc:
            stub = {
                "version": REPORT_VERSION,
                "name": cfg.name,
                "failed_stage": name,
                "error": str(exc),
            }
            with open(os.path.join(outdir, "report.json"), "w") as fh:
                json.dump(stub, fh, indent=1, sort_keys=True)
            raise HarnessError(f"stage {name!r} failed: {exc}") from exc
        timings[name] = time.perf_counter() - t0
        return result

    def _generate():
        spec = build_spec(cfg)
        ds = datagen.generate(spec)
        datagen.save_dataset(ds, os.path.join(outdir, "dataset"))
        return ds

    ds_full = stage("generate", _generate)
    resolved = ds_full.spec.resolved()
    base_segments = resolved.num_segments - (
        cfg.adapt["segments"] if cfg.adapt else 0
    )
    if cfg.adapt:
        ds_train = datagen.subset_by_segments(ds_full, range(base_segments))
        holdout_ids = list(range(base_segments, resolved.num_segments))
        ds_holdout = datagen.subset_by_segments(ds_full, holdout_ids)
        records = resolved.dyn_change_params
        truth = None
        if records and all("scale" in records[k] for k in holdout_ids):
            truth = [float(records[k]["scale"]) for k in holdout_ids]
    else:
        ds_train, ds_holdout, truth = ds_full, None, None

    audit_result = None
    if cfg.audit:

        def _audit():
            result = audit_spec(ds_train.spec, AUDIT_POINTS, cfg.seeds[0])
            os.makedirs(os.path.join(outdir, "audit"), exist_ok=True)
            with open(os.path.join(outdir, "audit", "audit.json"), "w") as fh:
                json.dump(result, fh, indent=1, sort_keys=True)
            return result

        audit_result = stage("audit", _audit)

    train_cfg = build_train_config(cfg, ds_train.spec)

    def _train_all():
        payloads = []
        for seed in cfg.seeds:
            seed_dir = os.path.join(outdir, "seeds", f"seed_{seed}")
            os.makedirs(seed_dir, exist_ok=True)
            payloads.append(
                {
                    "ds_train": ds_train,
                    "ds_holdout": ds_holdout,
                    "adapt_truth": truth,
                    "adapt_samples": cfg.adapt["samples"] if cfg.adapt else None,
                    "train_cfg": train_cfg,
                    "seed": seed,
                    "seed_dir": seed_dir,
                    "eval_method": cfg.eval_method,
                }
            )
        workers = min(_worker_cap(), len(payloads))
        if workers == 1:
            results = [_seed_job(p) for p in payloads]
        else:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                results = list(pool.map(_seed_job, payloads))
        return {r["seed"]: r for r in results}

    by_seed = stage("train", _train_all)

    def _report():
        mccs = [by_seed[s]["mcc"] for s in cfg.seeds]
        adaptation = (
            [by_seed[s]["adaptation"] for s in cfg.seeds] if cfg.adapt else None
        )
        report = ExperimentReport(
            name=cfg.name,
            regime=cfg.regime,
            seeds=list(cfg.seeds),
            train_segments=base_segments,
            val_count=int(by_seed[cfg.seeds[0]]["true"].shape[0]),
            mcc_per_seed=mccs,
            mcc_mean=float(np.mean(mccs)),
            mcc_std=float(np.std(mccs)),
            elbo_curves={str(s): by_seed[s]["history"] for s in cfg.seeds},
            audit=audit_result,
            adaptation=adaptation,
            wall_clock={
                "stages_s": dict(timings),
                "per_seed_s": {str(s): by_seed[s]["seconds"] for s in cfg.seeds},
            },
            outputs=outdir,
            scatter={
                s: {"true": by_seed[s]["true"], "est": by_seed[s]["est"]}
                for s in cfg.seeds
            },
        )
        with open(os.path.join(outdir, "report.json"), "w") as fh:
            json.dump(report.to_json(), fh, indent=1, sort_keys=True)
        return report

    return stage("report", _report)


def emit_plots(report: ExperimentReport, outdir=None) -> list:
    """Plot-ready CSVs for a report: per-component scatter of true vs
    estimated latents, MCC by epoch, change-factor scatter, and audit
    verdicts. Stages absent from the report skip their file with a logged
    notice. Returns the written paths."""
    outdir = os.path.join(report.outputs, "plots") if outdir is None else outdir
    os.makedirs(outdir, exist_ok=True)
    written = []

    if report.scatter:
        path = os.path.join(outdir, "scatter.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true", "estimated", "component", "seed"])
            for seed in report.seeds:
                block = report.scatter[seed]
                true, est = block["true"], block["est"]
                for k in range(true.shape[1]):
                    for i in range(true.shape[0]):
                        writer.writerow([repr(true[i, k]), repr(est[i, k]), k, seed])
        written.append(path)
    else:
        log.info("skipping scatter.csv: no trained seeds in report")

    curves = [
        (seed, row)
        for seed, rows in report.elbo_curves.items()
        for row in rows
        if row.get("mcc") is not None
    ]
    if curves:
        path = os.path.join(outdir, "mcc_by_epoch.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["seed", "epoch", "mcc"])
            for seed, row in curves:
                writer.writerow([seed, row["epoch"], repr(row["mcc"])])
        written.append(path)
    else:
        log.info("skipping mcc_by_epoch.csv: no per-epoch MCC in report")

    adapt_rows = []
    for entry in report.adaptation or []:
        truth = entry.get("truth")
        if truth is None:
            continue
        for seg, (theta, t) in enumerate(zip(entry["thetas"], truth)):
            for j, value in enumerate(theta):
                adapt_rows.append([entry["seed"], seg, repr(t), j, repr(value)])
    if adapt_rows:
        path = os.path.join(outdir, "theta_scatter.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["seed", "segment", "true_modulation", "coordinate", "theta_value"]
            )
            writer.writerows(adapt_rows)
        written.append(path)
    else:
        log.info("skipping theta_scatter.csv: no adaptation stage in report")

    if report.audit:
        path = os.path.join(outdir, "audit.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["theorem", "verdict", "rank", "num_points", "seed", "singular_values"]
            )
            for entry in report.audit["reports"]:
                writer.writerow(
                    [
                        entry["theorem"],
                        entry["verdict"],
                        entry["rank"],
                        entry["num_points"],
                        entry["seed"],
                        ";".join(repr(v) for v in entry["singular_values"]),
                    ]
                )
        written.append(path)
    else:
        log.info("skipping audit.csv: no audit stage in report")
    return written
