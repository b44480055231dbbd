"""Command-line entry points: generate, audit, train, adapt, eval, experiment.

Each subcommand is a thin wrapper over the library modules; all file formats
are the documented dataset/checkpoint/report schemas. Exit codes: 0 success,
1 usage error (bad flags), 2 runtime failure (bad files, failed stages).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import auditor, datagen, estimator, harness, metrics

THEOREMS = ("T1", "T2", "T3", "C1", "C2", "all")

USAGE_EXIT = 1
FAILURE_EXIT = 2


class CliError(Exception):
    """Runtime failure surfaced to the user with exit code 2."""


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"malformed JSON in {path}: {e}")


def _typed_fields(raw, cls, what):
    if not isinstance(raw, dict):
        raise CliError(f"{what} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise CliError(f"unknown {what} fields: {', '.join(unknown)}")
    return dict(raw)


def spec_from_file(path) -> datagen.LatentProcessSpec:
    """Parse a generation-spec JSON file. Scalar fields are taken as-is;
    nested parameter blocks (transition weights, per-segment change records)
    are rebuilt into arrays the way dataset loading does."""
    raw = _typed_fields(_load_json(path), datagen.LatentProcessSpec, "spec")
    if "regime" not in raw:
        raise CliError("spec file must name a regime")
    if raw.get("partition") is not None:
        raw["partition"] = tuple(raw["partition"])
    if raw.get("transition_params") is not None:
        raw["transition_params"] = datagen._arrays_back(raw["transition_params"])
    if raw.get("dyn_change_params") is not None:
        raw["dyn_change_params"] = [
            {**d, "kernel": np.asarray(d["kernel"], dtype=np.float64)}
            for d in raw["dyn_change_params"]
        ]
    if raw.get("obs_change_params") is not None:
        raw["obs_change_params"] = [
            {
                "mean": np.atleast_1d(np.asarray(d["mean"], dtype=np.float64)),
                "var": np.atleast_1d(np.asarray(d["var"], dtype=np.float64)),
            }
            for d in raw["obs_change_params"]
        ]
    try:
        return datagen.LatentProcessSpec(**raw)
    except TypeError as e:
        raise CliError(f"bad spec file {path}: {e}")


def train_config_from_file(path, ds) -> estimator.TrainConfig:
    fields = _typed_fields(_load_json(path), estimator.TrainConfig, "train config")
    fields.setdefault("latent_dim", ds.spec.n_latent)
    fields.setdefault("lag", ds.spec.lag)
    return estimator.TrainConfig(**fields)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# audit dispatch


def _corollary1(spec, num_points, seed):
    s = datagen.draw_parameters(spec.resolved())
    if s.n_fixed == 0:
        raise CliError("corollary 1 needs a fixed block")
    if s.regime == "linear_gn" or s.hetero_coupling <= 0:
        raise CliError("corollary 1 applies to heterogeneous-noise dynamics")
    q, _ = datagen.fixed_transition_fns(s)
    b, _ = datagen.coupling_fns(s)
    # the corollary is stated for lag-1 models; audit the spec's lag-1 section
    pad = np.zeros(s.n_fixed * (s.lag - 1))
    return auditor.audit_corollary1(
        lambda h: q(np.concatenate([h, pad])),
        lambda h: b(np.concatenate([h, pad])),
        s.n_fixed,
        num_points,
        seed,
    )


def _corollary2(spec, num_points, seed):
    s = datagen.draw_parameters(spec.resolved())
    if s.regime != "linear_gn":
        raise CliError("corollary 2 applies to the linear generalized-normal regime")
    return auditor.audit_corollary2(
        s.transition_params["fixed"]["A"], s.gn_lambda, s.gn_beta, num_points, seed
    )


def run_audit(spec, theorem, num_points, seed) -> dict:
    """One named theorem (or the regime-appropriate set for "all") against a
    generation spec; same report schema either way."""
    resolved = spec.resolved()
    if theorem == "all":
        return harness.audit_spec(resolved, num_points, seed)
    if theorem == "C1":
        reports = [_corollary1(resolved, num_points, seed)]
    elif theorem == "C2":
        reports = [_corollary2(resolved, num_points, seed)]
    else:
        fams = auditor.families_from_spec(resolved)
        if theorem == "T1":
            if fams["fixed"] is None:
                raise CliError("spec has no fixed block to audit")
            reports = [auditor.audit_fixed(fams["fixed"], fams["fixed"].n, num_points, seed)]
        elif theorem == "T2":
            if fams["changing"] is None:
                raise CliError("spec has no changing block to audit")
            reports = [
                auditor.audit_changing(
                    fams["changing"], fams["changing"][0].n, num_points, seed
                )
            ]
        else:
            if fams["obs"] is None:
                raise CliError("spec has no observation block to audit")
            reports = [
                auditor.audit_observation(
                    fams["obs"], fams["obs"][0].n, num_points, seed
                )
            ]
    return {
        "reports": [r.to_json() for r in reports],
        "overall": auditor.overall_verdict(reports),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    spec = spec_from_file(args.config)
    ds = datagen.generate(spec, seed=args.seed)
    datagen.save_dataset(ds, args.out)
    print(
        f"wrote {ds.observations.shape[0]} samples "
        f"({ds.spec.num_segments} segments, regime {ds.spec.regime}) to {args.out}"
    )
    return 0


def cmd_audit(args) -> int:
    if args.data:
        spec = datagen.load_dataset(args.data).spec
    else:
        spec = spec_from_file(args.spec)
    result = run_audit(spec, args.theorem, args.points, args.seed)
    _write_json(args.out, result)
    print(f"{args.theorem}: {result['overall']}")
    return 0


def cmd_train(args) -> int:
    ds = datagen.load_dataset(args.data)
    cfg = train_config_from_file(args.config, ds)
    seed = cfg.seed if args.seed is None else args.seed
    params, history = estimator.train(ds, cfg, seed=seed)
    run_cfg = dataclasses.replace(cfg, seed=seed)
    estimator.save_model(args.out, params, run_cfg, history)
    line = f"saved model to {args.out} after {len(history)} epochs"
    if history and history[-1].get("mcc") is not None:
        best = max(h["val_elbo"] for h in history)
        kept = next(h for h in history if h["val_elbo"] == best)
        line += f" (kept epoch {kept['epoch']}, val MCC {kept['mcc']:.3f})"
    print(line)
    return 0


def cmd_adapt(args) -> int:
    params, cfg, _ = estimator.load_model(args.model)
    cfg = dataclasses.replace(cfg, seed=cfg.seed if args.seed is None else args.seed)
    ds = datagen.load_dataset(args.data)
    if args.samples <= cfg.lag:
        raise CliError(f"--samples must exceed the model lag ({cfg.lag})")
    thetas = []
    for seg in range(ds.spec.num_segments):
        rows = np.where(ds.segments == seg)[0][: args.samples]
        if rows.size <= cfg.lag:
            raise CliError(f"segment {seg} has too few samples")
        wins, _, _ = estimator.window_stack(
            ds.observations[rows], np.zeros(rows.size, dtype=int), cfg.lag
        )
        thetas.append(estimator.correct_shift(params, wins, cfg))
    payload = {
        "samples": args.samples,
        "segments": ds.spec.num_segments,
        "thetas": [t.tolist() for t in thetas],
    }
    records = ds.spec.dyn_change_params or []
    if len(records) == ds.spec.num_segments and all("scale" in r for r in records):
        truth = [float(r["scale"]) for r in records]
        rs, best, strength = harness._correlate_theta(thetas, truth)
        payload.update(
            {
                "truth": truth,
                "per_coordinate_r": rs,
                "best_coordinate": best,
                "correlation": strength,
            }
        )
    _write_json(args.out, payload)
    note = f", best |r| {payload['correlation']:.3f}" if "correlation" in payload else ""
    print(f"adapted {ds.spec.num_segments} segments from {args.samples} samples{note}")
    return 0


def cmd_eval(args) -> int:
    params, cfg, _ = estimator.load_model(args.model)
    ds = datagen.load_dataset(args.data)
    dw = estimator.dataset_windows(ds, cfg)
    if dw["latents"] is None:
        raise CliError("dataset carries no ground-truth latents to score against")
    est = estimator.window_latent_means(params, dw["windows"], dw["labels"])
    report = metrics.mcc(dw["latents"], est, method=args.method)
    _write_json(args.out, report.to_json())
    print(f"mcc {report.mcc:.4f} ({args.method}, {dw['windows'].shape[0]} windows)")
    return 0


def cmd_experiment(args) -> int:
    cfg = harness.ExperimentConfig.from_json(args.config)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, outputs=args.out)
    report = harness.run_experiment(cfg)
    harness.emit_plots(report)
    audit_note = (
        f", audit {report.audit['overall']}" if report.audit is not None else ""
    )
    print(
        f"{report.name}: mcc {report.mcc_mean:.3f} +/- {report.mcc_std:.3f} "
        f"over seeds {report.seeds}{audit_note}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; the documented usage-error code is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lily",
        description=(
            "Latent causal processes under modular distribution shift: "
            "generate data, audit identifiability, train and adapt the "
            "sequential VAE, and score recovered latents."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("generate", help="draw a dataset from a spec JSON")
    p.add_argument("--config", required=True, help="generation spec JSON")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("audit", help="run identifiability condition checks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="dataset directory (audits its spec)")
    src.add_argument("--spec", help="generation spec JSON")
    p.add_argument("--theorem", choices=THEOREMS, default="all")
    p.add_argument("--out", required=True, help="verdict report JSON to write")
    p.add_argument("--points", type=int, default=harness.AUDIT_POINTS)
    p.add_argument("--seed", type=int, default=0, help="evaluation-point seed")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("train", help="fit the sequential VAE to a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", required=True, help="train config JSON")
    p.add_argument("--out", required=True, help="checkpoint directory to write")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="few-shot change-factor fit per segment")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset of held-out segments")
    p.add_argument("--samples", type=int, required=True, metavar="N",
                   help="samples per segment to adapt from")
    p.add_argument("--out", required=True, help="theta report JSON to write")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="score recovered latents against truth")
    p.add_argument("--model", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--method", choices=("pearson", "spearman"), default="pearson")
    p.add_argument("--out", required=True, help="MCC report JSON to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="full generate/audit/train/eval pipeline")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", default=None, help="override the config outputs dir")
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except (
        CliError,
        datagen.SpecError,
        datagen.DatasetFormatError,
        harness.HarnessError,
        estimator.TrainingDiverged,
        ValueError,
        OSError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return FAILURE_EXIT


if __name__ == "__main__":
    sys.exit(main())
