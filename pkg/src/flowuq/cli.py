"""Command-line entry point wiring configs to the train/sample/eval pipelines.

Exit codes: 0 on success, 2 for configuration errors, 3 for numeric
failures.  Every command writes a JSON manifest recording the configuration
snapshot, seed, source revision, produced files and wall-clock timings, so a
run can be regenerated byte-identically.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .config import load_run_config
from .errors import ConfigError, FlowUQError, NonFiniteError
from .evaluate import filter_sweep, write_report_csv
from .guidance import GuidanceConfig
from .model import VelocityModel
from .paths import AffinePath
from .pipeline import SampleRecord, generate, resolve_threads
from .sample import SamplerConfig
from .svgplot import write_line_plot
from .train import train, write_loss_csv
from .uq import HutchinsonJVP, MonteCarloCov, UqConfig, ZeroCov


def _revision():
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, check=True,
        )
        return out.stdout.strip()
    except Exception:
        return "unknown"


def _write_manifest(out_dir, payload):
    payload = dict(payload)
    payload["revision"] = _revision()
    path = out_dir / "manifest.json"
    with open(path, "w") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def _write_points_csv(path, points, header_prefix="c"):
    points = np.atleast_2d(points)
    columns = ",".join(f"{header_prefix}{i}" for i in range(points.shape[1]))
    with open(path, "w") as handle:
        handle.write(f"index,{columns}\n")
        for i, row in enumerate(points):
            handle.write(f"{i}," + ",".join(repr(float(v)) for v in row) + "\n")


def _read_points_csv(path):
    rows = []
    try:
        with open(path) as handle:
            header = handle.readline()
            if not header.startswith("index,"):
                raise ConfigError([f"{path}: expected a points CSV with an index column"])
            for number, line in enumerate(handle, start=2):
                parts = line.strip().split(",")
                try:
                    rows.append([float(v) for v in parts[1:]])
                except ValueError:
                    raise ConfigError([f"{path}: line {number}: not a number row"]) from None
    except FileNotFoundError:
        raise ConfigError([f"points CSV not found: {path}"]) from None
    if not rows:
        raise ConfigError([f"{path}: contains no points"])
    return np.asarray(rows, dtype=np.float64)


# -- train -----------------------------------------------------------------


def cmd_train(args):
    run = load_run_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_classes = run.dataset.n_classes if run.conditional else 0
    model = VelocityModel(
        run.dataset.dim,
        hidden=run.model["hidden"],
        activation=run.model["activation"],
        time_features=run.model["time_features"],
        n_classes=n_classes,
        cond_embed_dim=run.model["cond_embed_dim"],
        seed=run.train.seed,
    )
    started = time.perf_counter()
    result = train(model, run.dataset, run.train)
    elapsed = time.perf_counter() - started
    ckpt = out_dir / "checkpoint.npz"
    ckpt_ema = out_dir / "checkpoint_ema.npz"
    result.model.save(ckpt)
    result.ema_model.save(ckpt_ema)
    loss_csv = out_dir / "loss.csv"
    with open(loss_csv, "w") as handle:
        write_loss_csv(result.history, handle)
    _write_manifest(
        out_dir,
        {
            "kind": "train_run",
            "config": run.raw,
            "seed": run.train.seed,
            "files": {
                "checkpoint": ckpt.name,
                "checkpoint_ema": ckpt_ema.name,
                "loss_csv": loss_csv.name,
            },
            "timings": {"train_seconds": elapsed},
        },
    )
    print(f"trained {run.train.steps} steps in {elapsed:.1f}s -> {ckpt}")
    return 0


# -- sample ------------------------------------------------------------------


def _cov_from_args(args):
    if args.cov == "zero":
        return ZeroCov()
    if args.cov == "jvp":
        return HutchinsonJVP(probes=args.probes)
    return MonteCarloCov(samples=args.probes)


def _guidance_from_args(args, model):
    wants_cfg = args.lambda_max > 0.0 or args.fixed_lambda is not None
    if not wants_cfg and args.w == 0.0:
        return None
    if wants_cfg and model.n_classes == 0:
        raise ConfigError(
            ["--lambda-max/--fixed-lambda require a conditional model checkpoint"]
        )
    return GuidanceConfig(
        w=args.w,
        cg_cadence=args.cg_cadence,
        lambda_max=args.lambda_max,
        cfg_enabled=wants_cfg and args.fixed_lambda is None,
        cg_enabled=args.w > 0.0,
        fixed_lambda=args.fixed_lambda,
    )


def _parse_cond(args, model):
    if args.cond is None:
        return "balanced" if model.n_classes > 0 else None
    if args.cond == "none":
        return None
    if args.cond == "balanced":
        if model.n_classes == 0:
            raise ConfigError(["--cond balanced requires a conditional model"])
        return "balanced"
    try:
        value = int(args.cond)
    except ValueError:
        raise ConfigError([f"--cond must be an integer, 'balanced' or 'none', got {args.cond!r}"])
    if model.n_classes == 0:
        raise ConfigError(["--cond needs a conditional model checkpoint"])
    if not 0 <= value < model.n_classes:
        raise ConfigError([f"--cond {value} outside [0, {model.n_classes})"])
    return value


def cmd_sample(args):
    model = VelocityModel.load(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    guidance_cfg = _guidance_from_args(args, model)
    cond = _parse_cond(args, model)
    if args.score == "au":
        uq_cfg = None  # the re-noising baseline replaces variance propagation
    else:
        uq_cfg = UqConfig(cov=_cov_from_args(args), cadence=args.cadence)
    sampler_cfg = SamplerConfig(steps=args.steps, method=args.method)
    path = AffinePath("linear")
    started = time.perf_counter()
    result = generate(
        model,
        path,
        args.n,
        sampler_cfg=sampler_cfg,
        uq_cfg=uq_cfg,
        guidance_cfg=guidance_cfg,
        cond=cond,
        seed=args.seed,
        n_threads=resolve_threads(args.threads),
        score_top_fraction=args.top_fraction,
        score_method=args.score,
        au_renoise=args.au_renoise,
        au_window=args.au_window,
        keep_trajectories=args.dump_trajectories,
    )
    elapsed = time.perf_counter() - started

    samples_csv = out_dir / "samples.csv"
    _write_points_csv(samples_csv, np.stack([r.sample for r in result.records]))
    uncertainty_csv = out_dir / "uncertainty.csv"
    _write_points_csv(uncertainty_csv, np.stack([r.uncertainty for r in result.records]))
    scores_csv = out_dir / "scores.csv"
    with open(scores_csv, "w") as handle:
        handle.write("index,score,cond,seed,method\n")
        for r in result.records:
            cond_field = "" if r.cond is None else r.cond
            handle.write(f"{r.index},{r.score!r},{cond_field},{r.seed},{r.method}\n")

    files = {
        "samples": samples_csv.name,
        "uncertainty": uncertainty_csv.name,
        "scores": scores_csv.name,
    }
    if result.lambda_rows:
        lambda_csv = out_dir / "lambda_log.csv"
        with open(lambda_csv, "w") as handle:
            handle.write("step,t,sample,lambda_opt,lambda_star\n")
            for step, t, sample_id, lam_opt, lam_star in result.lambda_rows:
                handle.write(f"{step},{t!r},{sample_id},{lam_opt!r},{lam_star!r}\n")
        files["lambda_log"] = lambda_csv.name
    if result.sigma_corr_rows:
        corr_csv = out_dir / "sigma_correlation.csv"
        with open(corr_csv, "w") as handle:
            handle.write("step,t,pearson_r\n")
            for step, t, r in result.sigma_corr_rows:
                handle.write(f"{step},{t!r},{r!r}\n")
        files["sigma_correlation"] = corr_csv.name
    if args.dump_trajectories:
        traj_csv = out_dir / "trajectories.csv"
        with open(traj_csv, "w") as handle:
            columns = ",".join(f"c{i}" for i in range(model.dim))
            handle.write(f"sample,step,t,{columns}\n")
            for indices, trajectory in result.trajectories:
                for step, state in enumerate(trajectory):
                    for row, index in enumerate(indices):
                        coords = ",".join(repr(float(v)) for v in state.mean[row])
                        handle.write(f"{index},{step},{state.t!r},{coords}\n")
        files["trajectories"] = traj_csv.name

    _write_manifest(
        out_dir,
        {
            "kind": "sample_run",
            "config": {
                "checkpoint": str(args.checkpoint),
                "n": args.n,
                "seed": args.seed,
                "steps": args.steps,
                "method": args.method,
                "cond": args.cond,
                "w": args.w,
                "cg_cadence": args.cg_cadence,
                "lambda_max": args.lambda_max,
                "fixed_lambda": args.fixed_lambda,
                "cov": args.cov,
                "probes": args.probes,
                "cadence": args.cadence,
                "score": args.score,
                "au_renoise": args.au_renoise,
                "au_window": args.au_window,
                "top_fraction": args.top_fraction,
            },
            "seed": args.seed,
            "n_samples": args.n,
            "files": files,
            "records": [
                {
                    "index": r.index,
                    "score": r.score,
                    "cond": r.cond,
                    "seed": r.seed,
                    "method": r.method,
                }
                for r in result.records
            ],
            "diagnostics": {"floored_elements": result.diagnostics.floored_elements},
            "timings": {"sample_seconds": elapsed},
        },
    )
    print(f"generated {args.n} samples in {elapsed:.1f}s -> {out_dir}")
    return 0


# -- eval --------------------------------------------------------------------


def _load_manifest_records(manifest_path):
    manifest_path = Path(manifest_path)
    with open(manifest_path) as handle:
        manifest = json.load(handle)
    if manifest.get("kind") != "sample_run":
        raise ConfigError([f"{manifest_path}: not a sample-run manifest"])
    if not manifest.get("records"):
        raise ConfigError([f"{manifest_path}: manifest contains no sample records"])
    base = manifest_path.parent
    samples = _read_points_csv(base / manifest["files"]["samples"])
    records = []
    for meta, row in zip(manifest["records"], samples):
        records.append(
            SampleRecord(
                index=meta["index"],
                sample=row,
                uncertainty=np.zeros_like(row),
                score=float(meta["score"]),
                cond=meta["cond"],
                seed=meta["seed"],
                method=meta["method"],
            )
        )
    return manifest, records


def _load_real_points(args):
    source = Path(args.real)
    if source.suffix == ".csv":
        return _read_points_csv(source)
    run = load_run_config(source)
    points, _ = run.dataset.draw(args.real_count, np.random.default_rng(args.real_seed))
    return points


def cmd_eval(args):
    manifest, records = _load_manifest_records(args.manifest)
    real = _load_real_points(args)
    ratios = [float(v) for v in args.ratios.split(",") if v != ""]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    reports = filter_sweep(
        records, real, ratios, eval_size=args.eval_size, k=args.k, seed=args.seed
    )
    elapsed = time.perf_counter() - started
    report_csv = out_dir / "report.csv"
    with open(report_csv, "w") as handle:
        write_report_csv(reports, handle)
    svg_path = out_dir / "filtering_curves.svg"
    write_line_plot(
        svg_path,
        [r.ratio for r in reports],
        {
            "precision": [r.precision for r in reports],
            "recall": [r.recall for r in reports],
            "energy_distance": [r.energy_distance for r in reports],
        },
        title="metrics vs filtering ratio",
        x_label="filtering ratio",
    )
    _write_manifest(
        out_dir,
        {
            "kind": "eval_run",
            "config": {
                "manifest": str(args.manifest),
                "real": str(args.real),
                "ratios": ratios,
                "k": args.k,
                "eval_size": args.eval_size,
                "seed": args.seed,
                "real_count": args.real_count,
                "real_seed": args.real_seed,
            },
            "seed": args.seed,
            "source_manifest_seed": manifest["seed"],
            "files": {"report": report_csv.name, "plot": svg_path.name},
            "timings": {"eval_seconds": elapsed},
        },
    )
    print(f"evaluated {len(ratios)} ratios in {elapsed:.1f}s -> {report_csv}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowuq",
        description="Train, sample and evaluate uncertainty-aware flow matching models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("config", help="INI config with [dataset], [model], [train]")
    p_train.add_argument("--out", default="runs/train", help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_sample = sub.add_parser("sample", help="generate scored samples from a checkpoint")
    p_sample.add_argument("--checkpoint", required=True)
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--out", default="runs/sample")
    p_sample.add_argument("--steps", type=int, default=50)
    p_sample.add_argument("--method", choices=("euler", "heun"), default="heun")
    p_sample.add_argument("--cond", default=None,
                          help="class id, 'balanced' or 'none' (default: balanced when conditional)")
    p_sample.add_argument("--w", type=float, default=0.0, help="classifier-guidance scale")
    p_sample.add_argument("--cg-cadence", type=int, default=2)
    p_sample.add_argument("--lambda-max", type=float, default=0.0,
                          help="adaptive classifier-free guidance cap")
    p_sample.add_argument("--fixed-lambda", type=float, default=None,
                          help="fixed classifier-free guidance scale (standard CFG)")
    p_sample.add_argument("--cov", choices=("zero", "jvp", "mc"), default="jvp")
    p_sample.add_argument("--probes", type=int, default=1,
                          help="probe/sample count for the covariance estimator")
    p_sample.add_argument("--cadence", type=int, default=1,
                          help="propagate variance every k sampling steps")
    p_sample.add_argument("--score", choices=("propagated", "au"), default="propagated")
    p_sample.add_argument("--au-renoise", type=int, default=8)
    p_sample.add_argument("--au-window", type=float, default=0.25)
    p_sample.add_argument("--top-fraction", type=float, default=0.1)
    p_sample.add_argument("--threads", type=int, default=None)
    p_sample.add_argument("--dump-trajectories", action="store_true")
    p_sample.set_defaults(func=cmd_sample)

    p_eval = sub.add_parser("eval", help="filtering sweep against real data")
    p_eval.add_argument("--manifest", required=True, help="sample-run manifest.json")
    p_eval.add_argument("--real", required=True,
                        help="real points CSV, or a config file whose dataset is drawn")
    p_eval.add_argument("--ratios", default="0,0.1,0.2,0.3,0.4,0.5")
    p_eval.add_argument("--k", type=int, default=5)
    p_eval.add_argument("--eval-size", type=int, default=None)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--real-count", type=int, default=1000)
    p_eval.add_argument("--real-seed", type=int, default=1234)
    p_eval.add_argument("--out", default="runs/eval")
    p_eval.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        for problem in err.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except NonFiniteError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except FlowUQError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
