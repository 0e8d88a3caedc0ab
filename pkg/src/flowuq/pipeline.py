"""End-to-end sample generation with uncertainty scoring.

Couples the mean sampler, the variance propagator, and optional guidance
into one run that yields per-sample records.  Every sample owns an RNG
stream seeded by ``seed XOR index``, and work is split into fixed-size
chunks, so outputs are bit-identical however many worker threads run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .guidance import GuidanceConfig, GuidanceTrace, GuidedVelocity, merge_sigma_correlations
from .paths import AffinePath
from .sample import SamplerConfig, integrate
from .uq import UqDiagnostics, aggregate_score, au_baseline_score, propagate_variance

THREADS_ENV_VAR = "FLOWUQ_THREADS"
CHUNK_SIZE = 128  # fixed so chunk boundaries never depend on the thread count


@dataclass(frozen=True)
class SampleRecord:
    """One generated sample with its uncertainty map and scalar score."""

    index: int
    sample: np.ndarray
    uncertainty: np.ndarray
    score: float
    cond: int | None
    seed: int
    method: str


@dataclass
class GenerationResult:
    records: list
    lambda_rows: list = field(default_factory=list)  # (step, t, sample, lam_opt, lam_used)
    sigma_corr_rows: list = field(default_factory=list)  # (step, t, pearson_r)
    diagnostics: UqDiagnostics = field(default_factory=UqDiagnostics)
    trajectories: list | None = None  # (indices, list[FlowState]) per chunk


def resolve_threads(n_threads=None):
    """Thread count from the argument or the FLOWUQ_THREADS variable."""
    if n_threads is not None:
        return max(1, int(n_threads))
    return max(1, int(os.environ.get(THREADS_ENV_VAR, "1")))


def _resolve_cond(cond, n_samples, n_classes, indices):
    if cond is None:
        return None
    if isinstance(cond, str):
        if cond != "balanced":
            raise ValueError(f"unknown cond value {cond!r}")
        if n_classes == 0:
            raise ValueError("balanced conditioning needs a conditional model")
        return np.asarray(indices, dtype=np.int64) % n_classes
    arr = np.asarray(cond)
    if arr.ndim == 0:
        return np.full(len(indices), int(arr), dtype=np.int64)
    if arr.shape[0] != n_samples:
        raise ValueError("per-sample cond must have one entry per sample")
    return arr[indices].astype(np.int64)


def _generate_chunk(model, path, indices, cond_idx, sampler_cfg, uq_cfg, guidance_cfg,
                    seed, score_top_fraction, score_method, au_renoise, au_window,
                    keep_trajectories):
    rngs = [np.random.default_rng(seed ^ int(index)) for index in indices]
    x0 = np.stack([rng.standard_normal(model.dim) for rng in rngs])
    trace = GuidanceTrace()
    if guidance_cfg is not None:
        provider = GuidedVelocity(
            model, path, cond_idx, guidance_cfg, trace=trace, sample_ids=indices
        )
        velocity = provider
    else:
        provider = None

        def velocity(x, t, step):
            return model.forward(x, t, cond_idx).mean

    diagnostics = UqDiagnostics()

    def callback(step, state, dt):
        if provider is not None:
            provider.record_trace(state.mean, state.t, step)
        if uq_cfg is None or step % uq_cfg.cadence != 0:
            return None
        remaining = sampler_cfg.steps - step
        effective_dt = dt * min(uq_cfg.cadence, remaining)
        return propagate_variance(
            state, model, cond_idx, effective_dt, uq_cfg, rngs, diagnostics=diagnostics
        )

    trajectory = integrate(velocity, x0, sampler_cfg, callback=callback)
    final = trajectory[-1]
    if score_method == "au":
        unc = au_baseline_score(
            model, trajectory, path, au_renoise, rngs, late_window=au_window, cond=cond_idx
        )
    else:
        unc = final.var
    records = []
    for row, index in enumerate(indices):
        records.append(
            SampleRecord(
                index=int(index),
                sample=final.mean[row],
                uncertainty=unc[row],
                score=aggregate_score(unc[row], top_fraction=score_top_fraction),
                cond=None if cond_idx is None else int(cond_idx[row]),
                seed=seed ^ int(index),
                method=score_method,
            )
        )
    return records, trace, diagnostics, (trajectory if keep_trajectories else None)


def generate(model, path: AffinePath, n_samples, sampler_cfg=None, uq_cfg=None,
             guidance_cfg: GuidanceConfig | None = None, cond=None, seed=0,
             n_threads=None, score_top_fraction=0.1, score_method="propagated",
             au_renoise=8, au_window=0.25, keep_trajectories=False):
    """Generate ``n_samples`` scored samples from a trained model.

    ``cond`` may be None, a class id, a per-sample array, or ``"balanced"``
    (round-robin over classes).  ``score_method`` selects the propagated
    state variance or the re-noising aleatoric baseline as the uncertainty
    map behind the scalar score; with ``uq_cfg=None`` no variance is
    propagated and propagated-variance scores are identically zero.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    sampler_cfg = sampler_cfg or SamplerConfig()
    if score_method not in ("propagated", "au"):
        raise ValueError(f"unknown score method {score_method!r}")
    n_threads = resolve_threads(n_threads)
    all_indices = np.arange(n_samples)
    chunks = [all_indices[i : i + CHUNK_SIZE] for i in range(0, n_samples, CHUNK_SIZE)]

    def run(chunk):
        cond_idx = _resolve_cond(cond, n_samples, model.n_classes, chunk)
        return _generate_chunk(
            model, path, chunk, cond_idx, sampler_cfg, uq_cfg, guidance_cfg, seed,
            score_top_fraction, score_method, au_renoise, au_window, keep_trajectories,
        )

    if n_threads == 1 or len(chunks) == 1:
        outcomes = [run(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            outcomes = list(pool.map(run, chunks))

    result = GenerationResult(records=[], trajectories=[] if keep_trajectories else None)
    sigma_stats = []
    for chunk, (records, trace, diagnostics, trajectory) in zip(chunks, outcomes):
        result.records.extend(records)
        result.lambda_rows.extend(trace.lambda_rows)
        sigma_stats.extend(trace.sigma_stats)
        result.diagnostics.floored_elements += diagnostics.floored_elements
        if keep_trajectories:
            result.trajectories.append((chunk, trajectory))
    result.records.sort(key=lambda r: r.index)
    result.lambda_rows.sort(key=lambda row: (row[0], row[2]))
    result.sigma_corr_rows = merge_sigma_correlations(sigma_stats)
    return result


def samples_array(records):
    return np.stack([r.sample for r in records])


def scores_array(records):
    return np.asarray([r.score for r in records], dtype=np.float64)
