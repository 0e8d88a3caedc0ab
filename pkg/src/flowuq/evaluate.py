"""Generative-quality metrics and the uncertainty-filtering harness.

Precision and recall follow the k-NN manifold construction: a generated
point counts as precise if it falls inside some real point's k-NN ball, and
symmetrically for recall.  Energy distance serves as the scalar
distributional metric at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, InsufficientSamplesError


def _pairwise_distances(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def _knn_radii(points, k):
    d = _pairwise_distances(points, points)
    # k-th nearest excluding self: self-distance 0 occupies column 0 after sort
    return np.sort(d, axis=1)[:, k]


def knn_precision_recall(real, gen, k=5):
    """k-NN manifold precision and recall between two point sets.

    Precision is the fraction of generated points inside the union of the
    real points' k-NN balls; recall swaps the roles.
    """
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    gen = np.atleast_2d(np.asarray(gen, dtype=np.float64))
    if real.shape[0] == 0 or gen.shape[0] == 0:
        raise InsufficientSamplesError("both point sets must be nonempty")
    if k >= real.shape[0] or k >= gen.shape[0]:
        raise InsufficientSamplesError("k must be smaller than both set sizes")
    for name, pts in (("real", real), ("generated", gen)):
        if np.all(pts == pts[0]):
            raise DegenerateDataError(f"{name} set contains only duplicates")
    real_radii = _knn_radii(real, k)
    gen_radii = _knn_radii(gen, k)
    cross = _pairwise_distances(real, gen)  # (n_real, n_gen)
    precision = float((cross <= real_radii[:, None]).any(axis=0).mean())
    recall = float((cross <= gen_radii[None, :]).any(axis=1).mean())
    return precision, recall


def _mean_pairwise(a, b):
    # sorted before summation so the value is bit-identical under permutation
    d = np.sort(_pairwise_distances(a, b), axis=None)
    return d.sum() / d.size


def energy_distance(real, gen):
    """Energy distance 2 E|X-Y| - E|X-X'| - E|Y-Y'| from pairwise means."""
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    gen = np.atleast_2d(np.asarray(gen, dtype=np.float64))
    if real.shape[0] == 0 or gen.shape[0] == 0:
        raise InsufficientSamplesError("both point sets must be nonempty")
    return float(
        2.0 * _mean_pairwise(real, gen)
        - _mean_pairwise(real, real)
        - _mean_pairwise(gen, gen)
    )


@dataclass(frozen=True)
class EvalReport:
    ratio: float
    precision: float
    recall: float
    energy_distance: float
    retained: int


def filter_sweep(records, real, ratios, eval_size=None, k=5, seed=0):
    """Metrics after dropping the highest-uncertainty fraction of samples.

    For each ratio the top-scoring fraction is removed (ties broken by
    ascending sample index), the retained set is subsampled to a fixed
    evaluation size with a seeded draw, and precision/recall plus energy
    distance are computed against the real set.
    """
    records = list(records)
    if not records:
        raise InsufficientSamplesError("no sample records to filter")
    samples = np.stack([np.asarray(r.sample, dtype=np.float64) for r in records])
    scores = np.asarray([r.score for r in records], dtype=np.float64)
    ratios = sorted(float(r) for r in ratios)
    if any(r < 0.0 or r >= 1.0 for r in ratios):
        raise ValueError("filtering ratios must lie in [0, 1)")
    total = len(records)
    min_retained = total - int(max(ratios) * total)
    if eval_size is None:
        eval_size = min_retained
    if eval_size > min_retained:
        raise InsufficientSamplesError(
            f"evaluation size {eval_size} exceeds the smallest retained set {min_retained}"
        )
    # descending score, stable: equal scores keep ascending index order
    order = np.argsort(-scores, kind="stable")
    reports = []
    for ratio in ratios:
        drop = int(ratio * total)
        kept_idx = np.sort(order[drop:])
        rng = np.random.default_rng(seed)
        chosen = kept_idx[rng.choice(kept_idx.size, size=eval_size, replace=False)]
        precision, recall = knn_precision_recall(real, samples[chosen], k=k)
        dist = energy_distance(real, samples[chosen])
        reports.append(
            EvalReport(
                ratio=ratio,
                precision=precision,
                recall=recall,
                energy_distance=dist,
                retained=int(kept_idx.size),
            )
        )
    return reports


def write_report_csv(reports, file):
    file.write("ratio,precision,recall,energy_distance,retained\n")
    for r in reports:
        file.write(
            f"{r.ratio!r},{r.precision!r},{r.recall!r},{r.energy_distance!r},{r.retained}\n"
        )
