"""Chart quality metrics and the evaluation aggregator.

Positioning metrics (mean and 95th-percentile distance error, in meters)
apply only to metric-coordinate charts.  The latent-quality metrics compare
neighborhood structure and pairwise distances between ground truth and the
chart and are invariant under chart isometries; Kruskal stress and the
Rajski distance are additionally invariant under global positive scaling.

Rank conventions: nearest-neighbor ranks are 1-based with the query point
removed; distance ties break by sample index (stable sort order).
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from .kernels import pairwise_distances

SUBSAMPLE_CAP = 2000
NEIGHBOR_FRACTION = 0.05
RD_BINS = 20


@dataclass
class MetricReport:
    """One evaluation row; distance errors are None for arbitrary charts."""

    mde_m: float | None
    p95_m: float | None
    tw: float
    ct: float
    ks: float
    rd: float
    n_samples: int
    n_subsampled: int
    neighborhood_k: int

    CSV_COLUMNS = ("mde_m", "p95_m", "tw", "ct", "ks", "rd",
                   "n_samples", "n_subsampled", "neighborhood_k")

    def csv_row(self) -> list:
        vals = []
        for col in self.CSV_COLUMNS:
            v = getattr(self, col)
            vals.append("" if v is None else repr(v) if isinstance(v, float) else v)
        return vals

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _errors(chart, truth) -> np.ndarray:
    chart = np.asarray(chart, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if chart.shape != truth.shape:
        raise ValueError(f"chart shape {chart.shape} != truth shape {truth.shape}")
    return np.linalg.norm(chart - truth, axis=1)


def mde(chart, truth) -> float:
    """Mean Euclidean position error (meters)."""
    return float(np.mean(_errors(chart, truth)))


def p95(chart, truth) -> float:
    """95th percentile of the position error, linearly interpolated."""
    return float(np.percentile(_errors(chart, truth), 95.0))


def _neighbor_ranks(dist: np.ndarray) -> np.ndarray:
    """ranks[i, j]: 1-based rank of j among i's neighbors, self removed.

    Stable argsort on the distance rows means ties resolve by sample index.
    The self column is set to 0.
    """
    n = dist.shape[0]
    order = np.argsort(dist, axis=1, kind="stable")
    pos = np.empty_like(order)
    rows = np.arange(n)[:, None]
    pos[rows, order] = np.arange(n)[None, :]
    self_pos = pos[np.arange(n), np.arange(n)]
    ranks = pos + 1 - (pos > self_pos[:, None])
    ranks[np.arange(n), np.arange(n)] = 0
    return ranks


def _tw_core(ranks_kept: np.ndarray, ranks_other: np.ndarray, k: int) -> float:
    """Shared trustworthiness/continuity formula.

    Penalizes points inside the K-neighborhood under ``ranks_other`` but
    outside it under ``ranks_kept``, weighted by how far out they are.
    """
    n = ranks_kept.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"neighborhood size K={k} out of range for N={n}")
    denom = n * k * (2 * n - 3 * k - 1)
    if denom <= 0:
        raise ValueError(f"K={k} too large for N={n}")
    intruders = (ranks_other <= k) & (ranks_kept > k)
    penalty = np.sum((ranks_kept - k)[intruders])
    return float(1.0 - 2.0 / denom * penalty)


def trustworthiness(truth, chart, k: int) -> float:
    """Penalizes chart neighbors that are not neighbors in ground truth."""
    r_truth = _neighbor_ranks(pairwise_distances(truth))
    r_chart = _neighbor_ranks(pairwise_distances(chart))
    return _tw_core(r_truth, r_chart, k)


def continuity(truth, chart, k: int) -> float:
    """Penalizes ground-truth neighbors missing from the chart neighborhood."""
    r_truth = _neighbor_ranks(pairwise_distances(truth))
    r_chart = _neighbor_ranks(pairwise_distances(chart))
    return _tw_core(r_chart, r_truth, k)


def _upper(dist: np.ndarray) -> np.ndarray:
    iu, ju = np.triu_indices(dist.shape[0], k=1)
    return dist[iu, ju]


def kruskal_stress(truth, chart) -> float:
    """Normalized residual of chart distances under the optimal global scale.

    KS = sqrt(sum (delta - beta*d)^2 / sum delta^2) with the closed-form
    beta = sum(delta*d) / sum(d^2).  A collapsed chart against nonconstant
    truth scores 1; two collapsed point sets score 0.
    """
    delta = _upper(pairwise_distances(truth))
    d = _upper(pairwise_distances(chart))
    sum_d2 = float(np.sum(d * d))
    sum_delta2 = float(np.sum(delta * delta))
    if sum_delta2 == 0.0:
        return 0.0 if sum_d2 == 0.0 else 1.0
    if sum_d2 == 0.0:
        return 1.0
    beta = float(np.sum(delta * d)) / sum_d2
    resid = delta - beta * d
    return float(np.sqrt(np.sum(resid * resid) / sum_delta2))


def _quantize(values: np.ndarray, n_bins: int) -> np.ndarray:
    vmax = values.max()
    if vmax <= 0.0:
        return np.zeros(values.shape, dtype=np.intp)
    bins = np.floor(values / vmax * n_bins).astype(np.intp)
    return np.minimum(bins, n_bins - 1)


def rajski_distance(truth, chart, n_bins: int = RD_BINS) -> float:
    """1 - I(X;Y)/H(X,Y) over quantized pairwise-distance distributions.

    Both distance sets are quantized into ``n_bins`` uniform bins over
    [0, max of that set]; 0*log(0) counts as 0 and an all-zero joint
    entropy scores 0.
    """
    bx = _quantize(_upper(pairwise_distances(truth)), n_bins)
    by = _quantize(_upper(pairwise_distances(chart)), n_bins)
    joint = np.bincount(bx * n_bins + by, minlength=n_bins * n_bins) \
        .reshape(n_bins, n_bins).astype(np.float64)
    p = joint / joint.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    nz = p > 0.0
    h_joint = float(-np.sum(p[nz] * np.log(p[nz])))
    if h_joint == 0.0:
        return 0.0
    outer = px[:, None] * py[None, :]
    mi = float(np.sum(p[nz] * np.log(p[nz] / outer[nz])))
    return 1.0 - mi / h_joint


def normalize_chart(points) -> np.ndarray:
    """Center a chart and scale by one global factor into [-1, 1]^d."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    scale = np.abs(centered).max()
    if scale == 0.0:
        raise ValueError("cannot normalize a chart whose points coincide")
    return centered / scale


def evaluate_all(chart, truth, *, metric_coords: bool, n_max: int = SUBSAMPLE_CAP,
                 seed: int = 0) -> MetricReport:
    """All metrics for one chart against ground truth.

    The O(N^2) latent metrics run on a seeded uniform subsample of at most
    ``n_max`` points; the distance errors (metric charts only) use every
    sample.  K is 5% of the subsampled count.
    """
    chart = np.asarray(chart, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    n = chart.shape[0]
    if truth.shape[0] != n:
        raise ValueError("chart and truth sample counts differ")
    if n > n_max:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(n, size=n_max, replace=False))
        sub_chart, sub_truth = chart[keep], truth[keep]
    else:
        sub_chart, sub_truth = chart, truth
    n_sub = sub_chart.shape[0]
    k = max(1, int(NEIGHBOR_FRACTION * n_sub))
    r_truth = _neighbor_ranks(pairwise_distances(sub_truth))
    r_chart = _neighbor_ranks(pairwise_distances(sub_chart))
    report = MetricReport(
        mde_m=mde(chart, truth) if metric_coords else None,
        p95_m=p95(chart, truth) if metric_coords else None,
        tw=_tw_core(r_truth, r_chart, k),
        ct=_tw_core(r_chart, r_truth, k),
        ks=kruskal_stress(sub_truth, sub_chart),
        rd=rajski_distance(sub_truth, sub_chart),
        n_samples=n,
        n_subsampled=n_sub,
        neighborhood_k=k,
    )
    return report
