"""Scenario-specific downstream heads on frozen inputs.

POS regresses ground-truth positions with an MSE loss; CC-SN fits a chart
whose pairwise distances match embedding distances (no positions anywhere
on that code path); CC-PCA projects onto the top principal directions.
The end-to-end baseline (SCS-EE) trains the same tasks directly on the
high-dimensional clean features with a deeper network.

Heads never backpropagate into the embedding network: they see embedding
matrices, not models.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .metrics import normalize_chart
from .nn import MlpSpec
from .training import TrainConfig

HEAD_HIDDEN = (12, 8, 6, 4)
EE_HIDDEN = (320, 160, 80, 40, 20, 10, 5)

_TAG_HEAD_INIT = 401
_TAG_HEAD_BATCH = 402

TASK_POS = "pos"
TASK_CC_SN = "cc-sn"
TASK_CC_PCA = "cc-pca"


@dataclass
class ChartPoints:
    """Estimated positions (metric) or pseudo-positions (arbitrary)."""

    points: np.ndarray           # (N, d)
    kind: str                    # "metric" | "arbitrary"
    sample_indices: np.ndarray   # global sample indices within the scenario
    timestamps: np.ndarray
    truth: np.ndarray | None     # (N, 2) ground truth, None if withheld

    def validate(self):
        if self.kind not in ("metric", "arbitrary"):
            raise ValueError(f"unknown coordinate kind {self.kind!r}")
        if not np.isfinite(self.points).all():
            raise FloatingPointError("chart contains non-finite coordinates")


def head_spec(in_dim: int, out_dim: int) -> MlpSpec:
    return MlpSpec((in_dim,) + HEAD_HIDDEN + (out_dim,))


def ee_spec(in_dim: int, out_dim: int) -> MlpSpec:
    return MlpSpec((in_dim,) + EE_HIDDEN + (out_dim,))


def _head_epochs(config: TrainConfig) -> int:
    return config.head_epochs if config.head_epochs else config.epochs


def _standardize_stats(inputs):
    mu = inputs.mean(axis=0)
    sd = inputs.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def _bake_standardization(model, mu, sd) -> None:
    """Fold (x - mu) / sd into the first layer so checkpoints take raw inputs.

    Narrow ReLU stacks can initialize with whole layers dead when their
    inputs are skewed (nonnegative features, rank-deficient embeddings);
    training on standardized inputs avoids that, and the affine transform
    is absorbed exactly into layer 0 afterwards.
    """
    model.weights[0] = model.weights[0] / sd[:, None]
    model.biases[0] = model.biases[0] - mu @ model.weights[0]
    model.version += 1


def _train_regressor(spec, inputs, targets, config, stream):
    """Uniform-minibatch MSE regression; shared by POS heads and EE-POS."""
    model = nn.glorot_init(spec, [config.seed, _TAG_HEAD_INIT, *stream])
    rng = np.random.default_rng([config.seed, _TAG_HEAD_BATCH, *stream])
    mu, sd = _standardize_stats(inputs)
    std_inputs = (inputs - mu) / sd
    n = inputs.shape[0]
    log = []
    for epoch in range(_head_epochs(config)):
        for b in range(config.n_train_batches):
            idx = rng.integers(n, size=config.batch_size)
            pred, cache = nn.forward(model, std_inputs[idx], want_cache=True)
            loss, grad = nn.mse_loss(pred, targets[idx])
            gw, gb, _ = nn.backward(model, cache, grad)
            nn.adam_step(model, gw, gb, config.adam)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite head loss at epoch {epoch}, batch {b}")
            log.append((epoch, b, loss))
    _bake_standardization(model, mu, sd)
    return model, log


def _train_siamese(spec, inputs, references, config, stream):
    """Chart head: minibatch charts match reference distances over all pairs."""
    model = nn.glorot_init(spec, [config.seed, _TAG_HEAD_INIT, *stream])
    rng = np.random.default_rng([config.seed, _TAG_HEAD_BATCH, *stream])
    mu, sd = _standardize_stats(inputs)
    std_inputs = (inputs - mu) / sd
    n = inputs.shape[0]
    pairs = np.triu_indices(config.batch_size, k=1)
    log = []
    for epoch in range(_head_epochs(config)):
        for b in range(config.n_train_batches):
            idx = rng.integers(n, size=config.batch_size)
            refd = kernels.pairwise_distances(references[idx])[pairs]
            pred, cache = nn.forward(model, std_inputs[idx], want_cache=True)
            loss, grad = nn.siamese_loss(pred, references[idx], pairs,
                                         ref_distances=refd)
            gw, gb, _ = nn.backward(model, cache, grad)
            nn.adam_step(model, gw, gb, config.adam)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite head loss at epoch {epoch}, batch {b}")
            log.append((epoch, b, loss))
    _bake_standardization(model, mu, sd)
    return model, log


def _chart(points, kind, sample_indices, timestamps, truth) -> ChartPoints:
    chart = ChartPoints(np.asarray(points, dtype=np.float64), kind,
                        np.asarray(sample_indices), np.asarray(timestamps), truth)
    chart.validate()
    return chart


def train_pos_head(train_emb, train_pos, test_emb, config: TrainConfig,
                   stream, test_meta):
    """Position head on frozen embeddings; returns test-set predictions.

    ``test_meta`` is (sample_indices, timestamps, truth) for the test
    partition; ``stream`` disambiguates the RNG streams per scenario/method.
    """
    if train_pos is None or len(train_pos) != len(train_emb):
        raise ValueError("POS head needs ground truth for every training sample")
    spec = head_spec(train_emb.shape[1], config.out_dim)
    model, log = _train_regressor(spec, train_emb, train_pos, config, stream)
    pred = nn.forward(model, test_emb)
    return model, _chart(pred, "metric", *test_meta), log


def train_cc_siamese(train_emb, test_emb, config: TrainConfig, stream, test_meta):
    """Self-supervised chart head; never sees ground-truth positions."""
    if train_emb.shape[0] < 2:
        raise ValueError("need at least two samples to form pairs")
    spec = head_spec(train_emb.shape[1], config.out_dim)
    model, log = _train_siamese(spec, train_emb, train_emb, config, stream)
    pred = normalize_chart(nn.forward(model, test_emb))
    return model, _chart(pred, "arbitrary", *test_meta), log


def cc_pca(embeddings, d: int) -> np.ndarray:
    """Project embeddings onto the top-d principal directions.

    The covariance is formed from per-dimension mean-centered embeddings;
    the (uncentered) embeddings are then projected onto the leading
    eigenvectors.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    n = emb.shape[0]
    if n <= d:
        raise ValueError(f"PCA needs more than d={d} samples, got {n}")
    centered = emb - emb.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = kernels.sym_eig_desc(cov)
    return emb @ vecs[:, :d]


def chart_cc_pca(test_emb, config: TrainConfig, test_meta) -> ChartPoints:
    return _chart(cc_pca(test_emb, config.out_dim), "arbitrary", *test_meta)


def train_scs_ee(train_feats, train_pos, test_feats, task: str,
                 config: TrainConfig, stream, test_meta):
    """Per-scenario end-to-end baseline on clean high-dimensional features."""
    spec = ee_spec(train_feats.shape[1], config.out_dim)
    if task == TASK_POS:
        if train_pos is None:
            raise ValueError("EE positioning needs ground truth")
        model, log = _train_regressor(spec, train_feats, train_pos, config, stream)
        pred = nn.forward(model, test_feats)
        return model, _chart(pred, "metric", *test_meta), log
    if task == TASK_CC_SN:
        model, log = _train_siamese(spec, train_feats, train_feats, config, stream)
        pred = normalize_chart(nn.forward(model, test_feats))
        return model, _chart(pred, "arbitrary", *test_meta), log
    if task == TASK_CC_PCA:
        return None, chart_cc_pca(test_feats, config, test_meta), []
    raise ValueError(f"unknown task {task!r}")


def predict(model: nn.MlpModel, x) -> np.ndarray:
    """Forward pass of a trained head (single vector or batch)."""
    return nn.forward(model, x)


def write_chart_csv(chart: ChartPoints, path) -> None:
    """Chart dump: sample_index, timestamp, truth (blank if withheld), estimate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "timestamp", "x_true", "y_true",
                         "x_hat", "y_hat", "coordinate_kind"])
        for row in range(chart.points.shape[0]):
            truth = ("", "") if chart.truth is None else \
                (repr(float(chart.truth[row, 0])), repr(float(chart.truth[row, 1])))
            writer.writerow([int(chart.sample_indices[row]),
                             repr(float(chart.timestamps[row])),
                             *truth,
                             repr(float(chart.points[row, 0])),
                             repr(float(chart.points[row, 1])),
                             chart.kind])
