"""Cross-scenario training of the embedding network and the AE baselines.

Batches follow the two-stage protocol: pick a scenario uniformly at random,
then a sample uniformly within it, so small scenarios are not drowned out
by large ones.  Triplets pair each anchor with a temporally close sample
from its own scenario and a far sample drawn uniformly from the union of
in-scenario far samples and everything in the other scenarios.

Train/test separation is a contiguous per-scenario split on sample indices;
all samplers and feature tables here see only the training partition.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .nn import AdamConfig, MlpSpec
from .preprocess import (FROZEN_DRAW, AugmentConfig, MaxDims,
                         dataset_features, dataset_raw)

# rng stream tags (mixed with the config seed)
_TAG_EMBED_BATCH = 201
_TAG_AE_BATCH = 202
_TAG_EMBED_INIT = 301
_TAG_AUX_INIT = 302
_TAG_AE_INIT = 303

AUX_HEAD_HIDDEN = (12, 8, 6, 4)


@dataclass
class TrainConfig:
    """Protocol knobs shared by all trainers."""

    embed_dim: int = 16
    margin: float = 10.0
    n_train_batches: int = 240
    n_test_batches: int = 120
    batch_size: int = 100
    epochs: int = 30
    head_epochs: int | None = None   # downstream heads; falls back to epochs
    hidden: int = 32
    c_trunc: int = 16
    out_dim: int = 2
    train_fraction: float = 0.8
    adam: AdamConfig = field(default_factory=AdamConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    t_close: dict = field(default_factory=dict)    # scenario_id -> T_c (samples)
    semi_scenarios: tuple = ()
    seed: int = 0

    def validate(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.embed_dim < 1 or self.epochs < 1 or self.n_train_batches < 1:
            raise ValueError("embed_dim, epochs, and batch counts must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        self.adam.validate()
        self.augment.validate()

    def t_close_for(self, scenario_id: int) -> float:
        return float(self.t_close.get(scenario_id, 1.0))


SPLIT_CHUNKS = 10


def split_indices(n: int, train_fraction: float):
    """Index-disjoint train/test split from contiguous trajectory blocks.

    The trajectory is cut into ``SPLIT_CHUNKS`` contiguous blocks and a
    test share of them, spread evenly along the route, is held out.  Evenly
    spread test blocks keep the held-out samples inside the surveyed area
    (matching a protocol that draws both sets from one coverage trajectory)
    instead of forcing heads to extrapolate beyond it, while whole-block
    holdout keeps the partitions temporally separated everywhere but at
    block edges.
    """
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    n_test_chunks = max(1, round((1.0 - train_fraction) * SPLIT_CHUNKS))
    bounds = np.linspace(0, n, SPLIT_CHUNKS + 1).astype(int)
    test_ids = set(np.linspace(0, SPLIT_CHUNKS - 1, n_test_chunks + 2)[1:-1]
                   .round().astype(int))
    train_parts, test_parts = [], []
    for c in range(SPLIT_CHUNKS):
        seg = np.arange(bounds[c], bounds[c + 1])
        (test_parts if c in test_ids else train_parts).append(seg)
    train = np.concatenate(train_parts)
    test = np.concatenate(test_parts)
    if len(train) == 0 or len(test) == 0:  # degenerate tiny scenarios
        k = max(1, min(n - 1, int(round(n * train_fraction))))
        return np.arange(k), np.arange(k, n)
    return train, test


@dataclass
class Corpus:
    """Scenario datasets plus the global dims and per-scenario split."""

    datasets: dict            # scenario_id -> ScenarioData
    maxdims: MaxDims
    train_idx: dict           # scenario_id -> global sample indices
    test_idx: dict

    @property
    def scenario_ids(self):
        return sorted(self.datasets)


def build_corpus(datasets, train_fraction: float = 0.8) -> Corpus:
    by_id = {d.spec.scenario_id: d for d in datasets}
    if len(by_id) != len(datasets):
        raise ValueError("duplicate scenario ids in corpus")
    maxdims = MaxDims.from_specs([d.spec for d in datasets])
    train_idx, test_idx = {}, {}
    for sid, data in by_id.items():
        train_idx[sid], test_idx[sid] = split_indices(data.n_samples, train_fraction)
    return Corpus(by_id, maxdims, train_idx, test_idx)


def corpus_features(corpus: Corpus, config: TrainConfig, augmented: bool,
                    epoch: int, part: str) -> dict:
    """Feature matrices per scenario for one partition ('train' or 'test')."""
    cfg = config.augment if augmented else None
    idx = corpus.train_idx if part == "train" else corpus.test_idx
    return {sid: dataset_features(corpus.datasets[sid], idx[sid], corpus.maxdims,
                                  config.c_trunc, cfg, epoch)
            for sid in corpus.scenario_ids}


def corpus_raw(corpus: Corpus, config: TrainConfig, augmented: bool,
               epoch: int, part: str) -> dict:
    cfg = config.augment if augmented else None
    idx = corpus.train_idx if part == "train" else corpus.test_idx
    return {sid: dataset_raw(corpus.datasets[sid], idx[sid], corpus.maxdims,
                             config.c_trunc, cfg, epoch)
            for sid in corpus.scenario_ids}


class TripletSampler:
    """Uniform triplet draws realizing the in/cross-scenario triplet sets.

    Close candidates for an anchor are the same-scenario samples with
    0 < |t_n - t_c| <= T_c; far candidates are the union of same-scenario
    samples with |t_n - t_f| > T_c and every sample of every other scenario.
    """

    def __init__(self, timestamps: dict, t_close: dict):
        self.sids = sorted(timestamps)
        self.ts = {sid: np.asarray(timestamps[sid], dtype=np.float64)
                   for sid in self.sids}
        self.t_close = {sid: float(t_close[sid]) for sid in self.sids}
        self.sizes = {sid: len(self.ts[sid]) for sid in self.sids}

    def _window(self, sid: int, index: int):
        ts = self.ts[sid]
        t = ts[index]
        t_c = self.t_close[sid]
        lo = int(np.searchsorted(ts, t - t_c, side="left"))
        hi = int(np.searchsorted(ts, t + t_c, side="right"))
        return lo, hi

    def has_close(self, sid: int, index: int) -> bool:
        lo, hi = self._window(sid, index)
        return hi - lo - 1 > 0

    def sample(self, sid: int, index: int, rng):
        """Draw (close_index, far_scenario, far_index) for an anchor."""
        lo, hi = self._window(sid, index)
        n_close = hi - lo - 1
        if n_close <= 0:
            raise ValueError(f"anchor {index} in scenario {sid} has no close candidate")
        c = int(rng.integers(n_close))
        close = lo + c if lo + c < index else lo + c + 1

        n_far_in = self.sizes[sid] - (hi - lo)
        total_far = n_far_in + sum(self.sizes[s] for s in self.sids if s != sid)
        if total_far <= 0:
            raise ValueError(f"anchor {index} in scenario {sid} has no far candidate")
        r = int(rng.integers(total_far))
        if r < n_far_in:
            far = r if r < lo else r - lo + hi
            return close, sid, far
        r -= n_far_in
        for other in self.sids:
            if other == sid:
                continue
            if r < self.sizes[other]:
                return close, other, r
            r -= self.sizes[other]
        raise AssertionError("unreachable: far draw out of range")


def build_batch(sizes: dict, batch_size: int, rng):
    """Scenario-uniform then sample-uniform batch of (scenario, index) refs."""
    if not sizes:
        raise ValueError("need at least one scenario")
    sids = sorted(sizes)
    out = []
    for _ in range(batch_size):
        sid = sids[int(rng.integers(len(sids)))]
        out.append((sid, int(rng.integers(sizes[sid]))))
    return out


@dataclass
class TrainResult:
    model: nn.MlpModel
    log: list                      # (epoch, batch, *loss terms)
    loss_columns: tuple
    skipped_anchors: int = 0
    aux_heads: dict | None = None  # scenario_id -> position head (SEMI)
    decoder: nn.MlpModel | None = None


def _local_positions(corpus: Corpus, part_idx: dict) -> dict:
    return {sid: corpus.datasets[sid].positions[part_idx[sid]]
            for sid in corpus.scenario_ids}


def train_csi2vec(datasets, config: TrainConfig, augmented: bool,
                  semi: bool = False) -> TrainResult:
    """Train the shared embedding network with the triplet objective.

    With ``augmented`` the training partition is re-augmented every epoch
    before feature extraction.  With ``semi`` an auxiliary position head is
    trained jointly for each scenario in ``config.semi_scenarios`` and its
    supervised loss is added to the triplet loss with equal weight; its
    gradient flows into the embedding network through the anchors.
    """
    config.validate()
    corpus = build_corpus(datasets, config.train_fraction)
    if semi and not config.semi_scenarios:
        raise ValueError("semi-supervised training needs a nonempty scenario set")
    if semi:
        unknown = set(config.semi_scenarios) - set(corpus.scenario_ids)
        if unknown:
            raise ValueError(f"semi scenarios {sorted(unknown)} not in the corpus")

    dim = corpus.maxdims.feature_dim(config.c_trunc)
    model = nn.glorot_init(MlpSpec((dim, config.hidden, config.embed_dim)),
                           [config.seed, _TAG_EMBED_INIT])
    aux = {}
    if semi:
        aux_spec = MlpSpec((config.embed_dim,) + AUX_HEAD_HIDDEN + (config.out_dim,))
        aux = {sid: nn.glorot_init(aux_spec, [config.seed, _TAG_AUX_INIT, sid])
               for sid in sorted(config.semi_scenarios)}
    train_ts = {sid: corpus.datasets[sid].timestamps[corpus.train_idx[sid]]
                for sid in corpus.scenario_ids}
    positions = _local_positions(corpus, corpus.train_idx)
    sampler = TripletSampler(train_ts, {sid: config.t_close_for(sid)
                                        for sid in corpus.scenario_ids})
    rng = np.random.default_rng([config.seed, _TAG_EMBED_BATCH])

    clean_feats = None
    if not augmented:
        clean_feats = corpus_features(corpus, config, False, 0, "train")
    log = []
    skipped = 0
    for epoch in range(config.epochs):
        feats = corpus_features(corpus, config, True, epoch, "train") \
            if augmented else clean_feats
        for b in range(config.n_train_batches):
            anchors = build_batch(sampler.sizes, config.batch_size, rng)
            kept, closes, fars = [], [], []
            for sid, i in anchors:
                if not sampler.has_close(sid, i):
                    skipped += 1
                    continue
                c_idx, f_sid, f_idx = sampler.sample(sid, i, rng)
                kept.append((sid, i))
                closes.append((sid, c_idx))
                fars.append((f_sid, f_idx))
            if not kept:
                continue
            n_kept = len(kept)
            x = np.vstack([np.stack([feats[s][i] for s, i in refs])
                           for refs in (kept, closes, fars)])
            v, cache = nn.forward(model, x, want_cache=True)
            v_n, v_c, v_f = v[:n_kept], v[n_kept:2 * n_kept], v[2 * n_kept:]
            tri_loss, (g_n, g_c, g_f) = nn.triplet_loss(v_n, v_c, v_f, config.margin)

            sup_loss = 0.0
            if semi:
                for sid in sorted(aux):
                    mask = [k for k, (s, _) in enumerate(kept) if s == sid]
                    if not mask:
                        continue
                    head = aux[sid]
                    target = np.stack([positions[sid][kept[k][1]] for k in mask])
                    xhat, hc = nn.forward(head, v_n[mask], want_cache=True)
                    s_loss, gx = nn.mse_loss(xhat, target)
                    hw, hb, g_emb = nn.backward(head, hc, gx)
                    nn.adam_step(head, hw, hb, config.adam)
                    g_n[mask] += g_emb
                    sup_loss += s_loss

            grad = np.vstack([g_n, g_c, g_f])
            gw, gb, _ = nn.backward(model, cache, grad)
            nn.adam_step(model, gw, gb, config.adam)
            total = tri_loss + sup_loss
            if not np.isfinite(total):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch {b}")
            if semi:
                log.append((epoch, b, total, tri_loss, sup_loss))
            else:
                log.append((epoch, b, tri_loss))

    columns = ("loss", "triplet_loss", "sup_loss") if semi else ("loss",)
    return TrainResult(model=model, log=log, loss_columns=columns,
                       skipped_anchors=skipped, aux_heads=aux or None)


def train_csi2vec_semi(datasets, config: TrainConfig) -> TrainResult:
    """Semi-supervised variant; see ``train_csi2vec``."""
    return train_csi2vec(datasets, config, augmented=True, semi=True)


def ae_hidden_width(embed_dim: int) -> int:
    """AE hidden width: 32, widened to 128 for encoding dims of 64 and up."""
    return 128 if embed_dim >= 64 else 32


def train_autoencoder(datasets, config: TrainConfig, augmented: bool) -> TrainResult:
    """Train the raw-CSI autoencoder; returns encoder with decoder attached."""
    config.validate()
    corpus = build_corpus(datasets, config.train_fraction)
    dim2 = 2 * corpus.maxdims.feature_dim(config.c_trunc)
    hidden = ae_hidden_width(config.embed_dim)
    enc = nn.glorot_init(MlpSpec((dim2, hidden, config.embed_dim)),
                         [config.seed, _TAG_AE_INIT, 0])
    dec = nn.glorot_init(MlpSpec((config.embed_dim, hidden, dim2)),
                         [config.seed, _TAG_AE_INIT, 1])
    sizes = {sid: len(corpus.train_idx[sid]) for sid in corpus.scenario_ids}
    rng = np.random.default_rng([config.seed, _TAG_AE_BATCH])

    clean = None
    if not augmented:
        clean = corpus_raw(corpus, config, False, 0, "train")
    log = []
    for epoch in range(config.epochs):
        raw = corpus_raw(corpus, config, True, epoch, "train") if augmented else clean
        for b in range(config.n_train_batches):
            refs = build_batch(sizes, config.batch_size, rng)
            x = np.stack([raw[sid][i] for sid, i in refs])
            z, ce = nn.forward(enc, x, want_cache=True)
            recon, cd = nn.forward(dec, z, want_cache=True)
            loss, g_recon = nn.ae_loss(x, recon)
            dw, db, gz = nn.backward(dec, cd, g_recon)
            ew, eb, _ = nn.backward(enc, ce, gz)
            nn.adam_step(dec, dw, db, config.adam)
            nn.adam_step(enc, ew, eb, config.adam)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at epoch {epoch}, batch {b}")
            log.append((epoch, b, loss))
    return TrainResult(model=enc, log=log, loss_columns=("loss",), decoder=dec)
