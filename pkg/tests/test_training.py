"""Training protocol tests: splits, triplet sampling, batch construction,
and short end-to-end training runs on midget scenarios."""

import numpy as np
import pytest

from chartlab import nn, scenario as sc, training as tr
from chartlab.preprocess import FROZEN_DRAW, AugmentConfig


def midget_specs(seed=0):
    a = sc.ScenarioSpec(1, "mini-a", 2, 2, 1, 32, 2.4e9, 20e6, (8.0, 8.0),
                        ((-1.1, -0.7), (9.2, 8.8)), "linear", None, 0.5, 4,
                        seed * 100 + 1)
    b = sc.ScenarioSpec(2, "mini-b", 3, 2, 1, 16, 2.4e9, 20e6, (6.0, 6.0),
                        ((-0.8, 3.1), (6.9, -0.6), (3.2, 7.1)), "linear", None,
                        0.5, 4, seed * 100 + 2)
    return [a, b]


@pytest.fixture(scope="module")
def datasets():
    return [sc.generate_scenario(s) for s in midget_specs()]


def quick_config(**kw):
    base = dict(embed_dim=8, margin=10.0, epochs=2, n_train_batches=20,
                batch_size=16, c_trunc=8, t_close={1: 2.0, 2: 2.0},
                augment=AugmentConfig(enable=True, seed=5), seed=3)
    base.update(kw)
    return tr.TrainConfig(**base)


class TestSplit:
    def test_disjoint_and_complete(self):
        train, test = tr.split_indices(100, 0.8)
        assert len(np.intersect1d(train, test)) == 0
        assert len(train) + len(test) == 100
        assert abs(len(train) - 80) <= 5

    def test_test_blocks_inside_route(self):
        train, test = tr.split_indices(200, 0.8)
        # held-out blocks sit strictly inside the trajectory, not at the tail
        assert test.min() > 0 and test.max() < 199

    def test_tiny_sets_still_split(self):
        train, test = tr.split_indices(5, 0.8)
        assert len(train) >= 1 and len(test) >= 1


class TestTripletSampler:
    def make_sampler(self, tc=1.0):
        return tr.TripletSampler({1: np.arange(10.0)}, {1: tc})

    def test_candidate_sets_enumerated(self):
        # anchor t=5, T_c=1: close in {4, 6}; far has |dt| > 1
        sampler = self.make_sampler(1.0)
        rng = np.random.default_rng(0)
        closes, fars = set(), set()
        for _ in range(400):
            c, fs, f = sampler.sample(1, 5, rng)
            closes.add(c)
            fars.add(f)
            assert fs == 1
        assert closes == {4, 6}
        assert fars == {0, 1, 2, 3, 7, 8, 9}

    def test_close_never_anchor(self):
        sampler = self.make_sampler(2.0)
        rng = np.random.default_rng(1)
        for _ in range(200):
            c, _, f = sampler.sample(1, 4, rng)
            assert c != 4
            assert 0 < abs(c - 4) <= 2
            assert abs(f - 4) > 2

    def test_cross_scenario_far_allowed_anywhere(self):
        sampler = tr.TripletSampler({1: np.arange(10.0), 2: np.arange(8.0)},
                                    {1: 1.0, 2: 1.0})
        rng = np.random.default_rng(2)
        cross = set()
        for _ in range(500):
            c, fs, f = sampler.sample(1, 5, rng)
            if fs == 2:
                cross.add(f)
        assert cross == set(range(8))  # any timestamp of the other scenario

    def test_no_close_candidate_raises(self):
        sampler = tr.TripletSampler({1: np.array([0.0, 10.0, 20.0])}, {1: 1.0})
        assert not sampler.has_close(1, 0)
        with pytest.raises(ValueError, match="close"):
            sampler.sample(1, 0, np.random.default_rng(0))

    def test_far_draw_uniform_over_union(self):
        # far support: 7 in-scenario + 8 cross = 15 equally likely samples
        sampler = tr.TripletSampler({1: np.arange(10.0), 2: np.arange(8.0)},
                                    {1: 1.0, 2: 1.0})
        rng = np.random.default_rng(3)
        counts = {}
        n = 6000
        for _ in range(n):
            _, fs, f = sampler.sample(1, 5, rng)
            counts[(fs, f)] = counts.get((fs, f), 0) + 1
        assert len(counts) == 15
        freqs = np.array(list(counts.values())) / n
        assert abs(freqs - 1 / 15).max() < 0.02


class TestBuildBatch:
    def test_single_scenario_uniform(self):
        rng = np.random.default_rng(0)
        batch = tr.build_batch({1: 50}, 200, rng)
        assert all(sid == 1 and 0 <= i < 50 for sid, i in batch)

    def test_scenario_uniform_ignores_sizes(self):
        # tiny scenario is picked as often as the huge ones
        rng = np.random.default_rng(1)
        sizes = {1: 100, 2: 10000, 3: 10000}
        picks = {1: 0, 2: 0, 3: 0}
        n_batches, bs = 1000, 30
        for _ in range(n_batches):
            for sid, _ in tr.build_batch(sizes, bs, rng):
                picks[sid] += 1
        share = picks[1] / (n_batches * bs)
        assert abs(share - 1 / 3) < 0.03

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            tr.build_batch({}, 4, np.random.default_rng(0))


class TestTrainCsi2Vec:
    def test_loss_decreases(self, datasets):
        cfg = quick_config(epochs=6, n_train_batches=30)
        res = tr.train_csi2vec(datasets, cfg, augmented=True)
        first = np.mean([r[2] for r in res.log[:30]])
        last = np.mean([r[2] for r in res.log[-30:]])
        assert last < first

    def test_output_width_is_embed_dim(self, datasets):
        cfg = quick_config(embed_dim=5)
        res = tr.train_csi2vec(datasets, cfg, augmented=False)
        assert res.model.out_width == 5
        assert res.model.spec.layer_widths[1] == cfg.hidden

    def test_deterministic_checkpoint(self, datasets):
        cfg = quick_config()
        a = tr.train_csi2vec(datasets, cfg, augmented=True)
        b = tr.train_csi2vec(datasets, cfg, augmented=True)
        assert all(np.array_equal(x, y)
                   for x, y in zip(a.model.weights, b.model.weights))

    def test_separation_property(self, datasets):
        # after training: close pairs closer than far pairs in embedding space
        cfg = quick_config(epochs=6, n_train_batches=40)
        res = tr.train_csi2vec(datasets, cfg, augmented=False)
        corpus = tr.build_corpus(datasets, cfg.train_fraction)
        feats = tr.corpus_features(corpus, cfg, False, 0, "test")
        emb = {sid: nn.forward(res.model, feats[sid]) for sid in feats}
        close_d, far_d, cross_d = [], [], []
        for sid in emb:
            v = emb[sid]
            ts = corpus.datasets[sid].timestamps[corpus.test_idx[sid]]
            for i in range(len(v) - 1):
                for j in range(i + 1, len(v)):
                    d = np.linalg.norm(v[i] - v[j])
                    if abs(ts[i] - ts[j]) <= cfg.t_close_for(sid):
                        close_d.append(d)
                    else:
                        far_d.append(d)
        v1, v2 = emb[1], emb[2]
        for i in range(0, len(v1), 5):
            for j in range(0, len(v2), 5):
                cross_d.append(np.linalg.norm(v1[i] - v2[j]))
        assert np.mean(close_d) < np.mean(far_d)
        assert np.mean(cross_d) > np.mean(close_d)

    def test_triplet_membership_invariant(self, datasets):
        # every sampled triplet satisfies the defining time predicates
        corpus = tr.build_corpus(datasets, 0.8)
        ts = {sid: corpus.datasets[sid].timestamps[corpus.train_idx[sid]]
              for sid in corpus.scenario_ids}
        t_close = {1: 2.0, 2: 2.0}
        sampler = tr.TripletSampler(ts, t_close)
        rng = np.random.default_rng(0)
        for sid in (1, 2):
            for _ in range(300):
                i = int(rng.integers(sampler.sizes[sid]))
                if not sampler.has_close(sid, i):
                    continue
                c, fs, f = sampler.sample(sid, i, rng)
                dt_c = abs(ts[sid][i] - ts[sid][c])
                assert 0 < dt_c <= t_close[sid]
                if fs == sid:
                    assert abs(ts[sid][i] - ts[sid][f]) > t_close[sid]

    def test_nan_loss_detected(self, datasets):
        # the squared AE objective overflows to inf -> nan at absurd rates
        cfg = quick_config(adam=nn.AdamConfig(learning_rate=1e40), epochs=2)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError, match="non-finite"):
                tr.train_autoencoder(datasets, cfg, augmented=False)


class TestTrainSemi:
    def test_requires_semi_scenarios(self, datasets):
        cfg = quick_config(semi_scenarios=())
        with pytest.raises(ValueError, match="nonempty"):
            tr.train_csi2vec_semi(datasets, cfg)

    def test_unknown_semi_scenario_rejected(self, datasets):
        cfg = quick_config(semi_scenarios=(9,))
        with pytest.raises(ValueError, match="not in the corpus"):
            tr.train_csi2vec_semi(datasets, cfg)

    def test_loss_components_add_up(self, datasets):
        cfg = quick_config(semi_scenarios=(2,), epochs=1, n_train_batches=10)
        res = tr.train_csi2vec_semi(datasets, cfg)
        assert res.loss_columns == ("loss", "triplet_loss", "sup_loss")
        for _, _, total, tri, sup in res.log:
            assert abs(total - (tri + sup)) < 1e-12
        assert res.aux_heads is not None and set(res.aux_heads) == {2}

    def test_supervision_pulls_indoor_embedding_toward_positions(self, datasets):
        cfg = quick_config(semi_scenarios=(1, 2), epochs=5, n_train_batches=30)
        res = tr.train_csi2vec_semi(datasets, cfg)
        sup = [r[4] for r in res.log]
        assert np.mean(sup[-20:]) < np.mean(sup[:20])


class TestTrainAutoencoder:
    def test_reconstruction_loss_decreases(self, datasets):
        cfg = quick_config(epochs=5, n_train_batches=30)
        res = tr.train_autoencoder(datasets, cfg, augmented=True)
        first = np.mean([r[2] for r in res.log[:30]])
        last = np.mean([r[2] for r in res.log[-30:]])
        assert last < first
        assert res.decoder is not None

    def test_encoder_and_decoder_widths(self, datasets):
        cfg = quick_config(embed_dim=6)
        res = tr.train_autoencoder(datasets, cfg, augmented=False)
        corpus = tr.build_corpus(datasets, cfg.train_fraction)
        d2 = 2 * corpus.maxdims.feature_dim(cfg.c_trunc)
        assert res.model.spec.layer_widths == (d2, 32, 6)
        assert res.decoder.spec.layer_widths == (6, 32, d2)

    def test_hidden_width_switches_at_64(self):
        assert tr.ae_hidden_width(16) == 32
        assert tr.ae_hidden_width(63) == 32
        assert tr.ae_hidden_width(64) == 128
        assert tr.ae_hidden_width(512) == 128


class TestFeatureTables:
    def test_frozen_draw_is_stable(self, datasets):
        cfg = quick_config()
        corpus = tr.build_corpus(datasets, 0.8)
        a = tr.corpus_features(corpus, cfg, True, FROZEN_DRAW, "test")
        b = tr.corpus_features(corpus, cfg, True, FROZEN_DRAW, "test")
        assert all(np.array_equal(a[s], b[s]) for s in a)

    def test_epochs_resample_augmentation(self, datasets):
        cfg = quick_config()
        corpus = tr.build_corpus(datasets, 0.8)
        a = tr.corpus_features(corpus, cfg, True, 0, "train")
        b = tr.corpus_features(corpus, cfg, True, 1, "train")
        assert not np.array_equal(a[1], b[1])

    def test_clean_features_ignore_epoch(self, datasets):
        cfg = quick_config()
        corpus = tr.build_corpus(datasets, 0.8)
        a = tr.corpus_features(corpus, cfg, False, 0, "train")
        b = tr.corpus_features(corpus, cfg, False, 7, "train")
        assert all(np.array_equal(a[s], b[s]) for s in a)
