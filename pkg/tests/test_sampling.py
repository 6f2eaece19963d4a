import numpy as np
import pytest

from metriclab.errors import ConfigError, ShapeError
from metriclab.sampling import (
    LabeledBatch,
    LabeledDataset,
    PKSamplerConfig,
    epoch_iter,
    load_dataset_csv,
    sample_pk_batch,
    save_dataset_csv,
)
from metriclab.seeding import substream


def make_ds(n_ids=8, per_id=6, dim=4, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_ids), per_id)
    return LabeledDataset(rng.normal(0, 1, (dim, n_ids * per_id)), labels)


def test_dataset_validates_shapes():
    with pytest.raises(ShapeError):
        LabeledDataset(np.zeros((2, 3)), np.array([0, 1]))
    with pytest.raises(ShapeError):
        LabeledDataset(np.zeros(3), np.array([0, 1, 2]))


def test_pk_batch_is_p_times_k():
    ds = make_ds(n_ids=16, per_id=8)
    cfg = PKSamplerConfig(p=16, k=4)
    batch = sample_pk_batch(ds, cfg, substream(0, "sampler"))
    assert batch.features.shape[1] == 64
    labels, counts = np.unique(batch.labels, return_counts=True)
    assert len(labels) == 16 and (counts == 4).all()


def test_pk_batch_deterministic_under_seed():
    ds = make_ds()
    cfg = PKSamplerConfig(p=4, k=3)
    b1 = sample_pk_batch(ds, cfg, substream(7, "sampler"))
    b2 = sample_pk_batch(ds, cfg, substream(7, "sampler"))
    assert np.array_equal(b1.features, b2.features)
    assert np.array_equal(b1.labels, b2.labels)


def test_pk_batch_columns_come_from_dataset():
    ds = make_ds()
    batch = sample_pk_batch(ds, PKSamplerConfig(p=3, k=2), substream(1, "s"))
    for j in range(batch.features.shape[1]):
        col = batch.features[:, j]
        matches = np.flatnonzero((ds.features == col[:, None]).all(axis=0))
        assert matches.size >= 1
        assert batch.labels[j] in ds.labels[matches]


def test_small_identity_resamples_when_allowed():
    feats = np.arange(10.0).reshape(1, 10)
    labels = np.array([0, 0, 0, 0, 0, 0, 0, 0, 1, 1])  # identity 1 has 2 samples
    ds = LabeledDataset(feats, labels)
    cfg = PKSamplerConfig(p=2, k=4, allow_resample=True)
    batch = sample_pk_batch(ds, cfg, substream(0, "s"))
    assert (batch.labels == 1).sum() == 4  # 2 distinct + 2 resampled


def test_small_identity_errors_when_resample_off():
    feats = np.arange(6.0).reshape(1, 6)
    ds = LabeledDataset(feats, np.array([0, 0, 0, 0, 1, 1]))
    cfg = PKSamplerConfig(p=2, k=4, allow_resample=False)
    with pytest.raises(ConfigError):
        sample_pk_batch(ds, cfg, substream(0, "s"))


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        PKSamplerConfig(p=1, k=4)
    with pytest.raises(ConfigError, match="k-1"):
        PKSamplerConfig(p=4, k=1)


def test_epoch_has_ceil_batches_each_identity_once():
    ds = make_ds(n_ids=8, per_id=4)
    batches = list(epoch_iter(ds, PKSamplerConfig(p=2, k=3), substream(3, "e")))
    assert len(batches) == 4
    anchored = np.concatenate([np.unique(b.labels) for b in batches])
    assert sorted(anchored.tolist()) == list(range(8))


def test_epoch_ragged_final_batch():
    ds = make_ds(n_ids=5, per_id=4)
    batches = list(epoch_iter(ds, PKSamplerConfig(p=2, k=2), substream(0, "e")))
    assert len(batches) == 3  # ceil(5/2)
    assert [b.p for b in batches] == [2, 2, 1]
    anchored = sorted(np.concatenate([np.unique(b.labels) for b in batches]).tolist())
    assert anchored == list(range(5))


def test_epoch_orderings_vary_across_epochs():
    ds = make_ds(n_ids=6, per_id=3)
    rng = substream(11, "epochs")
    cfg = PKSamplerConfig(p=2, k=2)
    orders = set()
    for _ in range(100):
        first_labels = tuple(
            int(b.labels[0]) for b in epoch_iter(ds, cfg, rng)
        )
        orders.add(first_labels)
    assert len(orders) > 1


def test_batch_invariant_checked():
    with pytest.raises(ShapeError):
        LabeledBatch(np.zeros((2, 5)), np.zeros(5, dtype=int), p=2, k=2)


def test_csv_round_trip_exact(tmp_path):
    ds = make_ds(n_ids=3, per_id=2, dim=5, seed=9)
    path = tmp_path / "ds.csv"
    save_dataset_csv(ds, path)
    back = load_dataset_csv(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    header = path.read_text().splitlines()[0]
    assert header == "f0,f1,f2,f3,f4,label"


def test_csv_rejects_missing_label_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("f0,f1\n1.0,2.0\n")
    with pytest.raises(ConfigError):
        load_dataset_csv(p)
