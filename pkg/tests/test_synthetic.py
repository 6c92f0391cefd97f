import hashlib

import numpy as np
import pytest

from tilecontext.errors import ContractViolation
from tilecontext.synthetic import (SyntheticDataset, gen_synthetic_task,
                                   single_region_nn_accuracy)


def test_determinism_hash_stable():
    a = gen_synthetic_task(seed=7, n=64)
    b = gen_synthetic_task(seed=7, n=64)
    assert hashlib.sha256(a.images.tobytes()).hexdigest() == \
        hashlib.sha256(b.images.tobytes()).hexdigest()
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.markers, b.markers)


def test_different_seed_different_data():
    a = gen_synthetic_task(seed=7, n=32)
    b = gen_synthetic_task(seed=8, n=32)
    assert not np.array_equal(a.images, b.images)


def test_label_balance():
    for n in (31, 32, 513):
        ds = gen_synthetic_task(seed=3, n=n)
        ones = int(ds.labels.sum())
        assert abs(ones - (n - ones)) <= 1


def test_markers_in_distinct_regions():
    ds = gen_synthetic_task(seed=5, n=128)
    assert (ds.markers[:, 0] != ds.markers[:, 1]).all()


def test_label_equals_shape_match():
    ds = gen_synthetic_task(seed=5, n=128)
    match = (ds.markers[:, 2] == ds.markers[:, 3]).astype(np.int64)
    assert np.array_equal(match, ds.labels)


def test_shapes_marginally_uniformish():
    ds = gen_synthetic_task(seed=11, n=2048)
    assert abs(ds.markers[:, 2].mean() - 0.5) < 0.05
    assert abs(ds.markers[:, 3].mean() - 0.5) < 0.05


def test_rejects_too_small_grid():
    with pytest.raises(ContractViolation):
        gen_synthetic_task(seed=0, n=4, input_size=32, region_size=32)


def test_rejects_region_below_marker():
    with pytest.raises(ContractViolation):
        gen_synthetic_task(seed=0, n=4, input_size=16, region_size=8)


def test_fixed_region_pair():
    ds = gen_synthetic_task(seed=5, n=64, region_pair=(0, 3))
    assert (ds.markers[:, 0] == 0).all()
    assert (ds.markers[:, 1] == 3).all()
    with pytest.raises(ContractViolation):
        gen_synthetic_task(seed=5, n=4, region_pair=(0, 0))


def test_single_region_nn_at_chance():
    ds = gen_synthetic_task(seed=13, n=512)
    for region in range(4):
        acc = single_region_nn_accuracy(ds, region)
        assert acc <= 0.55, f"region {region} leaked label info: {acc}"


def test_dataset_roundtrip(tmp_path):
    ds = gen_synthetic_task(seed=21, n=16)
    ds.save(tmp_path / "ds")
    back = SyntheticDataset.load(tmp_path / "ds")
    assert np.array_equal(back.images, ds.images)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.markers, ds.markers)
    assert (back.seed, back.input_size, back.region_size) == (21, 64, 32)


def test_degenerate_single_region_context_not_superior():
    """A one-region pipeline with a context encoder must not beat the
    region-only model when there is no cross-region information to add.

    The probe task is first-order (classify one marker's shape), which the
    myopic pipeline already solves, so extra context can only match it.
    """
    import dataclasses

    from tilecontext.pipeline import Model, PipelineConfig
    from tilecontext.training import evaluate, train

    base = gen_synthetic_task(seed=40, n=512, input_size=64, region_size=32,
                              region_pair=(0, 3))
    test = gen_synthetic_task(seed=41, n=256, input_size=64, region_size=32,
                              region_pair=(0, 3))
    # relabel to "any square present": a count threshold that is linear in
    # pooled features, so the myopic pipeline solves it outright
    tr = dataclasses.replace(base, labels=base.markers[:, 2] | base.markers[:, 3])
    te = dataclasses.replace(test, labels=test.markers[:, 2] | test.markers[:, 3])

    accs = {}
    for kind in ("identity", "attn"):
        cfg = PipelineConfig(input_size=64, region_size=64, patch_size=4,
                             dims=(16, 32, 64), depths=(1, 1, 1),
                             heads=(2, 4, 4), window=2, context=kind,
                             attn_mode="exact")
        model = Model(cfg, seed=2)
        train(model, tr, epochs=6, batch_size=16, lr=1e-3, weight_decay=0.02,
              seed=2, cosine=False, stop_at_train_acc=0.995)
        accs[kind] = evaluate(model, te)
    assert accs["identity"] >= 0.9, f"first-order probe not solved: {accs}"
    assert accs["attn"] <= accs["identity"] + 0.05, f"unexpected gain: {accs}"
