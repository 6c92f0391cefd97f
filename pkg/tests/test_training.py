import numpy as np
import pytest

from tilecontext import tensor as T
from tilecontext.errors import ContractViolation, TrainingDiverged
from tilecontext.pipeline import Model, PipelineConfig
from tilecontext.synthetic import gen_synthetic_task
from tilecontext.training import TrainResult, evaluate, train

SMALL = dict(input_size=64, region_size=32, patch_size=4, dims=(8, 16, 32),
             depths=(1, 1, 1), heads=(2, 4, 4), window=2, mlp_ratio=2,
             context_heads=4)


def small_model(context="attn", seed=0, **kw):
    return Model(PipelineConfig(**{**SMALL, "context": context, **kw}), seed=seed)


def test_single_step_decreases_batch_loss():
    ds = gen_synthetic_task(seed=2, n=8)
    model = small_model()
    images = T.tensor(ds.images)
    before = T.cross_entropy(model.logits(images, seed=0), ds.labels).item()
    train(model, ds, epochs=1, batch_size=8, lr=1e-3, seed=0, cosine=False)
    after = T.cross_entropy(model.logits(images, seed=0), ds.labels).item()
    assert after < before


def test_zero_lr_leaves_weights_bitwise():
    ds = gen_synthetic_task(seed=2, n=8)
    model = small_model()
    before = {k: v.data.copy() for k, v in model.params.items()}
    train(model, ds, epochs=2, batch_size=4, lr=0.0, weight_decay=0.1, seed=0)
    assert all(np.array_equal(before[k], model.params[k].data) for k in before)


def test_overfit_tiny_dataset_to_full_train_accuracy():
    ds = gen_synthetic_task(seed=9, n=32, region_pair=(0, 3))
    model = small_model(seed=1)
    result = train(model, ds, epochs=200, batch_size=16, lr=1e-3, seed=1,
                   cosine=False, stop_at_train_acc=1.0)
    assert result.curve[-1][2] == 1.0


def test_empty_dataset_rejected():
    ds = gen_synthetic_task(seed=2, n=8)
    import dataclasses
    empty = dataclasses.replace(ds, images=ds.images[:0], labels=ds.labels[:0],
                                markers=ds.markers[:0])
    with pytest.raises(ContractViolation):
        train(small_model(), empty, epochs=1)


def test_divergence_raises_with_step_diagnostic():
    # pre-norm blocks keep even absurd learning rates finite, so divergence
    # surfaces as non-finite activations; inject one to exercise the path
    ds = gen_synthetic_task(seed=2, n=16)
    model = small_model()
    model.head.w.data[0, 0] = np.nan
    first = next(iter(model.params.values()))
    first.data.flat[0] = np.nan
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged,
                                                  match="at step 0"):
        train(model, ds, epochs=1, batch_size=8, lr=1e-3, seed=0)


def test_evaluate_constant_logits_at_class_share():
    ds = gen_synthetic_task(seed=5, n=64)
    model = small_model()
    model.head.w.data[:] = 0.0
    model.head.b.data[:] = 0.0
    acc = evaluate(model, ds)
    share = max(ds.labels.mean(), 1 - ds.labels.mean())
    assert abs(acc - (1 - ds.labels.mean())) <= 1e-12 or acc <= share


def test_evaluate_perfect_oracle_is_one():
    ds = gen_synthetic_task(seed=5, n=32)

    class Oracle:
        def logits(self, images, seed=None):
            # recover the sample rows by matching against the dataset
            data = images.data
            idx = [int(np.argmin(np.abs(ds.images - im).sum(axis=(1, 2, 3))))
                   for im in data]
            out = np.zeros((len(idx), 2))
            out[np.arange(len(idx)), ds.labels[idx]] = 1.0
            return T.tensor(out)

    assert evaluate(Oracle(), ds) == 1.0


def test_curve_csv(tmp_path):
    result = TrainResult(curve=[(0, 0.7, 0.5), (1, 0.6, 0.75)], steps=4)
    result.write_csv(tmp_path / "curve.csv")
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,acc"
    assert lines[1].startswith("0,0.7")
    assert lines[2].startswith("1,0.6")
