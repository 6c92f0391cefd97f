import numpy as np
import pytest

from tilecontext import tensor as T
from tilecontext.erf import erf_map
from tilecontext.errors import ContractViolation
from tilecontext.pipeline import Model, PipelineConfig

TINY = dict(input_size=16, region_size=8, patch_size=2, dims=(4, 8),
            depths=(1, 1), heads=(1, 2), window=2, mlp_ratio=2,
            context_heads=2)


def tiny_model(context, **kw):
    return Model(PipelineConfig(**{**TINY, "context": context, **kw}), seed=0)


def test_myopic_model_erf_confined_to_probe_region(rng):
    m = tiny_model("identity")
    img = rng.normal(size=(1, 16, 16))
    emap = erf_map(m, img)  # center token lies in region (1, 1)
    mass = emap.region_mass(8)
    assert mass.shape == (2, 2)
    assert mass[1, 1] > 0
    mass[1, 1] = 0
    assert np.abs(mass).max() == 0.0


def test_region_stage_probe_confined_even_with_context(rng):
    m = tiny_model("attn")
    img = rng.normal(size=(1, 16, 16))
    emap = erf_map(m, img, probe_stage="region")
    mass = emap.region_mass(8)
    assert mass[1, 1] > 0
    mass[1, 1] = 0
    assert np.abs(mass).max() == 0.0


def test_contextualized_erf_covers_all_regions(rng):
    m = tiny_model("attn")
    img = rng.normal(size=(1, 16, 16))
    emap = erf_map(m, img)
    h, w = emap.grid.shape
    tiles = emap.grid.reshape(2, 8, 2, 8)
    per_region_max = tiles.max(axis=(1, 3))
    assert (per_region_max > 0).all()


def test_normalization_and_range(rng):
    m = tiny_model("attn")
    emap = erf_map(m, rng.normal(size=(1, 16, 16)))
    assert emap.grid.min() >= 0.0
    assert emap.grid.max() == 1.0


def test_linear_toy_model_matches_jacobian_row(rng):
    # one linear layer: ERF of output j equals |W[:, j]| reshaped to the grid
    w = rng.normal(size=(16, 3))

    class Toy:
        pass

    x = T.tensor(rng.normal(size=(1, 4, 4)), requires_grad=True)
    flat = T.reshape(x, (1, 16))
    out = T.matmul(flat, T.tensor(w))
    seed = np.zeros((1, 3))
    seed[0, 1] = 1.0
    out.backward(seed)
    got = np.abs(x.grad[0])
    want = np.abs(w[:, 1]).reshape(4, 4)
    assert np.array_equal(got, want)


def test_probe_out_of_bounds(rng):
    m = tiny_model("identity")
    with pytest.raises(ContractViolation):
        erf_map(m, rng.normal(size=(1, 16, 16)), probe=(99, 0))
    with pytest.raises(ContractViolation):
        erf_map(m, rng.normal(size=(1, 16, 16)), probe_stage="bogus")


def test_erf_pgm_artifact(tmp_path, rng):
    m = tiny_model("identity")
    emap = erf_map(m, rng.normal(size=(1, 16, 16)))
    emap.save_pgm(tmp_path / "erf.pgm")
    from tilecontext.pnm import read_pnm
    img = read_pnm(tmp_path / "erf.pgm")
    assert img.shape == (1, 16, 16)
    assert np.abs(img[0] - emap.grid).max() <= 0.5 / 255 + 1e-12
