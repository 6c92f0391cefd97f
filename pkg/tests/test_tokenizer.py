import numpy as np
import pytest
from hypothesis import given, strategies as st

from tilecontext import tensor as T
from tilecontext.errors import ContractViolation
from tilecontext.tokenizer import (extract_region, partition_regions,
                                   patchify_region, reassemble_image,
                                   reassemble_row_major, region_coords,
                                   unpatchify_region)


def test_partition_512_into_256_gives_2x2(rng):
    img = rng.normal(size=(3, 512, 512))
    grid = partition_regions(img, (256, 256))
    assert (grid.rows, grid.cols, grid.n_regions) == (2, 2, 4)


def test_partition_4096_into_512_gives_8x8():
    img = np.zeros((1, 4096, 4096))
    grid = partition_regions(img, (512, 512))
    assert (grid.rows, grid.cols, grid.n_regions) == (8, 8, 64)


def test_partition_ragged_pads_with_zeros(rng):
    img = rng.normal(size=(1, 300, 500)) + 1.0  # keep pixels nonzero
    grid = partition_regions(img, (256, 256))
    assert (grid.rows, grid.cols) == (2, 2)
    last = grid.regions[grid.index_of(1, 1)]
    mask = grid.pad_mask[grid.index_of(1, 1)]
    assert mask.sum() == 44 * 244
    assert (last[0][~mask] == 0.0).all()
    assert (last[0][mask] != 0.0).all()


def test_partition_reassembles_exactly(rng):
    img = rng.normal(size=(2, 300, 500))
    grid = partition_regions(img, (256, 256))
    assert np.array_equal(reassemble_image(grid), img)


def test_partition_rejects_empty():
    with pytest.raises(ContractViolation):
        partition_regions(np.zeros((1, 0, 5)), (4, 4))


def test_partition_rejects_nonfinite():
    img = np.zeros((1, 4, 4))
    img[0, 0, 0] = np.nan
    with pytest.raises(ContractViolation):
        partition_regions(img, (2, 2))


@given(h=st.integers(1, 40), w=st.integers(1, 40),
       rh=st.integers(1, 15), rw=st.integers(1, 15))
def test_tiling_partition_properties(h, w, rh, rw):
    rng = np.random.default_rng(h * 1000 + w * 31 + rh * 7 + rw)
    img = rng.normal(size=(1, h, w))
    grid = partition_regions(img, (rh, rw))
    rows = -(-h // rh)
    cols = -(-w // rw)
    assert (grid.rows, grid.cols) == (rows, cols)
    assert grid.regions.shape == (rows * cols, 1, rh, rw)
    # every valid pixel in exactly one region; pad count matches formula
    assert grid.pad_mask.sum() == h * w
    assert grid.pad_mask.size - h * w == rows * cols * rh * rw - h * w
    assert np.array_equal(reassemble_image(grid), img)


def test_square_setup_grid_is_k_by_k(rng):
    img = rng.normal(size=(1, 96, 96))
    grid = partition_regions(img, (32, 32))
    assert (grid.rows, grid.cols) == (3, 3)


def test_partition_determinism(rng):
    img = rng.normal(size=(1, 70, 90))
    a = partition_regions(img, (32, 32))
    b = partition_regions(img, (32, 32))
    assert np.array_equal(a.regions, b.regions)
    assert np.array_equal(a.pad_mask, b.pad_mask)


# ---------------------------------------------------------------------------
# patchify

def test_patchify_counts():
    tile = np.zeros((3, 256, 256))
    assert patchify_region(tile, 4).shape == (4096, 48)


def test_patchify_identity_patch():
    tile = np.arange(64, dtype=float).reshape(1, 8, 8)
    patches = patchify_region(tile, 8)
    assert patches.shape == (1, 64)
    assert np.array_equal(patches[0], tile.ravel())


def test_patchify_roundtrip_bitwise(rng):
    tile = rng.normal(size=(3, 16, 16))
    patches = patchify_region(tile, 4)
    back = unpatchify_region(patches, 3, 16, 16, 4)
    assert np.array_equal(back, tile)


def test_patchify_rejects_nondivisible():
    with pytest.raises(ContractViolation):
        patchify_region(np.zeros((1, 10, 10)), 4)


# ---------------------------------------------------------------------------
# row-major reassembly

def _maps(rng, n, th=2, tw=2, d=3):
    return [T.tensor(rng.normal(size=(th, tw, d))) for _ in range(n)]


def test_reassembly_offsets(rng):
    maps = _maps(rng, 4)
    seq = reassemble_row_major(maps, rows=2, cols=2)
    assert seq.length == 16
    # region (1, 0) occupies slots 8..11
    want = maps[2].data.reshape(4, 3)
    assert np.array_equal(seq.features.data[8:12], want)


def test_reassembly_single_region_identity(rng):
    maps = _maps(rng, 1)
    seq = reassemble_row_major(maps, rows=1, cols=1)
    assert np.array_equal(seq.features.data, maps[0].data.reshape(4, 3))


def test_reassembly_order_independent_of_processing_order(rng):
    maps = _maps(rng, 6)
    seq = reassemble_row_major(maps, rows=2, cols=3)
    # process in shuffled order, then place results by index
    order = [3, 0, 5, 1, 4, 2]
    slots = [None] * 6
    for i in order:
        slots[i] = maps[i]
    seq2 = reassemble_row_major(slots, rows=2, cols=3)
    assert np.array_equal(seq.features.data, seq2.features.data)


def test_reassembly_rejects_heterogeneous(rng):
    maps = [T.tensor(rng.normal(size=(2, 2, 3))),
            T.tensor(rng.normal(size=(2, 2, 4)))]
    with pytest.raises(ContractViolation):
        reassemble_row_major(maps, rows=1, cols=2)


def test_coords_carry_region_and_token_position():
    coords = region_coords(2, 2, 2, 2)
    assert coords.shape == (16, 4)
    assert coords[8].tolist() == [1, 0, 0, 0]
    assert coords[11].tolist() == [1, 0, 1, 1]


def test_extract_region_gradients_flow(rng):
    img = T.tensor(rng.normal(size=(1, 5, 5)), requires_grad=True)
    tile = extract_region(img, (4, 4), 1, 1)  # bottom-right, mostly padding
    assert tile.shape == (1, 4, 4)
    T.reduce_sum(tile).backward()
    assert img.grad[0, 4:, 4:].sum() == 1.0
    assert img.grad.sum() == 1.0
