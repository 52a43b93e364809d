import numpy as np
import pytest

from corrattack.image import (
    BlockGrid,
    BlockIndex,
    apply_block_delta,
    block_sums,
    block_vectors,
    make_grid,
    project_ball,
    split_blocks,
)

from conftest import seeded_image


class TestProjectBall:
    def test_interior_point_unchanged(self):
        origin = seeded_image(1)
        assert np.array_equal(project_ball(origin, origin, 0.05), origin)

    def test_active_epsilon_constraint(self):
        origin = np.full((1, 2, 2), 0.5)
        cand = np.full((1, 2, 2), 0.9)
        out = project_ball(cand, origin, 0.05)
        assert np.allclose(out, 0.55)

    def test_active_range_constraint(self):
        origin = np.full((1, 1, 1), 0.98)
        cand = np.full((1, 1, 1), 1.2)
        out = project_ball(cand, origin, 0.05)
        assert out[0, 0, 0] == 1.0

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            project_ball(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)), 0.05)
        with pytest.raises(ValueError):
            project_ball(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), 0.0)

    def test_idempotent_and_feasible_random(self):
        for seed in range(25):
            rng = np.random.default_rng(seed)
            origin = rng.random((3, 8, 8))
            cand = origin + rng.uniform(-0.5, 0.5, origin.shape)
            eps = float(rng.uniform(0.01, 0.3))
            out = project_ball(cand, origin, eps)
            assert np.max(np.abs(out - origin)) <= eps + 1e-12
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert np.array_equal(project_ball(out, origin, eps), out)


class TestGrid:
    def test_imagenet_scale_grid(self):
        grid = make_grid((3, 224, 224), 32)
        assert (grid.h, grid.w, grid.c) == (7, 7, 3)
        assert grid.num_blocks == 147
        assert grid.stage == 0

    def test_whole_image_blocks(self):
        grid = make_grid((3, 32, 32), 32)
        assert (grid.h, grid.w, grid.c) == (1, 1, 3)
        assert grid.num_blocks == 3

    def test_small_blocks(self):
        grid = make_grid((3, 32, 32), 8)
        assert (grid.h, grid.w, grid.c) == (4, 4, 3)
        assert grid.num_blocks == 48

    def test_block_size_exceeding_side_rejected(self):
        with pytest.raises(ValueError):
            make_grid((3, 16, 16), 32)

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            make_grid((3, 30, 30), 8)

    def test_linear_index_roundtrip(self):
        grid = make_grid((3, 32, 32), 8)
        seen = set()
        for blk in grid.blocks():
            lin = grid.linear_index(blk)
            assert grid.block_at(lin) == blk
            seen.add(lin)
        assert seen == set(range(grid.num_blocks))


class TestSplitBlocks:
    def test_split_imagenet_grid(self):
        grid = split_blocks(make_grid((3, 224, 224), 32))
        assert (grid.block_size, grid.h, grid.w, grid.c) == (16, 14, 14, 3)
        assert grid.stage == 1

    def test_split_again(self):
        grid = split_blocks(BlockGrid(16, 14, 14, 3, stage=1))
        assert (grid.block_size, grid.h, grid.w) == (8, 28, 28)
        assert grid.stage == 2

    def test_unit_blocks_cannot_split(self):
        with pytest.raises(ValueError):
            split_blocks(BlockGrid(1, 32, 32, 3))

    def test_split_preserves_coverage(self):
        parent = make_grid((2, 16, 16), 8)
        child = split_blocks(parent)
        for blk in parent.blocks():
            mask = np.zeros((2, 16, 16), dtype=bool)
            k, rows, cols = parent.pixel_slice(blk)
            mask[k, rows, cols] = True
            child_mask = np.zeros_like(mask)
            count = 0
            for cblk in child.blocks():
                ck, crows, ccols = child.pixel_slice(cblk)
                probe = np.zeros_like(mask)
                probe[ck, crows, ccols] = True
                if (probe & mask).any():
                    assert (probe & ~mask).sum() == 0  # child inside parent
                    assert not (probe & child_mask).any()  # disjoint children
                    child_mask |= probe
                    count += 1
            assert count == 4
            assert np.array_equal(child_mask, mask)


class TestApplyBlockDelta:
    def test_zero_amount_identity(self, image7):
        grid = make_grid(image7.shape, 8)
        out = apply_block_delta(image7, grid, BlockIndex(1, 2, 0), 0.0)
        assert np.array_equal(out, image7)

    def test_whole_image_block(self):
        x = np.full((1, 4, 4), 0.3)
        grid = make_grid(x.shape, 4)
        out = apply_block_delta(x, grid, BlockIndex(0, 0, 0), 0.1)
        assert np.allclose(out, 0.4)

    def test_total_change_is_amount_times_area(self, image7):
        # direct summation oracle over the raw pixel difference
        grid = make_grid(image7.shape, 8)
        amount = 0.125
        out = apply_block_delta(image7, grid, BlockIndex(2, 3, 1), amount)
        assert abs(np.sum(np.abs(out - image7)) - amount * 64) < 1e-12
        assert np.count_nonzero(out != image7) == 64

    def test_out_of_range_block_rejected(self, image7):
        grid = make_grid(image7.shape, 8)
        with pytest.raises(ValueError):
            apply_block_delta(image7, grid, BlockIndex(4, 0, 0), 0.1)


def test_block_sums_matches_loop(image7):
    grid = make_grid(image7.shape, 8)
    sums = block_sums(image7, grid)
    for blk in grid.blocks():
        expect = image7[grid.pixel_slice(blk)].sum()
        assert abs(sums[blk.k, blk.i, blk.j] - expect) < 1e-9


def test_block_vectors_order_and_content(image7):
    grid = make_grid(image7.shape, 8)
    rows = block_vectors(image7, grid)
    assert rows.shape == (48, 64)
    blk = list(grid.blocks())[17]
    assert np.array_equal(rows[17], image7[grid.pixel_slice(blk)].ravel())
