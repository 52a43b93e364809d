"""Image tensors, the epsilon-ball projection and the hierarchical block grid.

An image is a float64 numpy array of shape (channels, height, width) with
values in [0, 1], stored row-major in (channel, row, column) order. That
layout is canonical everywhere, including the wire protocol.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BlockIndex:
    i: int
    j: int
    k: int


@dataclass(frozen=True)
class BlockGrid:
    """Partition of an image into block_size x block_size per-channel blocks."""

    block_size: int
    h: int
    w: int
    c: int
    stage: int = 0

    @property
    def num_blocks(self):
        return self.h * self.w * self.c

    @property
    def image_shape(self):
        return (self.c, self.h * self.block_size, self.w * self.block_size)

    def contains(self, block):
        return 0 <= block.i < self.h and 0 <= block.j < self.w and 0 <= block.k < self.c

    def linear_index(self, block):
        """Channel-major, then row-major: matches the pixel layout order."""
        return (block.k * self.h + block.i) * self.w + block.j

    def block_at(self, linear):
        k, rest = divmod(linear, self.h * self.w)
        i, j = divmod(rest, self.w)
        return BlockIndex(i, j, k)

    def blocks(self):
        for k in range(self.c):
            for i in range(self.h):
                for j in range(self.w):
                    yield BlockIndex(i, j, k)

    def pixel_slice(self, block):
        b = self.block_size
        return (
            block.k,
            slice(block.i * b, (block.i + 1) * b),
            slice(block.j * b, (block.j + 1) * b),
        )


def project_ball(candidate, origin, epsilon):
    """Clip into the L-infinity epsilon-ball around origin, then into [0, 1].

    Idempotent; the output always satisfies both constraints.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if candidate.shape != origin.shape:
        raise ValueError(
            f"shape mismatch: candidate {candidate.shape} vs origin {origin.shape}"
        )
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    out = np.clip(candidate, origin - epsilon, origin + epsilon)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def make_grid(image_shape, block_size):
    """Grid of stage 0 covering an image of shape (channels, height, width)."""
    c, height, width = image_shape
    if block_size < 1:
        raise ValueError("block_size must be at least 1")
    if block_size > height or block_size > width:
        raise ValueError(
            f"block_size {block_size} exceeds image side ({height}x{width})"
        )
    if height % block_size != 0 or width % block_size != 0:
        raise ValueError(
            f"block_size {block_size} must divide both image sides ({height}x{width})"
        )
    return BlockGrid(block_size, height // block_size, width // block_size, c, stage=0)


def split_blocks(grid):
    """Quarter every block: halve block_size, double h and w, bump the stage."""
    if grid.block_size < 2:
        raise ValueError("cannot split blocks of size 1")
    if grid.block_size % 2 != 0:
        raise ValueError(f"cannot halve odd block size {grid.block_size}")
    return BlockGrid(grid.block_size // 2, grid.h * 2, grid.w * 2, grid.c, grid.stage + 1)


def apply_block_delta(x, grid, block, amount):
    """Copy of x with `amount` added to one block's pixels; everything else unchanged."""
    if not grid.contains(block):
        raise ValueError(f"block {block} out of range for {grid.h}x{grid.w}x{grid.c} grid")
    out = np.array(x, dtype=np.float64, copy=True)
    out[grid.pixel_slice(block)] += amount
    return out


def block_sums(x, grid):
    """Per-block pixel sums of x, returned as an array indexed [k, i, j]."""
    c, height, width = x.shape
    b = grid.block_size
    if (c, height, width) != grid.image_shape:
        raise ValueError(f"image shape {x.shape} does not match grid {grid.image_shape}")
    return x.reshape(c, grid.h, b, grid.w, b).sum(axis=(2, 4))


def block_vectors(x, grid):
    """Flatten each block to a row; rows ordered by linear block index."""
    c, height, width = x.shape
    b = grid.block_size
    if (c, height, width) != grid.image_shape:
        raise ValueError(f"image shape {x.shape} does not match grid {grid.image_shape}")
    return (
        x.reshape(c, grid.h, b, grid.w, b)
        .transpose(0, 1, 3, 2, 4)
        .reshape(grid.num_blocks, b * b)
    )
