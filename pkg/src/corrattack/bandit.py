"""Action features, difference-function evaluation, and the forgetting window.

The bandit observes a 4-dim feature per block (normalized location plus the
block's first principal-component score on the natural image) and maintains
a capacity-bounded sample window with locality invalidation after accepted
actions.
"""

from dataclasses import dataclass

import numpy as np

from .image import apply_block_delta, block_vectors, project_ball

PCA_ITERATIONS = 200
PCA_TOLERANCE = 1e-10
DEGENERATE_SCORE = 0.5


@dataclass(frozen=True)
class ActionSpec:
    """One arm: kind is 'diff' (step is +eta, both signs probed) or 'flip'
    (step is the signed flip amount, +/-2*epsilon)."""

    kind: str
    block: object  # BlockIndex
    step: float


@dataclass
class SampleEntry:
    feature: np.ndarray
    block: object
    g: float
    birth: int


class SampleSet:
    """Insertion-ordered window of (feature, block, g) capped at capacity tau."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.entries = []
        self._births = 0

    def __len__(self):
        return len(self.entries)

    def insert(self, feature, block, g):
        self.entries.append(SampleEntry(np.asarray(feature, dtype=np.float64), block, float(g), self._births))
        self._births += 1
        self.evict_to_capacity()

    def evict_to_capacity(self):
        while len(self.entries) > self.capacity:
            self.entries.pop(0)

    def remove_within(self, block, alpha):
        """Drop entries with |i - i_t| + |j - j_t| <= alpha, across all channels."""
        self.entries = [
            e
            for e in self.entries
            if abs(e.block.i - block.i) + abs(e.block.j - block.j) > alpha
        ]

    def live_blocks(self):
        return {(e.block.i, e.block.j, e.block.k) for e in self.entries}

    def features_matrix(self):
        if not self.entries:
            return np.empty((0, 4))
        return np.stack([e.feature for e in self.entries])

    def raw_values(self):
        return np.array([e.g for e in self.entries])

    def min_g(self):
        return min(e.g for e in self.entries)


def update_samples(window, accepted, block, feature, g, alpha):
    """Window update after one action: forget the accepted action's
    neighborhood, or record a rejected observation; then enforce capacity."""
    if accepted:
        window.remove_within(block, alpha)
        window.evict_to_capacity()
    else:
        window.insert(feature, block, g)
    return window


def pca_first_component(x0, grid):
    """First-PC score of every block of the natural image, min-max mapped to [0,1].

    Blocks are flattened, mean-centered across the block population, and
    projected onto the top eigenvector of the block covariance (power
    iteration). The direction's largest-magnitude loading is made positive
    so the global sign is fixed. Identical blocks degenerate to 0.5.
    """
    rows = block_vectors(np.asarray(x0, dtype=np.float64), grid)
    centered = rows - rows.mean(axis=0)
    if np.max(np.abs(centered)) < 1e-12:
        return np.full((grid.c, grid.h, grid.w), DEGENERATE_SCORE)
    cov = centered.T @ centered
    direction = _power_iteration(cov)
    lead = int(np.argmax(np.abs(direction)))
    if direction[lead] < 0:
        direction = -direction
    scores = centered @ direction
    lo, hi = float(scores.min()), float(scores.max())
    if hi - lo < 1e-12:
        return np.full((grid.c, grid.h, grid.w), DEGENERATE_SCORE)
    scores = (scores - lo) / (hi - lo)
    return scores.reshape(grid.c, grid.h, grid.w)


def _power_iteration(cov):
    rng = np.random.default_rng(0)  # fixed start keeps runs reproducible
    v = rng.standard_normal(cov.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(PCA_ITERATIONS):
        nxt = cov @ v
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return v
        nxt /= norm
        if np.linalg.norm(nxt - v) < PCA_TOLERANCE:
            return nxt
        v = nxt
    return v


def block_features(grid, pca_scores):
    """Feature matrix (num_blocks, 4) in linear-index order.

    Coordinates are normalized by (dim - 1), mapping grid corners to 0 and 1;
    singleton dimensions normalize to 0.
    """
    def norm(idx, size):
        return idx / (size - 1) if size > 1 else np.zeros_like(idx, dtype=np.float64)

    kk, ii, jj = np.meshgrid(
        np.arange(grid.c), np.arange(grid.h), np.arange(grid.w), indexing="ij"
    )
    feats = np.stack(
        [
            norm(ii, grid.h),
            norm(jj, grid.w),
            norm(kk, grid.c),
            np.asarray(pca_scores, dtype=np.float64),
        ],
        axis=-1,
    )
    return feats.reshape(grid.num_blocks, 4)


def make_action_set(mode, grid, x_t, origin, epsilon, eta):
    """Enumerate the stage's arms in linear-index order.

    diff: one +/-eta probe action per block. flip_neg: flip-to-positive
    (+2*epsilon) on blocks whose current perturbation sums negative.
    flip_pos: flip-to-negative (-2*epsilon) on blocks summing positive.
    """
    from .image import block_sums

    if mode == "diff":
        return [ActionSpec("diff", blk, eta) for blk in grid.blocks()]
    if mode not in ("flip_neg", "flip_pos"):
        raise ValueError(f"unknown action mode {mode!r}")
    sums = block_sums(np.asarray(x_t) - np.asarray(origin), grid)
    actions = []
    for blk in grid.blocks():
        s = sums[blk.k, blk.i, blk.j]
        if mode == "flip_neg" and s < 0:
            actions.append(ActionSpec("flip", blk, 2.0 * epsilon))
        elif mode == "flip_pos" and s > 0:
            actions.append(ActionSpec("flip", blk, -2.0 * epsilon))
    return actions


@dataclass
class DifferenceResult:
    g: float
    step: float
    image: np.ndarray
    loss: float
    queries: int


def evaluate_difference(eval_loss, x_t, current_loss, origin, epsilon, grid, action):
    """Tentatively apply an action and measure the loss difference.

    eval_loss(image) -> loss must count one oracle query per call. Flip
    actions cost one query; diff actions probe both signs (two queries) and
    keep the better one. Equal losses prefer the +eta probe.
    """
    if action.kind == "flip":
        cand = project_ball(
            apply_block_delta(x_t, grid, action.block, action.step), origin, epsilon
        )
        loss = eval_loss(cand)
        return DifferenceResult(loss - current_loss, action.step, cand, loss, 1)
    if action.kind != "diff":
        raise ValueError(f"unknown action kind {action.kind!r}")
    cand_plus = project_ball(
        apply_block_delta(x_t, grid, action.block, action.step), origin, epsilon
    )
    loss_plus = eval_loss(cand_plus)
    cand_minus = project_ball(
        apply_block_delta(x_t, grid, action.block, -action.step), origin, epsilon
    )
    loss_minus = eval_loss(cand_minus)
    if loss_plus <= loss_minus:
        return DifferenceResult(loss_plus - current_loss, action.step, cand_plus, loss_plus, 2)
    return DifferenceResult(loss_minus - current_loss, -action.step, cand_minus, loss_minus, 2)
