"""The attack loop: Latin-hypercube seeding, the GP+EI stage procedure, and
the hierarchical diff/flip drivers with coarse-to-fine block splitting.

One run is strictly sequential; every oracle response is checked for success
and the attack halts the moment the queried image is adversarial.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import gp
from ._kernels import ei_batch
from .bandit import (
    SampleSet,
    block_features,
    evaluate_difference,
    make_action_set,
    pca_first_component,
    update_samples,
)
from .errors import BudgetExhaustedError, ConfigError
from .image import make_grid, project_ball, split_blocks
from .oracle import DEFAULT_MARGIN, LossSpec

DEFAULT_ALPHA_FLIP = {32: 1, 16: 1, 8: 2, 4: 2, 2: 3}
DEFAULT_ALPHA_DIFF = {32: 0, 16: 0, 8: 1, 4: 1, 2: 2}

MIN_SAMPLES = 4
MIN_WINDOW = 12
MIN_BLOCK_SIZE = 2

EPS_FEASIBILITY = 1e-9


@dataclass
class AttackConfig:
    epsilon: float = 0.05
    eta: float = 0.03
    initial_block: int = 32
    ei_threshold: float = 1e-4
    sample_ratio: float = 0.03
    window_ratio: float = 0.09
    alpha_schedule: dict = None
    query_budget: int = 10000
    margin: float = DEFAULT_MARGIN
    mode: str = "flip"
    target: int = None
    seed: int = 0
    scan_threshold: int = 16
    validate: bool = True

    def __post_init__(self):
        if self.epsilon <= 0 or self.eta <= 0 or self.ei_threshold <= 0:
            raise ConfigError("epsilon, eta and ei_threshold must be positive")
        if not self.sample_ratio < self.window_ratio:
            raise ConfigError("sample_ratio must be below window_ratio")
        if self.query_budget <= 0:
            raise ConfigError("query_budget must be positive")
        if self.mode not in ("flip", "diff"):
            raise ConfigError(f"mode must be 'flip' or 'diff', got {self.mode!r}")
        if self.initial_block < MIN_BLOCK_SIZE:
            raise ConfigError(f"initial_block must be at least {MIN_BLOCK_SIZE}")
        if self.alpha_schedule is None:
            self.alpha_schedule = dict(
                DEFAULT_ALPHA_FLIP if self.mode == "flip" else DEFAULT_ALPHA_DIFF
            )

    def alpha_for(self, block_size):
        try:
            return self.alpha_schedule[block_size]
        except KeyError:
            raise ConfigError(f"no alpha scheduled for block size {block_size}")

    def samples_for(self, num_actions):
        return max(MIN_SAMPLES, int(math.floor(self.sample_ratio * num_actions + 0.5)))

    def window_for(self, num_actions):
        return max(MIN_WINDOW, int(math.floor(self.window_ratio * num_actions + 0.5)))


@dataclass
class StageRecord:
    block_size: int
    mode: str
    accepted: int
    queries: int


@dataclass
class AttackResult:
    success: bool
    queries: int
    final_image: np.ndarray
    final_loss: float
    loss_trace: list
    stage_history: list
    accepted_trace: list
    initially_correct: bool
    mode: str
    seed: int
    epsilon: float

    def to_json_dict(self):
        return {
            "success": bool(self.success),
            "queries": int(self.queries),
            "final_loss": float(self.final_loss),
            "loss_trace": [[int(q), float(l)] for q, l in self.loss_trace],
            "stage_history": [
                {
                    "block_size": int(s.block_size),
                    "mode": s.mode,
                    "accepted": int(s.accepted),
                    "queries": int(s.queries),
                }
                for s in self.stage_history
            ],
            "accepted_trace": [
                {
                    "block_size": int(b),
                    "mode": m,
                    "block": [int(i), int(j), int(k)],
                    "query": int(q),
                }
                for b, m, (i, j, k), q in self.accepted_trace
            ],
            "initially_correct": bool(self.initially_correct),
            "mode": self.mode,
            "seed": int(self.seed),
            "epsilon": float(self.epsilon),
            "final_image": {
                "shape": list(self.final_image.shape),
                "pixels": self.final_image.ravel().tolist(),
            },
        }


class AttackSucceeded(Exception):
    """Internal control flow: raised by the session on the first adversarial query."""

    def __init__(self, image, loss):
        super().__init__("attack succeeded")
        self.image = image
        self.loss = loss


def check_success(logits, label, target=None):
    """Adversarial test on raw logits; argmax ties go to the lowest class."""
    pred = int(np.argmax(logits))
    if target is not None:
        return pred == target
    return pred != label


class AttackSession:
    """Per-run bookkeeping: loss evaluation, trace, and success detection."""

    def __init__(self, oracle, loss_spec, label, target):
        self.oracle = oracle
        self.loss_spec = loss_spec
        self.label = label
        self.target = target
        self.trace = []
        self.last_logits = None

    def eval_loss(self, image):
        logits = self.oracle.query(image)
        self.last_logits = logits
        loss = self.loss_spec.loss(logits)
        self.trace.append((self.oracle.queries_used, loss))
        if check_success(logits, self.label, self.target):
            raise AttackSucceeded(image, loss)
        return loss


@dataclass
class AttackState:
    x: np.ndarray
    loss: float
    signs: np.ndarray = None  # flip runs: pre-projection perturbation field
    accepted_trace: list = field(default_factory=list)


@dataclass
class GpFitState:
    """Hyperparameters and optimizer moments; lives for one block-size stage."""

    hp: gp.GpHyperparams = field(default_factory=gp.GpHyperparams.default)
    adam: gp.AdamState = field(default_factory=gp.AdamState)


def latin_hypercube_init(actions, m, rng, grid):
    """Select up to m distinct actions by stratified (i, j) sampling.

    One LHS point per row stratum with a column permutation; each point takes
    the nearest untried action, preferring actions inside the point's own
    cell so the chosen strata stay distinct on full grids. Distance ties go
    to the lower channel, then the lower linear index.
    """
    if not actions:
        return []
    m = min(m, len(actions))
    if m < 1:
        return []
    perm = rng.permutation(m)
    u_row = rng.random(m)
    u_col = rng.random(m)
    cell_h = grid.h / m
    cell_w = grid.w / m
    untried = {grid.linear_index(a.block): a for a in actions}
    selected = []
    for r in range(m):
        if not untried:
            break
        pi = (r + u_row[r]) * cell_h
        pj = (perm[r] + u_col[r]) * cell_w
        lo_i, hi_i = r * cell_h, (r + 1) * cell_h
        lo_j, hi_j = perm[r] * cell_w, (perm[r] + 1) * cell_w
        in_cell = [
            (idx, a)
            for idx, a in untried.items()
            if lo_i <= a.block.i < hi_i and lo_j <= a.block.j < hi_j
        ]
        pool = in_cell if in_cell else list(untried.items())

        def distance_key(item):
            idx, a = item
            d2 = (a.block.i - pi) ** 2 + (a.block.j - pj) ** 2
            return (d2, a.block.k, idx)

        idx, action = min(pool, key=distance_key)
        del untried[idx]
        selected.append(action)
    return selected


def corrattack_stage(state, actions, features, grid, config, session, alpha, fit, rng,
                     origin, checker=None):
    """One Bayesian-optimization pass over a fixed action set.

    Seeds the window with Latin-hypercube evaluations, then repeatedly fits
    the GP (one optimizer step), scores EI for every untried candidate in
    de-standardized units, evaluates the argmax action, accepts it only on a
    strict loss decrease, and updates the window with forgetting and locality
    invalidation. Stops when the best EI falls below the threshold, when
    candidates run out, or when success/budget interrupts via exceptions.
    Returns the number of accepted actions.
    """
    if not actions:
        return 0
    m = config.samples_for(len(actions))
    tau = config.window_for(len(actions))
    window = SampleSet(tau)
    linear = [grid.linear_index(a.block) for a in actions]
    lin_of = dict(zip(map(id, actions), linear))

    def evaluate(action):
        before = session.oracle.queries_used
        res = evaluate_difference(
            session.eval_loss, state.x, state.loss, origin, config.epsilon, grid, action
        )
        if checker is not None:
            checker.after_evaluation(action, res, session.oracle.queries_used - before)
        return res

    if len(actions) <= max(config.scan_threshold, 2 * m):
        # tiny action sets: a surrogate cannot beat enumeration priced at |A|
        # queries, so sweep-scan until a sweep accepts nothing
        return _sweep_scan(state, actions, grid, session, rng, evaluate, checker, alpha)

    accepted_count = 0
    for action in latin_hypercube_init(actions, m, rng, grid):
        res = evaluate(action)
        window.insert(features[lin_of[id(action)]], action.block, res.g)

    consumed = set()
    # An action leaves the candidate set once its difference has been checked
    # at the present state. An acceptance perturbs the difference function
    # mostly near the accepted block, so it re-opens the alpha-neighborhood
    # immediately (chaining along veins of good blocks); drift further away is
    # caught by full re-sweeps, granted only while the pass keeps accepting.
    # Initialization samples were never acceptance-checked, so observed
    # winners stay selectable from the start.
    checked = set()
    accepted_since_sweep = 0
    while True:
        candidates = [
            a
            for a in actions
            if lin_of[id(a)] not in consumed and lin_of[id(a)] not in checked
        ]
        if not candidates:
            if accepted_since_sweep:
                checked.clear()
                accepted_since_sweep = 0
                continue
            break
        data = gp.GpDataset.from_raw(window.features_matrix(), window.raw_values())
        if len(data) >= 2:
            fit.hp = gp.fit_step(fit.hp, data, fit.adam)
            if checker is not None and config.validate:
                assert fit.hp.within_bounds(), "fitted hyperparameters left bounds"
        feats = np.stack([features[lin_of[id(a)]] for a in candidates])
        # the null action always achieves g = 0, so the incumbent never sits
        # above zero even when the window holds only rejected samples
        best = min(0.0, window.min_g()) if len(window) else 0.0
        mean_s, var_s = gp.posterior_batch(fit.hp, data, feats)
        ei = ei_batch(
            mean_s * data.raw_std + data.raw_mean, var_s * data.raw_std**2, best
        )
        pick = int(np.argmax(ei))  # candidates are in linear-index order
        if ei[pick] < config.ei_threshold:
            break
        action = candidates[pick]
        res = evaluate(action)
        checked.add(lin_of[id(action)])
        accepted = res.g < 0.0
        if accepted:
            checked = {
                lin
                for lin in checked
                if abs(grid.block_at(lin).i - action.block.i)
                + abs(grid.block_at(lin).j - action.block.j)
                > alpha
            }
            accepted_since_sweep += 1
            state.x = res.image
            state.loss = res.loss
            accepted_count += 1
            state.accepted_trace.append(
                (
                    grid.block_size,
                    action.kind if action.kind == "diff" else _flip_pass_name(action),
                    (action.block.i, action.block.j, action.block.k),
                    session.oracle.queries_used,
                )
            )
            if action.kind == "flip":
                consumed.add(lin_of[id(action)])
                if state.signs is not None:
                    sl = grid.pixel_slice(action.block)
                    state.signs[sl] = -state.signs[sl]
        update_samples(window, accepted, action.block, features[lin_of[id(action)]], res.g, alpha)
        if checker is not None:
            checker.after_update(state, window, action, accepted, alpha, grid)
    return accepted_count


def _flip_pass_name(action):
    return "flip_neg" if action.step > 0 else "flip_pos"


def _sweep_scan(state, actions, grid, session, rng, evaluate, checker, alpha):
    """Exhaustively try every non-consumed action in random order, repeating
    whole sweeps while at least one action keeps being accepted."""
    consumed = set()
    accepted_count = 0
    while True:
        accepted_this_sweep = 0
        order = rng.permutation(len(actions))
        for idx in order:
            action = actions[int(idx)]
            lin = grid.linear_index(action.block)
            if lin in consumed:
                continue
            res = evaluate(action)
            if res.g < 0.0:
                state.x = res.image
                state.loss = res.loss
                accepted_this_sweep += 1
                accepted_count += 1
                state.accepted_trace.append(
                    (
                        grid.block_size,
                        action.kind if action.kind == "diff" else _flip_pass_name(action),
                        (action.block.i, action.block.j, action.block.k),
                        session.oracle.queries_used,
                    )
                )
                if action.kind == "flip":
                    consumed.add(lin)
                    if state.signs is not None:
                        sl = grid.pixel_slice(action.block)
                        state.signs[sl] = -state.signs[sl]
            if checker is not None:
                checker.after_scan_step(state, grid)
        if accepted_this_sweep == 0:
            break
    return accepted_count


class InvariantChecker:
    """Asserts the run invariants after every evaluation and window update."""

    def __init__(self, origin, config):
        self.origin = origin
        self.config = config
        self.prev_loss = None

    def after_evaluation(self, action, res, counter_delta):
        if not self.config.validate:
            return
        expected = 1 if action.kind == "flip" else 2
        assert res.queries == expected and counter_delta == expected, "query cost mismatch"
        x = res.image
        assert np.max(np.abs(x - self.origin)) <= self.config.epsilon + EPS_FEASIBILITY, (
            "epsilon feasibility violated"
        )
        assert np.min(x) >= 0.0 and np.max(x) <= 1.0, "pixel range violated"

    def after_scan_step(self, state, grid):
        if not self.config.validate:
            return
        if self.prev_loss is not None:
            assert state.loss <= self.prev_loss, "cached loss increased"
        self.prev_loss = state.loss
        self._check_signs(state, grid)

    def after_update(self, state, window, action, accepted, alpha, grid):
        if not self.config.validate:
            return
        assert len(window) <= window.capacity, "window over capacity"
        if accepted:
            for e in window.entries:
                dist = abs(e.block.i - action.block.i) + abs(e.block.j - action.block.j)
                assert dist > alpha, "alpha-ball not emptied after acceptance"
            if self.prev_loss is not None:
                assert state.loss < self.prev_loss, "accepted step did not decrease loss"
        if self.prev_loss is not None:
            assert state.loss <= self.prev_loss, "cached loss increased"
        self.prev_loss = state.loss
        self._check_signs(state, grid)

    def _check_signs(self, state, grid):
        if state.signs is None:
            return
        assert np.all(
            np.abs(state.signs) == self.config.epsilon
        ), "flip sign field not +/-epsilon"
        b = grid.block_size
        blocks = state.signs.reshape(grid.c, grid.h, b, grid.w, b)
        assert np.all(
            blocks == blocks[:, :, :1, :, :1]
        ), "flip signs not block-constant"


def _finish(session, state, succeeded, initially_correct, config, stage_history):
    if succeeded is not None:
        final_image, final_loss, success = succeeded.image, succeeded.loss, True
    else:
        final_image, final_loss, success = state.x, state.loss, False
    return AttackResult(
        success=success,
        queries=session.oracle.queries_used,
        final_image=final_image,
        final_loss=final_loss,
        loss_trace=session.trace,
        stage_history=stage_history,
        accepted_trace=state.accepted_trace,
        initially_correct=initially_correct,
        mode=config.mode,
        seed=config.seed,
        epsilon=config.epsilon,
    )


def _run_hierarchical(oracle, x, y, config):
    origin = np.asarray(x, dtype=np.float64)
    loss_spec = LossSpec(label=y, target=config.target, margin=config.margin)
    session = AttackSession(oracle, loss_spec, y, config.target)
    rng = np.random.default_rng(config.seed)
    checker = InvariantChecker(origin, config)
    stage_history = []
    state = AttackState(x=origin, loss=0.0)
    try:
        state.loss = session.eval_loss(origin)  # initial classification check
    except AttackSucceeded as s:
        correct = int(np.argmax(session.last_logits)) == y
        return _finish(session, state, s, correct, config, stage_history)
    except BudgetExhaustedError:
        return _finish(session, state, None, False, config, stage_history)
    if int(np.argmax(session.last_logits)) != y:
        # misclassified from the start, but not mode-successful (targeted runs)
        return _finish(session, state, None, False, config, stage_history)

    grid = make_grid(origin.shape, config.initial_block)
    succeeded = None
    try:
        if config.mode == "flip":
            sign_blocks = rng.integers(0, 2, size=(grid.c, grid.h, grid.w)) * 2 - 1
            b = grid.block_size
            state.signs = config.epsilon * np.repeat(
                np.repeat(sign_blocks.astype(np.float64), b, axis=1), b, axis=2
            )
            x0 = project_ball(origin + state.signs, origin, config.epsilon)
            state.loss = session.eval_loss(x0)  # one query to measure the init
            state.x = x0
        checker.prev_loss = state.loss
        while True:
            pca = pca_first_component(origin, grid)
            features = block_features(grid, pca)
            alpha = config.alpha_for(grid.block_size)
            fit = GpFitState()
            accepted_total = 0
            passes = ("flip_neg", "flip_pos") if config.mode == "flip" else ("diff",)
            for pass_mode in passes:
                actions = make_action_set(
                    pass_mode, grid, state.x, origin, config.epsilon, config.eta
                )
                before = session.oracle.queries_used
                accepted = corrattack_stage(
                    state, actions, features, grid, config, session, alpha, fit, rng,
                    origin, checker,
                )
                stage_history.append(
                    StageRecord(
                        grid.block_size,
                        pass_mode,
                        accepted,
                        session.oracle.queries_used - before,
                    )
                )
                accepted_total += accepted
            if grid.block_size > MIN_BLOCK_SIZE:
                grid = split_blocks(grid)
            elif accepted_total == 0:
                break
    except AttackSucceeded as s:
        succeeded = s
    except BudgetExhaustedError:
        pass
    return _finish(session, state, succeeded, True, config, stage_history)


def hierarchical_diff(oracle, x, y, config):
    """Coarse-to-fine attack driving +/-eta finite-difference block actions."""
    if config.mode != "diff":
        raise ConfigError("config.mode must be 'diff' for hierarchical_diff")
    return _run_hierarchical(oracle, x, y, config)


def hierarchical_flip(oracle, x, y, config):
    """Coarse-to-fine attack over the +/-epsilon block sign pattern."""
    if config.mode != "flip":
        raise ConfigError("config.mode must be 'flip' for hierarchical_flip")
    return _run_hierarchical(oracle, x, y, config)


def run_attack(oracle, x, y, config):
    if config.mode == "flip":
        return hierarchical_flip(oracle, x, y, config)
    return hierarchical_diff(oracle, x, y, config)
