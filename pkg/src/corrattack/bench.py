"""Benchmark harness: dataset ingestion, seeded benchmark execution, the
uniform-random block-search baseline, and the GP+EI rank probe on synthetic
reward fields.

Reports are written as a fixed-column CSV plus a JSON summary; with wall-time
recording disabled, reruns against the synthetic oracle are byte-identical.
"""

import concurrent.futures
import json
import math
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image as PilImage
from scipy.ndimage import gaussian_filter

from . import gp
from ._kernels import ei_batch
from .bandit import (
    ActionSpec,
    SampleSet,
    block_features,
    evaluate_difference,
    make_action_set,
    pca_first_component,
)
from .engine import (
    AttackConfig,
    AttackSession,
    AttackState,
    AttackSucceeded,
    GpFitState,
    InvariantChecker,
    MIN_BLOCK_SIZE,
    StageRecord,
    _finish,
    latin_hypercube_init,
    run_attack,
)
from .errors import BudgetExhaustedError, ConfigError
from .image import BlockGrid, make_grid, project_ball, split_blocks
from .oracle import LossSpec, RemoteOracle, SyntheticOracle, make_synthetic_model

CSV_HEADER = "image_id,attempted,success,queries,final_loss,wall_ms"

QUERY_LEVELS = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 3000, 5000, 10000]


# ---------------------------------------------------------------------------
# dataset handling


def save_image_png(path, image):
    """Write a [0,1] float image as an 8-bit PNG (channel-last on disk)."""
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        PilImage.fromarray(arr[0], mode="L").save(path)
    elif arr.shape[0] == 3:
        PilImage.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported channel count {arr.shape[0]}")


def load_image_png(path, resize_to=None):
    """Read a PNG into a (C, H, W) float array in [0,1], optionally resized."""
    with PilImage.open(path) as img:
        img = img.convert("RGB") if img.mode not in ("L",) else img
        if resize_to is not None:
            want = (resize_to[2], resize_to[1])  # PIL wants (width, height)
            if img.size != want:
                img = img.resize(want, PilImage.BILINEAR)
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = arr.transpose(2, 0, 1)
    if resize_to is not None and arr.shape[0] != resize_to[0]:
        raise ValueError(f"{path}: expected {resize_to[0]} channels, got {arr.shape[0]}")
    return arr


def nearest_divisible_shape(shape, block_size):
    c, height, width = shape
    def snap(side):
        return max(block_size, int(round(side / block_size)) * block_size)
    return (c, snap(height), snap(width))


def generate_synthetic_dataset(out_dir, model, num_images=20, shape=(3, 32, 32), seed=7):
    """Seeded uniform-noise PNGs labeled by the model's own prediction.

    Pixels are 8-bit quantized so the files round-trip bit-exactly. Targets
    are the next class index, for targeted runs.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for n in range(num_images):
        quantized = rng.integers(0, 256, size=shape).astype(np.float64) / 255.0
        name = f"img_{n:03d}.png"
        save_image_png(out_dir / name, quantized)
        label = int(np.argmax(model.logits(quantized)))
        target = (label + 1) % model.num_classes
        lines.append(f"{name},{label},{target}")
    labels_path = out_dir / "labels.csv"
    labels_path.write_text("filename,label,target\n" + "\n".join(lines) + "\n")
    return labels_path


def load_dataset(directory, labels_file, num_classes=None, resize_to=None):
    """Load (image, label, target, image_id) records sorted by filename."""
    rows = []
    text = labels_file.read_text().splitlines()
    for lineno, raw in enumerate(text, 1):
        s = raw.strip()
        if not s or s.lower().startswith("filename"):
            continue
        parts = [p.strip() for p in s.split(",")]
        if len(parts) < 2:
            raise ConfigError(f"{labels_file}:{lineno}: expected filename,label[,target]")
        name, label = parts[0], int(parts[1])
        target = int(parts[2]) if len(parts) > 2 and parts[2] != "" else None
        if num_classes is not None:
            if not 0 <= label < num_classes:
                raise ConfigError(f"{labels_file}:{lineno}: label {label} out of range")
            if target is not None and not 0 <= target < num_classes:
                raise ConfigError(f"{labels_file}:{lineno}: target {target} out of range")
        path = directory / name
        if not path.exists():
            raise ConfigError(f"{labels_file}:{lineno}: missing image file {path}")
        rows.append((name, label, target))
    rows.sort(key=lambda r: r[0])
    records = []
    for name, label, target in rows:
        try:
            image = load_image_png(directory / name, resize_to)
        except Exception as exc:
            raise ConfigError(f"cannot decode image {directory / name}: {exc}")
        records.append((image, label, target, name))
    return records


# ---------------------------------------------------------------------------
# random block-search baseline


def random_block_baseline(oracle, x, y, config):
    """Hierarchical flip search with uniform-random action order.

    Identical action space, initialization, acceptance rule and stage
    structure as the flip attack; per pass every candidate is tried once in
    a random order instead of by EI, so there is no early stopping.
    """
    if config.mode != "flip":
        raise ConfigError("random_block_baseline runs in flip mode")
    origin = np.asarray(x, dtype=np.float64)
    loss_spec = LossSpec(label=y, target=config.target, margin=config.margin)
    session = AttackSession(oracle, loss_spec, y, config.target)
    rng = np.random.default_rng(config.seed)
    checker = InvariantChecker(origin, config)
    stage_history = []
    state = AttackState(x=origin, loss=0.0)
    try:
        state.loss = session.eval_loss(origin)
    except AttackSucceeded as s:
        correct = int(np.argmax(session.last_logits)) == y
        return _finish(session, state, s, correct, config, stage_history)
    except BudgetExhaustedError:
        return _finish(session, state, None, False, config, stage_history)
    if int(np.argmax(session.last_logits)) != y:
        return _finish(session, state, None, False, config, stage_history)

    grid = make_grid(origin.shape, config.initial_block)
    succeeded = None
    try:
        sign_blocks = rng.integers(0, 2, size=(grid.c, grid.h, grid.w)) * 2 - 1
        b = grid.block_size
        state.signs = config.epsilon * np.repeat(
            np.repeat(sign_blocks.astype(np.float64), b, axis=1), b, axis=2
        )
        x0 = project_ball(origin + state.signs, origin, config.epsilon)
        state.loss = session.eval_loss(x0)
        state.x = x0
        checker.prev_loss = state.loss
        while True:
            accepted_total = 0
            for pass_mode in ("flip_neg", "flip_pos"):
                actions = make_action_set(
                    pass_mode, grid, state.x, origin, config.epsilon, config.eta
                )
                before = session.oracle.queries_used
                accepted = 0
                for idx in rng.permutation(len(actions)):
                    action = actions[int(idx)]
                    counter_before = session.oracle.queries_used
                    res = evaluate_difference(
                        session.eval_loss, state.x, state.loss, origin, config.epsilon,
                        grid, action,
                    )
                    checker.after_evaluation(
                        action, res, session.oracle.queries_used - counter_before
                    )
                    if res.g < 0.0:
                        state.x = res.image
                        state.loss = res.loss
                        accepted += 1
                        sl = grid.pixel_slice(action.block)
                        state.signs[sl] = -state.signs[sl]
                        if config.validate:
                            assert state.loss < checker.prev_loss
                    if config.validate and checker.prev_loss is not None:
                        assert state.loss <= checker.prev_loss
                    checker.prev_loss = state.loss
                stage_history.append(
                    StageRecord(
                        grid.block_size, pass_mode, accepted,
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


# ---------------------------------------------------------------------------
# benchmark execution


@dataclass
class BenchConfig:
    algorithm: str = "corrattack"
    mode: str = "flip"
    epsilon: float = 0.05
    eta: float = 0.03
    initial_block: int = 32
    ei_threshold: float = 1e-4
    sample_ratio: float = 0.03
    window_ratio: float = 0.09
    query_budget: int = 10000
    margin: float = 0.05
    seed: int = 0
    targeted: bool = False
    validate: bool = True
    synthetic: str = "linear"
    oracle_url: str = ""
    num_classes: int = 10
    input_height: int = 32
    input_width: int = 32
    dataset_dir: str = ""
    labels_file: str = ""
    num_images: int = 20
    workers: int = 1
    record_wall_time: bool = True

    def attack_config(self, seed, target=None):
        return AttackConfig(
            epsilon=self.epsilon,
            eta=self.eta,
            initial_block=self.initial_block,
            ei_threshold=self.ei_threshold,
            sample_ratio=self.sample_ratio,
            window_ratio=self.window_ratio,
            query_budget=self.query_budget,
            margin=self.margin,
            mode=self.mode,
            target=target,
            seed=seed,
            validate=self.validate,
        )


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_bool(value):
    v = value.strip().lower()
    if v not in _BOOL_VALUES:
        raise ValueError(f"expected a boolean, got {value!r}")
    return _BOOL_VALUES[v]


_CONFIG_PARSERS = {
    "algorithm": str,
    "mode": str,
    "epsilon": float,
    "eta": float,
    "initial_block": int,
    "ei_threshold": float,
    "sample_ratio": float,
    "window_ratio": float,
    "query_budget": int,
    "margin": float,
    "seed": int,
    "targeted": _parse_bool,
    "validate": _parse_bool,
    "synthetic": str,
    "oracle_url": str,
    "num_classes": int,
    "input_height": int,
    "input_width": int,
    "dataset_dir": str,
    "labels_file": str,
    "num_images": int,
    "workers": int,
    "record_wall_time": _parse_bool,
}


def parse_bench_config(path):
    """Parse the flat key = value configuration file with line diagnostics."""
    values = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = s.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    try:
        return BenchConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}")


@dataclass
class ImageRecord:
    image_id: str
    attempted: bool
    success: bool
    queries: int
    final_loss: float
    wall_ms: float


@dataclass
class BenchmarkReport:
    records: list
    config: BenchConfig
    note: str = "mean/median queries are computed over successful attacks only"

    @property
    def attempted(self):
        return [r for r in self.records if r.attempted]

    @property
    def successes(self):
        return [r for r in self.attempted if r.success]

    def aggregates(self):
        attempted = self.attempted
        successes = self.successes
        rate = len(successes) / len(attempted) if attempted else 0.0
        qs = sorted(r.queries for r in successes)
        mean_q = float(np.mean(qs)) if qs else None
        median_q = float(np.median(qs)) if qs else None
        budget = self.config.query_budget
        levels = sorted({lv for lv in QUERY_LEVELS if lv <= budget} | {budget})
        curve = []
        for lv in levels:
            won = sum(1 for r in successes if r.queries <= lv)
            curve.append([lv, won / len(attempted) if attempted else 0.0])
        return {
            "images": len(self.records),
            "attempted": len(attempted),
            "successes": len(successes),
            "success_rate": rate,
            "mean_queries": mean_q,
            "median_queries": median_q,
            "success_rate_curve": curve,
        }

    def to_csv(self):
        lines = [CSV_HEADER]
        for r in sorted(self.records, key=lambda r: r.image_id):
            lines.append(
                f"{r.image_id},{int(r.attempted)},{int(r.success)},{r.queries},"
                f"{r.final_loss!r},{r.wall_ms:.3f}"
            )
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        return {
            "note": self.note,
            "config": {k: getattr(self.config, k) for k in _CONFIG_PARSERS},
            "aggregates": self.aggregates(),
            "records": [
                {
                    "image_id": r.image_id,
                    "attempted": r.attempted,
                    "success": r.success,
                    "queries": r.queries,
                    "final_loss": r.final_loss,
                    "wall_ms": r.wall_ms,
                }
                for r in sorted(self.records, key=lambda r: r.image_id)
            ],
        }


def _make_oracle(config, http_session=None):
    if config.oracle_url:
        return RemoteOracle(config.oracle_url, budget=config.query_budget, session=http_session)
    if config.synthetic:
        model = make_synthetic_model(
            config.synthetic,
            num_classes=config.num_classes,
            input_shape=(3, config.input_height, config.input_width),
        )
        return SyntheticOracle(model, budget=config.query_budget)
    raise ConfigError("either oracle_url or synthetic must be set")


def _attack_one(config, image, label, target, image_id, index, http_session=None):
    oracle = _make_oracle(config, http_session)
    attack_cfg = config.attack_config(seed=config.seed ^ index, target=target)
    started = time.perf_counter()
    if config.algorithm == "random_baseline":
        result = random_block_baseline(oracle, image, label, attack_cfg)
    elif config.algorithm == "corrattack":
        result = run_attack(oracle, image, label, attack_cfg)
    else:
        raise ConfigError(f"unknown algorithm {config.algorithm!r}")
    wall_ms = (time.perf_counter() - started) * 1000.0 if config.record_wall_time else 0.0
    return ImageRecord(
        image_id=image_id,
        attempted=result.initially_correct,
        success=result.success and result.initially_correct,
        queries=result.queries,
        final_loss=result.final_loss,
        wall_ms=wall_ms,
    )


def run_benchmark(config, dataset=None):
    """Attack every dataset image and aggregate the outcome records.

    Initially misclassified images are recorded but excluded from the rate
    denominators. Per-image seeds are config.seed XOR the dataset index.
    """
    if dataset is None:
        from pathlib import Path

        if not config.dataset_dir or not config.labels_file:
            raise ConfigError("dataset_dir and labels_file are required")
        resize = nearest_divisible_shape(
            (3, config.input_height, config.input_width), config.initial_block
        )
        dataset = load_dataset(
            Path(config.dataset_dir),
            Path(config.labels_file),
            num_classes=config.num_classes,
            resize_to=resize,
        )
    dataset = dataset[: config.num_images] if config.num_images else dataset
    http_session = None
    jobs = [
        (img, label, target if config.targeted else None, image_id, idx)
        for idx, (img, label, target, image_id) in enumerate(dataset)
    ]
    if config.workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as pool:
            records = list(
                pool.map(
                    lambda j: _attack_one(config, *j, http_session=http_session), jobs
                )
            )
    else:
        records = [_attack_one(config, *j, http_session=http_session) for j in jobs]
    return BenchmarkReport(records=records, config=config)


def write_report(report, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    json_path = out_dir / "report.json"
    csv_path.write_text(report.to_csv())
    json_path.write_text(
        json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
    )
    return csv_path, json_path


# ---------------------------------------------------------------------------
# rank probe on frozen reward fields


@dataclass
class ProbeConfig:
    grid_h: int = 14
    grid_w: int = 14
    grid_c: int = 3
    block_size: int = 2
    seed: int = 0
    query_fraction: float = 0.15
    sample_ratio: float = 0.03
    window_ratio: float = 0.09
    field: str = "smooth"  # smooth | needle | constant
    corr_sigma: float = 2.0
    needle_block: tuple = (0, 0, 0)  # (i, j, k)


def make_reward_field(cfg):
    """Frozen per-block field; smooth fields carry planted spatial correlation."""
    shape = (cfg.grid_c, cfg.grid_h, cfg.grid_w)
    if cfg.field == "constant":
        return np.zeros(shape)
    if cfg.field == "needle":
        out = np.zeros(shape)
        i, j, k = cfg.needle_block
        out[k, i, j] = -1.0
        return out
    if cfg.field != "smooth":
        raise ConfigError(f"unknown field kind {cfg.field!r}")
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal(shape)
    smooth = gaussian_filter(noise, sigma=(0.5, cfg.corr_sigma, cfg.corr_sigma), mode="wrap")
    smooth -= smooth.mean()
    std = smooth.std()
    return smooth / std if std > 0 else smooth


def bo_rank_probe(cfg):
    """Drift-free GP+EI search over a frozen field; returns the rank trace.

    Every evaluation costs one probe query and is inserted into the window
    (nothing is ever accepted, so the field never moves). The trace holds
    (queries, normalized queries, best rank, normalized rank) per query,
    where rank counts strictly-better field values.
    """
    grid = BlockGrid(cfg.block_size, cfg.grid_h, cfg.grid_w, cfg.grid_c)
    field_values = make_reward_field(cfg)
    values = field_values.ravel()  # C-order matches linear block index
    n = values.shape[0]
    rng = np.random.default_rng(cfg.seed + 1_000_003)
    natural = rng.random(grid.image_shape)
    features = block_features(grid, pca_first_component(natural, grid))
    actions = [ActionSpec("diff", blk, 1.0) for blk in grid.blocks()]
    m = max(4, int(math.floor(cfg.sample_ratio * n + 0.5)))
    tau = max(12, int(math.floor(cfg.window_ratio * n + 0.5)))
    max_queries = max(m, int(math.ceil(cfg.query_fraction * n)))

    window = SampleSet(tau)
    fit = GpFitState()
    sorted_values = np.sort(values)
    trace = []
    state = {"queries": 0, "best": math.inf}
    tried = set()

    def observe(linear_idx, block, feature):
        g = float(values[linear_idx])
        state["queries"] += 1
        state["best"] = min(state["best"], g)
        rank = int(np.searchsorted(sorted_values, state["best"]))
        trace.append((state["queries"], state["queries"] / n, rank, rank / n))
        window.insert(feature, block, g)
        tried.add(linear_idx)

    for action in latin_hypercube_init(actions, min(m, max_queries), rng, grid):
        lin = grid.linear_index(action.block)
        observe(lin, action.block, features[lin])

    while state["queries"] < max_queries:
        data = gp.GpDataset.from_raw(window.features_matrix(), window.raw_values())
        if len(data) >= 2:
            fit.hp = gp.fit_step(fit.hp, data, fit.adam)
        # the field is frozen, so re-measuring a tried arm carries no information
        candidates = [a for a in actions if grid.linear_index(a.block) not in tried]
        if not candidates:
            break
        feats = np.stack([features[grid.linear_index(a.block)] for a in candidates])
        best = min(0.0, window.min_g()) if len(window) else 0.0
        mean_s, var_s = gp.posterior_batch(fit.hp, data, feats)
        ei = ei_batch(mean_s * data.raw_std + data.raw_mean, var_s * data.raw_std**2, best)
        pick = candidates[int(np.argmax(ei))]
        lin = grid.linear_index(pick.block)
        observe(lin, pick.block, features[lin])
    return trace


def probe_trace_csv(traces):
    """Stack per-seed probe traces into one CSV string."""
    lines = ["seed,query,query_norm,best_rank,rank_norm"]
    for seed, trace in traces:
        for q, qn, rank, rn in trace:
            lines.append(f"{seed},{q},{qn!r},{rank},{rn!r}")
    return "\n".join(lines) + "\n"
