"""Training-free architecture search over delayed-skip configurations.

Candidates are drawn uniformly from a constrained space (depth, widths, skip
placement, delays) and rejected until they fit the parameter budget. Each
candidate is scored at initialization from one probe batch: per spiking layer,
flatten each sample's spike train over the window, count pairwise agreements
restricted to the positions that were active for at least one probe sample
(so shared silence earns nothing), normalize by the active-position count,
sum the resulting layer kernels, and take the log-determinant. Networks whose
probes produce diverse spike patterns get well-conditioned kernels and high
scores; networks that collapse probes onto identical patterns are rank
deficient and score near the regularization floor.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .graph import ArchSpec, LayerSpec, Network, TSkip, param_count, run_forward, validate

KERNEL_EPS = 1e-6


class SearchError(Exception):
    pass


@dataclass(frozen=True)
class SearchSpace:
    """Sampling ranges for one family of architectures (all bounds inclusive)."""

    input_shape: tuple[int, ...]
    out_units: int
    T: int
    depth_range: tuple[int, int] = (3, 5)
    width_range: tuple[int, int] = (32, 256)
    kind: str = "dense"  # "dense" | "conv2d"
    kernel_choices: tuple[int, ...] = (3, 5)
    stride_choices: tuple[int, ...] = (1, 2)
    tskip_count_range: tuple[int, int] = (1, 2)
    delta_t_range: tuple[int, int] = (1, 1)
    merge_choices: tuple[str, ...] = ("concat",)
    alpha: bool = False
    param_budget: int | None = None
    reset: str = "soft"
    leak_init: float = 0.6
    threshold_init: float = 1.0

    def __post_init__(self):
        lo, hi = self.delta_t_range
        if not 1 <= lo <= hi <= self.T - 1:
            raise SearchError(
                f"delta_t range {self.delta_t_range} must lie within [1, T-1={self.T - 1}]")
        if self.param_budget is not None and self.param_budget <= 0:
            raise SearchError("param budget must be positive")


@dataclass(frozen=True)
class CandidateScore:
    spec: ArchSpec
    score: float
    seed: int
    degenerate: bool = False


def _draw_spec(space: SearchSpace, rng: np.random.Generator) -> ArchSpec:
    depth = int(rng.integers(space.depth_range[0], space.depth_range[1] + 1))
    layers = []
    for i in range(depth - 1):
        width = int(rng.integers(space.width_range[0], space.width_range[1] + 1))
        if space.kind == "dense":
            layers.append(LayerSpec(kind="dense", out=width))
        else:
            k = int(rng.choice(space.kernel_choices))
            s = int(rng.choice(space.stride_choices))
            layers.append(LayerSpec(kind="conv2d", out=width, kernel=k, stride=s))
    layers.append(LayerSpec(kind="dense", out=space.out_units, activation="li"))

    n_skips = int(rng.integers(space.tskip_count_range[0], space.tskip_count_range[1] + 1))
    pairs = [(o, d) for o in range(depth + 1) for d in range(1, depth + 1) if o != d]
    edges = []
    if n_skips > len(pairs):
        n_skips = len(pairs)
    chosen = rng.choice(len(pairs), size=n_skips, replace=False) if n_skips else []
    for c in chosen:
        origin, dest = pairs[int(c)]
        dt = int(rng.integers(space.delta_t_range[0], space.delta_t_range[1] + 1))
        merge = str(rng.choice(space.merge_choices))
        edges.append(TSkip(origin=origin, dest=dest, delta_t=dt, merge=merge,
                           alpha=space.alpha))
    return ArchSpec(input_shape=space.input_shape, layers=tuple(layers),
                    tskips=tuple(edges), T=space.T, reset=space.reset,
                    leak_init=space.leak_init, threshold_init=space.threshold_init)


def sample(space: SearchSpace, rng: np.random.Generator,
           max_attempts: int = 1000) -> ArchSpec:
    """Uniform draw per dimension, rejection-resampled until the candidate is
    valid and fits the parameter budget."""
    for _ in range(max_attempts):
        spec = _draw_spec(space, rng)
        if validate(spec):
            continue
        if space.param_budget is not None and param_count(spec) > space.param_budget:
            continue
        return spec
    raise SearchError(f"no admissible architecture found in {max_attempts} attempts; "
                      "the budget may be infeasible")


def _binarize(outputs_over_time: list[np.ndarray]) -> np.ndarray:
    """Stack per-step layer outputs [t][B, ...] into (B, T * features) bits."""
    flat = [o.reshape(o.shape[0], -1) for o in outputs_over_time]
    return (np.concatenate(flat, axis=1) > 0).astype(np.float64)


def sahd_kernel(layer_trains: list[np.ndarray]) -> tuple[np.ndarray, bool]:
    """Pairwise agreement kernel over active positions, summed across layers.

    For each layer: restrict to columns where any sample spiked, count
    matching bits per sample pair, and divide by the active-column count.
    Returns the kernel and a degeneracy flag (True if every layer was silent).
    """
    b = layer_trains[0].shape[0]
    kernel = np.zeros((b, b))
    any_active = False
    for bits in layer_trains:
        active = bits.any(axis=0)
        n_active = int(active.sum())
        if n_active == 0:
            continue
        any_active = True
        sub = bits[:, active]
        agree = sub @ sub.T + (1.0 - sub) @ (1.0 - sub).T
        kernel += agree / max(1, n_active)
    return kernel, not any_active


def sahd_score(spec: ArchSpec, probe_batch: np.ndarray, seed: int = 0) -> CandidateScore:
    """Score an untrained architecture by the diversity of the spike patterns
    its initialization produces on a probe batch."""
    if probe_batch.shape[1] < 2:
        raise SearchError("probe batch must contain at least 2 samples")
    net = Network.build(spec, seed=seed)
    lif_layers = [i for i, l in enumerate(spec.layers, start=1) if l.activation == "lif"]
    if not lif_layers:
        raise SearchError("architecture has no spiking layers to score")
    per_layer: dict[int, list[np.ndarray]] = {i: [] for i in lif_layers}
    run_forward(net, probe_batch, mode="eval", collect=per_layer)
    trains = [_binarize(per_layer[l]) for l in sorted(per_layer)]
    kernel, degenerate = sahd_kernel(trains)
    b = kernel.shape[0]
    sign, logdet = np.linalg.slogdet(kernel + KERNEL_EPS * np.eye(b))
    score = float(logdet) if sign > 0 else float("-inf")
    if not math.isfinite(score):
        score = b * math.log(KERNEL_EPS)
        degenerate = True
    return CandidateScore(spec=spec, score=score, seed=seed, degenerate=degenerate)


def random_search(space: SearchSpace, n_candidates: int, probe_batch: np.ndarray,
                  k: int, master_seed: int = 0,
                  parallel: int | None = None) -> list[CandidateScore]:
    """Sample and score n candidates, return the k best.

    Rankings are a pure function of (space, master_seed, probe_batch): every
    candidate gets its own pre-split seed, so serial and parallel execution
    agree exactly.
    """
    if n_candidates < k:
        raise SearchError(f"n_candidates={n_candidates} < k={k}")
    seeds = np.random.SeedSequence(master_seed).spawn(n_candidates)
    specs = []
    for ss in seeds:
        sample_ss, weight_ss = ss.spawn(2)
        rng = np.random.default_rng(sample_ss)
        weight_seed = int(np.random.default_rng(weight_ss).integers(2**31 - 1))
        specs.append((sample(space, rng), weight_seed))

    def score_one(item):
        spec, seed = item
        return sahd_score(spec, probe_batch, seed=seed)

    if parallel and parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            scored = list(pool.map(score_one, specs))
    else:
        scored = [score_one(item) for item in specs]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i].score, i))
    return [scored[i] for i in order[:k]]


def kendall_tau(a, b) -> float:
    """Kendall rank correlation with tie correction (tau-b)."""
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 observations")
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = a[i] - a[j]
            db = b[i] - b[j]
            if da == 0 and db == 0:
                ties_a += 1
                ties_b += 1
            elif da == 0:
                ties_a += 1
            elif db == 0:
                ties_b += 1
            elif (da > 0) == (db > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_a) * (n0 - ties_b))
    if denom == 0:
        raise ValueError("tau undefined: one ranking is constant")
    return (concordant - discordant) / denom


def count_tskip_space(n_layers: int, n_delay_values: int) -> tuple[int, int, int]:
    """Size of the raw skip-configuration space for a stack of n_layers
    (plus the input node): ordered origin/destination pairs, pairs annotated
    with one of n_delay_values delays, and the power set of annotated slots."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if n_delay_values < 1:
        raise ValueError("need at least one delay value")
    nodes = n_layers + 1
    edge_slots = nodes * (nodes - 1)
    annotated = edge_slots * n_delay_values
    return edge_slots, annotated, 2 ** annotated


# Constraint presets: sequence length, admissible delays, and parameter budget
# per task family.
PRESETS: dict[str, dict] = {
    "flow": {"T": 10, "delta_t_range": (2, 6), "param_budget": None, "kind": "conv2d",
             "input_shape": (2, 16, 16), "out_units": 2, "reset": "hard"},
    "dvs": {"T": 30, "delta_t_range": (5, 14), "param_budget": 600_000, "kind": "conv2d",
            "input_shape": (2, 64, 64), "out_units": 11, "reset": "soft"},
    "shd": {"T": 99, "delta_t_range": (10, 45), "param_budget": 300_000, "kind": "dense",
            "input_shape": (700,), "out_units": 20, "reset": "soft"},
    "ssc": {"T": 99, "delta_t_range": (10, 45), "param_budget": 300_000, "kind": "dense",
            "input_shape": (700,), "out_units": 35, "reset": "soft"},
}


def preset_space(name: str, **overrides) -> SearchSpace:
    if name not in PRESETS:
        raise SearchError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = dict(PRESETS[name])
    cfg.update(overrides)
    cfg["input_shape"] = tuple(cfg["input_shape"])
    return SearchSpace(**cfg)
