"""Declarative layer graphs with temporally delayed skip connections, and
their unrolled execution over a spike sequence.

A network is an ordered stack of layers (index 0 is the network input) plus a
set of skip edges. Each edge carries its origin, destination, an explicit
delay in timesteps, a merge operator (channel concatenation or elementwise
addition), and an optional learnable blend between the origin's current and
delayed activations. Delayed payloads are served from per-layer ring buffers;
steps before the start of the sequence read zeros, and a buffer read from the
future is a hard error, which keeps the unrolled graph causal by construction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import (
    SurrogateConfig,
    Tensor,
    affine,
    concat,
    conv2d,
    bntt_step,
    relu,
    reshape,
    select_channels,
    sigmoid,
)
from .neuron import LifParams, LifState, leaky_integrate, lif_step

LAYER_KINDS = ("dense", "conv2d")
ACTIVATIONS = ("lif", "relu", "li", "linear")
MERGE_OPS = ("concat", "add")

_CONV_TOKEN = re.compile(r"^(\d+)c(\d+)s(\d+)$")


class GraphError(Exception):
    """Structural or runtime failure in a layer graph."""


class SpecValidationError(GraphError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid architecture: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out: int
    kernel: int | None = None
    stride: int | None = None
    activation: str = "lif"


@dataclass(frozen=True)
class TSkip:
    """One delayed skip edge between two distinct layers."""

    origin: int
    dest: int
    delta_t: int
    merge: str = "concat"
    alpha: bool = False
    alpha_init: float = 0.0

    @property
    def is_forward(self) -> bool:
        return self.origin < self.dest


@dataclass(frozen=True)
class ArchSpec:
    """Layer stack, skip edges, and sequence length for one architecture."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    tskips: tuple[TSkip, ...] = ()
    T: int = 1
    bntt: bool = False
    reset: str = "soft"
    leak_init: float = 0.6
    threshold_init: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "tskips", tuple(self.tskips))

    @property
    def depth(self) -> int:
        return len(self.layers)


def parse_layer_token(token: str) -> LayerSpec:
    """Parse a layer shorthand: "288" is a dense layer, "3c80s1" a conv layer
    with kernel 3, 80 channels, stride 1."""
    token = token.strip()
    if token.isdigit():
        return LayerSpec(kind="dense", out=int(token))
    m = _CONV_TOKEN.match(token)
    if m:
        k, c, s = (int(g) for g in m.groups())
        return LayerSpec(kind="conv2d", out=c, kernel=k, stride=s)
    raise GraphError(f"unrecognized layer shorthand {token!r}")


def _parse_input_token(token: str) -> tuple[int, ...]:
    parts = re.split(r"[x×]", token.strip())
    dims = tuple(int(p) for p in parts)
    if len(dims) not in (1, 3):
        raise GraphError(f"input shape must have 1 or 3 dims, got {token!r}")
    return dims


def from_shorthand(text: str, T: int, tskips=(), **kwargs) -> ArchSpec:
    """Build a spec from a dashed shorthand like "700-124-288-144-20" or
    "2x64x64-3c80s1-...-1c32s11". The first token is the input shape; the
    final layer becomes the non-spiking accumulator readout."""
    tokens = [t for t in text.split("-") if t]
    if len(tokens) < 2:
        raise GraphError(f"shorthand needs an input token and at least one layer: {text!r}")
    input_shape = _parse_input_token(tokens[0])
    layers = [parse_layer_token(t) for t in tokens[1:]]
    layers[-1] = replace(layers[-1], activation="li")
    return ArchSpec(input_shape=input_shape, layers=tuple(layers),
                    tskips=tuple(tskips), T=T, **kwargs)


def mlp_spec(sizes, T: int, tskips=(), **kwargs) -> ArchSpec:
    """Dense spiking stack from a size list [in, h1, ..., out]; readout is the
    trailing accumulator layer."""
    sizes = [int(s) for s in sizes]
    return from_shorthand("-".join(str(s) for s in sizes), T, tskips=tskips, **kwargs)


def infer_shapes(spec: ArchSpec) -> list[tuple[int, ...]]:
    """Per-node output shapes (batch excluded); index 0 is the input."""
    shapes: list[tuple[int, ...]] = [spec.input_shape]
    for i, layer in enumerate(spec.layers, start=1):
        prev = shapes[-1]
        if layer.kind == "dense":
            shapes.append((layer.out,))
        elif layer.kind == "conv2d":
            if len(prev) != 3:
                raise GraphError(f"layer {i}: conv2d needs a (c, h, w) input, got {prev}")
            _, h, w = prev
            oh = -(-h // layer.stride)
            ow = -(-w // layer.stride)
            shapes.append((layer.out, oh, ow))
        else:
            raise GraphError(f"layer {i}: unknown kind {layer.kind!r}")
    return shapes


def _feature_count(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape))


def _concat_fanin_multiplier(spec: ArchSpec, layer_index: int) -> int:
    return 1 + sum(1 for e in spec.tskips if e.dest == layer_index and e.merge == "concat")


def validate(spec: ArchSpec) -> list[str]:
    """All structural invariants; returns a list of violations (empty = ok)."""
    v: list[str] = []
    if spec.T < 1:
        v.append(f"sequence length must be >= 1, got {spec.T}")
    if len(spec.input_shape) not in (1, 3) or any(d < 1 for d in spec.input_shape):
        v.append(f"bad input shape {spec.input_shape}")
    if not spec.layers:
        v.append("network has no layers")
    if spec.reset not in ("soft", "hard"):
        v.append(f"unknown reset mode {spec.reset!r}")
    if not 0.0 < spec.leak_init < 1.0:
        v.append(f"leak_init must lie in (0, 1), got {spec.leak_init}")
    if spec.threshold_init <= 0.0:
        v.append(f"threshold_init must be positive, got {spec.threshold_init}")

    for i, layer in enumerate(spec.layers, start=1):
        if layer.kind not in LAYER_KINDS:
            v.append(f"layer {i}: unknown kind {layer.kind!r}")
            continue
        if layer.activation not in ACTIVATIONS:
            v.append(f"layer {i}: unknown activation {layer.activation!r}")
        if layer.out < 1:
            v.append(f"layer {i}: output size must be positive")
        if layer.kind == "conv2d" and (not layer.kernel or layer.kernel < 1
                                       or not layer.stride or layer.stride < 1):
            v.append(f"layer {i}: conv2d needs kernel >= 1 and stride >= 1")
    if v:
        return v

    try:
        shapes = infer_shapes(spec)
    except GraphError as err:
        return [str(err)]

    depth = spec.depth
    for e in spec.tskips:
        tag = f"edge {e.origin}->{e.dest} (dt={e.delta_t})"
        if not 0 <= e.origin <= depth:
            v.append(f"{tag}: origin outside [0, {depth}]")
            continue
        if not 1 <= e.dest <= depth:
            v.append(f"{tag}: destination outside [1, {depth}]")
            continue
        if e.origin == e.dest:
            v.append(f"{tag}: connection within the same layer")
            continue
        if e.delta_t < 0:
            v.append(f"{tag}: negative delay")
        if e.origin > e.dest and e.delta_t == 0:
            v.append(f"{tag}: same-step cycle (backward edge needs delay >= 1)")
        if e.delta_t >= spec.T:
            v.append(f"{tag}: delay exceeds sequence length (delta_t must be < T={spec.T})")
        if e.merge not in MERGE_OPS:
            v.append(f"{tag}: unknown merge {e.merge!r}")
        dest_layer = spec.layers[e.dest - 1]
        payload, ff_in = shapes[e.origin], shapes[e.dest - 1]
        if dest_layer.kind == "conv2d":
            if len(payload) != 3:
                v.append(f"{tag}: payload has no spatial dims for conv destination")
            elif payload[1:] != ff_in[1:]:
                v.append(f"{tag}: spatial mismatch {payload[1:]} vs {ff_in[1:]}")
    return v


def param_count(spec: ArchSpec) -> int:
    """Exact trainable parameter count: weights, biases, neuron scalars,
    per-timestep normalization affines, and per-edge blend factors."""
    shapes = infer_shapes(spec)
    total = 0
    for i, layer in enumerate(spec.layers, start=1):
        mult = _concat_fanin_multiplier(spec, i)
        if layer.kind == "dense":
            fan_in = _feature_count(shapes[i - 1]) * mult
            total += fan_in * layer.out + layer.out
        else:
            c_in = shapes[i - 1][0] * mult
            total += layer.out * c_in * layer.kernel * layer.kernel + layer.out
        if layer.activation == "lif":
            total += 2
            if spec.bntt:
                total += 2 * spec.T * layer.out
        elif layer.activation == "li":
            total += 1
    total += sum(1 for e in spec.tskips if e.alpha)
    return total


@dataclass(frozen=True)
class ShortcutMatrix:
    """Fixed random channel selection mapping a payload onto a target width.

    Generated once at construction and never trained; the identity selection
    is used whenever source and target widths already agree.
    """

    source_channels: int
    target_channels: int
    selection: tuple[int, ...]
    seed: int

    @classmethod
    def build(cls, source_channels: int, target_channels: int, seed: int) -> "ShortcutMatrix":
        if source_channels == target_channels:
            selection = tuple(range(source_channels))
        else:
            rng = np.random.default_rng(seed)
            selection = tuple(int(i) for i in rng.integers(0, source_channels,
                                                           size=target_channels))
        return cls(source_channels, target_channels, selection, seed)


def shortcut_apply(ws: ShortcutMatrix, x: Tensor) -> Tensor:
    if x.shape[1] != ws.source_channels:
        raise GraphError(
            f"shortcut expects {ws.source_channels} channels, got {x.shape[1]}"
        )
    return select_channels(x, ws.selection, axis=1)


class DelayBuffer:
    """Ring buffer over the last ``capacity`` outputs of one layer.

    Reads before the sequence start return a zero tensor; reads of steps that
    were never written (the future) or that have been overwritten are errors.
    """

    def __init__(self, capacity: int, zero_shape: tuple[int, ...]):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._slots: list[Tensor | None] = [None] * capacity
        self._written = -1
        self._zero = Tensor(np.zeros(zero_shape))

    def write(self, t: int, value: Tensor) -> None:
        if t != self._written + 1:
            raise GraphError(f"buffer writes must be sequential, got t={t} after {self._written}")
        self._slots[t % self.capacity] = value
        self._written = t

    def read(self, t: int) -> Tensor:
        if t < 0:
            return self._zero
        if t > self._written:
            raise GraphError(f"buffer read from the future: t={t}, last written {self._written}")
        if t <= self._written - self.capacity:
            raise GraphError(f"buffer read expired: t={t} older than capacity {self.capacity}")
        return self._slots[t % self.capacity]


@dataclass
class SpikeStats:
    """Spike counts per spiking layer, accumulated over forward passes."""

    neurons: dict[int, int] = field(default_factory=dict)
    spikes: dict[int, float] = field(default_factory=dict)
    samples: int = 0
    T: int = 0

    def track(self, layer: int, neuron_count: int) -> None:
        self.neurons.setdefault(layer, neuron_count)
        self.spikes.setdefault(layer, 0.0)

    def add(self, layer: int, count: float) -> None:
        self.spikes[layer] += count

    def accumulate(self, other: "SpikeStats") -> None:
        for layer, n in other.neurons.items():
            self.track(layer, n)
            self.spikes[layer] += other.spikes[layer]
        self.samples += other.samples
        self.T = other.T

    def rates(self) -> dict[int, float]:
        """Average spikes per neuron per sample over the full window."""
        if self.samples == 0:
            return {l: 0.0 for l in self.neurons}
        return {l: self.spikes[l] / (self.neurons[l] * self.samples) for l in self.neurons}

    def overall_rate(self) -> float:
        total_n = sum(self.neurons.values())
        if self.samples == 0 or total_n == 0:
            return 0.0
        return sum(self.spikes.values()) / (total_n * self.samples)


@dataclass
class ForwardResult:
    outputs: list[Tensor]
    stats: SpikeStats


class Network:
    """An architecture bound to concrete parameters and fixed shortcuts."""

    def __init__(self, spec: ArchSpec, params: dict[str, Tensor],
                 state: dict[str, np.ndarray], shortcuts: list[ShortcutMatrix], seed: int):
        self.spec = spec
        self.params = params
        self.state = state
        self.shortcuts = shortcuts
        self.seed = seed
        self.shapes = infer_shapes(spec)

    @classmethod
    def build(cls, spec: ArchSpec, seed: int = 0) -> "Network":
        violations = validate(spec)
        if violations:
            raise SpecValidationError(violations)
        shapes = infer_shapes(spec)
        rng = np.random.default_rng(seed)
        params: dict[str, Tensor] = {}
        state: dict[str, np.ndarray] = {}

        for i, layer in enumerate(spec.layers, start=1):
            mult = _concat_fanin_multiplier(spec, i)
            if layer.kind == "dense":
                fan_in = _feature_count(shapes[i - 1]) * mult
                bound = np.sqrt(6.0 / fan_in)
                params[f"L{i}.w"] = Tensor(rng.uniform(-bound, bound, (fan_in, layer.out)),
                                           requires_grad=True, name=f"L{i}.w")
                params[f"L{i}.b"] = Tensor(np.zeros(layer.out), requires_grad=True,
                                           name=f"L{i}.b")
            else:
                c_in = shapes[i - 1][0] * mult
                fan_in = c_in * layer.kernel * layer.kernel
                bound = np.sqrt(6.0 / fan_in)
                params[f"L{i}.w"] = Tensor(
                    rng.uniform(-bound, bound, (layer.out, c_in, layer.kernel, layer.kernel)),
                    requires_grad=True, name=f"L{i}.w")
                params[f"L{i}.b"] = Tensor(np.zeros((layer.out, 1, 1)), requires_grad=True,
                                           name=f"L{i}.b")
            if layer.activation == "lif":
                params[f"L{i}.leak"] = Tensor(spec.leak_init, requires_grad=True,
                                              name=f"L{i}.leak")
                params[f"L{i}.threshold"] = Tensor(spec.threshold_init, requires_grad=True,
                                                   name=f"L{i}.threshold")
                if spec.bntt:
                    for t in range(spec.T):
                        params[f"L{i}.bntt_g{t}"] = Tensor(np.ones(layer.out),
                                                           requires_grad=True,
                                                           name=f"L{i}.bntt_g{t}")
                        params[f"L{i}.bntt_b{t}"] = Tensor(np.zeros(layer.out),
                                                           requires_grad=True,
                                                           name=f"L{i}.bntt_b{t}")
                    state[f"L{i}.bntt_mean"] = np.zeros((spec.T, layer.out))
                    state[f"L{i}.bntt_var"] = np.ones((spec.T, layer.out))
            elif layer.activation == "li":
                params[f"L{i}.leak"] = Tensor(spec.leak_init, requires_grad=True,
                                              name=f"L{i}.leak")

        shortcuts: list[ShortcutMatrix] = []
        for j, edge in enumerate(spec.tskips):
            if edge.alpha:
                params[f"E{j}.alpha_raw"] = Tensor(edge.alpha_init, requires_grad=True,
                                                   name=f"E{j}.alpha_raw")
            dest_layer = spec.layers[edge.dest - 1]
            if dest_layer.kind == "conv2d":
                source = shapes[edge.origin][0]
                target = shapes[edge.dest - 1][0]
            else:
                source = _feature_count(shapes[edge.origin])
                target = _feature_count(shapes[edge.dest - 1])
            shortcuts.append(ShortcutMatrix.build(source, target,
                                                  seed=int(rng.integers(0, 2**31 - 1))))
        return cls(spec, params, state, shortcuts, seed)

    def lif_params(self, layer_index: int) -> LifParams:
        return LifParams(
            leak=self.params[f"L{layer_index}.leak"],
            threshold=self.params[f"L{layer_index}.threshold"],
            reset_mode=self.spec.reset,
        )

    def trainable(self) -> dict[str, Tensor]:
        return dict(self.params)


def run_forward(net: Network, x: np.ndarray, mode: str = "eval",
                spike_mode: str = "hard", surr: SurrogateConfig | None = None,
                dropout: float = 0.0, rng: np.random.Generator | None = None,
                collect: dict[int, list[np.ndarray]] | None = None) -> ForwardResult:
    """Unroll the network over the full sequence.

    ``x`` has shape [T, batch, ...input]. Every layer consumes its predecessor's
    current output merged with any delayed skip payloads; buffers are written as
    soon as a layer's step completes, so within one step the layer order stays
    the plain feed-forward order and backward edges only ever see the past.
    ``collect`` maps layer indices to lists that receive each step's raw output.
    """
    spec = net.spec
    if x.shape[0] != spec.T:
        raise GraphError(f"input time dim {x.shape[0]} != spec.T {spec.T}")
    if tuple(x.shape[2:]) != spec.input_shape:
        raise GraphError(f"input feature shape {x.shape[2:]} != {spec.input_shape}")
    if dropout and not 0.0 <= dropout < 1.0:
        raise ValueError(f"dropout must lie in [0, 1), got {dropout}")
    training = mode == "train"
    if training and dropout > 0.0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    surr = surr or SurrogateConfig()
    batch = x.shape[1]
    depth = spec.depth

    edges_into: dict[int, list[tuple[int, TSkip]]] = {l: [] for l in range(1, depth + 1)}
    max_delay: dict[int, int] = {}
    for j, e in enumerate(spec.tskips):
        edges_into[e.dest].append((j, e))
        need = max(e.delta_t, 1 if (e.alpha and not e.is_forward) else 0)
        max_delay[e.origin] = max(max_delay.get(e.origin, 0), need)
    buffers = {
        origin: DelayBuffer(d + 1, (batch,) + net.shapes[origin])
        for origin, d in max_delay.items()
    }

    lif_states: dict[int, LifState] = {}
    li_potentials: dict[int, Tensor] = {}
    stats = SpikeStats(samples=batch, T=spec.T)
    for i, layer in enumerate(spec.layers, start=1):
        shape = (batch,) + net.shapes[i]
        if layer.activation == "lif":
            lif_states[i] = LifState.zeros(shape)
            stats.track(i, _feature_count(net.shapes[i]))
        elif layer.activation == "li":
            li_potentials[i] = Tensor(np.zeros(shape))

    outputs: list[Tensor] = []
    for t in range(spec.T):
        current: list[Tensor | None] = [None] * (depth + 1)
        current[0] = Tensor(x[t])
        if 0 in buffers:
            buffers[0].write(t, current[0])
        for l in range(1, depth + 1):
            layer = spec.layers[l - 1]
            ff = current[l - 1]
            if layer.kind == "dense" and ff.ndim > 2:
                ff = reshape(ff, (batch, -1))
            merged = ff
            for j, edge in edges_into[l]:
                delayed = buffers[edge.origin].read(t - edge.delta_t)
                if edge.alpha:
                    # backward edges cannot see the origin's same-step output,
                    # so their "current" term is the freshest buffered step
                    now = current[edge.origin] if edge.is_forward \
                        else buffers[edge.origin].read(t - 1)
                    a = sigmoid(net.params[f"E{j}.alpha_raw"])
                    payload = a * now + (1.0 - a) * delayed
                else:
                    payload = delayed
                if layer.kind == "dense" and payload.ndim > 2:
                    payload = reshape(payload, (batch, -1))
                if layer.kind == "conv2d" and payload.shape[2:] != merged.shape[2:]:
                    raise GraphError(
                        f"edge {edge.origin}->{edge.dest} (dt={edge.delta_t}): spatial "
                        f"mismatch {payload.shape[2:]} vs {merged.shape[2:]}")
                resized = shortcut_apply(net.shortcuts[j], payload)
                merged = concat(merged, resized, axis=1) if edge.merge == "concat" \
                    else merged + resized
            if training and dropout > 0.0:
                keep = (rng.random(merged.shape) >= dropout) / (1.0 - dropout)
                merged = merged * Tensor(keep)
            if layer.kind == "dense":
                drive = affine(merged, net.params[f"L{l}.w"], net.params[f"L{l}.b"])
            else:
                drive = conv2d(merged, net.params[f"L{l}.w"], layer.stride) \
                    + net.params[f"L{l}.b"]
            if spec.bntt and layer.activation == "lif":
                drive = bntt_step(drive, net.params[f"L{l}.bntt_g{t}"],
                                  net.params[f"L{l}.bntt_b{t}"],
                                  net.state[f"L{l}.bntt_mean"][t],
                                  net.state[f"L{l}.bntt_var"][t], training)
            if layer.activation == "lif":
                spikes, lif_states[l] = lif_step(lif_states[l], drive, net.lif_params(l),
                                                 surr, spike_mode=spike_mode)
                stats.add(l, float(spikes.data.sum()))
                h = spikes
            elif layer.activation == "li":
                li_potentials[l] = leaky_integrate(li_potentials[l], drive,
                                                   net.params[f"L{l}.leak"])
                h = li_potentials[l]
            elif layer.activation == "relu":
                h = relu(drive)
            else:
                h = drive
            current[l] = h
            if collect is not None and l in collect:
                collect[l].append(h.data)
            if l in buffers:
                buffers[l].write(t, h)
        outputs.append(current[depth])
    return ForwardResult(outputs=outputs, stats=stats)


# ---------------------------------------------------------------------------
# serialization

def spec_to_dict(spec: ArchSpec) -> dict:
    return {
        "T": spec.T,
        "input": list(spec.input_shape),
        "layers": [
            {k: v for k, v in
             (("kind", l.kind), ("out", l.out), ("kernel", l.kernel),
              ("stride", l.stride), ("activation", l.activation))
             if v is not None}
            for l in spec.layers
        ],
        "tskips": [
            {"origin": e.origin, "dest": e.dest, "delta_t": e.delta_t,
             "merge": e.merge, "alpha": e.alpha, "alpha_init": e.alpha_init}
            for e in spec.tskips
        ],
        "bntt": spec.bntt,
        "reset": spec.reset,
        "leak_init": spec.leak_init,
        "threshold_init": spec.threshold_init,
    }


def _layer_from_entry(entry) -> LayerSpec:
    if isinstance(entry, LayerSpec):
        return entry
    if isinstance(entry, int):
        return LayerSpec(kind="dense", out=entry)
    if isinstance(entry, str):
        return parse_layer_token(entry)
    if isinstance(entry, dict):
        return LayerSpec(kind=entry["kind"], out=int(entry["out"]),
                         kernel=entry.get("kernel"), stride=entry.get("stride"),
                         activation=entry.get("activation", "lif"))
    raise GraphError(f"cannot interpret layer entry {entry!r}")


def spec_from_dict(d: dict) -> ArchSpec:
    layers = tuple(_layer_from_entry(e) for e in d["layers"])
    tskips = tuple(
        TSkip(origin=int(e["origin"]), dest=int(e["dest"]), delta_t=int(e["delta_t"]),
              merge=e.get("merge", "concat"), alpha=bool(e.get("alpha", False)),
              alpha_init=float(e.get("alpha_init", 0.0)))
        for e in d.get("tskips", ())
    )
    return ArchSpec(
        input_shape=tuple(d["input"]),
        layers=layers,
        tskips=tskips,
        T=int(d["T"]),
        bntt=bool(d.get("bntt", False)),
        reset=d.get("reset", "soft"),
        leak_init=float(d.get("leak_init", 0.6)),
        threshold_init=float(d.get("threshold_init", 1.0)),
    )


def dumps_spec(spec: ArchSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def loads_spec(text: str) -> ArchSpec:
    return spec_from_dict(json.loads(text))


def save_spec(spec: ArchSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_spec(spec))


def load_spec(path) -> ArchSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_spec(fh.read())
