"""The multi-stream network as a small DAG with a named parameter registry.

The graph template is fixed: a root convolution, ReLU, 3x3/stride-2 max pool
and response normalization, then parallel streams of 1x1 convolutions off the
normalized root features, channel concatenation, one more 1x1 convolution,
flatten, a hidden fully connected layer and the class logits. Convolutions
are numbered in build order (conv1 is the root, the post-concat mixer gets
the next free number), fully connected layers continue the numbering.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers
from .layers import ConvParams, LrnParams
from .tensor import DTYPE, conv_extent

CHECKPOINT_MAGIC = b"LFHN"
CHECKPOINT_VERSION = 1

POOL_WINDOW = 3
POOL_STRIDE = 2


class GraphConfigError(ValueError):
    """A configuration that cannot produce integral feature extents."""


class CheckpointError(ValueError):
    """Malformed, truncated, or architecture-mismatched checkpoint file."""


@dataclass(frozen=True)
class LfhnConfig:
    input_height: int = 227
    input_width: int = 227
    input_channels: int = 3
    root_kernel: int = 11
    root_channels: int = 96
    root_stride: int = 4
    streams: tuple = ((200, 400), (300,))
    post_concat_channels: int = 500
    fc_hidden: int = 512
    num_classes: int = 337
    relu_after_1x1: bool = True
    relu_after_hidden: bool = True
    lrn: LrnParams = field(default_factory=LrnParams)

    def __post_init__(self):
        extents = (self.input_height, self.input_width, self.input_channels,
                   self.root_kernel, self.root_channels, self.root_stride,
                   self.post_concat_channels, self.fc_hidden, self.num_classes)
        if any(e < 1 for e in extents):
            raise ValueError("all extents and widths must be >= 1")
        if not self.streams or any(not s for s in self.streams):
            raise ValueError("streams must be a non-empty tuple of non-empty width tuples")
        if any(w < 1 for s in self.streams for w in s):
            raise ValueError("stream widths must be >= 1")
        object.__setattr__(self, "streams", tuple(tuple(int(w) for w in s)
                                                  for s in self.streams))

    @property
    def concat_channels(self) -> int:
        return sum(s[-1] for s in self.streams)


def tiny_config(num_classes: int = 3) -> LfhnConfig:
    """Smallest configuration that exercises every layer kind.

    Sized for finite-difference gradient checks: 8x8x3 input, stream widths
    (4, 6) and (5,), three classes. The larger LRN alpha keeps the
    cross-channel terms well above checking tolerance.
    """
    return LfhnConfig(
        input_height=8, input_width=8, input_channels=3,
        root_kernel=2, root_channels=4, root_stride=1,
        streams=((4, 6), (5,)), post_concat_channels=5,
        fc_hidden=8, num_classes=num_classes,
        lrn=LrnParams(size=3, k=2.0, alpha=1e-2, beta=0.75),
    )


def desk_config(num_classes: int, channels: int = 1) -> LfhnConfig:
    """67x67 variant small enough to train on a synthetic corpus in minutes."""
    return LfhnConfig(
        input_height=67, input_width=67, input_channels=channels,
        root_kernel=11, root_channels=16, root_stride=4,
        streams=((16, 24), (16,)), post_concat_channels=24,
        fc_hidden=64, num_classes=num_classes,
    )


@dataclass
class Node:
    name: str
    kind: str
    inputs: tuple
    attrs: dict


def _architecture(cfg: LfhnConfig):
    """Node list of the template, in topological order."""
    nodes = [Node("input", "input", (), {})]

    def add(name, kind, inputs, **attrs):
        nodes.append(Node(name, kind, tuple(inputs), attrs))
        return name

    prev = add("conv1", "conv", ["input"], kernel_hw=(cfg.root_kernel, cfg.root_kernel),
               in_channels=cfg.input_channels, out_channels=cfg.root_channels,
               stride=cfg.root_stride, pad=0)
    prev = add("relu1", "relu", [prev])
    prev = add("pool1", "maxpool", [prev], window=POOL_WINDOW, stride=POOL_STRIDE)
    root = add("norm1", "lrn", [prev], params=cfg.lrn)

    number = 2
    tails = []
    for widths in cfg.streams:
        prev = root
        channels = cfg.root_channels
        for width in widths:
            name = f"conv{number}"
            add(name, "conv", [prev], kernel_hw=(1, 1), in_channels=channels,
                out_channels=width, stride=1, pad=0)
            prev = name
            if cfg.relu_after_1x1:
                prev = add(f"relu{number}", "relu", [prev])
            channels = width
            number += 1
        tails.append(prev)

    prev = add("concat", "concat", tails)
    mixer = f"conv{number}"
    add(mixer, "conv", [prev], kernel_hw=(1, 1), in_channels=cfg.concat_channels,
        out_channels=cfg.post_concat_channels, stride=1, pad=0)
    prev = mixer
    if cfg.relu_after_1x1:
        prev = add(f"relu{number}", "relu", [prev])
    number += 1

    prev = add("flatten", "flatten", [prev])
    hidden = f"fc{number}"
    add(hidden, "fc", [prev], out_dim=cfg.fc_hidden)
    prev = hidden
    if cfg.relu_after_hidden:
        prev = add(f"relu{number}", "relu", [prev])
    number += 1
    add(f"fc{number}", "fc", [prev], out_dim=cfg.num_classes)
    return nodes


def shape_trace(cfg: LfhnConfig):
    """Per-node output shapes without allocating any activation.

    Returns [(node_name, shape)] where spatial nodes report (h, w, c) and the
    flatten/fc tail reports (dim,). Raises GraphConfigError naming the node
    whose extents do not work out.
    """
    shapes = {}
    trace = []
    for node in _architecture(cfg):
        try:
            if node.kind == "input":
                shape = (cfg.input_height, cfg.input_width, cfg.input_channels)
            elif node.kind == "conv":
                h, w, c = shapes[node.inputs[0]]
                if c != node.attrs["in_channels"]:
                    raise ValueError(f"expected {node.attrs['in_channels']} channels, got {c}")
                kh, kw = node.attrs["kernel_hw"]
                shape = (conv_extent(h, kh, node.attrs["stride"], node.attrs["pad"]),
                         conv_extent(w, kw, node.attrs["stride"], node.attrs["pad"]),
                         node.attrs["out_channels"])
            elif node.kind == "maxpool":
                h, w, c = shapes[node.inputs[0]]
                shape = (conv_extent(h, node.attrs["window"], node.attrs["stride"], 0),
                         conv_extent(w, node.attrs["window"], node.attrs["stride"], 0),
                         c)
            elif node.kind in ("relu", "lrn"):
                shape = shapes[node.inputs[0]]
            elif node.kind == "concat":
                parts = [shapes[i] for i in node.inputs]
                lead = parts[0][:2]
                if any(p[:2] != lead for p in parts):
                    raise ValueError(f"spatial mismatch across streams: {parts}")
                shape = lead + (sum(p[2] for p in parts),)
            elif node.kind == "flatten":
                shape = (int(np.prod(shapes[node.inputs[0]])),)
            elif node.kind == "fc":
                shape = (node.attrs["out_dim"],)
            else:
                raise ValueError(f"unknown node kind {node.kind!r}")
        except ValueError as err:
            raise GraphConfigError(f"{node.name}: {err}") from err
        shapes[node.name] = shape
        trace.append((node.name, shape))
    return trace


def parameter_shapes(cfg: LfhnConfig):
    """Registry layout {param_name: shape} implied by the configuration."""
    shapes = dict(shape_trace(cfg))
    out = {}
    for node in _architecture(cfg):
        if node.kind == "conv":
            kh, kw = node.attrs["kernel_hw"]
            out[f"{node.name}.kernel"] = (kh, kw, node.attrs["in_channels"],
                                          node.attrs["out_channels"])
            out[f"{node.name}.bias"] = (node.attrs["out_channels"],)
        elif node.kind == "fc":
            in_dim = shapes[node.inputs[0]][0]
            out[f"{node.name}.weight"] = (in_dim, node.attrs["out_dim"])
            out[f"{node.name}.bias"] = (node.attrs["out_dim"],)
    return out


def parameter_count(cfg: LfhnConfig) -> int:
    return sum(int(np.prod(s)) for s in parameter_shapes(cfg).values())


class NetworkGraph:
    """Ordered node list plus the named parameter registry.

    Parameters of node names listed in `frozen` receive no gradient entries
    from backward(). The node list is topologically ordered by construction
    and validated on creation.
    """

    def __init__(self, config, nodes, params, frozen=()):
        self.config = config
        self.nodes = list(nodes)
        self.params = dict(params)
        self.frozen = set(frozen)
        self._by_name = {}
        for i, node in enumerate(self.nodes):
            if node.name in self._by_name:
                raise ValueError(f"duplicate node name {node.name!r}")
            for dep in node.inputs:
                if dep not in self._by_name:
                    raise ValueError(f"node {node.name!r} depends on {dep!r} "
                                     "which does not precede it")
            self._by_name[node.name] = node

    def node(self, name) -> Node:
        return self._by_name[name]

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name


def build_lfhn(cfg: LfhnConfig, seed: int = 0) -> NetworkGraph:
    """Construct the network with He-initialized kernels and zero biases."""
    shape_trace(cfg)  # reject inconsistent widths before allocating
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(DTYPE)
    return NetworkGraph(cfg, _architecture(cfg), params)


def _conv_params(net: NetworkGraph, node: Node) -> ConvParams:
    return ConvParams(net.params[f"{node.name}.kernel"], net.params[f"{node.name}.bias"],
                      node.attrs["stride"], node.attrs["pad"])


def forward(net: NetworkGraph, batch):
    """Run the graph on a batch, returning (logits, activation cache).

    The cache maps node names to outputs; pool nodes additionally store their
    index map under "<name>#index". backward() needs the full cache.
    """
    x = np.asarray(batch, dtype=DTYPE)
    expected = (net.config.input_height, net.config.input_width, net.config.input_channels)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ValueError(f"batch shape {x.shape} does not match input "
                         f"(n, {expected[0]}, {expected[1]}, {expected[2]})")
    cache = {"input": x}
    for node in net.nodes[1:]:
        inputs = [cache[name] for name in node.inputs]
        if node.kind == "conv":
            p = _conv_params(net, node)
            if node.attrs["kernel_hw"] == (1, 1):
                out = layers.conv1x1_forward(inputs[0], p)
            else:
                out = layers.conv_forward(inputs[0], p)
        elif node.kind == "relu":
            out = layers.relu(inputs[0])
        elif node.kind == "maxpool":
            out, index_map = layers.maxpool_forward(inputs[0], node.attrs["window"],
                                                    node.attrs["stride"])
            cache[f"{node.name}#index"] = index_map
        elif node.kind == "lrn":
            out = layers.lrn_forward(inputs[0], node.attrs["params"])
        elif node.kind == "concat":
            out = layers.concat_channels(inputs)
        elif node.kind == "flatten":
            out = inputs[0].reshape(inputs[0].shape[0], -1)
        elif node.kind == "fc":
            out = layers.fc_forward(inputs[0], net.params[f"{node.name}.weight"],
                                    net.params[f"{node.name}.bias"])
        else:
            raise ValueError(f"unknown node kind {node.kind!r}")
        cache[node.name] = out
    return cache[net.output_name], cache


def _accumulate(grads, name, value):
    if name in grads:
        grads[name] = grads[name] + value
    else:
        grads[name] = value


def backward(net: NetworkGraph, cache, grad_logits):
    """Whole-graph adjoint: gradient registry for every non-frozen parameter."""
    if "input" not in cache or net.output_name not in cache:
        raise ValueError("cache does not come from a matching forward pass")
    grad_logits = np.asarray(grad_logits, dtype=DTYPE)
    if grad_logits.shape != cache[net.output_name].shape:
        raise ValueError(f"grad_logits shape {grad_logits.shape} does not match "
                         f"logits {cache[net.output_name].shape}")
    node_grads = {net.output_name: grad_logits}
    param_grads = {}
    for node in reversed(net.nodes[1:]):
        g = node_grads.pop(node.name, None)
        if g is None:
            continue
        if node.kind == "conv":
            x = cache[node.inputs[0]]
            need_input = node.inputs[0] != "input"
            gi, gk, gb = layers.conv_backward(x, _conv_params(net, node), g,
                                              need_input_grad=need_input)
            if node.name not in net.frozen:
                param_grads[f"{node.name}.kernel"] = gk
                param_grads[f"{node.name}.bias"] = gb
            if need_input:
                _accumulate(node_grads, node.inputs[0], gi)
        elif node.kind == "relu":
            _accumulate(node_grads, node.inputs[0],
                        layers.relu_backward(cache[node.inputs[0]], g))
        elif node.kind == "maxpool":
            _accumulate(node_grads, node.inputs[0],
                        layers.maxpool_backward(cache[f"{node.name}#index"], g))
        elif node.kind == "lrn":
            _accumulate(node_grads, node.inputs[0],
                        layers.lrn_backward(cache[node.inputs[0]], node.attrs["params"], g))
        elif node.kind == "concat":
            extents = [cache[name].shape[-1] for name in node.inputs]
            for name, part in zip(node.inputs, layers.split_channels(g, extents)):
                _accumulate(node_grads, name, part)
        elif node.kind == "flatten":
            _accumulate(node_grads, node.inputs[0], g.reshape(cache[node.inputs[0]].shape))
        elif node.kind == "fc":
            x = cache[node.inputs[0]]
            gi, gw, gb = layers.fc_backward(x, net.params[f"{node.name}.weight"], g)
            if node.name not in net.frozen:
                param_grads[f"{node.name}.weight"] = gw
                param_grads[f"{node.name}.bias"] = gb
            _accumulate(node_grads, node.inputs[0], gi)
    return param_grads


def _config_items(cfg: LfhnConfig):
    streams = "|".join(",".join(str(w) for w in s) for s in cfg.streams)
    return [
        ("input_height", cfg.input_height),
        ("input_width", cfg.input_width),
        ("input_channels", cfg.input_channels),
        ("root_kernel", cfg.root_kernel),
        ("root_channels", cfg.root_channels),
        ("root_stride", cfg.root_stride),
        ("streams", streams),
        ("post_concat_channels", cfg.post_concat_channels),
        ("fc_hidden", cfg.fc_hidden),
        ("num_classes", cfg.num_classes),
        ("relu_after_1x1", "true" if cfg.relu_after_1x1 else "false"),
        ("relu_after_hidden", "true" if cfg.relu_after_hidden else "false"),
        ("lrn_size", cfg.lrn.size),
        ("lrn_k", repr(cfg.lrn.k)),
        ("lrn_alpha", repr(cfg.lrn.alpha)),
        ("lrn_beta", repr(cfg.lrn.beta)),
    ]


def _config_from_text(text: str):
    values = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointError(f"malformed config line {line!r}")
        values[key] = value
    try:
        streams = tuple(tuple(int(w) for w in part.split(","))
                        for part in values["streams"].split("|"))
        cfg = LfhnConfig(
            input_height=int(values["input_height"]),
            input_width=int(values["input_width"]),
            input_channels=int(values["input_channels"]),
            root_kernel=int(values["root_kernel"]),
            root_channels=int(values["root_channels"]),
            root_stride=int(values["root_stride"]),
            streams=streams,
            post_concat_channels=int(values["post_concat_channels"]),
            fc_hidden=int(values["fc_hidden"]),
            num_classes=int(values["num_classes"]),
            relu_after_1x1=values["relu_after_1x1"] == "true",
            relu_after_hidden=values["relu_after_hidden"] == "true",
            lrn=LrnParams(int(values["lrn_size"]), float(values["lrn_k"]),
                          float(values["lrn_alpha"]), float(values["lrn_beta"])),
        )
    except (KeyError, ValueError) as err:
        raise CheckpointError(f"invalid config block: {err}") from err
    frozen = tuple(n for n in values.get("frozen", "").split(",") if n)
    return cfg, frozen


def save_checkpoint(net: NetworkGraph, path):
    """Write config plus every parameter tensor; the round trip is bit-exact."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    items = _config_items(net.config) + [("frozen", ",".join(sorted(net.frozen)))]
    config_blob = "\n".join(f"{k}={v}" for k, v in items).encode("utf-8")
    buf.write(struct.pack("<I", len(config_blob)))
    buf.write(config_blob)
    buf.write(struct.pack("<I", len(net.params)))
    for name, arr in net.params.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path, num_classes=None) -> NetworkGraph:
    """Rebuild a saved network; optionally insist on a class count."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        pos += n
        return data[pos - n:pos]

    if take(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes: not a checkpoint file")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack("<I", take(4, "config length"))
    cfg, frozen = _config_from_text(take(config_len, "config").decode("utf-8"))
    if num_classes is not None and cfg.num_classes != num_classes:
        raise CheckpointError(
            f"shape disagreement: checkpoint was built for {cfg.num_classes} "
            f"classes, caller expects {num_classes}"
        )
    expected = parameter_shapes(cfg)
    (count,) = struct.unpack("<I", take(4, "parameter count"))
    if count != len(expected):
        raise CheckpointError(f"checkpoint stores {count} parameters, "
                              f"config implies {len(expected)}")
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        if name not in expected:
            raise CheckpointError(f"unexpected parameter {name!r}")
        (ndim,) = struct.unpack("<I", take(4, "rank"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        if shape != expected[name]:
            raise CheckpointError(f"shape disagreement for {name!r}: file has "
                                  f"{shape}, config implies {expected[name]}")
        n_bytes = 8 * int(np.prod(shape))
        arr = np.frombuffer(take(n_bytes, name), dtype="<f8").reshape(shape)
        params[name] = np.ascontiguousarray(arr, dtype=DTYPE)
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last parameter record")
    net = NetworkGraph(cfg, _architecture(cfg), params, frozen)
    missing = set(expected) - set(params)
    if missing:
        raise CheckpointError(f"missing parameters: {sorted(missing)}")
    return net


def load_root_weights(net: NetworkGraph, path):
    """Install pretrained root-layer weights from a flat float64 file.

    The file holds the kernel values in (kh, kw, cin, cout) row-major order
    followed by the cout bias values, all little-endian float64.
    """
    kernel = net.params["conv1.kernel"]
    bias = net.params["conv1.bias"]
    expected = kernel.size + bias.size
    raw = np.fromfile(path, dtype="<f8")
    if raw.size != expected:
        raise ValueError(f"root weight file holds {raw.size} floats, "
                         f"expected {expected} for shape {kernel.shape} + bias")
    net.params["conv1.kernel"] = np.ascontiguousarray(
        raw[:kernel.size].reshape(kernel.shape), dtype=DTYPE)
    net.params["conv1.bias"] = np.ascontiguousarray(
        raw[kernel.size:], dtype=DTYPE)


def clone_config(cfg: LfhnConfig, **overrides) -> LfhnConfig:
    """Convenience wrapper around dataclasses.replace."""
    return replace(cfg, **overrides)
