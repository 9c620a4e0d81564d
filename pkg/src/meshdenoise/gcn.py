"""Graph convolutional normal regression network.

Edge convolutions in the dual space of triangles: a block of static layers
driven by mesh adjacency, a block of dynamic layers whose neighborhoods
are recomputed per layer as K nearest nodes in feature space, then masked
average+max pooling over the concatenated per-node features and a stack of
fully connected layers regressing one 3-vector per graph. Batch norm and
LeakyReLU follow every layer except the output head.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .patches import PatchGraph, static_neighbor_table

STAGE1_LAYERS = (3, 3, 4)
STAGE1_CHANNELS = (64, 128, 128, 256, 256, 256, 1024, 512, 256, 64)
REST_LAYERS = (2, 2, 3)
REST_CHANNELS = (64, 128, 256, 256, 512, 256, 64)

_MODEL_MAGIC = b"MDGCNNET"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class GcnConfig:
    """Layer counts, per-layer output widths and graph hyperparameters."""

    static_layers: int
    dynamic_layers: int
    fc_layers: int
    channels: tuple[int, ...]
    knn: int = 8
    node_budget: int = 64
    in_channels: int = 8
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    negative_slope: float = 0.01

    def __post_init__(self):
        if len(self.channels) != self.static_layers + self.dynamic_layers + self.fc_layers:
            raise ValueError(
                f"channels length {len(self.channels)} != layer count "
                f"{self.static_layers + self.dynamic_layers + self.fc_layers}"
            )
        if self.knn < 1 or any(c < 1 for c in self.channels) or self.node_budget < 1:
            raise ValueError("channel widths, K and node budget must be >= 1")

    @property
    def conv_channels(self) -> tuple[int, ...]:
        return self.channels[: self.static_layers + self.dynamic_layers]

    @property
    def fc_channels(self) -> tuple[int, ...]:
        return self.channels[self.static_layers + self.dynamic_layers :]


def stage_config(
    stage: int, node_budget: int = 64, knn: int = 8, width_divisor: int = 1
) -> GcnConfig:
    """The wide first-stage architecture, or the narrow one for later stages.

    ``width_divisor`` shrinks every channel width (desk-scale presets).
    """
    layers, channels = (STAGE1_LAYERS, STAGE1_CHANNELS) if stage == 0 else (REST_LAYERS, REST_CHANNELS)
    scaled = tuple(max(1, c // width_divisor) for c in channels)
    return GcnConfig(layers[0], layers[1], layers[2], scaled, knn=knn, node_budget=node_budget)


class Linear:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, slope: float):
        gain = np.sqrt(2.0 / (1.0 + slope**2))
        bound = gain * np.sqrt(3.0 / in_features)
        self.weight = Tensor(rng.uniform(-bound, bound, (in_features, out_features)), True)
        self.bias = Tensor(rng.uniform(-1, 1, out_features) / np.sqrt(in_features), True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)


class BatchNorm:
    """Per-channel batch normalization over all leading axes.

    Training uses batch statistics and folds them into running estimates
    with the configured momentum; inference uses the running estimates.
    """

    def __init__(self, channels: int, eps: float, momentum: float):
        self.gamma = Tensor(np.ones(channels), True)
        self.beta = Tensor(np.zeros(channels), True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        if training:
            out, mu, var = ad.batch_norm(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu
            self.running_var = (1 - m) * self.running_var + m * var
            return out
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        return ad.add(ad.mul(ad.sub(x, self.running_mean), inv * self.gamma.data), self.beta)


class GcnModel:
    """One cascade stage: parameters, batch-norm state and a step counter."""

    def __init__(self, config: GcnConfig, seed: int = 0):
        self.config = config
        self.step_count = 0
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6D6F64])))
        slope = config.negative_slope
        self.static: list[tuple[Linear, BatchNorm]] = []
        self.dynamic: list[tuple[Linear, BatchNorm]] = []
        self.fc: list[tuple[Linear, BatchNorm]] = []
        width = config.in_channels
        for c in config.channels[: config.static_layers]:
            self.static.append((Linear(2 * width, c, rng, slope), self._bn(c)))
            width = c
        for c in config.channels[config.static_layers : config.static_layers + config.dynamic_layers]:
            self.dynamic.append((Linear(2 * width, c, rng, slope), self._bn(c)))
            width = c
        pooled = 2 * sum(config.conv_channels)
        width = pooled
        for c in config.fc_channels:
            self.fc.append((Linear(width, c, rng, slope), self._bn(c)))
            width = c
        self.head = Linear(width, 3, rng, slope)

    def _bn(self, channels: int) -> BatchNorm:
        return BatchNorm(channels, self.config.bn_eps, self.config.bn_momentum)

    def _blocks(self):
        for i, (lin, bn) in enumerate(self.static):
            yield f"static{i}", lin, bn
        for i, (lin, bn) in enumerate(self.dynamic):
            yield f"dynamic{i}", lin, bn
        for i, (lin, bn) in enumerate(self.fc):
            yield f"fc{i}", lin, bn

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, lin, bn in self._blocks():
            out.append((f"{name}.weight", lin.weight))
            out.append((f"{name}.bias", lin.bias))
            out.append((f"{name}.gamma", bn.gamma))
            out.append((f"{name}.beta", bn.beta))
        out.append(("head.weight", self.head.weight))
        out.append(("head.bias", self.head.bias))
        return out

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, _lin, bn in self._blocks():
            out.append((f"{name}.running_mean", bn.running_mean))
            out.append((f"{name}.running_var", bn.running_var))
        return out

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        block, kind = name.rsplit(".", 1)
        for bname, _lin, bn in self._blocks():
            if bname == block:
                setattr(bn, kind, np.array(value, dtype=np.float64))
                return
        raise KeyError(name)


@dataclass
class Cascade:
    """Ordered cascade stages plus the patch scale they were trained with."""

    models: list[GcnModel]
    k: float = 4.0

    def __post_init__(self):
        if not self.models:
            raise ValueError("cascade needs at least one stage")

    @property
    def node_budget(self) -> int:
        return self.models[0].config.node_budget


def _flat_indices(local: np.ndarray, n_nodes: int) -> np.ndarray:
    b = local.shape[0]
    return local + (np.arange(b, dtype=np.int64) * n_nodes)[:, None, None]


def _conv_step(
    x: Tensor,
    local_nbr: np.ndarray,
    lin: Linear,
    bn: BatchNorm,
    slope: float,
    training: bool,
) -> Tensor:
    """One edge-convolution update: max over LeakyReLU(BN(Linear([f_i ; f_j - f_i]))).

    Neighbor tables pad to a fixed width with self indices; batch-norm
    statistics run over every (node, slot) entry including that padding.
    """
    n = x.shape[1]
    z = ad.edge_linear(x, _flat_indices(local_nbr, n), lin.weight, lin.bias)
    z = ad.leaky_relu(bn(z, training), slope)
    return ad.reduce_max(z, axis=2)


def knn_indices(features: np.ndarray, valid: np.ndarray, k: int) -> np.ndarray:
    """K nearest valid nodes per node in feature space, self column prepended.

    Distance ties resolve to the lower node index. When a graph has fewer
    than k+1 valid nodes, surplus columns repeat the self index (harmless
    under max aggregation). Shape (B, N, k+1).
    """
    b, n, _ = features.shape
    sq = np.einsum("bnc,bnc->bn", features, features)
    d2 = sq[:, :, None] + sq[:, None, :] - 2.0 * np.einsum("bic,bjc->bij", features, features)
    d2[~np.broadcast_to(valid[:, None, :], d2.shape)] = np.inf
    idx = np.arange(n)
    d2[:, idx, idx] = np.inf
    width = min(k, n)
    order = np.argsort(d2, axis=-1, kind="stable")[:, :, :width]
    limit = np.minimum(width, np.maximum(valid.sum(axis=1) - 1, 0))
    selves = np.broadcast_to(idx[None, :, None], order.shape)
    cols = np.broadcast_to(np.arange(width)[None, None, :], order.shape)
    order = np.where(cols < limit[:, None, None], order, selves)
    return np.concatenate([idx[None, :, None].repeat(b, 0), order], axis=2)


def gcn_forward(
    model: GcnModel,
    attrs: np.ndarray,
    static_nbr: np.ndarray,
    valid: np.ndarray,
    training: bool = False,
) -> Tensor:
    """Run the network on a batch of patch graphs.

    attrs (B, N, in_channels) node attributes; static_nbr (B, N, D) local
    neighbor table with self padding; valid (B, N) non-padding mask.
    Returns a (B, 3) tensor in (0, 1)-mapped normal space.
    """
    cfg = model.config
    b, n, c_in = attrs.shape
    if n != cfg.node_budget or c_in != cfg.in_channels:
        raise ValueError(f"graph shape {attrs.shape} does not match config {cfg}")
    slope = cfg.negative_slope
    x = attrs if isinstance(attrs, Tensor) else Tensor(attrs)
    mask_col = valid.astype(np.float64)[:, :, None]

    per_layer: list[Tensor] = []
    for lin, bn in model.static:
        x = _conv_step(x, static_nbr, lin, bn, slope, training)
        per_layer.append(x)
    for lin, bn in model.dynamic:
        nbr = knn_indices(x.data, valid, cfg.knn)
        x = _conv_step(x, nbr, lin, bn, slope, training)
        x = ad.mul(x, mask_col)  # padding nodes output zeros
        per_layer.append(x)

    stacked = ad.concat(per_layer, axis=-1)
    counts = valid.sum(axis=1).astype(np.float64)
    avg = ad.mul(ad.reduce_sum(ad.mul(stacked, mask_col), axis=1), (1.0 / counts)[:, None])
    mx = ad.reduce_max(ad.masked_fill(stacked, valid[:, :, None], -np.inf), axis=1)
    h = ad.concat([avg, mx], axis=-1)
    for lin, bn in model.fc:
        h = ad.leaky_relu(bn(lin(h), training), slope)
    return model.head(h)


def edge_conv(
    features,
    edges: np.ndarray,
    lin: Linear,
    bn: BatchNorm,
    slope: float = 0.01,
    training: bool = False,
) -> Tensor:
    """Static edge convolution on a single graph given an undirected edge list.

    The self-pair is always part of each node's neighborhood, so isolated
    nodes are well-defined.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    n = x.shape[0]
    nbrs: list[list[int]] = [[] for _ in range(n)]
    for a, b_ in edges:
        nbrs[int(a)].append(int(b_))
        nbrs[int(b_)].append(int(a))
    width = max(1, 1 + max((len(v) for v in nbrs), default=0))
    table = np.tile(np.arange(n, dtype=np.int64)[:, None], (1, width))
    for i, v in enumerate(nbrs):
        table[i, 1 : 1 + len(v)] = sorted(v)
    x3 = ad.reshape(x, (1, n, x.shape[1]))
    out = _conv_step(x3, table[None, :, :], lin, bn, slope, training)
    return ad.reshape(out, (n, out.shape[2]))


def dynamic_edge_conv(
    features,
    k: int,
    valid: np.ndarray,
    lin: Linear,
    bn: BatchNorm,
    slope: float = 0.01,
    training: bool = False,
    neighbor_table: np.ndarray | None = None,
) -> Tensor:
    """Dynamic edge convolution on a single graph; KNN over node features.

    ``neighbor_table`` overrides the KNN computation (frozen-index mode).
    Padding (invalid) nodes output zeros.
    """
    x = features if isinstance(features, Tensor) else Tensor(features)
    if not valid.any():
        raise ValueError("dynamic edge convolution needs at least one valid node")
    n = x.shape[0]
    x3 = ad.reshape(x, (1, n, x.shape[1]))
    nbr = neighbor_table if neighbor_table is not None else knn_indices(x.data[None], valid[None], k)
    out = _conv_step(x3, nbr, lin, bn, slope, training)
    out = ad.mul(out, valid.astype(np.float64)[None, :, None])
    return ad.reshape(out, (n, out.shape[2]))


def predict_normal(
    raw_output: np.ndarray, rotation: np.ndarray, fallback: np.ndarray
) -> tuple[np.ndarray, bool]:
    """Invert the (0,1) mapping and the patch alignment rotation.

    Returns a unit normal; degenerate outputs fall back to the supplied
    normal and set the flag.
    """
    v = rotation @ (2.0 * np.asarray(raw_output, dtype=np.float64) - 1.0)
    norm = np.linalg.norm(v)
    if norm < 1e-8:
        return np.array(fallback, dtype=np.float64), True
    return v / norm, False


def prepare_batch(graphs: list[PatchGraph]):
    """Stack patch graphs into batched attrs, neighbor table and mask."""
    attrs = np.stack([g.attrs for g in graphs])
    nbr = np.stack([static_neighbor_table(g) for g in graphs])
    valid = np.stack([g.valid_mask for g in graphs])
    return attrs, nbr, valid


def _write_array(fh, name: str, data: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    arr = np.ascontiguousarray(data, dtype="<f8")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_array(buf: bytes, offset: int) -> tuple[str, np.ndarray, int]:
    (name_len,) = struct.unpack_from("<H", buf, offset)
    offset += 2
    name = buf[offset : offset + name_len].decode("utf-8")
    offset += name_len
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(buf, "<f8", count, offset).reshape(shape).copy()
    offset += count * 8
    return name, data, offset


def save_cascade(path, cascade: Cascade, optimizer_states: list[dict] | None = None) -> None:
    """Versioned little-endian checkpoint; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<IdI", _MODEL_VERSION, cascade.k, len(cascade.models)))
        for stage, model in enumerate(cascade.models):
            cfg = model.config
            fh.write(
                struct.pack(
                    "<6I",
                    cfg.static_layers,
                    cfg.dynamic_layers,
                    cfg.fc_layers,
                    cfg.knn,
                    cfg.node_budget,
                    cfg.in_channels,
                )
            )
            fh.write(struct.pack("<3d", cfg.bn_eps, cfg.bn_momentum, cfg.negative_slope))
            fh.write(struct.pack("<I", len(cfg.channels)))
            fh.write(struct.pack(f"<{len(cfg.channels)}I", *cfg.channels))
            fh.write(struct.pack("<Q", model.step_count))
            arrays: list[tuple[str, np.ndarray]] = []
            arrays.extend((name, p.data) for name, p in model.named_parameters())
            arrays.extend(model.named_buffers())
            state = optimizer_states[stage] if optimizer_states else None
            if state is not None:
                for key, val in state.items():
                    arrays.append((f"adam:{key}", val))
            fh.write(struct.pack("<I", len(arrays)))
            for name, data in arrays:
                _write_array(fh, name, data)


def load_cascade(path) -> tuple[Cascade, list[dict]]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:8] != _MODEL_MAGIC:
        raise ValueError("not a model checkpoint")
    version, k, n_stages = struct.unpack_from("<IdI", buf, 8)
    if version != _MODEL_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    offset = 8 + struct.calcsize("<IdI")
    models = []
    states: list[dict] = []
    for _ in range(n_stages):
        le, ld, ll, knn, budget, in_ch = struct.unpack_from("<6I", buf, offset)
        offset += 24
        eps, momentum, slope = struct.unpack_from("<3d", buf, offset)
        offset += 24
        (n_channels,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        channels = struct.unpack_from(f"<{n_channels}I", buf, offset)
        offset += 4 * n_channels
        (steps,) = struct.unpack_from("<Q", buf, offset)
        offset += 8
        cfg = GcnConfig(le, ld, ll, tuple(channels), knn, budget, in_ch, eps, momentum, slope)
        model = GcnModel(cfg, seed=0)
        model.step_count = int(steps)
        (n_arrays,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        params = dict(model.named_parameters())
        state: dict[str, np.ndarray] = {}
        for _ in range(n_arrays):
            name, data, offset = _read_array(buf, offset)
            if name.startswith("adam:"):
                state[name[5:]] = data
            elif name in params:
                params[name].data = data
            else:
                model.set_buffer(name, data)
        models.append(model)
        states.append(state)
    return Cascade(models, k=k), states
