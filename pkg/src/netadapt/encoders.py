"""Modality-specific feature encoders plus projection into backbone token space.

Raw task inputs (time series, scalars, images, DAGs, returns) pass through a
per-modality feature encoder, then a per-input linear projection and layer
normalization produce token embeddings of the backbone width.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InputError


class ModalityKind(str, enum.Enum):
    IMAGE = "image"
    TIME_SERIES = "time_series"
    SEQUENCE = "sequence"
    SCALAR = "scalar"
    GRAPH = "graph"
    RETURN_VALUE = "return_value"


@dataclass(frozen=True)
class ModalityInput:
    """One declared task input: its name, modality and encoder hyperparameters.

    `per_item=True` means the state carries a list for this input and each
    item becomes its own token through the shared encoder (e.g. one token
    per viewport history sample).
    """

    name: str
    kind: ModalityKind
    params: dict = field(default_factory=dict)
    per_item: bool = False


def _init_linear(weight: torch.Tensor, generator: torch.Generator) -> None:
    fan_in = weight.shape[0]
    weight.normal_(0.0, 1.0 / math.sqrt(max(fan_in, 1)), generator=generator)


class VectorEncoder(nn.Module):
    """Affine map from a fixed-width vector (or scalar) to the feature width."""

    def __init__(self, in_width: int, width: int, generator: torch.Generator,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        w = torch.empty(in_width, width, dtype=dtype)
        _init_linear(w, generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(width, dtype=dtype))
        self.in_width = in_width

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise InputError("non-finite value passed to vector encoder")
        if x.shape[-1] != self.in_width:
            raise InputError(f"expected width {self.in_width}, got {x.shape[-1]}")
        return x @ self.weight + self.bias


class ScalarEncoder(VectorEncoder):
    """Fully connected layer lifting a scalar (or small vector) to the feature width.

    The bias starts nonzero: a low-rank feature `x @ W + 0` followed by layer
    normalization would collapse every input near the origin onto one point
    (and sits the normalization exactly at its singular point when x is 0),
    so the affine offset is what lets downstream normalization keep
    magnitude information.
    """

    def __init__(self, width: int, generator: torch.Generator,
                 dtype: torch.dtype = torch.float32, in_width: int = 1):
        super().__init__(in_width, width, generator, dtype)
        with torch.no_grad():
            self.bias.normal_(0.0, 1.0, generator=generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.in_width == 1 and (x.dim() == 0 or x.shape[-1] != 1):
            x = x.unsqueeze(-1)
        return super().forward(x)


class ConvSeriesEncoder(nn.Module):
    """1-D convolution over a (possibly multi-channel) series, max-pooled over time.

    Output width equals the configured channel count regardless of input
    length; inputs shorter than the kernel are left-padded with zeros to
    match masked-history semantics at episode start.
    """

    def __init__(self, channels: int, kernel: int, generator: torch.Generator,
                 in_channels: int = 1, dtype: torch.dtype = torch.float32):
        super().__init__()
        w = torch.empty(channels, in_channels, kernel, dtype=dtype)
        w.normal_(0.0, 1.0 / math.sqrt(in_channels * kernel), generator=generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(channels, dtype=dtype))
        self.kernel = kernel
        self.in_channels = in_channels
        self.channels = channels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # accepts [L], [C, L], or [B, C, L]
        if x.dim() == 1:
            x = x.view(1, 1, -1)
            squeeze = True
        elif x.dim() == 2:
            x = x.unsqueeze(0)
            squeeze = True
        else:
            squeeze = False
        if x.shape[-1] == 0:
            raise InputError("empty sequence passed to series encoder")
        if x.shape[1] != self.in_channels:
            raise InputError(f"expected {self.in_channels} channels, got {x.shape[1]}")
        if not torch.isfinite(x).all():
            raise InputError("non-finite value passed to series encoder")
        if x.shape[-1] < self.kernel:
            pad = self.kernel - x.shape[-1]
            x = torch.nn.functional.pad(x, (pad, 0))
        y = torch.nn.functional.conv1d(x, self.weight, self.bias)
        y = y.amax(dim=-1)
        return y.squeeze(0) if squeeze else y


class _ImageBlock(nn.Module):
    def __init__(self, width: int, heads: int, generator: torch.Generator,
                 dtype: torch.dtype):
        super().__init__()
        self.ln1 = nn.LayerNorm(width, dtype=dtype)
        self.qkv = VectorEncoder(width, 3 * width, generator, dtype)
        self.out = VectorEncoder(width, width, generator, dtype)
        self.ln2 = nn.LayerNorm(width, dtype=dtype)
        self.fc = VectorEncoder(width, 2 * width, generator, dtype)
        self.proj = VectorEncoder(2 * width, width, generator, dtype)
        self.heads = heads
        self.head_dim = width // heads

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, w = x.shape
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(b, n, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax((q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim), dim=-1)
        y = (attn @ v).transpose(1, 2).reshape(b, n, w)
        x = x + self.out(y)
        x = x + self.proj(torch.nn.functional.gelu(self.fc(self.ln2(x))))
        return x


class ImageEncoder(nn.Module):
    """Patch embedding plus a small self-attention stack, mean-pooled.

    Positional embeddings are zero-initialized and learned; dimensions must
    be divisible by the patch size. Set trainable=False to freeze (the
    stand-in for plugging a frozen pre-trained image encoder).
    """

    def __init__(self, width: int, patch_size: int, generator: torch.Generator,
                 in_channels: int = 1, depth: int = 1, heads: int = 2,
                 max_patches: int = 256, trainable: bool = True,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if width % heads != 0:
            raise ConfigError(f"image encoder width {width} not divisible by heads {heads}")
        self.patch_size = patch_size
        self.in_channels = in_channels
        self.patch_embed = VectorEncoder(in_channels * patch_size * patch_size, width,
                                         generator, dtype)
        self.pos = nn.Parameter(torch.zeros(max_patches, width, dtype=dtype))
        self.blocks = nn.ModuleList(
            _ImageBlock(width, heads, generator, dtype) for _ in range(depth)
        )
        if not trainable:
            for p in self.parameters():
                p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # accepts [H, W], [H, W, C], or [B, H, W, C]
        if x.dim() == 2:
            x = x.unsqueeze(-1)
        squeeze = x.dim() == 3
        if squeeze:
            x = x.unsqueeze(0)
        b, hgt, wid, c = x.shape
        p = self.patch_size
        if hgt % p != 0 or wid % p != 0:
            raise InputError(f"image dims {hgt}x{wid} not divisible by patch size {p}")
        if c != self.in_channels:
            raise InputError(f"expected {self.in_channels} image channels, got {c}")
        n = (hgt // p) * (wid // p)
        if n > self.pos.shape[0]:
            raise InputError(f"{n} patches exceed configured max of {self.pos.shape[0]}")
        patches = (
            x.permute(0, 3, 1, 2)
            .unfold(2, p, p).unfold(3, p, p)
            .permute(0, 2, 3, 1, 4, 5)
            .reshape(b, n, c * p * p)
        )
        h = self.patch_embed(patches) + self.pos[:n]
        for block in self.blocks:
            h = block(h)
        out = h.mean(dim=1)
        return out.squeeze(0) if squeeze else out


class GraphObs:
    """A DAG snapshot: node feature rows plus (parent, child) edges."""

    def __init__(self, nodes, edges, runnable=None, node_ids=None):
        self.nodes = np.asarray(nodes, dtype=np.float64)
        if self.nodes.ndim != 2:
            raise InputError("graph nodes must be a 2-D feature array")
        self.edges = [(int(p), int(c)) for p, c in edges]
        n = self.nodes.shape[0]
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n):
                raise InputError(f"edge ({p}, {c}) references a missing node")
        self.runnable = list(runnable) if runnable is not None else [True] * n
        self.node_ids = list(node_ids) if node_ids is not None else list(range(n))

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    def check_acyclic(self) -> None:
        n = self.num_nodes
        indeg = [0] * n
        children: list[list[int]] = [[] for _ in range(n)]
        for p, c in self.edges:
            indeg[c] += 1
            children[p].append(c)
        queue = [v for v in range(n) if indeg[v] == 0]
        seen = 0
        while queue:
            v = queue.pop()
            seen += 1
            for c in children[v]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if seen != n:
            bad = next((p, c) for p, c in self.edges if indeg[c] > 0)
            raise InputError(f"graph contains a cycle through edge {bad}")

    def to_jsonable(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "edges": [list(e) for e in self.edges],
            "runnable": [bool(r) for r in self.runnable],
            "node_ids": self.node_ids,
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "GraphObs":
        return cls(d["nodes"], [tuple(e) for e in d["edges"]],
                   d.get("runnable"), d.get("node_ids"))


class GraphEncoder(nn.Module):
    """Message passing over DAG edges: children aggregate parents for K rounds.

    Node attributes go through a two-layer transform; each round adds a
    transformed parent-sum to nodes that have parents. The pooled summary is
    the mean of the final node features.
    """

    def __init__(self, in_features: int, width: int, generator: torch.Generator,
                 rounds: int = 2, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.node_fc1 = VectorEncoder(in_features, width, generator, dtype)
        self.node_fc2 = VectorEncoder(width, width, generator, dtype)
        self.msg_fc1 = VectorEncoder(width, width, generator, dtype)
        self.msg_fc2 = VectorEncoder(width, width, generator, dtype)
        self.rounds = rounds
        self.width = width
        self.dtype = dtype

    def _node_transform(self, x: torch.Tensor) -> torch.Tensor:
        return self.node_fc2(torch.relu(self.node_fc1(x)))

    def _message_transform(self, m: torch.Tensor) -> torch.Tensor:
        return self.msg_fc2(torch.relu(self.msg_fc1(m)))

    def forward(self, graph: GraphObs) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (per-node features [N, width], pooled summary [width])."""
        node_feats, pooled = self.forward_batch([graph])
        return node_feats[0], pooled[0]

    def forward_batch(self, graphs: list[GraphObs]) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Encode several graphs as one disjoint union (single message pass)."""
        if not graphs:
            raise InputError("no graphs to encode")
        offsets = []
        total = 0
        for g in graphs:
            g.check_acyclic()
            offsets.append(total)
            total += g.num_nodes
        x = torch.cat([
            torch.as_tensor(g.nodes, dtype=self.dtype) for g in graphs
        ])
        src = []
        dst = []
        for g, off in zip(graphs, offsets):
            for p, c in g.edges:
                src.append(p + off)
                dst.append(c + off)
        h = self._node_transform(x)
        if src:
            src_t = torch.tensor(src, dtype=torch.long)
            dst_t = torch.tensor(dst, dtype=torch.long)
            has_parent = torch.zeros(total, 1, dtype=self.dtype)
            has_parent.index_add_(0, dst_t, torch.ones(len(dst), 1, dtype=self.dtype))
            has_parent = (has_parent > 0).to(self.dtype)
            for _ in range(self.rounds):
                msg = torch.zeros(total, self.width, dtype=self.dtype)
                msg = msg.index_add(0, dst_t, h[src_t])
                h = h + has_parent * self._message_transform(msg)
        per_node = []
        pooled = []
        for g, off in zip(graphs, offsets):
            feats = h[off:off + g.num_nodes]
            per_node.append(feats)
            pooled.append(feats.mean(dim=0))
        return per_node, torch.stack(pooled)


class Projection(nn.Module):
    """Per-input linear map into token space followed by layer normalization."""

    def __init__(self, in_width: int, model_dim: int, generator: torch.Generator,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        w = torch.empty(in_width, model_dim, dtype=dtype)
        _init_linear(w, generator)
        self.weight = nn.Parameter(w)
        self.bias = nn.Parameter(torch.zeros(model_dim, dtype=dtype))
        self.norm = nn.LayerNorm(model_dim, dtype=dtype)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return self.norm(f @ self.weight + self.bias)


DEFAULT_FEATURE_WIDTH = 256


class MultimodalEncoder(nn.Module):
    """Registry of per-input encoders and projections producing token embeddings.

    Each declared input owns its encoder instance and projection matrix, so
    modalities never share parameters. `encode_state` walks the declaration
    order and emits one embedding per input piece.
    """

    def __init__(self, inputs: list[ModalityInput], model_dim: int,
                 generator: torch.Generator, feature_width: int = DEFAULT_FEATURE_WIDTH,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.inputs = list(inputs)
        self.model_dim = model_dim
        self.dtype = dtype
        self.encoders = nn.ModuleDict()
        self.projections = nn.ModuleDict()
        for spec in self.inputs:
            width = spec.params.get("width", feature_width)
            self.encoders[spec.name] = self._build_encoder(spec, width, generator)
            self.projections[spec.name] = Projection(width, model_dim, generator, dtype)

    def _build_encoder(self, spec: ModalityInput, width: int,
                       generator: torch.Generator) -> nn.Module:
        kind, p = spec.kind, spec.params
        if kind in (ModalityKind.TIME_SERIES, ModalityKind.SEQUENCE):
            return ConvSeriesEncoder(width, p.get("kernel", 3), generator,
                                     in_channels=p.get("in_channels", 1), dtype=self.dtype)
        if kind in (ModalityKind.SCALAR, ModalityKind.RETURN_VALUE):
            return ScalarEncoder(width, generator, self.dtype,
                                 in_width=p.get("in_width", 1))
        if kind == ModalityKind.IMAGE:
            return ImageEncoder(width, p.get("patch_size", 8), generator,
                                in_channels=p.get("in_channels", 1),
                                depth=p.get("depth", 1), heads=p.get("heads", 2),
                                max_patches=p.get("max_patches", 256),
                                trainable=p.get("trainable", True), dtype=self.dtype)
        if kind == ModalityKind.GRAPH:
            return GraphEncoder(p["in_features"], width, generator,
                                rounds=p.get("rounds", 2), dtype=self.dtype)
        raise ConfigError(f"no encoder for modality kind {kind!r}")

    # -- single-input paths ----------------------------------------------

    def _spec(self, name: str) -> ModalityInput:
        for spec in self.inputs:
            if spec.name == name:
                return spec
        raise ConfigError(f"input {name!r} is not registered")

    def input_scale(self, name: str) -> float:
        """Declared pre-encoding multiplier (keeps raw units in the dataset)."""
        return float(self._spec(name).params.get("scale", 1.0))

    def encode(self, name: str, value) -> torch.Tensor:
        """Run the feature encoder registered for `name` (no projection)."""
        enc = self.encoders[self._spec(name).name]
        if isinstance(enc, GraphEncoder):
            _, pooled = enc(value)
            return pooled
        return enc(self._as_tensor(value) * self.input_scale(name))

    def project(self, name: str, feature: torch.Tensor) -> torch.Tensor:
        if name not in self.projections:
            raise ConfigError(f"input {name!r} is not registered")
        return self.projections[name](feature)

    def encode_token(self, name: str, value) -> torch.Tensor:
        return self.project(name, self.encode(name, value))

    def encode_state(self, state: dict) -> torch.Tensor:
        """One embedding per configured input piece, in declaration order."""
        tokens = []
        for spec in self.inputs:
            if spec.name not in state:
                raise ConfigError(f"state is missing declared input {spec.name!r}")
            value = state[spec.name]
            if spec.per_item:
                for item in value:
                    tokens.append(self.encode_token(spec.name, item))
            else:
                tokens.append(self.encode_token(spec.name, value))
        return torch.stack(tokens)

    def _as_tensor(self, value) -> torch.Tensor:
        if isinstance(value, torch.Tensor):
            return value.to(self.dtype)
        return torch.as_tensor(np.asarray(value, dtype=np.float64), dtype=self.dtype)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)
