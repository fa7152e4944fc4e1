"""Small frozen causal sequence model with low-rank adapters.

The backbone consumes pre-built token embeddings (there is no tokenizer,
vocabulary or LM head) and exposes the freeze-and-adapt contract: base
weights are frozen at construction and checksummed, while trainable
low-rank (A, B) pairs ride on selected projection matrices.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ContextOverflowError

ADAPTER_ROLES = ("attn_q", "attn_k", "attn_v", "attn_o", "mlp_fc", "mlp_proj")

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class BackboneConfig:
    num_layers: int = 2
    model_dim: int = 64
    num_heads: int = 2
    max_context: int = 128
    adapter_rank: int = 8
    adapter_targets: tuple[str, ...] = ("attn_q", "attn_v")
    mlp_ratio: int = 4
    init_std: float = 0.08
    dtype: str = "float32"

    def __post_init__(self):
        if self.num_layers < 1 or self.model_dim < 1 or self.num_heads < 1:
            raise ConfigError("num_layers, model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"num_heads={self.num_heads} must divide model_dim={self.model_dim}"
            )
        if self.max_context < 1:
            raise ConfigError("max_context must be positive")
        if self.adapter_rank < 1:
            raise ConfigError("adapter_rank must be positive")
        # rank must stay below min(d, k) for every adapted matrix; the
        # smallest adapted dimension is model_dim itself.
        if self.adapter_targets and self.adapter_rank >= self.model_dim:
            raise ConfigError(
                f"adapter_rank={self.adapter_rank} must be < model_dim={self.model_dim}"
            )
        for t in self.adapter_targets:
            if t not in ADAPTER_ROLES:
                raise ConfigError(f"unknown adapter target {t!r}; valid: {ADAPTER_ROLES}")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "model_dim": self.model_dim,
            "num_heads": self.num_heads,
            "max_context": self.max_context,
            "adapter_rank": self.adapter_rank,
            "adapter_targets": list(self.adapter_targets),
            "mlp_ratio": self.mlp_ratio,
            "init_std": self.init_std,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        if "adapter_targets" in d:
            d["adapter_targets"] = tuple(d["adapter_targets"])
        return cls(**d)


class LowRankAdapter(nn.Module):
    """Trainable (A, B) pair approximating the update of a frozen d_in x d_out matrix.

    B starts at zero so the adapted output equals the frozen output at
    initialization; no extra scaling factor is applied to the AB product.
    """

    def __init__(self, d_in: int, d_out: int, rank: int, target: str,
                 generator: torch.Generator | None = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        if rank >= min(d_in, d_out):
            raise ConfigError(
                f"rank {rank} must be < min({d_in}, {d_out}) for adapter on {target!r}"
            )
        self.target = target
        a = torch.empty(d_in, rank, dtype=dtype)
        a.normal_(0.0, 0.02, generator=generator)
        self.A = nn.Parameter(a)
        self.B = nn.Parameter(torch.zeros(rank, d_out, dtype=dtype))

    def delta(self, x: torch.Tensor) -> torch.Tensor:
        # low-rank path, never materializes the dense A @ B product
        return (x @ self.A) @ self.B


def apply_adapter(x: torch.Tensor, w0: torch.Tensor, adapter: LowRankAdapter) -> torch.Tensor:
    """Compute x @ W0 + (x @ A) @ B with row-vector convention (W0 is d x k)."""
    d, k = w0.shape
    if x.shape[-1] != d:
        raise ConfigError(f"input width {x.shape[-1]} does not match W0 rows {d}")
    if adapter.A.shape[0] != d:
        raise ConfigError(
            f"adapter A has {adapter.A.shape[0]} rows, expected {d} (matrix {adapter.target!r})"
        )
    if adapter.B.shape[1] != k:
        raise ConfigError(
            f"adapter B has {adapter.B.shape[1]} cols, expected {k} (matrix {adapter.target!r})"
        )
    if adapter.A.shape[1] != adapter.B.shape[0]:
        raise ConfigError(
            f"adapter rank mismatch: A is {tuple(adapter.A.shape)}, B is {tuple(adapter.B.shape)}"
        )
    return x @ w0 + adapter.delta(x)


class AdaptedLinear(nn.Module):
    """Frozen linear map with an optional low-rank adapter on its weight."""

    def __init__(self, d_in: int, d_out: int, role: str, rank: int, adapted: bool,
                 generator: torch.Generator, adapter_generator: torch.Generator,
                 dtype: torch.dtype, init_std: float):
        super().__init__()
        w = torch.empty(d_in, d_out, dtype=dtype)
        w.normal_(0.0, init_std, generator=generator)
        self.weight = nn.Parameter(w, requires_grad=False)
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=dtype), requires_grad=False)
        # adapters draw from their own stream so the frozen weights are
        # identical whether or not a given matrix is adapted
        self.adapter = (
            LowRankAdapter(d_in, d_out, rank, role, generator=adapter_generator,
                           dtype=dtype)
            if adapted else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x @ self.weight + self.bias
        if self.adapter is not None:
            y = y + self.adapter.delta(x)
        return y


class _Block(nn.Module):
    """Pre-norm transformer block: attention then GELU MLP, both residual."""

    def __init__(self, cfg: BackboneConfig, generator: torch.Generator,
                 adapter_generator: torch.Generator):
        super().__init__()
        d, dt = cfg.model_dim, cfg.torch_dtype
        hidden = cfg.mlp_ratio * d
        targets = set(cfg.adapter_targets)

        def lin(d_in, d_out, role):
            return AdaptedLinear(d_in, d_out, role, cfg.adapter_rank,
                                 role in targets, generator, adapter_generator,
                                 dt, cfg.init_std)

        self.ln1 = nn.LayerNorm(d, dtype=dt)
        self.q = lin(d, d, "attn_q")
        self.k = lin(d, d, "attn_k")
        self.v = lin(d, d, "attn_v")
        self.o = lin(d, d, "attn_o")
        self.ln2 = nn.LayerNorm(d, dtype=dt)
        self.fc = lin(d, hidden, "mlp_fc")
        self.proj = lin(hidden, d, "mlp_proj")
        self.num_heads = cfg.num_heads
        self.head_dim = d // cfg.num_heads
        for p in self.ln1.parameters():
            p.requires_grad_(False)
        for p in self.ln2.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        h = self.ln1(x)
        q = self.q(h).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k(h).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v(h).view(b, t, self.num_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~allowed.unsqueeze(1), float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.o(out)
        h = self.ln2(x)
        x = x + self.proj(torch.nn.functional.gelu(self.fc(h)))
        return x


class Backbone(nn.Module):
    """Frozen causal transformer over externally produced token embeddings.

    Every forward() call bumps `forward_calls`; the test harness uses the
    counter to assert the one-forward-per-decision contract.
    """

    def __init__(self, config: BackboneConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        adapter_gen = torch.Generator().manual_seed(seed + 0x5EED)
        self.blocks = nn.ModuleList(
            _Block(config, gen, adapter_gen) for _ in range(config.num_layers)
        )
        self.ln_f = nn.LayerNorm(config.model_dim, dtype=config.torch_dtype)
        for p in self.ln_f.parameters():
            p.requires_grad_(False)
        self.forward_calls = 0

    # -- forward ---------------------------------------------------------

    def forward(self, embeddings: torch.Tensor,
                attention_mask: torch.Tensor | None = None) -> torch.Tensor:
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        b, t, d = embeddings.shape
        if d != self.config.model_dim:
            raise ConfigError(f"embedding width {d} != model_dim {self.config.model_dim}")
        if t > self.config.max_context:
            raise ContextOverflowError(
                f"sequence length {t} exceeds max_context {self.config.max_context}"
            )
        if attention_mask is None:
            valid = torch.ones(b, t, dtype=torch.bool, device=embeddings.device)
        else:
            valid = attention_mask.to(torch.bool)
            if valid.dim() == 1:
                valid = valid.unsqueeze(0).expand(b, t)
        causal = torch.tril(torch.ones(t, t, dtype=torch.bool, device=embeddings.device))
        allowed = causal.unsqueeze(0) & valid.unsqueeze(1)
        # padded query rows keep their diagonal so softmax never sees an
        # all-masked row; their outputs are ignored downstream
        idx = torch.arange(t, device=embeddings.device)
        allowed[:, idx, idx] = True

        self.forward_calls += 1
        x = embeddings
        for block in self.blocks:
            x = block(x, allowed)
        x = self.ln_f(x)
        return x.squeeze(0) if squeeze else x

    # -- freeze contract -------------------------------------------------

    def frozen_parameters(self) -> dict[str, torch.Tensor]:
        return {n: p for n, p in self.named_parameters() if not p.requires_grad}

    def frozen_checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.frozen_parameters()):
            p = self.frozen_parameters()[name]
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    def adapter_pairs(self) -> list[tuple[str, nn.Parameter, nn.Parameter]]:
        pairs = []
        for name, mod in self.named_modules():
            if isinstance(mod, LowRankAdapter):
                pairs.append((name, mod.A, mod.B))
        return pairs

    def trainable_parameters(self) -> dict[str, nn.Parameter]:
        """Adapter (A, B) blocks only; encoders and heads enumerate their own."""
        out = {}
        for name, p in self.named_parameters():
            if p.requires_grad:
                out[name] = p
        return out

    def adapter_parameter_count(self) -> int:
        return sum(p.numel() for p in self.trainable_parameters().values())

    def frozen_parameter_count(self) -> int:
        return sum(p.numel() for p in self.frozen_parameters().values())

    def trainable_fraction(self, encoder_params: int = 0, head_params: int = 0) -> float:
        trainable = self.adapter_parameter_count() + encoder_params + head_params
        if trainable == 0:
            raise ConfigError("no trainable parameter block configured")
        return trainable / (trainable + self.frozen_parameter_count())

    # -- persistence -----------------------------------------------------

    def state_blocks(self) -> dict[str, np.ndarray]:
        return {n: p.detach().cpu().numpy().copy() for n, p in self.named_parameters()}

    def load_state_blocks(self, blocks: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        for name, arr in blocks.items():
            if name not in own:
                raise ConfigError(f"unknown parameter block {name!r}")
            with torch.no_grad():
                own[name].copy_(torch.from_numpy(np.asarray(arr)))
