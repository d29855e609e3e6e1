"""Feature extraction: volume encoder, token-compressing adapter, mask encoder.

The texture path runs a 3D patch-attention encoder over a fixed-size grid and
compresses its tokens to a fixed number of decoder-width embeddings with a
latent-query cross-attention adapter. The geometry path runs a lightweight
3-layer encoder over the uncropped mask, mean-pools the tokens, and projects
the pooled vector to decoder width. The global path reuses the texture
encoder and adapter weights on the whole volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .blocks import CrossAttention, FeedForward, TransformerBlock, trunc_normal_init
from .errors import ValidationError


@dataclass
class EncoderConfig:
    patch_size: tuple[int, int, int] = (8, 8, 8)
    model_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4
    adapter_latents: int = 32
    llm_dim: int = 192
    mask_patch_size: tuple[int, int, int] = (8, 8, 8)
    mask_model_dim: int = 64
    mask_num_heads: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        self.patch_size = tuple(int(p) for p in self.patch_size)
        self.mask_patch_size = tuple(int(p) for p in self.mask_patch_size)
        if self.adapter_latents < 1:
            raise ValidationError("adapter_latents must be >= 1")
        for name in ("model_dim", "num_layers", "num_heads", "llm_dim", "mask_model_dim", "mask_num_heads"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")


@dataclass
class LocalFeature:
    """Per-region embedding block: texture rows first, then one geometry row.

    area_name is supervision metadata only; it is never fed to the decoder.
    """

    embeddings: torch.Tensor
    area_name: str


GlobalFeature = torch.Tensor  # (adapter_latents, llm_dim)


def _check_divisible(dims, patch) -> tuple[int, int, int]:
    grid = []
    for d, p in zip(dims, patch):
        if d % p != 0:
            raise ValidationError(f"input dims {tuple(dims)} not divisible by patch size {tuple(patch)}")
        grid.append(d // p)
    return tuple(grid)


def _as_input_tensor(grid, like: nn.Module) -> torch.Tensor:
    p = next(like.parameters())
    if isinstance(grid, np.ndarray):
        grid = torch.from_numpy(np.ascontiguousarray(grid))
    return grid.to(dtype=p.dtype)


class VolumeEncoder(nn.Module):
    """Non-overlapping 3D patch embedding + learned positions + attention layers."""

    def __init__(self, input_dims, patch_size, model_dim: int, num_layers: int,
                 num_heads: int, dropout: float = 0.0):
        super().__init__()
        self.input_dims = tuple(int(d) for d in input_dims)
        self.patch_size = tuple(int(p) for p in patch_size)
        grid = _check_divisible(self.input_dims, self.patch_size)
        self.num_tokens = grid[0] * grid[1] * grid[2]
        self.patch_embed = nn.Conv3d(1, model_dim, kernel_size=self.patch_size, stride=self.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.num_tokens, model_dim))
        self.layers = nn.ModuleList(
            TransformerBlock(model_dim, num_heads, dropout=dropout) for _ in range(num_layers)
        )
        self.norm = nn.LayerNorm(model_dim)
        trunc_normal_init(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def forward(self, grid) -> torch.Tensor:
        """(H, W, D) scalar grid -> (num_tokens, model_dim)."""
        x = _as_input_tensor(grid, self)
        if tuple(x.shape) != self.input_dims:
            raise ValidationError(f"expected input dims {self.input_dims}, got {tuple(x.shape)}")
        x = self.patch_embed(x[None, None])  # (1, C, gx, gy, gz)
        x = x.flatten(2).transpose(1, 2)  # (1, L, C)
        x = x + self.pos_embed
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)[0]


class FeatureAdapter(nn.Module):
    """Fixed count of learned latent queries cross-attending to encoder tokens."""

    def __init__(self, model_dim: int, llm_dim: int, num_latents: int = 32,
                 num_heads: int = 4, depth: int = 2, dropout: float = 0.0):
        super().__init__()
        self.model_dim = model_dim
        self.latents = nn.Parameter(torch.zeros(1, num_latents, model_dim))
        self.blocks = nn.ModuleList()
        for _ in range(depth):
            self.blocks.append(nn.ModuleDict({
                "norm_q": nn.LayerNorm(model_dim),
                "norm_kv": nn.LayerNorm(model_dim),
                "cross": CrossAttention(model_dim, num_heads, dropout=dropout),
                "norm_ff": nn.LayerNorm(model_dim),
                "ff": FeedForward(model_dim, dropout=dropout),
            }))
        self.out_norm = nn.LayerNorm(model_dim)
        self.out_proj = nn.Linear(model_dim, llm_dim)
        trunc_normal_init(self)
        nn.init.trunc_normal_(self.latents, std=0.02)
        # emit rows at the scale of the decoder's token embeddings, so their
        # positional component stays visible inside the decoder's layer norms
        nn.init.trunc_normal_(self.out_proj.weight, std=0.02)
        nn.init.zeros_(self.out_proj.bias)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """(L, model_dim) -> (num_latents, llm_dim); output count independent of L."""
        if tokens.shape[-1] != self.model_dim:
            raise ValidationError(f"token width {tokens.shape[-1]} != model_dim {self.model_dim}")
        ctx = tokens[None]
        x = self.latents.to(ctx.dtype)
        for blk in self.blocks:
            x = x + blk["cross"](blk["norm_q"](x), blk["norm_kv"](ctx))
            x = x + blk["ff"](blk["norm_ff"](x))
        return self.out_proj(self.out_norm(x))[0]


class MaskEncoder(nn.Module):
    """3 attention layers over mask patches, mean-pooled, projected to llm_dim."""

    NUM_LAYERS = 3

    def __init__(self, input_dims, patch_size, model_dim: int, num_heads: int,
                 llm_dim: int, dropout: float = 0.0):
        super().__init__()
        self.input_dims = tuple(int(d) for d in input_dims)
        self.patch_size = tuple(int(p) for p in patch_size)
        grid = _check_divisible(self.input_dims, self.patch_size)
        self.num_tokens = grid[0] * grid[1] * grid[2]
        self.patch_embed = nn.Conv3d(1, model_dim, kernel_size=self.patch_size, stride=self.patch_size)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.num_tokens, model_dim))
        self.layers = nn.ModuleList(
            TransformerBlock(model_dim, num_heads, dropout=dropout) for _ in range(self.NUM_LAYERS)
        )
        self.norm = nn.LayerNorm(model_dim)
        self.project = nn.Linear(model_dim, llm_dim)
        trunc_normal_init(self)
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        # match the decoder's token-embedding scale (see FeatureAdapter)
        nn.init.trunc_normal_(self.project.weight, std=0.02)
        nn.init.zeros_(self.project.bias)

    def forward(self, grid) -> torch.Tensor:
        """(H, W, D) binary grid -> (1, llm_dim)."""
        x = _as_input_tensor(grid, self)
        if tuple(x.shape) != self.input_dims:
            raise ValidationError(f"expected input dims {self.input_dims}, got {tuple(x.shape)}")
        x = self.patch_embed(x[None, None]).flatten(2).transpose(1, 2)
        x = x + self.pos_embed
        for layer in self.layers:
            x = layer(x)
        pooled = self.norm(x).mean(dim=1)  # (1, model_dim)
        return self.project(pooled)


class FeatureEncoders(nn.Module):
    """Bundles the texture, geometry, and global paths behind one module.

    The global path shares the texture path's encoder and adapter weights.
    """

    def __init__(self, cfg: EncoderConfig, texture_dims, geometry_dims):
        super().__init__()
        self.cfg = cfg
        self.volume_encoder = VolumeEncoder(
            texture_dims, cfg.patch_size, cfg.model_dim, cfg.num_layers, cfg.num_heads, cfg.dropout
        )
        self.adapter = FeatureAdapter(
            cfg.model_dim, cfg.llm_dim, cfg.adapter_latents, cfg.num_heads, dropout=cfg.dropout
        )
        self.mask_encoder = MaskEncoder(
            geometry_dims, cfg.mask_patch_size, cfg.mask_model_dim, cfg.mask_num_heads,
            cfg.llm_dim, cfg.dropout
        )

    def encode_texture(self, grid) -> torch.Tensor:
        return self.volume_encoder(grid)

    def adapt(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.adapter(tokens)

    def encode_mask(self, grid) -> torch.Tensor:
        return self.mask_encoder(grid)

    def texture_feature(self, grid) -> torch.Tensor:
        return self.adapt(self.encode_texture(grid))

    def encode_global(self, grid) -> GlobalFeature:
        # identical weights to the texture path, by construction
        return self.adapt(self.encode_texture(grid))

    def build_local_feature(self, texture: torch.Tensor | None, geometry: torch.Tensor | None,
                            area_name: str) -> LocalFeature:
        """Concatenate texture rows then the geometry row for one region."""
        if texture is None:
            raise ValidationError("texture features cannot be ablated; only geometry can")
        if geometry is None:
            return LocalFeature(embeddings=texture, area_name=area_name)
        if texture.shape[-1] != geometry.shape[-1]:
            raise ValidationError(
                f"texture width {texture.shape[-1]} != geometry width {geometry.shape[-1]}"
            )
        return LocalFeature(embeddings=torch.cat([texture, geometry], dim=0), area_name=area_name)

    def local_feature(self, texture_grid, geometry_grid, area_name: str,
                      use_geometry: bool = True) -> LocalFeature:
        texture = self.texture_feature(texture_grid)
        geometry = self.encode_mask(geometry_grid) if use_geometry else None
        return self.build_local_feature(texture, geometry, area_name)
