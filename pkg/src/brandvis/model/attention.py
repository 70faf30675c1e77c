"""Linear-complexity attention and the transformer encoder built on it.

Standard dot-product attention forms an n x n affinity matrix. Here the two
softmaxes are moved inside the product instead:

    E(Q, K, V) = rho_q(Q) @ (rho_k(K)^T @ V)

with rho_q a softmax over the key dimension (each token's query sums to 1)
and rho_k a softmax over the token dimension (each key channel sums to 1).
The inner product is (d_k x d_v), so memory stays linear in sequence length.
"""
from __future__ import annotations

import torch
from torch import nn


def efficient_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Apply the factorized attention to projected tensors.

    q, k: (B, n, d_k); v: (B, n, d_v). Returns (B, n, d_v). The n x n
    attention matrix is never formed.
    """
    if q.dim() != 3 or k.dim() != 3 or v.dim() != 3:
        raise ValueError("expected (B, n, d) tensors")
    if q.shape != k.shape or k.shape[:2] != v.shape[:2]:
        raise ValueError(f"mismatched shapes: {tuple(q.shape)}, {tuple(k.shape)}, {tuple(v.shape)}")
    rho_q = q.softmax(dim=2)  # normalize each query over d_k
    rho_k = k.softmax(dim=1)  # normalize each key channel over tokens
    context = rho_k.transpose(1, 2) @ v  # (B, d_k, d_v)
    return rho_q @ context


class EfficientAttention(nn.Module):
    """Single-head efficient attention with d_k = dim // 2 and d_v = dim."""

    def __init__(self, dim: int) -> None:
        super().__init__()
        if dim % 2 != 0:
            raise ValueError(f"dim must be even to halve the key width, got {dim}")
        self.dim = dim
        self.d_k = dim // 2
        self.d_v = dim
        self.to_q = nn.Linear(dim, self.d_k)
        self.to_k = nn.Linear(dim, self.d_k)
        self.to_v = nn.Linear(dim, self.d_v)
        self.to_out = nn.Linear(self.d_v, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.to_out(efficient_attention(self.to_q(x), self.to_k(x), self.to_v(x)))


class EncoderLayer(nn.Module):
    """Pre-norm block: attention then MLP, each behind a residual."""

    def __init__(self, dim: int, mlp_ratio: int = 4) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = EfficientAttention(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class TransformerEncoder(nn.Module):
    """A short stack of encoder layers over one scale's token sequence."""

    def __init__(self, dim: int, depth: int = 2, mlp_ratio: int = 4) -> None:
        super().__init__()
        self.dim = dim
        self.layers = nn.ModuleList(EncoderLayer(dim, mlp_ratio) for _ in range(depth))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x
