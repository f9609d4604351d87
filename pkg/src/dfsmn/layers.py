"""Sequence-layer math: low-rank projection, FIR-style memory blocks, output
transforms, and hand-written backward passes for all of them.

A memory-block layer computes, per frame t of the projected sequence p:

    ptilde[t] = [skip[t] +] p[t] + sum_{i=0..n_back}  back_taps[i]  * p[t - stride_back * i]
                                 + sum_{j=1..n_ahead} ahead_taps[j-1] * p[t + stride_ahead * j]

with element-wise tap vectors and zero padding outside [0, T). The layer output
is act(ptilde @ out_weight + out_bias). The optional skip input is the previous
layer's ptilde added through an identity map, which requires equal projection
widths across skip-connected layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .tensor import ShapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def activate(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0)
    if name == "tanh":
        return np.tanh(pre)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-pre))
    if name == "linear":
        return pre
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


def activate_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    """d out / d pre, from the cached pre-activation and output."""
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "tanh":
        return 1.0 - out * out
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "linear":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")


@dataclass(frozen=True)
class MemoryConfig:
    """Tap layout of one memory block: orders, strides, and the skip flag."""

    n_back: int = 0
    n_ahead: int = 0
    stride_back: int = 1
    stride_ahead: int = 1
    skip: bool = False

    def __post_init__(self):
        if self.n_back < 0 or self.n_ahead < 0:
            raise ValueError(f"orders must be >= 0, got {self.n_back},{self.n_ahead}")
        if self.stride_back < 1 or self.stride_ahead < 1:
            raise ValueError(
                f"strides must be >= 1, got {self.stride_back},{self.stride_ahead}")


@dataclass
class DfsmnLayerParams:
    """All learnable tensors of one memory-block layer.

    back_taps holds n_back+1 vectors (tap 0 weights the current frame, on top
    of the fixed identity contribution); ahead_taps holds n_ahead vectors for
    future frames. Every tap vector has the projection width.
    """

    proj_weight: np.ndarray   # d_in x d_proj
    proj_bias: np.ndarray     # d_proj
    back_taps: np.ndarray     # (n_back+1) x d_proj
    ahead_taps: np.ndarray    # n_ahead x d_proj
    out_weight: np.ndarray    # d_proj x d_hidden
    out_bias: np.ndarray      # d_hidden


def project(h_seq: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Per-frame linear projection onto the memory-block width."""
    if h_seq.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"projection input dim {h_seq.shape[1]} != weight rows {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    return h_seq @ weight + bias


def memory_block(p_seq: np.ndarray, back_taps: np.ndarray, ahead_taps: np.ndarray,
                 cfg: MemoryConfig, skip_seq: Optional[np.ndarray] = None) -> np.ndarray:
    """Weighted tap sum over past/future projected frames, zero padded."""
    _check_block_args(p_seq, back_taps, ahead_taps, cfg, skip_seq)
    T = p_seq.shape[0]
    out = p_seq.copy()
    if skip_seq is not None:
        out += skip_seq
    for i in range(cfg.n_back + 1):
        k = i * cfg.stride_back
        if k == 0:
            out += back_taps[i] * p_seq
        elif k < T:
            out[k:] += back_taps[i] * p_seq[:-k]
    for j in range(1, cfg.n_ahead + 1):
        k = j * cfg.stride_ahead
        if k < T:
            out[:-k] += ahead_taps[j - 1] * p_seq[k:]
    return out


def memory_block_backward(grad_ptilde: np.ndarray, p_seq: np.ndarray,
                          back_taps: np.ndarray, ahead_taps: np.ndarray,
                          cfg: MemoryConfig, has_skip: bool):
    """Gradients of the tap sum: returns (d p_seq, d back_taps, d ahead_taps, d skip)."""
    T = p_seq.shape[0]
    g = grad_ptilde
    gp = g.copy()
    d_back = np.zeros_like(back_taps)
    d_ahead = np.zeros_like(ahead_taps)
    for i in range(cfg.n_back + 1):
        k = i * cfg.stride_back
        if k == 0:
            gp += back_taps[i] * g
            d_back[i] = (g * p_seq).sum(axis=0)
        elif k < T:
            gp[:-k] += back_taps[i] * g[k:]
            d_back[i] = (g[k:] * p_seq[:-k]).sum(axis=0)
    for j in range(1, cfg.n_ahead + 1):
        k = j * cfg.stride_ahead
        if k < T:
            gp[k:] += ahead_taps[j - 1] * g[:-k]
            d_ahead[j - 1] = (g[:-k] * p_seq[k:]).sum(axis=0)
    g_skip = g.copy() if has_skip else None
    return gp, d_back, d_ahead, g_skip


def layer_output(ptilde_seq: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                 activation: str) -> np.ndarray:
    """Affine transform plus nonlinearity producing the next hidden sequence."""
    if ptilde_seq.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"output input dim {ptilde_seq.shape[1]} != weight rows {weight.shape[0]}")
    return activate(activation, ptilde_seq @ weight + bias)


@dataclass
class DfsmnLayerCache:
    h_seq: np.ndarray
    p_seq: np.ndarray
    ptilde_seq: np.ndarray
    pre_seq: np.ndarray
    out_seq: np.ndarray
    params: DfsmnLayerParams
    cfg: MemoryConfig
    activation: str


@dataclass
class FcLayerCache:
    h_seq: np.ndarray
    pre_seq: np.ndarray
    out_seq: np.ndarray
    weight: np.ndarray
    activation: str


def dfsmn_layer_forward(h_seq: np.ndarray, params: DfsmnLayerParams, cfg: MemoryConfig,
                        skip_seq: Optional[np.ndarray] = None, activation: str = "relu"):
    """Full layer: project -> memory block -> output transform.

    Returns (h_next, cache, ptilde); ptilde is what a following layer's skip
    input consumes.
    """
    p_seq = project(h_seq, params.proj_weight, params.proj_bias)
    ptilde = memory_block(p_seq, params.back_taps, params.ahead_taps, cfg, skip_seq)
    pre = ptilde @ params.out_weight + params.out_bias
    out = activate(activation, pre)
    cache = DfsmnLayerCache(h_seq, p_seq, ptilde, pre, out, params, cfg, activation)
    return out, cache, ptilde


def fc_layer_forward(h_seq: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                     activation: str):
    """Plain per-frame affine layer."""
    if h_seq.shape[1] != weight.shape[0]:
        raise ShapeError(f"fc input dim {h_seq.shape[1]} != weight rows {weight.shape[0]}")
    pre = h_seq @ weight + bias
    out = activate(activation, pre)
    return out, FcLayerCache(h_seq, pre, out, weight, activation)


def layer_backward(cache: DfsmnLayerCache, grad_out: np.ndarray,
                   grad_ptilde: Optional[np.ndarray] = None):
    """Backward pass of one memory-block layer.

    grad_out is dLoss/d h_next; grad_ptilde, when given, is the gradient that
    arrived at this layer's exported ptilde through a downstream skip path.
    Returns (grad_in, grad_skip or None, param gradients shaped like the
    layer's DfsmnLayerParams).
    """
    if grad_out.shape != cache.out_seq.shape:
        raise ShapeError(
            f"grad shape {grad_out.shape} != output shape {cache.out_seq.shape}")
    p = cache.params
    dpre = grad_out * activate_grad(cache.activation, cache.pre_seq, cache.out_seq)
    d_out_weight = cache.ptilde_seq.T @ dpre
    d_out_bias = dpre.sum(axis=0)
    dptilde = dpre @ p.out_weight.T
    if grad_ptilde is not None:
        dptilde = dptilde + grad_ptilde
    dp, d_back, d_ahead, g_skip = memory_block_backward(
        dptilde, cache.p_seq, p.back_taps, p.ahead_taps, cache.cfg, cache.cfg.skip)
    d_proj_weight = cache.h_seq.T @ dp
    d_proj_bias = dp.sum(axis=0)
    grad_in = dp @ p.proj_weight.T
    grads = DfsmnLayerParams(d_proj_weight, d_proj_bias, d_back, d_ahead,
                             d_out_weight, d_out_bias)
    return grad_in, g_skip, grads


def fc_layer_backward(cache: FcLayerCache, grad_out: np.ndarray):
    """Backward pass of a plain affine layer: (grad_in, d weight, d bias)."""
    if grad_out.shape != cache.out_seq.shape:
        raise ShapeError(
            f"grad shape {grad_out.shape} != output shape {cache.out_seq.shape}")
    dpre = grad_out * activate_grad(cache.activation, cache.pre_seq, cache.out_seq)
    d_weight = cache.h_seq.T @ dpre
    d_bias = dpre.sum(axis=0)
    grad_in = dpre @ cache.weight.T
    return grad_in, d_weight, d_bias


def _check_block_args(p_seq, back_taps, ahead_taps, cfg, skip_seq):
    d_proj = p_seq.shape[1]
    if back_taps.shape != (cfg.n_back + 1, d_proj):
        raise ShapeError(
            f"back taps shape {back_taps.shape} != ({cfg.n_back + 1}, {d_proj})")
    if ahead_taps.shape != (cfg.n_ahead, d_proj):
        raise ShapeError(
            f"ahead taps shape {ahead_taps.shape} != ({cfg.n_ahead}, {d_proj})")
    if cfg.skip and skip_seq is None:
        raise ShapeError("skip enabled but no skip sequence given")
    if not cfg.skip and skip_seq is not None:
        raise ShapeError("skip sequence given but skip flag is off")
    if skip_seq is not None and skip_seq.shape != p_seq.shape:
        raise ShapeError(
            f"skip shape {skip_seq.shape} != projected shape {p_seq.shape}")
