"""Multi-view stem and the dual-path temporal-spatial block.

The stem turns each view's frame sequence into a channel block of a shared
[C, H, W] feature map, keeping channels grouped by frame so the temporal
axis can be recovered downstream (channel c belongs to frame c // (C/T)).

The block runs two scan paths over the frame groups - a forward scan feeding
a 3x3-average local branch and a backward scan feeding a coarse-grid global
branch - merges them under a per-channel sigmoid gate, and adds the result
back onto the input through a learnable scalar:

    out = x + gamma * LN(gate (x) (local + global))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .ops import adaptive_avg_pool, avg_pool, convolve, depthwise_conv2d, expand_bins, \
    gelu, grouped_pointwise, linear
from .ssm import ScanDirection, SsmParams, compute_gate, init_ssm_params, scan
from .tensor import Tensor, add, concat, param, reshape, scale_by, scale_channels, \
    take_channels, transpose

EXTERIOR_VIEWS = ("front", "left", "right")
INTERIOR_VIEWS = ("inside", "face", "body")
VIEWS_PER_BRANCH = 3

GLOBAL_POOL_GRID = 3  # coarse grid of the global path's adaptive pooling


@dataclass
class ViewSequence:
    """One camera view: frames [T, 3, H_v, W_v] with pixels in [0, 1]."""

    view_id: str
    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise InputError(f"view {self.view_id}: frames must be [T, 3, H, W], "
                             f"got {self.frames.shape}")


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return param(rng.uniform(-limit, limit, size=shape))


@dataclass
class StemParams:
    """Per-view depthwise + frame-grouped pointwise convs for one branch."""

    view_ids: tuple
    depthwise_w: List[Tensor]   # per view [3T, 1, 3, 3]
    depthwise_b: List[Tensor]
    pointwise_w: List[Tensor]   # per view [T, cpf, 3]
    pointwise_b: List[Tensor]
    frame_count: int
    out_channels: int           # branch C
    height: int
    width: int

    def tensors(self):
        out = {}
        for i, vid in enumerate(self.view_ids):
            out[f"{vid}.dw_w"] = self.depthwise_w[i]
            out[f"{vid}.dw_b"] = self.depthwise_b[i]
            out[f"{vid}.pw_w"] = self.pointwise_w[i]
            out[f"{vid}.pw_b"] = self.pointwise_b[i]
        return out


def init_stem(view_ids: Sequence[str], frame_count: int, out_channels: int,
              height: int, width: int, rng: np.random.Generator,
              kernel_size: int = 3) -> StemParams:
    v = len(view_ids)
    if out_channels % (v * frame_count) != 0:
        raise ConfigError(f"stem: channels {out_channels} not divisible by "
                          f"views*frames = {v * frame_count}")
    cpf = out_channels // (v * frame_count)
    tc = 3 * frame_count
    k2 = kernel_size * kernel_size
    dw_w, dw_b, pw_w, pw_b = [], [], [], []
    for _ in view_ids:
        dw_w.append(_glorot(rng, (tc, 1, kernel_size, kernel_size), k2, k2))
        dw_b.append(param(np.zeros(tc)))
        pw_w.append(_glorot(rng, (frame_count, cpf, 3), 3, cpf))
        pw_b.append(param(np.zeros(frame_count * cpf)))
    return StemParams(tuple(view_ids), dw_w, dw_b, pw_w, pw_b,
                      frame_count, out_channels, height, width)


def stem(views: Sequence[ViewSequence], p: StemParams) -> Tensor:
    """Fuse one branch's views into a frame-major [C, H, W] feature map."""
    by_id = {v.view_id: v for v in views}
    missing = [vid for vid in p.view_ids if vid not in by_id]
    if missing:
        raise InputError(f"stem: missing view(s) {missing}")
    t = p.frame_count
    v = len(p.view_ids)
    cpf = p.out_channels // (v * t)

    feats = []
    for i, vid in enumerate(p.view_ids):
        frames = by_id[vid].frames
        if frames.shape[0] != t:
            raise InputError(f"view {vid}: {frames.shape[0]} frames, expected {t}")
        hv, wv = frames.shape[2], frames.shape[3]
        # center [0, 1] pixels so downstream features carry no common-mode DC;
        # no padding, so constant frames map to exactly constant features
        x = Tensor((frames - 0.5).reshape(3 * t, hv, wv))
        x = depthwise_conv2d(x, p.depthwise_w[i], p.depthwise_b[i])
        hv, wv = x.shape[1], x.shape[2]
        x = reshape(x, (3 * t, hv * wv))
        x = grouped_pointwise(x, p.pointwise_w[i], p.pointwise_b[i])
        x = gelu(x)
        x = reshape(x, (t * cpf, hv, wv))
        feats.append(adaptive_avg_pool(x, (p.height, p.width)))
    cat = concat(feats, axis=0)                  # layout [view][frame][cpf]

    # reorder to frame-major [frame][view][cpf] so frame groups are contiguous
    perm = np.empty(p.out_channels, dtype=np.intp)
    for ti in range(t):
        for vi in range(v):
            for j in range(cpf):
                perm[ti * v * cpf + vi * cpf + j] = vi * t * cpf + ti * cpf + j
    return take_channels(cat, perm)


@dataclass
class BlockParams:
    """Weights of one dual-path block operating on [C, H, W]."""

    conv1d_w: Tensor            # [L, L, 3]; positions as channels, C as length
    conv1d_b: Tensor
    ssm_forward: SsmParams      # B / C_mat shared with ssm_backward
    ssm_backward: SsmParams
    local_w: Tensor             # [C, C]
    local_b: Tensor
    global_w: Tensor
    global_b: Tensor
    out_w: Tensor
    out_b: Tensor
    gamma: Tensor               # scalar scaling of the non-residual branch
    frame_count: int

    def tensors(self):
        out = {
            "conv1d_w": self.conv1d_w, "conv1d_b": self.conv1d_b,
            "local_w": self.local_w, "local_b": self.local_b,
            "global_w": self.global_w, "global_b": self.global_b,
            "out_w": self.out_w, "out_b": self.out_b, "gamma": self.gamma,
            "ssm.A_fwd": self.ssm_forward.A, "ssm.D_fwd": self.ssm_forward.D,
            "ssm.A_bwd": self.ssm_backward.A, "ssm.D_bwd": self.ssm_backward.D,
            "ssm.B": self.ssm_forward.B, "ssm.C": self.ssm_forward.C_mat,
        }
        return out


def init_block(channels: int, frame_count: int, height: int, width: int,
               state_dim: int, rng: np.random.Generator,
               gamma_init: float = 0.5) -> BlockParams:
    if channels % frame_count != 0:
        raise ConfigError(f"block: channels {channels} not divisible by "
                          f"frame count {frame_count}")
    spatial = height * width
    fwd = init_ssm_params(channels, state_dim, rng)
    bwd = init_ssm_params(channels, state_dim, rng)
    bwd.B = fwd.B          # shared between scan directions
    bwd.C_mat = fwd.C_mat
    return BlockParams(
        conv1d_w=_glorot(rng, (spatial, spatial, 3), spatial * 3, spatial * 3),
        conv1d_b=param(np.zeros(spatial)),
        ssm_forward=fwd,
        ssm_backward=bwd,
        local_w=_glorot(rng, (channels, channels), channels, channels),
        local_b=param(np.zeros(channels)),
        global_w=_glorot(rng, (channels, channels), channels, channels),
        global_b=param(np.zeros(channels)),
        out_w=_glorot(rng, (channels, channels), channels, channels),
        out_b=param(np.zeros(channels)),
        gamma=param(np.array(gamma_init)),
        frame_count=frame_count,
    )


def channel_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Linear map over the channel axis of [C, H, W], shared across positions."""
    c, h, wd = x.shape
    flat = transpose(reshape(x, (c, h * wd)), (1, 0))
    out = linear(flat, w, b)
    return reshape(transpose(out, (1, 0)), (c, h, wd))


def dual_path_block(x: Tensor, p: BlockParams,
                    single_direction: bool = False,
                    local_only: bool = False) -> Tensor:
    """One block application. ``single_direction`` disables the backward scan
    (both paths scan forward); ``local_only`` replaces the global path's
    coarse pooling with the local 3x3 pooling."""
    c, h, w = x.shape
    t = p.frame_count
    if c % t != 0:
        raise ConfigError(f"block: channels {c} not divisible by frame count {t}")
    group = c // t
    spatial = h * w

    # shared enhancement: 1-d conv along the channel axis, positions as channels
    z = transpose(reshape(x, (c, spatial)), (1, 0))           # [L, C]
    z = convolve(z, p.conv1d_w, p.conv1d_b, padding=1)
    z = gelu(z)
    seq = reshape(transpose(z, (1, 0)), (t, group, spatial))  # [T, C', L]

    fwd_p = p.ssm_forward.restrict(group)
    local_seq = scan(seq, fwd_p, ScanDirection.FORWARD)
    local_map = reshape(local_seq, (c, h, w))
    local_map = avg_pool(local_map, 3, stride=1, padding=1)
    local_feat = channel_linear(local_map, p.local_w, p.local_b)

    bwd_dir = ScanDirection.FORWARD if single_direction else ScanDirection.BACKWARD
    bwd_p = p.ssm_backward.restrict(group)
    global_seq = scan(seq, bwd_p, bwd_dir)
    global_map = reshape(global_seq, (c, h, w))
    if local_only:
        global_map = avg_pool(global_map, 3, stride=1, padding=1)
    else:
        grid = (min(GLOBAL_POOL_GRID, h), min(GLOBAL_POOL_GRID, w))
        global_map = expand_bins(adaptive_avg_pool(global_map, grid), (h, w))
    global_feat = channel_linear(global_map, p.global_w, p.global_b)

    gate = compute_gate(p.ssm_forward)                        # [C]
    merged = scale_channels(add(local_feat, global_feat), gate)
    projected = channel_linear(merged, p.out_w, p.out_b)
    return add(x, scale_by(projected, p.gamma))


def block_stack(x: Tensor, blocks: Sequence[BlockParams], **kw) -> Tensor:
    """Sequential application of dual-path blocks."""
    if not blocks:
        raise ConfigError("block_stack: at least one block required")
    for p in blocks:
        x = dual_path_block(x, p, **kw)
    return x
