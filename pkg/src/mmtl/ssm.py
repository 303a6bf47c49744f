"""State-space temporal machinery: per-channel linear scans over the frame
axis and the sigmoid channel gate derived from the scan parameters.

The recurrence, per channel c and spatial position l, with n-dimensional
hidden state h:

    h_t = exp(min(a_c, 0)) * h_{t-1} + b_c * x_t[c, l]
    y_t = <c_c, h_t> + d_c * x_t[c, l]

The transition exponent is clamped at zero so the hidden state is bounded
for any parameter value; at a_c = 0 the recurrence degenerates to a running
sum, which pins down the semantics exactly.

The gate combines the parameter matrices into one weight per channel:

    gate = sigmoid(A @ d_state + (B @ C^T) @ d_dim + D)

where d_state and d_dim are fixed all-ones unit vectors, never trained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .errors import ArgumentError, DimensionError
from .ops import sigmoid
from .tensor import Tensor, accumulate, add, flip, matmul, narrow, param, record, \
    reshape, transpose


class ScanDirection(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


def unit_vector(length: int) -> Tensor:
    """All-ones vector scaled to unit Euclidean norm; fixed, not trainable."""
    return Tensor(np.full(length, 1.0 / math.sqrt(length)))


@dataclass
class SsmParams:
    """State-transition parameter set for one scan path.

    A, B, C_mat are [channels, n]; D is [channels]. B and C_mat may be shared
    (the same Tensor objects) between a forward and a backward path.
    """

    A: Tensor
    B: Tensor
    C_mat: Tensor
    D: Tensor
    n: int
    d_state: Tensor = field(default=None)  # type: ignore[assignment]
    d_dim: Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        c = self.A.shape[0]
        for name, t, shape in (("A", self.A, (c, self.n)), ("B", self.B, (c, self.n)),
                               ("C_mat", self.C_mat, (c, self.n)), ("D", self.D, (c,))):
            if t.shape != shape:
                raise DimensionError(f"SsmParams: {name} has shape {t.shape}, expected {shape}")
        if self.d_state is None:
            self.d_state = unit_vector(self.n)
        if self.d_dim is None:
            self.d_dim = unit_vector(c)

    @property
    def channels(self) -> int:
        return self.A.shape[0]

    def restrict(self, channels: int) -> "SsmParams":
        """View onto the first ``channels`` rows, for scanning channel groups.

        Gradients flow back into the corresponding rows of the full tensors.
        """
        if channels > self.channels:
            raise DimensionError(
                f"restrict: {channels} rows requested, params have {self.channels}")
        return SsmParams(
            A=narrow(self.A, 0, 0, channels),
            B=narrow(self.B, 0, 0, channels),
            C_mat=narrow(self.C_mat, 0, 0, channels),
            D=narrow(self.D, 0, 0, channels),
            n=self.n,
        )

    def tensors(self) -> Dict[str, Tensor]:
        return {"A": self.A, "B": self.B, "C_mat": self.C_mat, "D": self.D}


def init_ssm_params(channels: int, n: int, rng: np.random.Generator) -> SsmParams:
    return SsmParams(
        A=param(rng.uniform(-0.6, -0.05, size=(channels, n))),
        B=param(rng.normal(0.0, 0.3, size=(channels, n))),
        C_mat=param(rng.normal(0.0, 0.3, size=(channels, n))),
        D=param(np.zeros(channels)),
        n=n,
    )


def compute_gate(p: SsmParams) -> Tensor:
    """Per-channel temporal weight in (0, 1): sigmoid of the combined params."""
    c = p.channels
    a_term = reshape(matmul(p.A, reshape(p.d_state, (p.n, 1))), (c,))
    bc = matmul(p.B, transpose(p.C_mat, (1, 0)))
    bc_term = reshape(matmul(bc, reshape(p.d_dim, (c, 1))), (c,))
    return sigmoid(add(add(a_term, bc_term), p.D))


def _scan_forward_raw(x: np.ndarray, a: np.ndarray, b: np.ndarray,
                      c: np.ndarray, d: np.ndarray):
    """Sequential recurrence; returns (y, hs) with hs[t] the state after step t."""
    T, C, L = x.shape
    n = a.shape[1]
    lam = np.exp(np.minimum(a, 0.0))            # [C, n]
    h = np.zeros((C, L, n))
    hs = np.empty((T, C, L, n))
    y = np.empty_like(x)
    for t in range(T):
        h = h * lam[:, None, :] + x[t][:, :, None] * b[:, None, :]
        hs[t] = h
        y[t] = np.einsum("cln,cn->cl", h, c) + x[t] * d[:, None]
    return y, hs, lam


def scan(x: Tensor, p: SsmParams, direction: ScanDirection = ScanDirection.FORWARD,
         frame_count: Optional[int] = None) -> Tensor:
    """Run the linear recurrence over the leading (temporal) axis of x [T, C, L].

    Backward direction is literally reverse -> forward scan -> reverse, so the
    duality identity holds bit-exactly.
    """
    if x.ndim != 3:
        raise DimensionError(f"scan: x must be [T, C, L], got {x.shape}")
    T, C, L = x.shape
    if frame_count is not None and T != frame_count:
        raise DimensionError(f"scan: {T} frames, configured frame count is {frame_count}")
    if C != p.channels:
        raise DimensionError(f"scan: x has {C} channels, params have {p.channels}")

    if direction is ScanDirection.BACKWARD:
        return flip(scan(flip(x, 0), p, ScanDirection.FORWARD), 0)

    y, hs, lam = _scan_forward_raw(x.data, p.A.data, p.B.data, p.C_mat.data, p.D.data)
    out = Tensor(y)
    a_open = (p.A.data < 0.0).astype(np.float64)   # d lam / d a, zero where clamped

    def back(g):
        b_, c_, d_ = p.B.data, p.C_mat.data, p.D.data
        gh = np.zeros((C, L, p.n))
        gx = np.empty_like(x.data)
        gb = np.zeros_like(b_)
        gc = np.zeros_like(c_)
        glam = np.zeros_like(lam)
        gd = np.zeros(C)
        for t in range(T - 1, -1, -1):
            gy = g[t]                                        # [C, L]
            gc += np.einsum("cl,cln->cn", gy, hs[t])
            gd += np.einsum("cl,cl->c", gy, x.data[t])
            gh = gh + gy[:, :, None] * c_[:, None, :]
            h_prev = hs[t - 1] if t > 0 else np.zeros_like(hs[0])
            glam += np.einsum("cln,cln->cn", gh, h_prev)
            gb += np.einsum("cln,cl->cn", gh, x.data[t])
            gx[t] = np.einsum("cln,cn->cl", gh, b_) + gy * d_[:, None]
            gh = gh * lam[:, None, :]
        accumulate(x, gx)
        accumulate(p.A, glam * lam * a_open)
        accumulate(p.B, gb)
        accumulate(p.C_mat, gc)
        accumulate(p.D, gd)

    return record("ssm_scan", (x, p.A, p.B, p.C_mat, p.D), out, back)


def apply_update(p: SsmParams, grads: Dict[str, np.ndarray], lr: float) -> SsmParams:
    """Plain gradient step on A, B, C_mat, D; the unit vectors are untouched."""
    updated = {}
    for name, t in p.tensors().items():
        if name not in grads or grads[name] is None:
            raise ArgumentError(f"apply_update: missing gradient for {name}")
        g = np.asarray(grads[name])
        if g.shape != t.shape:
            raise DimensionError(f"apply_update: grad {name} has shape {g.shape}, "
                                 f"param has {t.shape}")
        updated[name] = param(t.data - lr * g)
    return SsmParams(A=updated["A"], B=updated["B"], C_mat=updated["C_mat"],
                     D=updated["D"], n=p.n, d_state=p.d_state, d_dim=p.d_dim)
