"""Dense float64 tensor primitives with reproducible semantics.

Everything downstream (neuron dynamics, network layers, gradients) is built
on a handful of operations defined here. A "tensor" throughout this package
is simply a C-contiguous float64 ``numpy.ndarray``; these wrappers add the
guarantees the rest of the toolkit relies on:

* inputs and outputs are validated finite (NaN/Inf raises, never propagates),
* reductions have a fixed, documented summation order so repeated runs are
  bit-identical,
* random numbers come from a single named generator (PCG64) so a seed pins
  the whole experiment.

Summation orders:

* ``matmul`` accumulates over the inner index k in ascending order. Each
  output element sees exactly the additions ``a[i,0]*b[0,j] + a[i,1]*b[1,j]
  + ...`` in that order, so it is bit-identical to a naive triple loop.
* ``conv2d`` is im2col + ``matmul``; the contraction index runs over
  (channel, kernel_row, kernel_col) in row-major ascending order.
* ``maxpool2d`` breaks ties by lowest flat index inside the window.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


def as_tensor(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 array (copying only if needed)."""
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return x


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator.

    PCG64 is a fixed, named bit generator: the same 64-bit seed produces the
    same stream on every platform, independent of thread count. All
    randomness in the toolkit (weight init, encoders, shuffles) must come
    from generators created here or derived via `derive_seed`.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_seed(base_seed: int, *parts) -> int:
    """Derive an independent 64-bit seed from a base seed and string parts.

    Uses SHA-256 over ``"{base}|{part}|{part}..."`` and takes the first 8
    bytes little-endian. Hash-based (not sequential) so any subset of runs
    can be reproduced in isolation.
    """
    text = "|".join([str(int(base_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with k-ascending accumulation.

    (M,K) @ (K,N) -> (M,N). Accumulates one rank-1 update per k so every
    output element's additions happen in ascending k order; bit-identical
    to a sequential triple loop, and therefore bit-stable across runs.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} vs {b.shape}")
    check_finite("matmul lhs", a)
    check_finite("matmul rhs", b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return check_finite("matmul result", out)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Extract conv patches as (B*Ho*Wo, C*kh*kw), row-major over (c,i,j)."""
    b, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, Ho, Wo, kh, kw) -> (B, Ho, Wo, C, kh, kw)
    patches = windows.transpose(0, 2, 3, 1, 4, 5)
    return np.ascontiguousarray(patches).reshape(b * ho * wo, c * kh * kw)


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Valid 2-D cross-correlation (no kernel flip), summed over channels.

    x: (B, C, H, W), kernels: (F, C, Kh, Kw) -> (B, F, Ho, Wo) where
    Ho = (H + 2*padding - Kh)/stride + 1 must divide exactly. Contraction
    runs over (c, ki, kj) in ascending row-major order via `matmul`.
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input/kernels, got {x.shape} and {kernels.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d stride must be positive, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d padding must be non-negative, got {padding}")
    bsz, c, h, w = x.shape
    f, ck, kh, kw = kernels.shape
    if ck != c:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernels expect {ck}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    if (hp - kh) % stride != 0 or (wp - kw) % stride != 0:
        raise ShapeError(
            f"conv2d output size not exact: input {h}x{w}, pad {padding}, "
            f"kernel {kh}x{kw}, stride {stride}"
        )
    check_finite("conv2d input", x)
    check_finite("conv2d kernels", kernels)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    patches = _im2col(x, kh, kw, stride)
    out = matmul(patches, kernels.reshape(f, c * kh * kw).T)
    return np.ascontiguousarray(out.reshape(bsz, ho, wo, f).transpose(0, 3, 1, 2))


def maxpool2d(x: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pool; returns (pooled, argmax index map).

    x: (B, C, H, W) with H and W divisible by `size`. The index map holds
    the flat within-window index (0..size*size-1) of each winner; ties go
    to the lowest flat index so backward routing is deterministic.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    if size < 1:
        raise ShapeError(f"maxpool2d size must be positive, got {size}")
    b, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"maxpool2d spatial dims {h}x{w} not divisible by {size}")
    check_finite("maxpool2d input", x)
    ho, wo = h // size, w // size
    windows = x.reshape(b, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5)
    flat = np.ascontiguousarray(windows).reshape(b, c, ho, wo, size * size)
    idx = np.argmax(flat, axis=-1)  # np.argmax keeps the first (lowest) index
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward(grad_out: np.ndarray, idx: np.ndarray, size: int) -> np.ndarray:
    """Route pooled gradients back to the argmax positions recorded by maxpool2d."""
    grad_out = as_tensor(grad_out)
    b, c, ho, wo = grad_out.shape
    flat = np.zeros((b, c, ho, wo, size * size))
    np.put_along_axis(flat, idx[..., None], grad_out[..., None], axis=-1)
    windows = flat.reshape(b, c, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(windows).reshape(b, c, ho * size, wo * size)
