"""Dense tensor kernels and the seeded random stream.

Tensors are plain row-major ``numpy.ndarray`` values of dtype float32 or
float64. The kernels here are pure functions; the autodiff layer wraps them.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import DimensionError, FusedPropError

Tensor = np.ndarray

DTYPES = {"f32": np.float32, "f64": np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

MAGIC = b"FPT1"
RNG_ALGORITHM = "pcg64+ziggurat/v1"


def resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        try:
            dtype = DTYPES[dtype]
        except KeyError:
            raise FusedPropError(f"unknown dtype {dtype!r}; expected f32 or f64") from None
    dtype = np.dtype(dtype)
    if dtype not in _DTYPE_CODES:
        raise FusedPropError(f"unsupported dtype {dtype}")
    return dtype


def tensor(values, dtype="f64") -> Tensor:
    return np.ascontiguousarray(values, dtype=resolve_dtype(dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    return a @ b


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x) in the overflow-safe form max(x, 0) + ln1p(e^-|x|)."""
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: Tensor) -> Tensor:
    # e^{-softplus(-x)} stays finite for any finite x
    return np.exp(-softplus(-x))


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def heaviside(x: Tensor) -> Tensor:
    # H(0) = 0, matching the zero subgradient relu uses at its kink
    return (np.asarray(x) > 0).astype(np.result_type(x, np.float32))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return np.where(x > 0, x, x * slope)


def square(x: Tensor) -> Tensor:
    return x * x


def exp(x: Tensor) -> Tensor:
    return np.exp(x)


class Rng:
    """Seeded random stream.

    PCG64 bit generator with numpy's ziggurat normal sampler. Draws are made in
    float64 and cast afterwards so f32 and f64 runs see the same stream.
    ``draws`` counts scalar normal variates handed out, which the trainer uses
    to account for latent reuse.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self.seed = seed.entropy
            self._gen = np.random.Generator(np.random.PCG64(seed))
        else:
            self.seed = int(seed)
            self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draws = 0

    def spawn(self, n: int) -> list["Rng"]:
        return [Rng(s) for s in np.random.SeedSequence(self.seed).spawn(n)]

    def normal(self, dims: Sequence[int], dtype="f64") -> Tensor:
        dims = tuple(int(d) for d in dims)
        if not dims:
            raise DimensionError("sample_normal needs at least one extent")
        out = self._gen.standard_normal(dims)
        self.draws += out.size
        return out.astype(resolve_dtype(dtype), copy=False)

    def uniform(self, low: float, high: float, size: int | Sequence[int]) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, high: int, size: int | Sequence[int]) -> np.ndarray:
        return self._gen.integers(0, high, size)


def sample_normal(rng: Rng, dims: Sequence[int], dtype="f64") -> Tensor:
    return rng.normal(dims, dtype)


def dump_tensor(fh: BinaryIO, t: Tensor) -> None:
    """Write one FPT1 record: magic, dtype code, rank, u32 extents, raw LE values."""
    t = np.asarray(t)
    code = _DTYPE_CODES.get(t.dtype)
    if code is None:
        raise FusedPropError(f"cannot dump dtype {t.dtype}")
    if t.ndim > 255:
        raise DimensionError("rank above 255 cannot be encoded")
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", code, t.ndim))
    fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
    fh.write(np.ascontiguousarray(t, dtype=t.dtype.newbyteorder("<")).tobytes())


def load_tensor(fh: BinaryIO) -> Tensor | None:
    """Read one FPT1 record; returns None at a clean end of stream."""
    head = fh.read(4)
    if not head:
        return None
    if head != MAGIC:
        raise FusedPropError(f"bad tensor magic {head!r}")
    code, rank = struct.unpack("<BB", fh.read(2))
    dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
    dtype = _CODE_DTYPES[code].newbyteorder("<")
    count = int(np.prod(dims, dtype=np.int64))
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise FusedPropError("truncated tensor payload")
    return np.frombuffer(raw, dtype=dtype).astype(_CODE_DTYPES[code]).reshape(dims)


def dump_tensors(path, tensors: Iterable[Tensor]) -> None:
    with open(path, "wb") as fh:
        for t in tensors:
            dump_tensor(fh, t)


def load_tensors(path) -> list[Tensor]:
    out = []
    with open(path, "rb") as fh:
        while (t := load_tensor(fh)) is not None:
            out.append(t)
    return out
