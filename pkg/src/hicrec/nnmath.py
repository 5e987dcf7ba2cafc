"""Numeric substrate: dense/sparse kernels, parameter store, Adam, gradient checking.

Everything runs in float64 with a fixed summation order (ascending inner
index), so results are bit-reproducible across runs and identical to naive
loop evaluation. BLAS matrix products are deliberately avoided in these
kernels: blocked BLAS summation does not reproduce that reference order.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError

CHECKPOINT_MAGIC = b"HICREC01"
CHECKPOINT_VERSION = 1


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator keyed by (seed, name); stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))]))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product accumulated over the inner index in ascending order.

    Bit-identical to the naive i,j,k triple loop for float64 inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d arrays")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    tmp = np.empty_like(out)
    for k in range(a.shape[1]):
        np.multiply(a[:, k, None], b[k], out=tmp)
        out += tmp
    return out


def spmm(s: sp.spmatrix, d: np.ndarray) -> np.ndarray:
    """CSR sparse times dense. Equals matmul(densify(s), d) in float64.

    Relies on canonical CSR (sorted column indices): per output element the
    stored entries are accumulated in ascending column order, which matches
    the dense reference order with exact-zero terms skipped.
    """
    if not sp.issparse(s):
        raise ValueError("spmm expects a scipy sparse matrix")
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2:
        raise ValueError("spmm expects a 2-d dense operand")
    if s.shape[1] != d.shape[0]:
        raise ValueError(f"spmm shape mismatch: {s.shape} x {d.shape}")
    s = s.tocsr()
    if not s.has_canonical_format:
        s = s.copy()
        s.sum_duplicates()
    return np.asarray(s @ d, dtype=np.float64)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    """Subgradient mask; the derivative at exactly 0 is taken as 0."""
    return (np.asarray(x, dtype=np.float64) > 0.0).astype(np.float64)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def ew_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ew_add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def ew_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ew_mul shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-row inner product, accumulated over columns in ascending order."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"row_dot shape mismatch: {a.shape} vs {b.shape}")
    out = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        out += a[:, k] * b[:, k]
    return out


def xavier_init(shape, rng_seed) -> np.ndarray:
    """Uniform init on +-sqrt(6 / (fan_in + fan_out)).

    1-d shapes use fan_out = 1. `rng_seed` is an int seed or a Generator.
    """
    dims = tuple(int(s) for s in (shape if hasattr(shape, "__len__") else (shape,)))
    if not dims or any(s <= 0 for s in dims):
        raise ValueError(f"xavier_init needs positive dims, got {dims}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    fan_in = dims[0]
    fan_out = dims[1] if len(dims) > 1 else 1
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=dims)


# ---------------------------------------------------------------------------
# parameter store
# ---------------------------------------------------------------------------

@dataclass
class ParamTensor:
    """A learnable tensor plus its gradient and Adam moment buffers."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    adam_m: np.ndarray = field(init=False)
    adam_v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)


class ParamStore:
    """Ordered collection of named parameters; iteration order is insertion order."""

    def __init__(self):
        self._tensors: dict[str, ParamTensor] = {}

    def add(self, name: str, value: np.ndarray) -> ParamTensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = ParamTensor(name, value)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> ParamTensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self):
        return iter(self._tensors.values())

    def names(self) -> list[str]:
        return list(self._tensors.keys())

    def param_count(self) -> int:
        return sum(t.value.size for t in self)

    def zero_grads(self) -> None:
        for t in self:
            t.grad[...] = 0.0

    def sum_squares(self) -> float:
        total = 0.0
        for t in self:
            total += float(np.sum(t.value * t.value))
        return total

    def add_l2_gradients(self, lam: float) -> None:
        if lam == 0.0:
            return
        for t in self:
            t.grad += (2.0 * lam) * t.value

    def snapshot(self) -> dict[str, np.ndarray]:
        return {t.name: t.value.copy() for t in self}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for t in self:
            t.value[...] = values[t.name]


def adam_step(store: ParamStore, lr: float = 0.001, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, t: int = None) -> None:
    """One Adam update with bias correction over every tensor in the store.

    `t` is the 1-based step index; the caller owns the counter.
    """
    if t is None or t < 1:
        raise ValueError("adam_step requires a step index t >= 1")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p in store:
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (p.grad * p.grad)
        m_hat = p.adam_m / bc1
        v_hat = p.adam_v / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of a central-difference check against analytic gradients."""

    checked: int
    tol: float
    step: float
    max_rel_error: float
    failures: list  # (name, flat_index, rel_error)
    excluded: list  # (name, flat_index, rel_error) elements straddling a kink

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        status = "OK" if self.ok else f"{len(self.failures)} FAILURES"
        return (f"grad check: {status}, {self.checked} elements, "
                f"max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e}, "
                f"{len(self.excluded)} kink-excluded)")


def finite_difference_check(loss_fn, store: ParamStore, h: float = 1e-5,
                            tol: float = 1e-4, max_elements: int = 10_000,
                            seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients in `store` against central differences.

    The caller must have populated `store` grads for the same loss before
    calling. Checks every element, or a seeded random subset when the store
    holds more than `max_elements` elements. Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8). Elements whose one-sided
    differences disagree (a ReLU-style kink inside the probe interval) are
    excluded rather than counted as failures.
    """
    coords = []
    for t in store:
        coords.extend((t, i) for i in range(t.value.size))
    if len(coords) > max_elements:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(coords), size=max_elements, replace=False)
        coords = [coords[i] for i in np.sort(keep)]

    base_loss = None
    max_rel = 0.0
    failures, excluded = [], []
    for tensor, idx in coords:
        orig = tensor.value.flat[idx]
        tensor.value.flat[idx] = orig + h
        f_plus = float(loss_fn(store))
        tensor.value.flat[idx] = orig - h
        f_minus = float(loss_fn(store))
        tensor.value.flat[idx] = orig

        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = float(tensor.grad.flat[idx])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        if rel <= tol:
            max_rel = max(max_rel, rel)
            continue

        # Disagreeing one-sided differences mean the probe interval straddles
        # a non-differentiable point; the comparison is meaningless there.
        if base_loss is None:
            base_loss = float(loss_fn(store))
        fwd = (f_plus - base_loss) / h
        bwd = (base_loss - f_minus) / h
        asym = abs(fwd - bwd) / max(abs(fwd), abs(bwd), 1e-8)
        if asym > 1e-3:
            excluded.append((tensor.name, idx, rel))
        else:
            failures.append((tensor.name, idx, rel))
            max_rel = max(max_rel, rel)

    return GradCheckReport(checked=len(coords), tol=tol, step=h,
                           max_rel_error=max_rel, failures=failures,
                           excluded=excluded)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(store: ParamStore, path) -> None:
    """Flat binary dump of parameter values.

    Layout: magic "HICREC01", uint32 version, uint32 tensor count, then per
    tensor: uint32 name length, UTF-8 name, uint32 ndim, uint64 dims,
    float64 little-endian row-major values.
    """
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(store)))
        for t in store:
            name = t.name.encode("utf-8")
            f.write(struct.pack("<I", len(name)))
            f.write(name)
            f.write(struct.pack("<I", t.value.ndim))
            f.write(struct.pack(f"<{t.value.ndim}Q", *t.value.shape))
            f.write(np.ascontiguousarray(t.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> array mapping."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", raw, 8)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    off = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            n = int(np.prod(dims)) if ndim else 1
            values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
            off += 8 * n
            out[name] = values.reshape(dims)
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint") from exc
    if off != len(raw):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return out


def load_checkpoint_into(store: ParamStore, path) -> None:
    """Load checkpoint values into an existing store; names and shapes must match."""
    values = load_checkpoint(path)
    missing = [n for n in store.names() if n not in values]
    extra = [n for n in values if n not in store]
    if missing or extra:
        raise DataError(f"{path}: checkpoint does not match model parameters "
                        f"(missing {missing[:3]}, unexpected {extra[:3]})")
    for t in store:
        if values[t.name].shape != t.value.shape:
            raise DataError(f"{path}: shape mismatch for {t.name!r}: "
                            f"{values[t.name].shape} vs {t.value.shape}")
        t.value[...] = values[t.name]
