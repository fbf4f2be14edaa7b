"""RBM parameterization, energies, conditionals and exact enumeration oracles.

Units are binary {0, 1} throughout. A joint state is stored as a single bit
vector ``x = concat(v, h)`` (visible first), which is also the variable order
used by the QUBO conversion.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logsumexp

FORMAT_VERSION = 1
ENUMERATION_CAP = 20


class EnumerationError(ValueError):
    """Raised when an exact computation would exceed the enumeration cap."""


# ---------------------------------------------------------------------------
# bit packing


def pack_bits(states):
    """Pack rows of 0/1 values into little-endian uint64 words.

    Unit ``k`` lands in bit ``k % 64`` of word ``k // 64``.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.uint8))
    n_rows, n = states.shape
    n_words = max(1, -(-n // 64))
    padded = np.zeros((n_rows, n_words * 64), dtype=np.uint8)
    padded[:, :n] = states
    bytes_ = np.packbits(padded.reshape(n_rows, n_words * 8, 8), axis=-1, bitorder="little")
    return bytes_.reshape(n_rows, n_words * 8).view("<u8")


def state_keys(states):
    """Hashable canonical key (bytes) per row."""
    packed = pack_bits(states)
    return [row.tobytes() for row in packed]


def bits_to_hex(bits) -> str:
    bits = np.asarray(bits, dtype=np.uint8)
    value = 0
    for k in np.flatnonzero(bits):
        value |= 1 << int(k)
    width = max(1, -(-bits.size // 4))
    return format(value, f"0{width}x")


def hex_to_bits(text: str, n: int) -> np.ndarray:
    value = int(text, 16)
    if value >> n:
        raise ValueError(f"hex state {text!r} does not fit in {n} bits")
    return np.array([(value >> k) & 1 for k in range(n)], dtype=np.uint8)


def all_states(n: int) -> np.ndarray:
    """All 2**n bit vectors, row r holding the binary digits of r (LSB first)."""
    if n > 26:
        raise EnumerationError(f"refusing to enumerate 2**{n} states")
    r = np.arange(2**n, dtype=np.int64)
    return ((r[:, None] >> np.arange(n)) & 1).astype(np.uint8)


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class RbmModel:
    """Weights ``W`` (n_h x n_v), visible biases ``b`` and hidden biases ``c``."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        if b.size < 1 or c.size < 1:
            raise ValueError("need at least one visible and one hidden unit")
        if W.shape != (c.size, b.size):
            raise ValueError(f"W has shape {W.shape}, expected ({c.size}, {b.size})")
        for name, arr in (("W", W), ("b", b), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def n_v(self) -> int:
        return self.b.size

    @property
    def n_h(self) -> int:
        return self.c.size

    @property
    def n_units(self) -> int:
        return self.n_v + self.n_h

    @classmethod
    def zeros(cls, n_v: int, n_h: int) -> "RbmModel":
        return cls(np.zeros((n_h, n_v)), np.zeros(n_v), np.zeros(n_h))

    @classmethod
    def random(cls, n_v: int, n_h: int, rng, scale: float = 1.0) -> "RbmModel":
        rng = np.random.default_rng(rng)
        return cls(
            rng.normal(0.0, scale, (n_h, n_v)),
            rng.normal(0.0, scale, n_v),
            rng.normal(0.0, scale, n_h),
        )

    def scaled(self, s: float) -> "RbmModel":
        return RbmModel(self.W * s, self.b * s, self.c * s)

    def replace(self, W=None, b=None, c=None) -> "RbmModel":
        return RbmModel(
            self.W if W is None else W,
            self.b if b is None else b,
            self.c if c is None else c,
        )

    def __eq__(self, other):
        if not isinstance(other, RbmModel):
            return NotImplemented
        return (
            np.array_equal(self.W, other.W)
            and np.array_equal(self.b, other.b)
            and np.array_equal(self.c, other.c)
        )

    __hash__ = None

    def digest(self) -> str:
        """sha256 over the exact parameter bytes; identifies a checkpoint."""
        h = hashlib.sha256()
        h.update(np.array([self.n_v, self.n_h], dtype="<i8").tobytes())
        for arr in (self.W, self.b, self.c):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def split(self, x):
        """Split joint states ``x`` (..., n_v + n_h) into ``(v, h)``."""
        x = np.asarray(x)
        if x.shape[-1] != self.n_units:
            raise ValueError(f"state length {x.shape[-1]} != {self.n_units}")
        return x[..., : self.n_v], x[..., self.n_v :]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "n_v": self.n_v,
            "n_h": self.n_h,
            "W": self.W.reshape(-1).tolist(),
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RbmModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {d.get('format_version')!r}")
        n_v, n_h = int(d["n_v"]), int(d["n_h"])
        W = np.asarray(d["W"], dtype=float)
        if W.size != n_v * n_h or len(d["b"]) != n_v or len(d["c"]) != n_h:
            raise ValueError("parameter lengths do not match n_v/n_h")
        return cls(W.reshape(n_h, n_v), d["b"], d["c"])


@dataclass(frozen=True, eq=False)
class Configuration:
    """Joint state of visible and hidden units."""

    v: np.ndarray
    h: np.ndarray
    _key: bytes = field(init=False, repr=False)

    def __post_init__(self):
        v = np.array(self.v, dtype=np.uint8).reshape(-1)
        h = np.array(self.h, dtype=np.uint8).reshape(-1)
        if np.any(v > 1) or np.any(h > 1):
            raise ValueError("units must be 0 or 1")
        v.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "_key", state_keys(self.x)[0])

    @classmethod
    def from_joint(cls, x, n_v: int) -> "Configuration":
        x = np.asarray(x)
        return cls(x[:n_v], x[n_v:])

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.v, self.h])

    @property
    def key(self) -> bytes:
        return self._key

    @property
    def hex(self) -> str:
        return bits_to_hex(self.x)

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.v.size == other.v.size and self._key == other._key

    def __hash__(self):
        return hash((self.v.size, self._key))


def save_model(model: RbmModel, path, **metadata) -> None:
    d = model.to_dict()
    d.update(metadata)
    Path(path).write_text(json.dumps(d))


def load_model(path) -> RbmModel:
    return RbmModel.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# energies and conditionals


def _check_T(T):
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")


def sigmoid(x, T: float = 1.0):
    """Logistic function ``1 / (1 + exp(-x / T))``."""
    _check_T(T)
    return expit(np.asarray(x, dtype=float) / T)


def _as_vh(model, v, h):
    if isinstance(v, Configuration):
        v, h = v.v, v.h
    elif h is None:
        v, h = model.split(v)
    v = np.asarray(v, dtype=float)
    h = np.asarray(h, dtype=float)
    if v.shape[-1] != model.n_v or h.shape[-1] != model.n_h:
        raise ValueError(
            f"state sizes ({v.shape[-1]}, {h.shape[-1]}) do not match model "
            f"({model.n_v}, {model.n_h})"
        )
    return v, h


def energy(model: RbmModel, v, h=None):
    """RBM energy ``-h.W.v - b.v - c.h``.

    Accepts a :class:`Configuration`, joint states ``x`` or separate ``v, h``
    arrays with matching leading batch dimensions.
    """
    v, h = _as_vh(model, v, h)
    return -np.einsum("...i,ij,...j->...", h, model.W, v) - v @ model.b - h @ model.c


def hidden_field(model: RbmModel, v):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != model.n_v:
        raise ValueError(f"visible vector length {v.shape[-1]} != {model.n_v}")
    return v @ model.W.T + model.c


def visible_field(model: RbmModel, h):
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != model.n_h:
        raise ValueError(f"hidden vector length {h.shape[-1]} != {model.n_h}")
    return h @ model.W + model.b


def cond_prob_hidden(model: RbmModel, v, T: float = 1.0):
    """p(H_i = 1 | v) for every hidden unit."""
    return sigmoid(hidden_field(model, v), T)


def cond_prob_visible(model: RbmModel, h, T: float = 1.0):
    """p(V_j = 1 | h) for every visible unit."""
    return sigmoid(visible_field(model, h), T)


# ---------------------------------------------------------------------------
# exact oracles


def _require_cap(n: int, cap: int | None):
    cap = ENUMERATION_CAP if cap is None else cap
    if n > cap:
        raise EnumerationError(f"{n} units exceeds enumeration cap {cap}")


def log_partition_exact(model: RbmModel, T: float = 1.0, cap: int | None = None) -> float:
    _check_T(T)
    _require_cap(model.n_units, cap)
    x = all_states(model.n_units)
    return float(logsumexp(-energy(model, x) / T))


def partition_function_exact(model: RbmModel, T: float = 1.0, cap: int | None = None) -> float:
    """Z(T) by summing over every joint state (log-sum-exp accumulation)."""
    return float(np.exp(log_partition_exact(model, T, cap)))


def joint_prob_exact(model: RbmModel, config, T: float = 1.0, cap: int | None = None):
    logz = log_partition_exact(model, T, cap)
    return np.exp(-energy(model, config) / T - logz)


def _log_marginal_unnorm(model, v, T):
    # explicit sum over every hidden vector
    hs = all_states(model.n_h).astype(float)
    v = np.asarray(v, dtype=float)
    e = -(np.asarray(v @ model.b)[..., None]) - (v @ model.W.T) @ hs.T - hs @ model.c
    return logsumexp(-e / T, axis=-1)


def marginal_prob_visible_exact(model: RbmModel, v, T: float = 1.0, cap: int | None = None):
    """p(v) = sum_h p(v, h), by explicit summation over hidden vectors.

    The hidden sum alone is bounded by ``cap``; normalization additionally
    enumerates visible vectors.
    """
    _check_T(T)
    _require_cap(model.n_h, cap)
    _require_cap(model.n_v, cap)
    logz = logsumexp(_log_marginal_unnorm(model, all_states(model.n_v), T))
    return np.exp(_log_marginal_unnorm(model, v, T) - logz)


@dataclass(frozen=True, eq=False)
class BoltzmannOracle:
    """Exact joint distribution over all 2**(n_v+n_h) states of a tiny model.

    ``table[r]`` is the probability of the state whose joint bits are the
    binary digits of ``r`` (unit 0 least significant).
    """

    model: RbmModel
    T: float = 1.0
    cap: int = ENUMERATION_CAP
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_T(self.T)
        _require_cap(self.model.n_units, self.cap)
        x = all_states(self.model.n_units)
        logw = -energy(self.model, x) / self.T
        p = np.exp(logw - logsumexp(logw))
        p.setflags(write=False)
        object.__setattr__(self, "table", p)

    @property
    def states(self) -> np.ndarray:
        return all_states(self.model.n_units)

    def index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        return x @ (1 << np.arange(x.shape[-1], dtype=np.int64))

    def prob(self, x):
        return self.table[self.index(x)]

