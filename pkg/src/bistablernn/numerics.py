"""Dense linear-algebra kernels, elementwise nonlinearities and seeded randomness.

Everything downstream funnels its numerics through here: all arrays are
float64 (gradient checking against finite differences needs the headroom),
and every source of randomness is an explicitly seeded :class:`Rng`, so two
runs with the same seed produce bit-identical datasets and weights.
"""

from __future__ import annotations

import numpy as np


class ContractError(ValueError):
    """An argument violated an operation's contract (shape, length or kind)."""


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise product of two equal-length vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"hadamard shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def tanh_map(v: np.ndarray) -> np.ndarray:
    """Elementwise tanh, range (-1, 1)."""
    return np.tanh(np.asarray(v, dtype=np.float64))


def sigmoid_map(v: np.ndarray) -> np.ndarray:
    """Elementwise logistic sigmoid 1/(1+exp(-v)), range (0, 1).

    Evaluated as (1 + tanh(v/2))/2, which is the same function, saturates
    cleanly instead of overflowing, and costs a single transcendental.
    """
    v = np.asarray(v, dtype=np.float64)
    out = np.tanh(0.5 * v)
    out += 1.0
    out *= 0.5
    return out


class Rng:
    """Seeded deterministic random stream.

    Wraps numpy's PCG64 bit generator; `normal` uses numpy's ziggurat
    sampler. The seed-to-stream mapping is fixed for a given numpy version,
    which pins generated datasets and initial weights bit-for-bit. A stream
    has a single owner; hand each parallel worker its own `spawn()`.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def normal(self, size=None) -> np.ndarray:
        """i.i.d. standard normal draws."""
        return self._gen.standard_normal(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high=None, size=None):
        """Uniform integers in [low, high), numpy half-open convention."""
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self) -> "Rng":
        """Independent child stream, seeded from this one."""
        return Rng(int(self._gen.integers(0, 2**63)))


def glorot_init(rows: int, cols: int, rng: Rng) -> np.ndarray:
    """Glorot-uniform matrix: entries uniform in +-sqrt(6/(rows+cols))."""
    if rows < 1 or cols < 1:
        raise ContractError(f"glorot_init needs positive dims, got ({rows}, {cols})")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


def randn(n: int, rng: Rng) -> np.ndarray:
    """Vector of n i.i.d. standard normal draws."""
    if n < 1:
        raise ContractError(f"randn needs n >= 1, got {n}")
    return rng.normal(n)
