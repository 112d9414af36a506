"""Arithmetic over GF(2^q) and the logic-gate cost model for field operations.

Elements are plain integers (or numpy integer arrays) in ``[0, 2**q)``.
Addition is XOR; multiplication goes through log/antilog tables built once per
field, plus a full product table when ``q <= 8``.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError

MAX_Q = 16

# Primitive polynomials (bit i set = coefficient of x^i).
DEFAULT_POLYNOMIALS = {
    1: 0x3,
    2: 0x7,
    3: 0xB,
    4: 0x13,
    5: 0x25,
    6: 0x43,
    7: 0x89,
    8: 0x11D,
    9: 0x211,
    10: 0x409,
    11: 0x805,
    12: 0x1053,
    13: 0x201B,
    14: 0x4443,
    15: 0x8003,
    16: 0x1100B,
}


def clmul(a, b):
    """Carry-less product of two non-negative integers."""
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def poly_mod(a, mod):
    """Remainder of polynomial ``a`` divided by ``mod`` over GF(2)."""
    deg = mod.bit_length() - 1
    while a.bit_length() - 1 >= deg:
        a ^= mod << (a.bit_length() - 1 - deg)
    return a


def is_irreducible(poly):
    """Exhaustive divisibility test: no factor of degree 1..deg/2 divides ``poly``."""
    deg = poly.bit_length() - 1
    if deg < 1:
        return False
    for d in range(1, deg // 2 + 1):
        for cand in range(1 << d, 1 << (d + 1)):
            if poly_mod(poly, cand) == 0:
                return False
    return True


@dataclass(frozen=True)
class FieldParams:
    q: int = 8
    reduction_polynomial: int = None

    def __post_init__(self):
        if not isinstance(self.q, (int, np.integer)) or not 1 <= self.q <= MAX_Q:
            raise DomainError(f"q must be an integer in [1, {MAX_Q}], got {self.q!r}")
        poly = self.reduction_polynomial
        if poly is None:
            poly = DEFAULT_POLYNOMIALS[self.q]
            object.__setattr__(self, "reduction_polynomial", poly)
        if poly.bit_length() - 1 != self.q:
            raise DomainError(f"polynomial {poly:#x} does not have degree {self.q}")
        if not is_irreducible(poly):
            raise DomainError(f"polynomial {poly:#x} is reducible")

    @property
    def order(self):
        return 1 << self.q


@dataclass(frozen=True)
class GateCost:
    additions: int
    multiplications: int
    q: int
    total_gates: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total_gates", gate_cost_total(self.additions, self.multiplications, self.q)
        )


def gates_per_add(q):
    return q


def gates_per_mul(q):
    return 2 * q * q + 2 * q


def gate_cost_total(additions, multiplications, q):
    return additions * gates_per_add(q) + multiplications * gates_per_mul(q)


def gate_cost(additions, multiplications, q=8):
    """Logic-gate count for a batch of field additions and multiplications.

    One addition costs ``q`` gates (XOR per bit) and one multiplication
    ``2q^2 + 2q`` gates.

    >>> gate_cost(1, 0, 8).total_gates, gate_cost(0, 1, 8).total_gates
    (8, 144)
    """
    if additions < 0 or multiplications < 0:
        raise DomainError("operation counts must be non-negative")
    return GateCost(int(additions), int(multiplications), int(q))


class GF:
    """A concrete field GF(2^q) with precomputed tables.

    Tables are never mutated after construction, so one instance can be shared
    freely (see :func:`get_field`).
    """

    def __init__(self, params=None):
        self.params = params if params is not None else FieldParams()
        self.q = self.params.q
        self.order = 1 << self.q
        self.dtype = np.uint8 if self.q <= 8 else np.uint16
        self._build_tables()

    def __repr__(self):
        return f"GF(2^{self.q}, poly={self.params.reduction_polynomial:#x})"

    def _build_tables(self):
        size = self.order
        poly = self.params.reduction_polynomial
        gen = self._find_generator()
        exp = np.zeros(2 * size, dtype=np.int64)
        log = np.zeros(size, dtype=np.int64)
        x = 1
        for i in range(size - 1):
            exp[i] = x
            log[x] = i
            x = poly_mod(clmul(x, gen), poly)
        # second copy so log[a] + log[b] never needs a modulo
        exp[size - 1 : 2 * (size - 1)] = exp[: size - 1]
        self.generator = gen
        self._exp = exp.astype(self.dtype)
        self._log = log
        inv = np.zeros(size, dtype=self.dtype)
        nz = np.arange(1, size)
        inv[nz] = self._exp[(size - 1 - log[nz]) % (size - 1)]
        self._inv = inv
        if self.q <= 8:
            a = np.arange(size)
            prod = self._exp[(log[a][:, None] + log[a][None, :])]
            prod[0, :] = 0
            prod[:, 0] = 0
            self._table = prod.astype(self.dtype)
        else:
            self._table = None

    def _find_generator(self):
        size = self.order
        poly = self.params.reduction_polynomial
        if size == 2:
            return 1
        for g in range(2, size):
            x, k = g, 1
            while x != 1:
                x = poly_mod(clmul(x, g), poly)
                k += 1
            if k == size - 1:
                return g
        raise DomainError("no primitive element found")  # unreachable for irreducible polys

    # scalar and vectorised element operations

    def _check(self, a):
        arr = np.asarray(a)
        if arr.size and (arr.min() < 0 or arr.max() >= self.order):
            raise DomainError(f"element out of range for GF(2^{self.q})")
        return arr

    def add(self, a, b):
        if isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer)):
            self._check(a), self._check(b)
            return int(a) ^ int(b)
        return np.bitwise_xor(np.asarray(a, dtype=self.dtype), np.asarray(b, dtype=self.dtype))

    sub = add

    def mul(self, a, b):
        scalar = isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer))
        if scalar:
            self._check(a), self._check(b)
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        if self._table is not None:
            out = self._table[a, b]
        else:
            out = self._exp[self._log[a] + self._log[b]]
            out = np.where((a == 0) | (b == 0), 0, out).astype(self.dtype)
        return int(out) if scalar else out

    def inv(self, a):
        if isinstance(a, (int, np.integer)):
            self._check(a)
            if a == 0:
                raise DomainError("zero has no multiplicative inverse")
            return int(self._inv[a])
        a = np.asarray(a, dtype=np.int64)
        if np.any(a == 0):
            raise DomainError("zero has no multiplicative inverse")
        return self._inv[a]

    def div(self, a, b):
        return self.mul(a, self.inv(b))

    def pow(self, a, k):
        self._check(a)
        if a == 0:
            return 0 if k else 1
        return int(self._exp[(self._log[a] * k) % (self.order - 1)])

    def matmul(self, A, B):
        """Matrix product over the field: ``(r, k) @ (k, s) -> (r, s)``."""
        A = np.asarray(A, dtype=np.int64)
        B = np.asarray(B, dtype=np.int64)
        if A.shape[-1] != B.shape[-2]:
            raise DomainError(f"shape mismatch {A.shape} @ {B.shape}")
        if A.shape[-1] == 0:
            return np.zeros(A.shape[:-1] + B.shape[-1:], dtype=self.dtype)
        prod = self.mul(A[..., :, :, None], B[..., None, :, :])
        return np.bitwise_xor.reduce(prod, axis=-2)

    def random(self, rng, size):
        return rng.integers(0, self.order, size=size, dtype=np.int64).astype(self.dtype)


@lru_cache(maxsize=None)
def get_field(q=8, reduction_polynomial=None):
    """Shared, cached field instance."""
    return GF(FieldParams(q, reduction_polynomial))
