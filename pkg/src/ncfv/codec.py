"""Random linear network coding over one generation.

A generation is ``n`` source packets of ``s = L/q`` symbols each.  The encoder
emits ``m >= n`` coded packets (systematic by default: the ``n`` originals
followed by ``m - n`` random combinations).  Every field operation performed
while combining packets is metered in a :class:`ComplexityLedger`.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, IntegrityError, InsufficientRankError, StructuralError
from .gf import gate_cost, get_field


@dataclass(frozen=True)
class CodingParams:
    n: int
    m: int
    L: int = 800
    q: int = 8
    systematic: bool = True

    def __post_init__(self):
        if not (1 <= self.n <= self.m):
            raise DomainError(f"need m >= n >= 1, got n={self.n}, m={self.m}")
        if self.L <= 0 or self.L % self.q:
            raise DomainError(f"packet length L={self.L} bits is not a positive multiple of q={self.q}")

    @property
    def s(self):
        """Packet length in symbols."""
        return self.L // self.q

    @property
    def rate(self):
        return self.n / self.m

    @property
    def redundancy(self):
        return self.m - self.n

    def with_counts(self, n, m):
        return CodingParams(n, m, self.L, self.q, self.systematic)

    def field(self):
        return get_field(self.q)


@dataclass
class ComplexityLedger:
    multiplications: int = 0
    additions: int = 0

    def charge_combination(self, terms, symbols):
        # one output row = terms products per symbol, terms-1 XORs to sum them
        if terms <= 0:
            return
        self.multiplications += terms * symbols
        self.additions += (terms - 1) * symbols

    def gates(self, q):
        return gate_cost(self.additions, self.multiplications, q)

    def __add__(self, other):
        return ComplexityLedger(
            self.multiplications + other.multiplications, self.additions + other.additions
        )


def expected_encoding_ledger(params):
    """Closed-form encoder cost: (m-n)*n*s products and (m-n)*(n-1)*s sums."""
    rows = params.m - params.n if params.systematic else params.m
    return ComplexityLedger(rows * params.n * params.s, rows * (params.n - 1) * params.s)


@dataclass
class CodedPacket:
    generation_id: int
    coefficients: np.ndarray
    payload: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients)
        self.payload = np.asarray(self.payload)

    def __eq__(self, other):
        return (
            isinstance(other, CodedPacket)
            and self.generation_id == other.generation_id
            and np.array_equal(self.coefficients, other.coefficients)
            and np.array_equal(self.payload, other.payload)
        )

    @property
    def n(self):
        return len(self.coefficients)

    def to_bytes(self, q=8):
        """``generation_id`` (u32 BE) | ``n`` (u16 BE) | coefficients | payload.

        Symbols take ``ceil(q/8)`` bytes each, big-endian.
        """
        width = symbol_width(q)
        dt = ">u1" if width == 1 else ">u2"
        head = struct.pack(">IH", self.generation_id, len(self.coefficients))
        return (
            head
            + self.coefficients.astype(dt).tobytes()
            + self.payload.astype(dt).tobytes()
        )

    @classmethod
    def from_bytes(cls, data, q=8):
        if len(data) < 6:
            raise StructuralError("truncated packet header")
        gen, n = struct.unpack(">IH", data[:6])
        width = symbol_width(q)
        body = data[6:]
        if len(body) < n * width or (len(body) - n * width) % width:
            raise StructuralError("packet body length does not match symbol width")
        dt = ">u1" if width == 1 else ">u2"
        syms = np.frombuffer(body, dtype=dt).astype(np.uint8 if q <= 8 else np.uint16)
        if syms.size and syms.max() >= (1 << q):
            raise StructuralError(f"symbol out of range for q={q}")
        return cls(gen, syms[:n].copy(), syms[n:].copy())


def symbol_width(q):
    return (q + 7) // 8


def _as_source(params, source, gf):
    src = np.asarray(source)
    if src.ndim != 2 or src.shape != (params.n, params.s):
        raise StructuralError(
            f"expected {params.n} payloads of {params.s} symbols, got shape {src.shape}"
        )
    if src.size and (src.min() < 0 or src.max() >= gf.order):
        raise StructuralError("payload symbol outside the field")
    return src.astype(gf.dtype)


def combine(gf, coefficients, rows, ledger=None):
    """Linear combinations ``coefficients @ rows`` with operation metering."""
    coefficients = np.asarray(coefficients)
    rows = np.asarray(rows)
    out = gf.matmul(coefficients, rows)
    if ledger is not None:
        for _ in range(coefficients.shape[0]):
            ledger.charge_combination(coefficients.shape[1], rows.shape[1])
    return out


def cauchy_coefficients(gf, rows, n):
    """Deterministic ``rows x n`` Cauchy matrix ``1 / (x_j + y_i)``.

    With ``y_i = i`` and ``x_j = n + j`` all points are distinct, so every
    square submatrix is invertible and a systematic code built from it decodes
    from any ``n`` of its ``n + rows`` packets.
    """
    if n + rows > gf.order:
        raise DomainError(f"a Cauchy code needs n + rows <= {gf.order}")
    x = np.arange(n, n + rows)[:, None]
    y = np.arange(n)[None, :]
    return gf.inv(x ^ y).astype(gf.dtype)


def encode(params, source, rng_seed=0, generation_id=0, coefficient_mode="random"):
    """Encode one generation into ``m`` coded packets.

    Returns ``(packets, ledger)``.  In systematic mode the first ``n`` packets
    carry the source verbatim with unit coefficient vectors and cost nothing.
    ``coefficient_mode="deterministic"`` replaces the random redundancy rows by
    :func:`cauchy_coefficients` (``rng_seed`` is then unused).
    """
    if coefficient_mode not in ("random", "deterministic"):
        raise DomainError(f"unknown coefficient mode {coefficient_mode!r}")
    gf = params.field()
    src = _as_source(params, source, gf)
    rng = np.random.default_rng(rng_seed)
    ledger = ComplexityLedger()
    packets = []
    if params.systematic:
        eye = np.eye(params.n, dtype=gf.dtype)
        for i in range(params.n):
            packets.append(CodedPacket(generation_id, eye[i].copy(), src[i].copy()))
        extra = params.m - params.n
    else:
        extra = params.m
    if extra:
        if coefficient_mode == "deterministic":
            coeffs = cauchy_coefficients(gf, extra, params.n)
        else:
            coeffs = gf.random(rng, (extra, params.n))
        payloads = combine(gf, coeffs, src, ledger)
        for c, p in zip(coeffs, payloads):
            packets.append(CodedPacket(generation_id, c, p))
    return packets, ledger


def _stack(packets, n=None):
    if not packets:
        return None, None, None
    gen = packets[0].generation_id
    for p in packets:
        if p.generation_id != gen:
            raise StructuralError("packets from different generations")
        if n is not None and len(p.coefficients) != n:
            raise StructuralError(f"coefficient vector length {len(p.coefficients)} != n={n}")
    C = np.stack([p.coefficients for p in packets])
    P = np.stack([p.payload for p in packets])
    return gen, C, P


def recode(params, received, rng_seed=0, out_count=1, ledger=None):
    """Fresh random combinations of already-coded packets (relay operation).

    The new coefficient vector is the same combination applied to the input
    coefficient vectors, so downstream decoders need no extra information.
    """
    if not received:
        raise DomainError("cannot recode from an empty packet set")
    gf = params.field()
    gen, C, P = _stack(received, params.n)
    rng = np.random.default_rng(rng_seed)
    mix = gf.random(rng, (out_count, len(received)))
    newC = combine(gf, mix, C)
    newP = combine(gf, mix, P, ledger)
    return [CodedPacket(gen, c, p) for c, p in zip(newC, newP)]


class Decoder:
    """Incremental Gauss-Jordan decoder for one generation.

    Rows are kept in reduced row-echelon form; a new packet is reduced against
    the current pivots, and if anything is left its first nonzero coefficient
    becomes a new pivot.  Arrival order decides ties.
    """

    def __init__(self, params):
        self.params = params
        self.gf = params.field()
        self.generation_id = None
        self.ledger = ComplexityLedger()
        self._coef = np.zeros((params.n, params.n), dtype=self.gf.dtype)
        self._data = np.zeros((params.n, params.s), dtype=self.gf.dtype)
        self._pivot_row = {}  # pivot column -> row slot

    @property
    def rank(self):
        return len(self._pivot_row)

    @property
    def complete(self):
        return self.rank == self.params.n

    def _axpy(self, dst, src, factor, width):
        # dst ^= factor * src, metered
        self.ledger.multiplications += width
        self.ledger.additions += width
        return dst ^ self.gf.mul(factor, src)

    def add(self, packet):
        """Absorb one packet; returns True when it increased the rank."""
        n, s = self.params.n, self.params.s
        if len(packet.coefficients) != n or len(packet.payload) != s:
            raise StructuralError("packet dimensions do not match the coding parameters")
        if self.generation_id is None:
            self.generation_id = packet.generation_id
        elif packet.generation_id != self.generation_id:
            raise StructuralError("packet belongs to another generation")
        gf = self.gf
        coef = packet.coefficients.astype(gf.dtype).copy()
        data = packet.payload.astype(gf.dtype).copy()
        for col, slot in self._pivot_row.items():
            f = int(coef[col])
            if f:
                coef = self._axpy(coef, self._coef[slot], f, n)
                data = self._axpy(data, self._data[slot], f, s)
        nz = np.flatnonzero(coef)
        if nz.size == 0:
            if np.any(data):
                raise IntegrityError("packet is a combination of known rows but its payload disagrees")
            return False
        col = int(nz[0])
        inv = gf.inv(int(coef[col]))
        coef = gf.mul(inv, coef)
        data = gf.mul(inv, data)
        self.ledger.multiplications += n + s
        slot = self.rank
        for other_col, other in self._pivot_row.items():
            f = int(self._coef[other, col])
            if f:
                self._coef[other] = self._axpy(self._coef[other], coef, f, n)
                self._data[other] = self._axpy(self._data[other], data, f, s)
        self._coef[slot] = coef
        self._data[slot] = data
        self._pivot_row[col] = slot
        return True

    def extend(self, packets):
        return sum(self.add(p) for p in packets)

    def source(self):
        """Decoded source block, shape ``(n, s)``."""
        if not self.complete:
            raise InsufficientRankError(self.rank, self.params.n)
        out = np.empty_like(self._data)
        for col, slot in self._pivot_row.items():
            out[col] = self._data[slot]
        return out


def decode(params, received):
    """Decode a generation from any packets whose coefficients have rank ``n``.

    Raises :class:`InsufficientRankError` (carrying the rank reached) when the
    packets do not span the source space.
    """
    dec = Decoder(params)
    dec.extend(received)
    return dec.source()


def coefficient_rank(gf, matrix):
    """Rank of a coefficient matrix over ``gf`` (plain Gaussian elimination)."""
    A = np.array(matrix, dtype=np.int64)
    if A.size == 0:
        return 0
    rows, cols = A.shape
    r = 0
    for c in range(cols):
        piv = np.flatnonzero(A[r:, c])
        if piv.size == 0:
            continue
        p = r + piv[0]
        A[[r, p]] = A[[p, r]]
        A[r] = gf.mul(gf.inv(int(A[r, c])), A[r])
        below = np.flatnonzero(A[r + 1 :, c]) + r + 1
        for i in below:
            A[i] ^= gf.mul(int(A[i, c]), A[r])
        r += 1
        if r == rows:
            break
    return r


def rank(received, q=8):
    """Rank of the coefficient vectors of ``received`` packets."""
    if not received:
        return 0
    _, C, _ = _stack(received)
    return coefficient_rank(get_field(q), C)


# Batched helpers used by the Monte Carlo oracle: many small independent
# generations at once, one per leading index.


def batch_rank(gf, mats):
    """Rank of each matrix in a ``(T, rows, n)`` stack."""
    A = np.array(mats, dtype=gf.dtype)
    T, rows, n = A.shape
    used = np.zeros((T, rows), dtype=bool)
    rank = np.zeros(T, dtype=np.int64)
    t_idx = np.arange(T)
    for c in range(n):
        cand = (A[:, :, c] != 0) & ~used
        has = cand.any(axis=1)
        if not has.any():
            continue
        piv = np.argmax(cand, axis=1)
        prow = A[t_idx, piv]  # (T, n)
        pinv = gf._inv[prow[:, c]]
        factor = gf.mul(A[:, :, c], pinv[:, None])
        factor[t_idx, piv] = 0
        factor[~has] = 0
        A ^= gf.mul(factor[:, :, None], prow[:, None, :])
        used[t_idx[has], piv[has]] = True
        rank += has
    return rank


def batch_systematic_coefficients(gf, rng, T, n, m, systematic=True):
    """Coefficient matrices ``(T, m, n)`` as produced by :func:`encode`."""
    if systematic:
        eye = np.broadcast_to(np.eye(n, dtype=gf.dtype), (T, n, n))
        rand = gf.random(rng, (T, m - n, n))
        return np.concatenate([eye, rand], axis=1)
    return gf.random(rng, (T, m, n))


def batch_recode(gf, rng, C, alive_rows, out_count):
    """Random recombinations of the surviving rows of each ``(rows, n)`` matrix."""
    T, rows, _ = C.shape
    mix = gf.random(rng, (T, out_count, rows))
    mix = np.where(alive_rows[:, None, :], mix, 0).astype(gf.dtype)
    return gf.matmul(mix, C)
