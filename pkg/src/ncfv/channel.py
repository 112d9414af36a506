"""Delivery probability of a coded generation over a chain of erasure hops.

Analytic model: every relay decodes the full generation and re-encodes ``m``
fresh packets, so the end-to-end success probability is the product over hops
of P[at least n of m packets survive].  The Monte Carlo oracle runs the real
codec arithmetic (coefficient draws, erasures, rank tracking) to check it.
"""

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

from .codec import batch_rank, batch_recode, batch_systematic_coefficients
from .errors import DomainError
from .rng import stream

CHUNK = 4096
Z99 = 2.5758293035489004


@dataclass(frozen=True)
class ErasureSpec:
    per_hop: tuple

    def __post_init__(self):
        hops = tuple(float(d) for d in np.atleast_1d(self.per_hop))
        if not hops:
            raise DomainError("erasure spec needs at least one hop")
        for d in hops:
            if not 0.0 <= d <= 1.0 or math.isnan(d):
                raise DomainError(f"erasure probability {d} outside [0, 1]")
        object.__setattr__(self, "per_hop", hops)

    @property
    def hops(self):
        return len(self.per_hop)

    def __iter__(self):
        return iter(self.per_hop)


@dataclass(frozen=True)
class DeliveryEstimate:
    p_success: float
    source: str = "analytic"
    trials: int = 0
    ci_halfwidth: float = 0.0

    @property
    def p_loss(self):
        return 1.0 - self.p_success


def _binom_tail(m, lo, hi, log_p, log_q):
    # sum of binomial pmf terms for k in [lo, hi)
    k = np.arange(lo, hi, dtype=float)
    logs = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1) + k * log_p + (m - k) * log_q
    return float(np.sum(np.exp(logs)))


def p_hop_success(params, delta):
    """P[at least n of m packets survive one hop with erasure rate ``delta``].

    Sums whichever binomial tail is smaller and complements if needed, which
    keeps full relative precision in both the near-0 and near-1 regimes.
    """
    delta = float(delta)
    if not 0.0 <= delta <= 1.0:
        raise DomainError(f"erasure probability {delta} outside [0, 1]")
    return _hop_success(params.n, params.m, delta)


@lru_cache(maxsize=65536)
def _hop_success(n, m, delta):
    if delta == 0.0:
        return 1.0
    if delta == 1.0:
        return 0.0
    log_p, log_q = math.log1p(-delta), math.log(delta)
    mean = m * (1.0 - delta)
    if mean >= n:
        # success is the big tail: 1 - P[fewer than n survive]
        return max(0.0, 1.0 - _binom_tail(m, 0, n, log_p, log_q))
    return min(1.0, _binom_tail(m, n, m + 1, log_p, log_q))


def p_hop_success_exact(params, delta):
    """Exact rational evaluation of the same tail (slow; for verification)."""
    d = Fraction(delta)
    keep = 1 - d
    total = sum(
        Fraction(math.comb(params.m, k)) * keep**k * d ** (params.m - k)
        for k in range(params.n, params.m + 1)
    )
    return total


def p_delivery(params, spec):
    """End-to-end decode probability under hop-by-hop decode and re-encode."""
    if not isinstance(spec, ErasureSpec):
        spec = ErasureSpec(spec)
    p = 1.0
    for d in spec:
        p *= p_hop_success(params, d)
    return DeliveryEstimate(p)


def systematic_full_rank(gf, C, kept, n):
    """Full-rank test for a systematic block ``[I; A]`` with erasures.

    The received unit rows cover their own columns, so the block has rank n
    iff the received coded rows restricted to the erased source columns have
    full column rank.  Only that small submatrix is eliminated.
    """
    T, m, _ = C.shape
    r = m - n
    sys_kept = kept[:, :n]
    erased = n - sys_kept.sum(axis=1)
    if r == 0:
        return erased == 0
    # erased columns first, then truncate to the r columns that can matter
    order = np.argsort(sys_kept, axis=1, kind="stable")[:, :r]
    A = np.take_along_axis(C[:, n:, :], order[:, None, :], axis=2)
    col_used = np.arange(min(r, n))[None, :] < erased[:, None]
    A = np.where(kept[:, n:, None] & col_used[:, None, :], A, 0).astype(gf.dtype)
    return (erased <= r) & (batch_rank(gf, A) == erased)


def _simulate_chunk(params, spec, gf, rng, T, relay):
    n, m = params.n, params.m
    alive = np.ones(T, dtype=bool)
    C = batch_systematic_coefficients(gf, rng, T, n, m, params.systematic)
    fresh = True
    kept = None
    for hop, d in enumerate(spec):
        if hop:
            if relay == "recode":
                C = batch_recode(gf, rng, C, kept, m)
                fresh = False
            else:
                C = batch_systematic_coefficients(gf, rng, T, n, m, params.systematic)
        kept = rng.random((T, m)) >= d
        if fresh and params.systematic:
            alive &= systematic_full_rank(gf, C, kept, n)
        else:
            received = np.where(kept[:, :, None], C, 0).astype(gf.dtype)
            alive &= batch_rank(gf, received) == n
    return int(alive.sum())


def monte_carlo_delivery(params, spec, trials=10_000, seed=0, relay="reencode", chunk=CHUNK):
    """Packet-level simulation of the hop chain using real field arithmetic.

    ``relay="reencode"``: a relay that decoded sends a fresh encoding of the
    generation (the analytic model).  ``relay="recode"``: the relay instead
    forwards ``m`` random recombinations of the packets it received.

    Trials are processed in fixed-size chunks; chunk ``c`` draws from the
    stream ``(seed, c)``, so results do not depend on execution order.
    """
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if relay not in ("reencode", "recode"):
        raise DomainError(f"unknown relay mode {relay!r}")
    if not isinstance(spec, ErasureSpec):
        spec = ErasureSpec(spec)
    gf = params.field()
    successes = 0
    for c, start in enumerate(range(0, trials, chunk)):
        T = min(chunk, trials - start)
        successes += _simulate_chunk(params, spec, gf, stream(seed, c), T, relay)
    p = successes / trials
    half = Z99 * math.sqrt(p * (1.0 - p) / trials)
    return DeliveryEstimate(p, "monte_carlo", trials, half)
