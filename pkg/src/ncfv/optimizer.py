"""Utility-driven choice of the coding rate and the activation decision.

For a candidate rate R = n/m the source scores

    u(R) = w_nc * (P_R(R, delta) - rho0) / rho0  -  w_comp * ln(1 + beta_bar(R))

where ``beta_bar`` is the encoding gate count relative to a reference code.
Rates whose ``beta_bar`` exceeds the budget ``beta0`` are discarded, the best
remaining rate is adopted, and coding is switched on when its utility reaches
the threshold ``u0``.
"""

import math
from dataclasses import dataclass, field, replace

from .channel import ErasureSpec, p_delivery
from .codec import CodingParams, expected_encoding_ledger
from .errors import DomainError
from .gf import gate_cost

NORMALIZATIONS = ("min_feasible", "min_redundancy")
ZERO_BAND = 1e-9


@dataclass(frozen=True)
class UtilityConfig:
    w_comp: float = 0.1
    rho0: float = 0.9
    beta0: float = 1.4
    u0: float = 0.0
    range_fraction: float = 0.8
    normalization: str = "min_feasible"
    w_nc: float = None

    def __post_init__(self):
        if self.w_nc is None:
            object.__setattr__(self, "w_nc", 1.0 - self.w_comp)
        if not (0 < self.w_nc < 1 and 0 < self.w_comp < 1):
            raise DomainError("weights must lie in (0, 1)")
        if not math.isclose(self.w_nc + self.w_comp, 1.0, abs_tol=1e-12):
            raise DomainError("w_nc + w_comp must equal 1")
        if not 0 < self.rho0 <= 1:
            raise DomainError("rho0 must lie in (0, 1]")
        if self.beta0 < 1:
            raise DomainError("beta0 must be >= 1")
        if not 0 < self.range_fraction <= 1:
            raise DomainError("range_fraction must lie in (0, 1]")
        if self.normalization not in NORMALIZATIONS:
            raise DomainError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class RateGrid:
    """Finite set of (n, m) candidates.

    ``fixed_m``: m is ``fixed_value`` and ``counterpart_values`` lists n.
    ``fixed_n``: n is ``fixed_value`` and ``counterpart_values`` lists m.
    """

    mode: str = "fixed_m"
    fixed_value: int = 50
    counterpart_values: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45, 49)
    L: int = 800
    q: int = 8

    def __post_init__(self):
        if self.mode not in ("fixed_m", "fixed_n"):
            raise DomainError(f"unknown grid mode {self.mode!r}")
        object.__setattr__(self, "counterpart_values", tuple(int(v) for v in self.counterpart_values))
        pairs = self.pairs()
        for n, m in pairs:
            if not 1 <= n <= m:
                raise DomainError(f"candidate n={n}, m={m} violates m >= n >= 1")
        rates = [n / m for n, m in pairs]
        if any(a == b for a, b in zip(sorted(rates), sorted(rates)[1:])):
            raise DomainError("duplicate rates in grid")

    def pairs(self):
        if self.mode == "fixed_m":
            return [(v, self.fixed_value) for v in self.counterpart_values]
        return [(self.fixed_value, v) for v in self.counterpart_values]

    def candidates(self):
        """Coding parameters ordered by increasing rate."""
        out = [CodingParams(n, m, self.L, self.q) for n, m in self.pairs()]
        return sorted(out, key=lambda p: p.rate)

    def __len__(self):
        return len(self.counterpart_values)


@dataclass(frozen=True)
class Candidate:
    params: CodingParams
    p_r: float
    gates: int
    beta_bar: float
    utility: float
    feasible: bool

    @property
    def rate(self):
        return self.params.rate


@dataclass(frozen=True)
class OptimizationResult:
    r_star: float
    u_max: float
    p_r_star: float
    beta_bar: float
    activated: bool
    feasible_count: int
    params: CodingParams = None

    @property
    def feasible(self):
        return self.feasible_count > 0


@dataclass(frozen=True)
class OperativeRange:
    rates: tuple
    p_r_bounds: tuple
    u_bounds: tuple
    gate_bounds: tuple
    members: tuple = field(default=(), repr=False)
    optimum: OptimizationResult = field(default=None, repr=False)

    @property
    def p_r_span(self):
        return self.p_r_bounds[1] - self.p_r_bounds[0]

    @property
    def gate_spread(self):
        return self.gate_bounds[1] - self.gate_bounds[0]


def goodness(p_r, rho0):
    """Relative margin of the delivery probability over the target."""
    if rho0 <= 0:
        raise DomainError("rho0 must be positive")
    return (p_r - rho0) / rho0


def cost(beta_bar):
    """Complexity penalty ``ln(1 + beta_bar)``."""
    if beta_bar < 0:
        raise DomainError("complexity ratio must be non-negative")
    return math.log1p(beta_bar)


def encoding_gates(params):
    led = expected_encoding_ledger(params)
    return gate_cost(led.additions, led.multiplications, params.q).total_gates


def reference_gates(cands, p_values, cfg):
    """Denominator of ``beta_bar`` for the current channel.

    ``min_feasible``: cheapest coded candidate that already meets rho0 (falls
    back to the least-redundancy candidate when none does).
    ``min_redundancy``: the least-redundancy candidate.
    """
    coded = [c for c in cands if c.m > c.n]
    if not coded:
        return None
    least = min(coded, key=lambda c: (c.m - c.n, -c.rate))
    if cfg.normalization == "min_feasible":
        good = [encoding_gates(c) for c, p in zip(cands, p_values) if c.m > c.n and p >= cfg.rho0]
        if good:
            return min(good)
    return encoding_gates(least)


def utility_table(spec, cfg, grid):
    """Evaluate every grid candidate; ordered by increasing rate."""
    if not isinstance(spec, ErasureSpec):
        spec = ErasureSpec(spec)
    cands = grid.candidates()
    p_values = [p_delivery(c, spec).p_success for c in cands]
    ref = reference_gates(cands, p_values, cfg)
    rows = []
    for c, p in zip(cands, p_values):
        gates = encoding_gates(c)
        beta_bar = gates / ref if ref else 0.0
        u = cfg.w_nc * goodness(p, cfg.rho0) - cfg.w_comp * cost(beta_bar)
        rows.append(Candidate(c, p, gates, beta_bar, u, beta_bar <= cfg.beta0 + 1e-12))
    return rows


def utility(rate, spec, cfg, grid):
    """Utility of the grid candidate with coding rate ``rate``."""
    for row in utility_table(spec, cfg, grid):
        if math.isclose(row.rate, rate, rel_tol=0, abs_tol=1e-12):
            return row.utility
    raise DomainError(f"rate {rate} is not a grid candidate")


def _best(rows):
    # strict > while scanning by decreasing rate keeps the highest-rate tie
    best = None
    for row in sorted(rows, key=lambda r: -r.rate):
        if best is None or row.utility > best.utility:
            best = row
    return best


def optimize_rate(spec, cfg, grid, table=None):
    """Exhaustive constrained argmax over the grid."""
    if len(grid) == 0:
        raise DomainError("empty rate grid")
    rows = table if table is not None else utility_table(spec, cfg, grid)
    feasible = [r for r in rows if r.feasible]
    if not feasible:
        return OptimizationResult(math.nan, math.nan, math.nan, math.nan, False, 0)
    best = _best(feasible)
    return OptimizationResult(
        r_star=best.rate,
        u_max=best.utility,
        p_r_star=best.p_r,
        beta_bar=best.beta_bar,
        activated=best.utility >= cfg.u0,
        feasible_count=len(feasible),
        params=best.params,
    )


def band(u_max, fraction):
    """Utility interval accepted into the operative range."""
    if u_max > 0:
        return fraction * u_max, u_max
    if u_max == 0:
        return -ZERO_BAND, 0.0
    # negative optimum: widen downwards by the same relative amount
    return u_max / fraction, u_max


def operative_range(spec, cfg, grid, table=None):
    """Rates whose utility lies within ``range_fraction`` of the optimum."""
    from .errors import InfeasibleError

    rows = table if table is not None else utility_table(spec, cfg, grid)
    opt = optimize_rate(spec, cfg, grid, table=rows)
    if not opt.feasible:
        raise InfeasibleError(opt)
    lo, hi = band(opt.u_max, cfg.range_fraction)
    members = tuple(r for r in rows if r.feasible and lo <= r.utility <= hi)
    return OperativeRange(
        rates=tuple(r.rate for r in members),
        p_r_bounds=(min(r.p_r for r in members), max(r.p_r for r in members)),
        u_bounds=(lo, hi),
        gate_bounds=(min(r.gates for r in members), max(r.gates for r in members)),
        members=members,
        optimum=opt,
    )


def range_gate_report(rng, base=None):
    """(rate, total gates) for each member of an operative range."""
    out = []
    for row in rng.members:
        params = row.params if base is None else replace(base, n=row.params.n, m=row.params.m)
        out.append((params.rate, encoding_gates(params)))
    return out


# Experiment presets (see README): the grid used for the rate-selection and
# operative-range sweeps keeps n = 30 source packets of 100 bytes and lets the
# block grow to at most m = 50 coded packets.

def reference_grid():
    return RateGrid(mode="fixed_n", fixed_value=30, counterpart_values=tuple(range(31, 51)), L=800, q=8)


def default_grid():
    return RateGrid()
