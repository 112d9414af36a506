"""Coverage extension beyond a cellular cell through device-to-device relaying.

Devices are spread uniformly around a base station.  A user outside the cell
is reached by a chain of WiFi hops of at most ``wifi_radius`` meters plus one
cellular ingress hop.  With geo-assisted network coding each D2D hop is served
by several relays in parallel: a coded packet is lost on the hop only if every
relay loses it, and each hop decodes and re-encodes the generation.  Without
it, one uncoded path carries the packet.

Two relay models are available:

``poisson`` (default)
    The number of usable relays per hop is Poisson with mean
    ``forward_fraction * pi * wifi_radius**2 * density``, capped at
    ``relay_cap``; a hop with no relay fails.
``fixed``
    Every hop has exactly :func:`relays_per_hop` relays.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import poisson

from .channel import p_hop_success
from .codec import CodingParams
from .errors import ConfigurationError, DomainError
from .rng import stream

DEVICE_CAP = 200_000
WITH_NC = "with_geo_nc"
WITHOUT_NC = "without_geo_nc"
MODES = (WITH_NC, WITHOUT_NC)
RELAY_MODELS = ("poisson", "fixed")
DEFAULT_LEVELS = (0.95, 0.90, 0.85)


@dataclass(frozen=True)
class DeploymentScenario:
    area_side: float = 6000.0
    bs_radius: float = 1500.0
    wifi_radius: float = 50.0
    density: float = 1 / 250
    link_erasure: float = 0.03
    relay_cap: int = 4
    forward_fraction: float = 1 / 6
    relay_model: str = "poisson"
    cellular_erasure: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        if self.area_side <= 0 or not 0 < self.bs_radius <= self.area_side / 2:
            raise DomainError("need 0 < bs_radius <= area_side / 2")
        if self.wifi_radius <= 0:
            raise DomainError("wifi_radius must be positive")
        if self.density < 0:
            raise DomainError("density must be non-negative")
        for name in ("link_erasure", "cellular_erasure"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must lie in [0, 1]")
        if self.relay_cap < 0:
            raise DomainError("relay_cap must be >= 0")
        if not 0 < self.forward_fraction <= 1:
            raise DomainError("forward_fraction must lie in (0, 1]")
        if self.relay_model not in RELAY_MODELS:
            raise DomainError(f"relay_model must be one of {RELAY_MODELS}")

    @property
    def expected_neighbors(self):
        return math.pi * self.wifi_radius**2 * self.density

    @property
    def mean_relays(self):
        return self.forward_fraction * self.expected_neighbors

    @property
    def max_extension_pct(self):
        return int(math.floor(100 * (self.area_side / 2 - self.bs_radius) / self.bs_radius + 1e-9))

    @classmethod
    def high_density(cls, **kw):
        return cls(density=1 / 250, name="high_density", **kw)

    @classmethod
    def low_density(cls, **kw):
        return cls(density=1 / 350, name="low_density", **kw)


def presets():
    return [DeploymentScenario.high_density(), DeploymentScenario.low_density()]


def default_coding():
    """Shortest-redundancy member of the n = 30 grid meeting 95% on one link
    at the preset 3% erasure: 30 source packets in 33."""
    return CodingParams(30, 33, L=800, q=8)


@dataclass(frozen=True)
class ReliabilityCurve:
    points: tuple
    mode: str


@dataclass(frozen=True)
class GainRow:
    required_reliability: float
    extension_with: int
    extension_without: int
    gain: float = None


def relays_per_hop(scenario):
    """Relays serving one hop: a fixed fraction of the in-range neighbours, capped."""
    return min(scenario.relay_cap, int(math.floor(scenario.mean_relays + 1e-12)))


def hop_count(distance, scenario):
    """D2D hops plus the cellular ingress hop; 0 inside the cell."""
    if distance < 0:
        raise DomainError("distance must be non-negative")
    beyond = distance - scenario.bs_radius
    if beyond <= 1e-9:
        return 0
    return math.ceil(round(beyond / scenario.wifi_radius, 9)) + 1


def d2d_hop_success(scenario, coding, mode=WITH_NC):
    """Probability that one D2D hop delivers the generation."""
    d = scenario.link_erasure
    if mode == WITHOUT_NC:
        return 1.0 - d
    if scenario.relay_model == "fixed":
        k = relays_per_hop(scenario)
        return p_hop_success(coding, d**k) if k > 0 else 0.0
    lam, cap = scenario.mean_relays, scenario.relay_cap
    if cap == 0 or lam == 0:
        return 0.0
    total = 0.0
    for k in range(1, cap):
        total += poisson.pmf(k, lam) * p_hop_success(coding, d**k)
    total += poisson.sf(cap - 1, lam) * p_hop_success(coding, d**cap)
    return float(total)


def cellular_success(scenario, coding, mode=WITH_NC):
    d = scenario.cellular_erasure
    return p_hop_success(coding, d) if mode == WITH_NC else 1.0 - d


def reliability_at(distance, scenario, coding=None, mode=WITH_NC):
    """Delivery probability for a user ``distance`` meters from the base station.

    With NC this is the probability of decoding the generation; without NC
    it is the per-packet survival of the single uncoded path.
    """
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    coding = coding if coding is not None else default_coding()
    hops = hop_count(distance, scenario)
    cell = cellular_success(scenario, coding, mode)
    if hops == 0:
        return cell
    return cell * d2d_hop_success(scenario, coding, mode) ** (hops - 1)


def extension_distance(pct, scenario):
    return scenario.bs_radius * (1 + pct / 100)


def reliability_curve(scenario, coding=None, mode=WITH_NC):
    """Reliability on the 1% extension grid, keyed by normalized distance."""
    coding = coding if coding is not None else default_coding()
    per_hop = d2d_hop_success(scenario, coding, mode)
    cell = cellular_success(scenario, coding, mode)
    pts = []
    for pct in range(scenario.max_extension_pct + 1):
        hops = hop_count(extension_distance(pct, scenario), scenario)
        rel = cell if hops == 0 else cell * per_hop ** (hops - 1)
        pts.append((1 + pct / 100, rel))
    return ReliabilityCurve(tuple(pts), mode)


def max_extension(curve, level):
    """Largest extension (percent) whose reliability meets ``level``; None if
    not even the cell edge does."""
    best = None
    for pct, (_, rel) in enumerate(curve.points):
        if rel >= level:
            best = pct
        else:
            break
    return best


def nc_available(scenario):
    if scenario.relay_model == "fixed":
        return relays_per_hop(scenario) > 0
    return scenario.relay_cap > 0 and scenario.mean_relays > 0


def gain_table(scenario, coding=None, levels=DEFAULT_LEVELS):
    """Coverage extension with and without geo-NC per reliability requirement."""
    for lv in levels:
        if not 0 < lv < 1:
            raise DomainError("reliability levels must lie in (0, 1)")
    coding = coding if coding is not None else default_coding()
    with_c = reliability_curve(scenario, coding, WITH_NC)
    without_c = reliability_curve(scenario, coding, WITHOUT_NC)
    rows = []
    for lv in levels:
        a = max_extension(with_c, lv)
        b = max_extension(without_c, lv)
        a = a or 0
        b = b or 0
        gain = a / b if b > 0 and nc_available(scenario) else None
        rows.append(GainRow(lv, a, b, gain))
    return rows


def device_count(scenario):
    return int(round(scenario.density * scenario.area_side**2))


def generate_deployment(scenario, seed=0, override_cap=False, cap=DEVICE_CAP):
    """Uniform device positions ``(N, 2)`` in meters, base station at the origin."""
    count = device_count(scenario)
    if count > cap and not override_cap:
        raise ConfigurationError(
            f"{count} devices exceeds the cap of {cap}; pass the override flag to sample anyway"
        )
    half = scenario.area_side / 2
    return stream(seed, 0).uniform(-half, half, size=(count, 2))


def empirical_neighbor_counts(positions, scenario, samples=1000, seed=0):
    """In-range neighbour counts of randomly picked devices away from the border."""
    half = scenario.area_side / 2
    r = scenario.wifi_radius
    inner = np.flatnonzero(np.all(np.abs(positions) <= half - r, axis=1))
    if inner.size == 0:
        return np.zeros(0, dtype=np.int64)
    pick = stream(seed, 1).choice(inner, size=min(samples, inner.size), replace=False)
    tree = cKDTree(positions)
    counts = tree.query_ball_point(positions[pick], r, return_length=True)
    return np.asarray(counts, dtype=np.int64) - 1
