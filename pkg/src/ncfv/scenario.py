"""Scenario files: one YAML document configures every CLI command.

The schema is strict (unknown keys are errors) and is checked before any
computation starts.  Each command reads only its own section.
"""

import itertools
from typing import List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .channel import ErasureSpec
from .codec import CodingParams
from .errors import ConfigurationError, DomainError
from .geo import DEFAULT_LEVELS, DeploymentScenario
from .optimizer import RateGrid, UtilityConfig


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class UtilitySection(Strict):
    w_comp: float = 0.1
    rho0: float = 0.9
    beta0: float = 1.4
    u0: float = 0.0
    range_fraction: float = 0.8
    normalization: Literal["min_feasible", "min_redundancy"] = "min_feasible"

    def build(self, **overrides):
        kw = self.model_dump()
        kw.update(overrides)
        return UtilityConfig(**kw)


class GridSection(Strict):
    mode: Literal["fixed_m", "fixed_n"] = "fixed_m"
    fixed_value: int = 50
    counterpart_values: Optional[List[int]] = None
    counterpart_range: Optional[List[int]] = Field(None, min_length=2, max_length=2)
    L: int = 800
    q: int = 8

    @model_validator(mode="after")
    def _one_source(self):
        if self.counterpart_values is not None and self.counterpart_range is not None:
            raise ValueError("give counterpart_values or counterpart_range, not both")
        return self

    def build(self):
        if self.counterpart_range is not None:
            lo, hi = self.counterpart_range
            values = tuple(range(lo, hi + 1))
        elif self.counterpart_values is not None:
            values = tuple(self.counterpart_values)
        else:
            return RateGrid(mode=self.mode, fixed_value=self.fixed_value, L=self.L, q=self.q)
        return RateGrid(self.mode, self.fixed_value, values, self.L, self.q)


class SweepSection(Strict):
    delta0: float = 0.2
    delta1: List[float] = [0.0, 0.1, 0.2, 0.3, 0.4]
    rho0: List[float] = [0.9]
    w_comp: List[float] = [0.1]


class ChannelCase(Strict):
    n: int
    m: int
    delta: List[float] = Field(min_length=1)


class ChannelSweep(Strict):
    n_max: int = 6
    m_max: int = 10
    deltas: List[float] = [0.05, 0.2, 0.4]
    max_hops: int = Field(2, ge=1, le=3)


class ChannelSection(Strict):
    L: int = 8
    q: int = 8
    relay: Literal["reencode", "recode"] = "reencode"
    cases: List[ChannelCase] = []
    sweep: Optional[ChannelSweep] = None

    def all_cases(self):
        out = [(c.n, c.m, tuple(c.delta)) for c in self.cases]
        if self.sweep is not None:
            sw = self.sweep
            for n in range(1, sw.n_max + 1):
                for m in range(n, sw.m_max + 1):
                    for hops in range(1, sw.max_hops + 1):
                        for combo in itertools.product(sw.deltas, repeat=hops):
                            out.append((n, m, combo))
        return out


class CodingSection(Strict):
    n: int = 30
    m: int = 33
    L: int = 800
    q: int = 8

    def build(self):
        return CodingParams(self.n, self.m, self.L, self.q)


class DeploymentSection(Strict):
    name: str
    area_side: float = 6000.0
    bs_radius: float = 1500.0
    wifi_radius: float = 50.0
    density: float = 1 / 250
    link_erasure: float = 0.03
    relay_cap: int = 4
    forward_fraction: float = 1 / 6
    relay_model: Literal["poisson", "fixed"] = "poisson"
    cellular_erasure: float = 0.0

    def build(self):
        return DeploymentScenario(**self.model_dump())


class GeoSection(Strict):
    deployments: List[DeploymentSection] = [
        DeploymentSection(name="high_density", density=1 / 250),
        DeploymentSection(name="low_density", density=1 / 350),
    ]
    coding: CodingSection = CodingSection()
    levels: List[float] = list(DEFAULT_LEVELS)
    sample_devices: bool = False


class ScenarioFile(Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    trials: int = Field(100_000, ge=1)
    utility: UtilitySection = UtilitySection()
    grid: GridSection = GridSection()
    optimize: Optional[SweepSection] = None
    range: Optional[SweepSection] = None
    channel: Optional[ChannelSection] = None
    geo: Optional[GeoSection] = None

    def check(self):
        """Build every configured object once so domain errors surface early."""
        try:
            self.utility.build()
            self.grid.build()
            for sw in (self.optimize, self.range):
                if sw is not None:
                    for rho0 in sw.rho0:
                        for w in sw.w_comp:
                            self.utility.build(rho0=rho0, w_comp=w)
                    for d1 in sw.delta1:
                        ErasureSpec((sw.delta0, d1))
            if self.channel is not None:
                for n, m, delta in self.channel.all_cases():
                    CodingParams(n, m, self.channel.L, self.channel.q)
                    ErasureSpec(delta)
            if self.geo is not None:
                self.geo.coding.build()
                for d in self.geo.deployments:
                    d.build()
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from exc
        return self


def parse_scenario(text):
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"invalid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario must be a mapping")
    try:
        return ScenarioFile.model_validate(doc).check()
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
