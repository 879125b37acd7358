"""Run configuration: budgets, tolerances and sampler knobs in one block."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace


@dataclass(frozen=True)
class SamplerConfig:
    sigma_tube_factor: float = 0.5      # sigma_tube = factor * min_separation
    tube_weight: float = 0.7
    broad_weight: float = 0.3
    pair_close_weight: float = 0.5      # share of close-pair draws in the pair sampler
    pair_sigma_factor: float = 0.5      # close-pair radial scale relative to sigma_tube
    block_size: int = 4096


@dataclass(frozen=True)
class Config:
    seed: int = 20240601
    kernel_power: float = 3.0           # 3: |x - x_i|^3 (default); 2: literal squared norm
    curve_order: int = 512              # trapezoid nodes per component for potentials
    near_floor_factor: float = 1e-3     # near_floor = factor * curve diameter
    hard_floor: float = 1e-13
    grid_size: int = 2048               # scalar-potential grid per component
    lk_tol: float = 1e-10
    lk_max_nodes: int = 1 << 13
    volume_budget: int = 1 << 17        # samples per volume term
    pair_budget: int = 1 << 17          # sample pairs per W block
    target_rel_stderr: float = 1e-3     # target stderr = this * max(1, |value|)
    min_blocks: int = 4
    short_circuit: bool = True
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def with_(self, **kw) -> "Config":
        sampler_kw = {k: kw.pop(k) for k in list(kw) if k in {f.name for f in fields(SamplerConfig)}}
        cfg = replace(self, **kw)
        if sampler_kw:
            cfg = replace(cfg, sampler=replace(cfg.sampler, **sampler_kw))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        data = dict(data)
        sampler = SamplerConfig(**data.pop("sampler", {}))
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(sampler=sampler, **data)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


QUICK = Config(volume_budget=1 << 15, pair_budget=1 << 15, grid_size=1024)
FULL = Config(volume_budget=1 << 19, pair_budget=1 << 19)
