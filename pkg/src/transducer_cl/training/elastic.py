"""Quadratic pull of current parameters towards a previous-stage snapshot."""
from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ..exceptions import ConfigurationError
from ..model import COMPONENTS, ParameterStore


class ParameterSnapshot:
    """Read-only copy of selected parameter values."""

    def __init__(self, values: Mapping[str, np.ndarray]):
        frozen = {}
        for name, arr in values.items():
            arr = np.array(arr, dtype=np.float64, copy=True)
            arr.setflags(write=False)
            frozen[name] = arr
        self.values = MappingProxyType(frozen)

    @classmethod
    def take(cls, params: ParameterStore, components) -> "ParameterSnapshot":
        return cls({p.name: p.value for p in params.in_components(components)})

    def names(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


@dataclass
class ElasticPenaltyConfig:
    lam: float = 0.01
    component_scope: frozenset = field(default_factory=lambda: frozenset({"decoder"}))
    snapshot: ParameterSnapshot | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("elastic penalty lambda must be >= 0")
        self.component_scope = frozenset(self.component_scope)
        unknown = self.component_scope - set(COMPONENTS)
        if unknown:
            raise ConfigurationError(f"unknown component tags in penalty scope: {sorted(unknown)}")


def _check_snapshot(params: ParameterStore, cfg: ElasticPenaltyConfig) -> list:
    if cfg.snapshot is None:
        raise ConfigurationError("elastic penalty has no snapshot")
    scoped = params.in_components(cfg.component_scope)
    if [p.name for p in scoped] != cfg.snapshot.names():
        raise ConfigurationError("snapshot parameter names do not match the penalty scope")
    for p in scoped:
        if cfg.snapshot[p.name].shape != p.value.shape:
            raise ConfigurationError(f"snapshot shape mismatch for {p.name!r}")
    return scoped


def elastic_penalty(params: ParameterStore, cfg: ElasticPenaltyConfig):
    """Return ``(J, grads)`` with ``J = lam * sum (theta_pre - theta_cur)^2``.

    ``grads`` maps each scoped parameter name to ``dJ/dtheta_cur``.
    """
    scoped = _check_snapshot(params, cfg)
    value = 0.0
    grads = {}
    for p in scoped:
        diff = p.value - cfg.snapshot[p.name]
        value += float(np.vdot(diff, diff))
        grads[p.name] = 2.0 * cfg.lam * diff
    return cfg.lam * value, grads


def add_elastic_penalty(params: ParameterStore, cfg: ElasticPenaltyConfig) -> float:
    """Add the penalty gradient into ``params`` grads; return the penalty value."""
    value, grads = elastic_penalty(params, cfg)
    for name, g in grads.items():
        params.g(name)[...] += g
    return value
