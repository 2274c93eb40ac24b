"""Worked examples wired up as runnable scenarios.

A :class:`Scenario` bundles the process, its threshold schedule
``u_n(tau)``, the inverse map from values back to frequencies and the
default run length q. The LSV examples also carry the calibrated density
constants their observables were built from.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np

from . import analytic, dynamics
from .catalog import ExampleId
from .dynamics import DEFAULT_BURN_IN, DoublingMap, InvariantDensityModel, LSVMap, map_from_dict
from .errors import ConfigError
from .observables import (SOURCE_ZETA1, SOURCE_ZETA2, LogDistSingle, MixIndifferent, MMAIdentity,
                          NegLog, g_from_dict, observable_for, observable_from_dict,
                          threshold_analytic)
from .processes import DynamicalProcess, MMAProcess
from .repp import (MarkedPointSet2D, inverse_threshold, simulate_limit_N2_periodic,
                   simulate_limit_N2_poisson)

DEFAULT_Q = {"mma": 2, "doubling13": 2, "doubling_mix": 3, "smith_lsv": 1}
DENSITY_STEPS = 2 ** 27


@functools.lru_cache(maxsize=8)
def calibrated_density(alpha: float, seed: int, steps: int = DENSITY_STEPS) -> InvariantDensityModel:
    """Density model of the LSV map, cached per (alpha, seed, steps)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    return dynamics.calibrate_density(LSVMap(alpha), rng, steps)


@dataclass(frozen=True)
class Scenario:
    """A runnable process with its thresholds; ``example`` is None for custom pairs."""

    example: ExampleId | None
    process: object
    default_q: int
    g: object = field(default_factory=NegLog)
    density: InvariantDensityModel | None = field(default=None, repr=False)

    @property
    def label(self) -> str:
        return self.example.label() if self.example is not None else "custom"

    @property
    def labelled(self) -> bool:
        """Whether exceedances carry the label of the maximum they came from."""
        obs = getattr(self.process, "observable", None)
        return len(getattr(obs, "maximal_set", ())) > 1

    def threshold(self, n: int, tau: float) -> float:
        if self.example is None:
            raise ConfigError("custom processes have no closed-form threshold; "
                              "use threshold: empirical")
        obs = getattr(self.process, "observable", None)
        if isinstance(obs, (MixIndifferent, LogDistSingle)):
            return threshold_analytic(obs, n, tau)
        return threshold_analytic(self.example, n, tau)

    def inverse(self, values, n: int, tail=None):
        """Frequency ``tau`` at which each value sits exactly on the threshold.

        ``tail`` (an empirical calibration tail) replaces the closed form.
        """
        if tail is not None or self.example is None:
            return inverse_threshold(None, values, n, tail=tail)
        obs = getattr(self.process, "observable", None)
        if isinstance(obs, LogDistSingle):
            return 2.0 * n * np.asarray(obs.g.inverse(values)) / obs.scale
        return inverse_threshold(self.example, values, n, self.g)

    def metadata(self) -> dict:
        d = {"example": None if self.example is None else self.example.to_dict(),
             "label": self.label, "default_q": self.default_q, "g": self.g.to_dict(),
             "process": self.process.to_dict()}
        obs = getattr(self.process, "observable", None)
        if isinstance(obs, MixIndifferent):
            d["zeta2"] = obs.zeta2
            d["zeta2_kind"] = obs.zeta2_kind
            d["c1_hat"] = obs.c1
            d["h_zeta2"] = obs.h2
        if self.density is not None:
            d["density"] = self.density.to_dict()
        if self.example is not None and self.example.kind == "periodic_lsv":
            d["gamma"] = analytic.gamma_for(self.example)
        return d


def custom_scenario(map_dict: dict, observable_dict: dict, burn_in: int = DEFAULT_BURN_IN,
                    q: int = 1) -> Scenario:
    """Scenario for a user-supplied (map, observable) pair."""
    obs = observable_from_dict(observable_dict)
    if isinstance(obs, MMAIdentity):
        raise ConfigError("the identity observable belongs to the MMA example")
    proc = DynamicalProcess(map_from_dict(map_dict), obs, burn_in)
    return Scenario(None, proc, q, getattr(obs, "g", NegLog()))


def build_scenario(example: ExampleId, seed: int = 0, burn_in: int = DEFAULT_BURN_IN,
                   delta: float = 0.05, g=None, density_steps: int = DENSITY_STEPS,
                   density: InvariantDensityModel | None = None) -> Scenario:
    """Scenario for a worked example; LSV densities are calibrated from ``seed``."""
    if isinstance(g, dict):
        g = g_from_dict(g)
    g = NegLog() if g is None else g
    if not isinstance(g, NegLog) and example.kind in ("mma", "doubling_mix"):
        raise ConfigError(f"{example.label()} only supports the -log observable")
    if example.kind == "mma":
        return Scenario(example, MMAProcess(), DEFAULT_Q["mma"], g)
    if example.is_doubling:
        obs = observable_for(example, g=g)
        return Scenario(example, DynamicalProcess(DoublingMap(), obs, burn_in),
                        DEFAULT_Q[example.kind], g)
    if density is None:
        density = calibrated_density(example.alpha, seed, density_steps)
    obs = observable_for(example, density, delta, g)
    q = example.p if example.kind == "periodic_lsv" else DEFAULT_Q["smith_lsv"]
    return Scenario(example, DynamicalProcess(LSVMap(example.alpha), obs, burn_in), q, g,
                    density)


def _labelled(pts: MarkedPointSet2D, code: int) -> MarkedPointSet2D:
    return replace(pts, source=np.full(len(pts), code, dtype=np.int8))


def _superpose(parts, horizon, y_max) -> MarkedPointSet2D:
    t = np.concatenate([p.t for p in parts])
    y = np.concatenate([p.y for p in parts])
    src = np.concatenate([p.source for p in parts])
    order = np.lexsort((y, t))
    return MarkedPointSet2D(t[order], y[order], horizon, y_max, src[order])


def simulate_limit(example: ExampleId, horizon: float, y_max: float,
                   rng: np.random.Generator) -> MarkedPointSet2D:
    """Simulated two-dimensional limit of the rare-event process.

    Piles of points sharing one time coordinate stand for clusters; their
    heights grow geometrically with the local expansion rate around the
    periodic maximum.
    """
    kind = example.kind
    if kind == "mma":
        # every Y exceedance shows up twice with the same value
        base = simulate_limit_N2_poisson(0.5, horizon, y_max, rng)
        t, y = np.repeat(base.t, 2), np.repeat(base.y, 2)
        return MarkedPointSet2D(t, y, horizon, y_max, np.full(len(t), SOURCE_ZETA1, np.int8))
    if kind == "doubling13":
        return _labelled(simulate_limit_N2_periodic(0.75, 4.0, horizon, y_max, rng), SOURCE_ZETA1)
    if kind == "doubling_mix":
        a = _labelled(simulate_limit_N2_periodic(3 / 8, 4.0, horizon, y_max, rng), SOURCE_ZETA1)
        b = _labelled(simulate_limit_N2_periodic(7 / 16, 8.0, horizon, y_max, rng), SOURCE_ZETA2)
        return _superpose([a, b], horizon, y_max)
    if kind == "smith_lsv":
        # only the zeta2 half of the mass survives in the limit
        return _labelled(simulate_limit_N2_poisson(0.5, horizon, y_max, rng), SOURCE_ZETA2)
    gamma = analytic.gamma_for(example)
    th = analytic.theta(example)
    return _labelled(simulate_limit_N2_periodic(th, gamma, horizon, y_max, rng), SOURCE_ZETA2)
