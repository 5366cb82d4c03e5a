"""Environment sequences: which offspring law governs each generation.

An :class:`EnvironmentSpec` describes the sequence of per-generation
offspring laws -- constant, explicit, periodic, i.i.d. random, or random
with a cooling schedule (each environment draw held for a whole block of
generations).  Random kinds are resolved through counter-based streams
keyed by ``(env_seed, index)``, so ``dist_at`` is random-access: the law of
generation ``i`` can be produced without materializing generations
``1..i-1``, and two calls always agree.

``quench`` freezes a spec into a :class:`QuenchedEnvironment`: a concrete
sequence of laws together with the running sums of their log-means,
accumulated with compensated summation (the condition series are
exponentially sensitive to drift in those sums).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .distributions import OffspringDistribution
from .streams import substream

__all__ = [
    "Mixer",
    "EnvironmentSpec",
    "QuenchedEnvironment",
    "critical_preset",
    "supercritical_preset",
    "subcritical_preset",
    "cooling_preset",
    "heavy_tail_supercritical_preset",
    "PRESETS",
]

MAX_QUENCH_HORIZON = 10**7


class Mixer:
    """A sampling law over offspring distributions (one i.i.d. environment draw).

    Two forms:

    * ``finite``: a finite mixture of fully specified laws with weights.
    * ``gaussian_logmean_geometric``: geometric offspring whose log-mean is
      drawn from a Gaussian.
    """

    def __init__(self, kind: str, **params):
        self.kind = kind
        self.params = dict(params)
        if kind == "finite":
            dists = list(params["dists"])
            weights = np.asarray(params["weights"], dtype=float)
            if len(dists) != len(weights) or len(dists) == 0:
                raise ValueError("finite mixer needs matching dists and weights")
            if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
                raise ValueError("mixer weights must be a probability vector")
            self.dists: List[OffspringDistribution] = dists
            self.weights = weights / weights.sum()
        elif kind == "gaussian_logmean_geometric":
            self.mu = float(params["mu"])
            self.sigma = float(params["sigma"])
            if self.sigma < 0:
                raise ValueError("sigma must be nonnegative")
        else:
            raise ValueError(f"unknown mixer kind {kind!r}")

    def draw(self, rng: np.random.Generator) -> OffspringDistribution:
        if self.kind == "finite":
            idx = rng.choice(len(self.dists), p=self.weights)
            return self.dists[idx]
        xi = self.mu + self.sigma * rng.standard_normal()
        return OffspringDistribution.geometric(mean=math.exp(xi))

    def log_mean_expectation(self) -> float:
        """Mean of the log-mean of one environment draw."""
        if self.kind == "finite":
            return float(np.dot(self.weights,
                                [d.log_mean for d in self.dists]))
        return self.mu

    def to_config(self) -> dict:
        if self.kind == "finite":
            return {"kind": "finite",
                    "dists": [d.to_config() for d in self.dists],
                    "weights": [float(w) for w in self.weights]}
        return {"kind": "gaussian_logmean_geometric",
                "mu": self.mu, "sigma": self.sigma}

    @classmethod
    def from_config(cls, cfg: dict) -> "Mixer":
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind == "finite":
            unknown = set(cfg) - {"dists", "weights"}
            if unknown:
                raise ValueError(f"unknown mixer keys: {sorted(unknown)}")
            dists = [OffspringDistribution.from_config(d) for d in cfg["dists"]]
            return cls("finite", dists=dists, weights=cfg["weights"])
        if kind == "gaussian_logmean_geometric":
            unknown = set(cfg) - {"mu", "sigma"}
            if unknown:
                raise ValueError(f"unknown mixer keys: {sorted(unknown)}")
            return cls("gaussian_logmean_geometric",
                       mu=cfg["mu"], sigma=cfg["sigma"])
        raise ValueError(f"unknown mixer kind {kind!r}")


def _doubling_blocks(n_blocks: int) -> List[int]:
    return [2**j for j in range(n_blocks)]


@dataclass(frozen=True)
class EnvironmentSpec:
    """Description of the (possibly random) sequence of offspring laws."""

    kind: str
    dists: Optional[tuple] = None          # constant / explicit / periodic
    mixer: Optional[Mixer] = None          # iid_random / cooling
    block_lengths: Optional[tuple] = None  # cooling; None means doubling
    name: Optional[str] = None

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, dist: OffspringDistribution, name=None) -> "EnvironmentSpec":
        return cls("constant", dists=(dist,), name=name)

    @classmethod
    def explicit(cls, dists: Sequence[OffspringDistribution]) -> "EnvironmentSpec":
        if not dists:
            raise ValueError("explicit sequence must be nonempty")
        return cls("explicit_sequence", dists=tuple(dists))

    @classmethod
    def periodic(cls, dists: Sequence[OffspringDistribution]) -> "EnvironmentSpec":
        if not dists:
            raise ValueError("periodic pattern must be nonempty")
        return cls("periodic", dists=tuple(dists))

    @classmethod
    def iid_random(cls, mixer: Mixer, name=None) -> "EnvironmentSpec":
        return cls("iid_random", mixer=mixer, name=name)

    @classmethod
    def cooling(cls, mixer: Mixer, block_lengths=None, name=None) -> "EnvironmentSpec":
        bl = tuple(block_lengths) if block_lengths is not None else None
        if bl is not None and any(b < 1 for b in bl):
            raise ValueError("block lengths must be positive")
        return cls("cooling", mixer=mixer, block_lengths=bl, name=name)

    @property
    def is_random(self) -> bool:
        return self.kind in ("iid_random", "cooling")

    # -- resolution ---------------------------------------------------------

    def _cooling_block_index(self, i: int) -> int:
        """Block containing generation ``i`` (1-based)."""
        if self.block_lengths is not None:
            pos, b = 0, 0
            for b, ln in enumerate(self.block_lengths):
                pos += ln
                if i <= pos:
                    return b
            # beyond the configured schedule, repeat the last block length
            last = self.block_lengths[-1]
            return len(self.block_lengths) + (i - pos - 1) // last
        # doubling schedule: block j has length 2^j, so it covers
        # generations [2^j, 2^{j+1} - 1]
        return i.bit_length() - 1

    def dist_at(self, env_seed: int, i: int) -> OffspringDistribution:
        """Offspring law of generation ``i`` (1-based); deterministic in
        ``(spec, env_seed, i)``."""
        if i < 1:
            raise ValueError("generation index is 1-based")
        if self.kind == "constant":
            return self.dists[0]
        if self.kind == "explicit_sequence":
            if i > len(self.dists):
                raise ValueError(f"explicit sequence has length {len(self.dists)}")
            return self.dists[i - 1]
        if self.kind == "periodic":
            return self.dists[(i - 1) % len(self.dists)]
        if self.kind == "iid_random":
            return self.mixer.draw(substream(env_seed, i))
        block = self._cooling_block_index(i)
        return self.mixer.draw(substream(env_seed, block))

    def to_config(self) -> dict:
        cfg = {"kind": self.kind}
        if self.dists is not None:
            if self.kind == "constant":
                cfg["dist"] = self.dists[0].to_config()
            else:
                cfg["dists"] = [d.to_config() for d in self.dists]
        if self.mixer is not None:
            cfg["mixer"] = self.mixer.to_config()
        if self.kind == "cooling":
            cfg["schedule"] = (list(self.block_lengths)
                               if self.block_lengths is not None else "doubling")
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "EnvironmentSpec":
        cfg = dict(cfg)
        preset = cfg.pop("preset", None)
        if preset is not None:
            if cfg:
                raise ValueError("preset environments take no extra keys")
            if preset not in PRESETS:
                raise ValueError(f"unknown preset {preset!r}; "
                                 f"known: {sorted(PRESETS)}")
            return PRESETS[preset]()
        kind = cfg.pop("kind", None)
        if kind == "constant":
            _expect_keys(cfg, {"dist"})
            return cls.constant(OffspringDistribution.from_config(cfg["dist"]))
        if kind == "explicit_sequence":
            _expect_keys(cfg, {"dists"})
            return cls.explicit([OffspringDistribution.from_config(d)
                                 for d in cfg["dists"]])
        if kind == "periodic":
            _expect_keys(cfg, {"dists"})
            return cls.periodic([OffspringDistribution.from_config(d)
                                 for d in cfg["dists"]])
        if kind == "iid_random":
            _expect_keys(cfg, {"mixer"})
            return cls.iid_random(Mixer.from_config(cfg["mixer"]))
        if kind == "cooling":
            _expect_keys(cfg, {"mixer", "schedule"}, optional={"schedule"})
            sched = cfg.get("schedule", "doubling")
            bl = None if sched == "doubling" else sched
            return cls.cooling(Mixer.from_config(cfg["mixer"]), block_lengths=bl)
        raise ValueError(f"unknown environment kind {kind!r}")


def _expect_keys(cfg: dict, allowed: set, optional: set = frozenset()):
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown environment keys: {sorted(unknown)}")
    missing = (allowed - optional) - set(cfg)
    if missing:
        raise ValueError(f"missing environment keys: {sorted(missing)}")


@dataclass
class QuenchedEnvironment:
    """A materialized environment prefix.

    ``dists[i-1]`` is the law of generation ``i``; ``s[n]`` is the sum of
    the first ``n`` log-means (``s[0] = 0``), Kahan-accumulated.
    Immutable by convention; safe to share across workers.
    """

    dists: List[OffspringDistribution]
    s: np.ndarray
    xi: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.xi is None:
            self.xi = np.diff(self.s)

    @property
    def horizon(self) -> int:
        return len(self.dists)

    def shifted(self, drop: int) -> "QuenchedEnvironment":
        """Drop the first ``drop`` generations and re-zero the log-mean sums."""
        if not (0 <= drop < self.horizon):
            raise ValueError("shift out of range")
        s = _kahan_cumsum(self.xi[drop:])
        return QuenchedEnvironment(self.dists[drop:], s)


def _kahan_cumsum(xs: np.ndarray) -> np.ndarray:
    out = np.empty(len(xs) + 1)
    out[0] = 0.0
    total, comp = 0.0, 0.0
    for i, x in enumerate(xs):
        y = x - comp
        t = total + y
        comp = (t - total) - y
        total = t
        out[i + 1] = total
    return out


def quench(spec: EnvironmentSpec, env_seed: int, horizon: int) -> QuenchedEnvironment:
    """Materialize ``horizon`` generations of ``spec``; idempotent for fixed
    inputs."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon > MAX_QUENCH_HORIZON:
        raise ResourceWarningError(horizon)
    dists = [spec.dist_at(env_seed, i) for i in range(1, horizon + 1)]
    xi = np.array([d.log_mean for d in dists])
    if not np.all(np.isfinite(xi)):
        raise ValueError("environment produced a non-finite log-mean")
    return QuenchedEnvironment(dists, _kahan_cumsum(xi), xi)


class ResourceWarningError(MemoryError):
    def __init__(self, horizon):
        super().__init__(
            f"horizon {horizon} exceeds the in-memory quench budget "
            f"({MAX_QUENCH_HORIZON})")


# -- presets ----------------------------------------------------------------

def _two_point_geometric_mixer(mu: float) -> Mixer:
    """Geometric offspring; log-mean is ``mu +/- log 2`` with equal weights."""
    up = OffspringDistribution.geometric(mean=math.exp(mu + math.log(2.0)))
    down = OffspringDistribution.geometric(mean=math.exp(mu - math.log(2.0)))
    return Mixer("finite", dists=[up, down], weights=[0.5, 0.5])


def critical_preset() -> EnvironmentSpec:
    """I.i.d. environment with zero-mean log-means (two-point, +/- log 2)."""
    return EnvironmentSpec.iid_random(_two_point_geometric_mixer(0.0),
                                      name="critical_two_point")


def supercritical_preset(mu: float = 0.2) -> EnvironmentSpec:
    """I.i.d. environment with positive-mean log-means (default drift 0.2)."""
    return EnvironmentSpec.iid_random(_two_point_geometric_mixer(mu),
                                      name=f"supercritical_mu{mu:g}")


def subcritical_preset(mu: float = -0.2) -> EnvironmentSpec:
    """I.i.d. environment with negative-mean log-means (default drift -0.2)."""
    return EnvironmentSpec.iid_random(_two_point_geometric_mixer(mu),
                                      name=f"subcritical_mu{-mu:g}")


def cooling_preset() -> EnvironmentSpec:
    """Random environment held constant over doubling-length blocks."""
    return EnvironmentSpec.cooling(_two_point_geometric_mixer(0.2),
                                   name="cooling_doubling_blocks")


def heavy_tail_supercritical_preset() -> EnvironmentSpec:
    """Constant heavy-tail law: infinite variance, supercritical mean."""
    return EnvironmentSpec.constant(
        OffspringDistribution.power_law_tail(alpha=0.5, p0=0.2),
        name="heavy_tail_supercritical")


PRESETS = {
    "critical_two_point": critical_preset,
    "supercritical_mu0.2": supercritical_preset,
    "subcritical_mu0.2": subcritical_preset,
    "cooling_doubling_blocks": cooling_preset,
    "heavy_tail_supercritical": heavy_tail_supercritical_preset,
}
