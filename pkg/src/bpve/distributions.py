"""Single-generation offspring laws.

Each :class:`OffspringDistribution` represents the reproduction law of one
generation: exact sampling of individual offspring counts, exact (or flagged
approximate) sampling of whole-generation totals, and the moment functionals
the convergence checkers consume -- log-mean, normalized variance, fractional
deviation moments and weighted deviation moments.

Families
--------
``finite_pmf``
    explicit pmf ``p_0..p_K``; individual draws via an alias table,
    generation totals via a multinomial (exact for any parent count).
``geometric``
    ``P(X=k) = (1-q) q^k`` on ``{0,1,...}``; totals are negative binomial.
``poisson``
    totals are Poisson by additivity.
``linear_fractional``
    atom at 0 plus a geometric tail on ``{1,2,...}``; totals decompose as
    binomial + negative binomial.
``power_law_tail``
    atom at 0 plus ``P(X=k) = c k^{-(2+alpha)}`` for ``k >= 1``.  For
    ``alpha <= 1`` the variance is infinite; infinite moments are returned
    as ``math.inf``, never raised as errors, because the heavy-tail regime
    is a first-class object of study here.
"""

from __future__ import annotations

import math
import threading
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import integrate, optimize, special

__all__ = [
    "OffspringDistribution",
    "PhiFunction",
    "UnsupportedDistributionError",
    "NotApplicableError",
    "PopulationOverflowError",
]

# Parent-count threshold above which finite-variance families without an
# exact closure use a flagged Gaussian aggregate.
DEFAULT_AGGREGATE_CAP = 10**7

# Chunk size for exact block sampling of heavy-tail generation totals.
EXACT_BLOCK = 10**7

_INT64_SAFE = 2**62


class UnsupportedDistributionError(ValueError):
    """The requested functional is undefined for this law (e.g. mean zero)."""


class NotApplicableError(ValueError):
    """A conditional term is undefined (zero-probability conditioning set)."""


class PopulationOverflowError(OverflowError):
    """A generation total exceeds the widest supported integer.

    Carries ``log_estimate``, the natural log of the (approximate) total,
    so callers can continue in log scale.
    """

    def __init__(self, log_estimate: float):
        super().__init__(f"generation total overflows int64 (log ~ {log_estimate:.3f})")
        self.log_estimate = log_estimate


@dataclass(frozen=True)
class PhiFunction:
    """A weight function ``phi(x) = x^power * log(1+x)^log_power``.

    Only this catalog is accepted by the weighted-moment checkers: its tail
    growth is known analytically, which is what makes certified truncation
    bounds possible.  ``power=log_power=0`` with ``zero=True`` is the
    identically-zero function.
    """

    power: float = 0.0
    log_power: float = 0.0
    zero: bool = False

    def __post_init__(self):
        if self.power < 0 or self.log_power < 0:
            raise ValueError("phi catalog requires nonnegative exponents")

    def __call__(self, x):
        if self.zero:
            return np.zeros_like(np.asarray(x, dtype=float))
        x = np.asarray(x, dtype=float)
        out = np.ones_like(x)
        if self.power:
            out = out * np.power(x, self.power)
        if self.log_power:
            out = out * np.power(np.log1p(x), self.log_power)
        return out

    @property
    def identifier(self) -> str:
        if self.zero:
            return "zero"
        return f"pow{self.power:g}_log{self.log_power:g}"

    @classmethod
    def from_config(cls, cfg) -> "PhiFunction":
        if cfg == "zero":
            return cls(zero=True)
        if isinstance(cfg, dict):
            unknown = set(cfg) - {"power", "log_power"}
            if unknown:
                raise ValueError(f"unknown phi keys: {sorted(unknown)}")
            return cls(power=float(cfg.get("power", 0.0)),
                       log_power=float(cfg.get("log_power", 0.0)))
        raise ValueError(f"cannot parse phi spec {cfg!r}")


def _build_alias_table(probs: np.ndarray):
    """Vose alias table: O(K) setup, O(1) exact draws."""
    k = len(probs)
    accept = np.zeros(k)
    alias = np.zeros(k, dtype=np.int64)
    scaled = probs * k
    small = [i for i, v in enumerate(scaled) if v < 1.0]
    large = [i for i, v in enumerate(scaled) if v >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        g = large.pop()
        accept[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] - (1.0 - scaled[s])
        (small if scaled[g] < 1.0 else large).append(g)
    for i in large + small:
        accept[i] = 1.0
        alias[i] = i
    return accept, alias


class OffspringDistribution:
    """One generation's offspring law.  Immutable after construction.

    Cached moment values are built under a once-only lock, so instances are
    safe to share across concurrent workers.
    """

    def __init__(self, kind: str, **params):
        self.kind = kind
        self.params = dict(params)
        self._cache: dict = {}
        # reentrant: computing one cached moment may consult another
        self._lock = threading.RLock()

        if kind == "finite_pmf":
            pmf = np.asarray(params["pmf"], dtype=float)
            if pmf.ndim != 1 or len(pmf) == 0:
                raise ValueError("finite_pmf needs a nonempty 1-d pmf vector")
            if np.any(pmf < 0):
                raise ValueError("pmf values must be nonnegative")
            if abs(pmf.sum() - 1.0) > 1e-12:
                raise ValueError(f"pmf must sum to 1 within 1e-12, got {pmf.sum()!r}")
            self._pmf = pmf / pmf.sum()
            self._ks = np.arange(len(pmf), dtype=np.int64)
            self._alias = _build_alias_table(self._pmf)
        elif kind == "geometric":
            mean = float(params["mean"])
            if mean <= 0:
                raise ValueError("geometric mean must be positive")
            self._q = mean / (1.0 + mean)
        elif kind == "poisson":
            lam = float(params["lam"])
            if lam <= 0:
                raise ValueError("poisson rate must be positive")
            self._lam = lam
        elif kind == "linear_fractional":
            p0, q = float(params["p0"]), float(params["q"])
            if not (0 <= p0 < 1) or not (0 <= q < 1):
                raise ValueError("linear_fractional needs p0 in [0,1), q in [0,1)")
            self._p0, self._q = p0, q
        elif kind == "power_law_tail":
            alpha, p0 = float(params["alpha"]), float(params["p0"])
            if alpha <= 0:
                raise ValueError("tail exponent alpha must be positive")
            if not (0 <= p0 < 1):
                raise ValueError("head mass p0 must be in [0,1)")
            self._alpha, self._p0 = alpha, p0
            # Normalization of the k^{-(2+alpha)} tail; Hurwitz zeta gives
            # the same 1e-12 accuracy as summation with a zeta tail estimate.
            self._zeta_norm = float(special.zeta(2.0 + alpha))
            self._c = (1.0 - p0) / self._zeta_norm
        else:
            raise ValueError(f"unknown offspring family {kind!r}")

    # -- identity / serialization ------------------------------------------

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"OffspringDistribution({self.kind}, {inner})"

    def __eq__(self, other):
        if not isinstance(other, OffspringDistribution):
            return NotImplemented
        if self.kind != other.kind:
            return False
        if self.kind == "finite_pmf":
            return np.array_equal(self._pmf, other._pmf)
        return self.params == other.params

    def __hash__(self):
        if self.kind == "finite_pmf":
            return hash((self.kind, self._pmf.tobytes()))
        return hash((self.kind, tuple(sorted(self.params.items()))))

    def to_config(self) -> dict:
        cfg = {"kind": self.kind}
        if self.kind == "finite_pmf":
            cfg["pmf"] = [float(p) for p in self._pmf]
        else:
            cfg.update({k: float(v) for k, v in self.params.items()})
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "OffspringDistribution":
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind is None:
            raise ValueError("distribution config needs a 'kind' field")
        known = {
            "finite_pmf": {"pmf"},
            "geometric": {"mean"},
            "poisson": {"lam"},
            "linear_fractional": {"p0", "q"},
            "power_law_tail": {"alpha", "p0"},
        }
        if kind not in known:
            raise ValueError(f"unknown offspring family {kind!r}")
        unknown = set(cfg) - known[kind]
        if unknown:
            raise ValueError(f"unknown keys for {kind}: {sorted(unknown)}")
        missing = known[kind] - set(cfg)
        if missing:
            raise ValueError(f"missing keys for {kind}: {sorted(missing)}")
        return cls(kind, **cfg)

    # -- convenience constructors ------------------------------------------

    @classmethod
    def finite_pmf(cls, pmf) -> "OffspringDistribution":
        return cls("finite_pmf", pmf=list(pmf))

    @classmethod
    def geometric(cls, mean: float) -> "OffspringDistribution":
        return cls("geometric", mean=mean)

    @classmethod
    def poisson(cls, lam: float) -> "OffspringDistribution":
        return cls("poisson", lam=lam)

    @classmethod
    def linear_fractional(cls, p0: float, q: float) -> "OffspringDistribution":
        return cls("linear_fractional", p0=p0, q=q)

    @classmethod
    def power_law_tail(cls, alpha: float, p0: float) -> "OffspringDistribution":
        return cls("power_law_tail", alpha=alpha, p0=p0)

    # -- basic moments ------------------------------------------------------

    def _cached(self, key, compute):
        try:
            return self._cache[key]
        except KeyError:
            pass
        with self._lock:
            if key not in self._cache:
                self._cache[key] = compute()
            return self._cache[key]

    @property
    def mean(self) -> float:
        def compute():
            if self.kind == "finite_pmf":
                return float(np.dot(self._pmf, self._ks))
            if self.kind == "geometric":
                return self._q / (1.0 - self._q)
            if self.kind == "poisson":
                return self._lam
            if self.kind == "linear_fractional":
                return (1.0 - self._p0) / (1.0 - self._q)
            # power_law_tail: c * sum k^{-(1+alpha)}
            return self._c * float(special.zeta(1.0 + self._alpha))
        return self._cached("mean", compute)

    @property
    def variance(self) -> float:
        def compute():
            m = self.mean
            if self.kind == "finite_pmf":
                return float(np.dot(self._pmf, (self._ks - m) ** 2))
            if self.kind == "geometric":
                return self._q / (1.0 - self._q) ** 2
            if self.kind == "poisson":
                return self._lam
            if self.kind == "linear_fractional":
                ex2 = (1.0 - self._p0) * (1.0 + self._q) / (1.0 - self._q) ** 2
                return ex2 - m * m
            if self._alpha <= 1.0:
                return math.inf
            ex2 = self._c * float(special.zeta(self._alpha))
            return ex2 - m * m
        return self._cached("variance", compute)

    @property
    def log_mean(self) -> float:
        """Log of the mean offspring count; the growth exponent of the generation."""
        m = self.mean
        if not (0.0 < m < math.inf):
            raise UnsupportedDistributionError(
                f"mean offspring count must be in (0, inf), got {m}")
        return math.log(m)

    @property
    def normalized_variance(self) -> float:
        """Variance rescaled by the squared mean; +inf for heavy tails."""
        v = self.variance
        if math.isinf(v):
            return math.inf
        m = self.mean
        return v / (m * m)

    # -- pmf / pgf ----------------------------------------------------------

    def pmf(self, k: int) -> float:
        if k < 0:
            raise ValueError("offspring counts are nonnegative")
        if self.kind == "finite_pmf":
            return float(self._pmf[k]) if k < len(self._pmf) else 0.0
        if self.kind == "geometric":
            return (1.0 - self._q) * self._q**k
        if self.kind == "poisson":
            return float(math.exp(-self._lam) * self._lam**k / math.factorial(k)) \
                if k < 30 else float(np.exp(k * math.log(self._lam) - self._lam
                                            - special.gammaln(k + 1)))
        if self.kind == "linear_fractional":
            if k == 0:
                return self._p0
            return (1.0 - self._p0) * (1.0 - self._q) * self._q ** (k - 1)
        if k == 0:
            return self._p0
        return self._c * k ** -(2.0 + self._alpha)

    def pmf_vector(self, ks: np.ndarray) -> np.ndarray:
        ks = np.asarray(ks, dtype=np.int64)
        if self.kind == "finite_pmf":
            out = np.zeros(len(ks))
            mask = ks < len(self._pmf)
            out[mask] = self._pmf[ks[mask]]
            return out
        if self.kind == "geometric":
            return (1.0 - self._q) * self._q ** ks.astype(float)
        if self.kind == "poisson":
            lg = ks * math.log(self._lam) - self._lam - special.gammaln(ks + 1)
            return np.exp(lg)
        if self.kind == "linear_fractional":
            out = np.where(ks == 0, self._p0,
                           (1.0 - self._p0) * (1.0 - self._q)
                           * self._q ** np.maximum(ks - 1, 0).astype(float))
            return out
        out = np.where(ks == 0, self._p0,
                       self._c * np.maximum(ks, 1).astype(float) ** -(2.0 + self._alpha))
        return out

    def generating_function(self, s: float) -> float:
        """Probability generating function ``E s^X`` for ``s`` in [0, 1]."""
        if not (0.0 <= s <= 1.0):
            raise ValueError("pgf argument must be in [0, 1]")
        if self.kind == "finite_pmf":
            return float(np.polyval(self._pmf[::-1], s))
        if self.kind == "geometric":
            return (1.0 - self._q) / (1.0 - self._q * s)
        if self.kind == "poisson":
            return math.exp(self._lam * (s - 1.0))
        if self.kind == "linear_fractional":
            return self._p0 + (1.0 - self._p0) * (1.0 - self._q) * s / (1.0 - self._q * s)
        # power_law_tail: exact partial series, then an integral remainder.
        # The midpoint (Euler-Maclaurin) correction at this cut is ~1e-16,
        # so the result stays accurate even for s within 1e-12 of 1, where
        # term-by-term summation would need ~1e9 terms.
        if s == 0.0:
            return self._p0
        if s == 1.0:
            return 1.0
        cut = 1 << 20
        ks = np.arange(1, cut + 1, dtype=float)
        total = self._p0 + float(
            np.sum(self._c * ks ** -(2.0 + self._alpha) * s**ks))
        lam = -math.log(s)
        rem, _ = integrate.quad(
            lambda t: self._c * t ** -(2.0 + self._alpha) * math.exp(-lam * t),
            cut + 0.5, np.inf)
        return total + rem

    def extinction_probability(self) -> float:
        """Smallest fixed point of the pgf (single-environment oracle).

        Returns 1 when the mean is subcritical or critical.  Supercritical
        laws are solved by bracketed root finding seeded away from the
        trivial fixed point at 1, then polished by monotone iteration from
        below (which converges to the smallest fixed point).
        """
        if self.mean <= 1.0:
            return 1.0
        f = self.generating_function
        hi = 1.0 - 1e-12
        if f(hi) - hi >= 0.0:
            # Nearly critical: fall back to plain iteration from 0.
            s = 0.0
            for _ in range(100000):
                s_next = f(s)
                if abs(s_next - s) < 1e-14:
                    break
                s = s_next
            return s
        q = optimize.brentq(lambda s: f(s) - s, 0.0, hi, xtol=1e-14)
        # Monotone polish from just below the root.
        s = max(q - 1e-9, 0.0)
        for _ in range(200):
            s = f(s)
        return float(s)

    # -- individual sampling ------------------------------------------------

    def sample(self, rng: np.random.Generator, size: Optional[int] = None):
        """Exact draw(s) of one individual's offspring count."""
        n = 1 if size is None else size
        if self.kind == "finite_pmf":
            accept, alias = self._alias
            idx = rng.integers(0, len(accept), size=n)
            keep = rng.random(n) < accept[idx]
            out = np.where(keep, idx, alias[idx]).astype(np.int64)
        elif self.kind == "geometric":
            out = rng.geometric(1.0 - self._q, size=n) - 1
        elif self.kind == "poisson":
            out = rng.poisson(self._lam, size=n)
        elif self.kind == "linear_fractional":
            nonzero = rng.random(n) >= self._p0
            out = nonzero * rng.geometric(1.0 - self._q, size=n)
        else:
            nonzero = rng.random(n) >= self._p0
            out = nonzero * rng.zipf(2.0 + self._alpha, size=n)
        if size is None:
            return int(out[0])
        return out.astype(np.int64)

    # -- generation totals --------------------------------------------------

    def sample_generation_totals(self, parents: np.ndarray,
                                 rng: np.random.Generator,
                                 cap: int = DEFAULT_AGGREGATE_CAP):
        """Totals of ``parents[i]`` i.i.d. offspring counts, vectorized.

        Returns ``(totals, approx)``.  Every family except a finite-variance
        power-law tail has an exact closure, so ``approx`` stays False there
        for any parent count.  A finite-variance power-law above ``cap``
        parents uses a flagged Gaussian aggregate; an infinite-variance one
        is sampled exactly in fixed-size blocks regardless of cost, because
        its tail events are exactly what is under study.
        """
        parents = np.asarray(parents, dtype=np.int64)
        approx = np.zeros(parents.shape, dtype=bool)
        if parents.size and int(parents.max()) * max(self.mean, 1.0) > _INT64_SAFE:
            worst = int(parents.max())
            raise PopulationOverflowError(math.log(worst) + max(self.log_mean, 0.0))
        totals = np.zeros(parents.shape, dtype=np.int64)
        pos = parents > 0
        if not pos.any():
            return totals, approx
        n = parents[pos]
        if self.kind == "finite_pmf":
            counts = rng.multinomial(n, self._pmf)
            totals[pos] = counts @ self._ks
        elif self.kind == "geometric":
            totals[pos] = rng.negative_binomial(n, 1.0 - self._q)
        elif self.kind == "poisson":
            totals[pos] = rng.poisson(self._lam * n)
        elif self.kind == "linear_fractional":
            b = rng.binomial(n, 1.0 - self._p0)
            nb = np.zeros_like(b)
            bp = b > 0
            if bp.any():
                nb[bp] = rng.negative_binomial(b[bp], 1.0 - self._q)
            totals[pos] = b + nb
        else:
            totals[pos], approx[pos] = self._power_law_totals(n, rng, cap)
        return totals, approx

    def _power_law_totals(self, n: np.ndarray, rng: np.random.Generator, cap: int):
        approx = np.zeros(n.shape, dtype=bool)
        out = np.zeros(n.shape, dtype=np.int64)
        heavy = math.isinf(self.variance)
        exact = np.ones(n.shape, dtype=bool)
        if not heavy:
            exact = n <= cap
            big = ~exact
            if big.any():
                mu = n[big] * self.mean
                sd = np.sqrt(n[big] * self.variance)
                draw = np.rint(mu + sd * rng.standard_normal(big.sum()))
                out[big] = np.maximum(draw, 0.0).astype(np.int64)
                approx[big] = True
        if exact.any():
            b = rng.binomial(n[exact], 1.0 - self._p0)
            total_draws = int(b.sum())
            sums = np.zeros(len(b), dtype=np.int64)
            if total_draws > 0:
                bounds = np.concatenate(([0], np.cumsum(b)))
                acc = np.zeros(len(b), dtype=np.int64)
                done = 0
                while done < total_draws:
                    m = min(EXACT_BLOCK, total_draws - done)
                    draws = rng.zipf(2.0 + self._alpha, size=m).astype(np.int64)
                    # scatter-add the chunk into per-parent segments
                    seg = np.searchsorted(bounds, np.arange(done, done + m),
                                          side="right") - 1
                    np.add.at(acc, seg, draws)
                    done += m
                sums = acc
            out[exact] = sums
        return out, approx

    def sample_generation_total(self, parents: int, rng: np.random.Generator,
                                cap: int = DEFAULT_AGGREGATE_CAP):
        """Scalar wrapper over :meth:`sample_generation_totals`."""
        if parents < 0:
            raise ValueError("parent count must be nonnegative")
        if parents == 0:
            return 0, False
        totals, approx = self.sample_generation_totals(
            np.array([parents], dtype=np.int64), rng, cap=cap)
        return int(totals[0]), bool(approx[0])

    # -- deviation moments --------------------------------------------------

    def _deviation(self, ks: np.ndarray) -> np.ndarray:
        """|k/m - 1| for support points k."""
        return np.abs(ks.astype(float) / self.mean - 1.0)

    def delta_moment(self, delta: float, tol: float = 1e-9) -> float:
        """``E |X/m - 1|^(1+delta)`` for ``delta`` in [0, 1]; +inf when divergent.

        At ``delta=1`` this equals :attr:`normalized_variance`; at
        ``delta=0`` it is the mean absolute deviation of ``X/m``.
        """
        if not (0.0 <= delta <= 1.0):
            raise ValueError("delta must lie in [0, 1]")
        key = ("delta_moment", delta, tol)
        return self._cached(
            key, lambda: self._u_weighted_moment(1.0 + delta, 0.0, 1.0, tol))

    def psi_moment(self, phi: PhiFunction, scale: float, tol: float = 1e-9) -> float:
        """``E[ U * phi(U * scale) ]`` with ``U = |X/m - 1|``; +inf when divergent.

        ``scale`` is the environment-supplied damping factor (a ratio of
        accumulated generation means).  ``phi`` must come from the
        :class:`PhiFunction` catalog.
        """
        if scale <= 0:
            raise ValueError("scale must be positive")
        if not isinstance(phi, PhiFunction):
            raise UnsupportedDistributionError(
                "only catalog weight functions are supported")
        if phi.zero:
            return 0.0
        key = ("psi_moment", phi.power, phi.log_power, scale, tol)
        return self._cached(
            key,
            lambda: self._u_weighted_moment(1.0 + phi.power, phi.log_power,
                                            scale, tol))

    def _u_weighted_moment(self, upow: float, logpow: float, scale: float,
                           tol: float) -> float:
        """``E[ U^upow * scale^(upow-1) * log(1 + U*scale)^logpow ]``.

        This is ``E[U * phi(U*scale)]`` for the power-log catalog with
        ``phi(x) = x^(upow-1) * log(1+x)^logpow``; with ``scale=1, logpow=0``
        it reduces to the plain fractional deviation moment ``E U^upow``.
        """
        sfac = scale ** (upow - 1.0)

        def integrand(ks: np.ndarray) -> np.ndarray:
            u = self._deviation(ks)
            val = np.power(u, upow) * sfac
            if logpow:
                val = val * np.power(np.log1p(u * scale), logpow)
            return val

        if self.kind == "finite_pmf":
            return float(np.dot(self._pmf, integrand(self._ks)))
        if self.kind == "power_law_tail":
            return self._power_tail_moment(integrand, upow, logpow, scale, tol)
        return self._light_tail_moment(integrand, tol)

    def _light_tail_moment(self, integrand, tol: float) -> float:
        """Adaptive series for exponentially light tails (geometric,
        Poisson, linear-fractional): polynomial-log integrand growth never
        beats the tail decay."""
        total, start, block = 0.0, 0, 4096
        while True:
            ks = np.arange(start, start + block, dtype=np.int64)
            p = self.pmf_vector(ks)
            contrib = float(np.dot(p, integrand(ks)))
            total += contrib
            tail_mass = float(p[-256:].sum())
            if contrib < tol * 1e-3 and tail_mass < 1e-16:
                return total
            start += block
            if start > 10**8:  # unreachable for these families in practice
                return total

    def _power_tail_moment(self, integrand, upow: float, logpow: float,
                           scale: float, tol: float) -> float:
        alpha = self._alpha
        # Term exponent k^{-(2+alpha)} * k^upow: divergent iff upow-1 >= alpha
        # (at equality the log factors only worsen it).
        if upow - 1.0 > alpha or (upow - 1.0 == alpha):
            return math.inf
        m = self.mean
        total = self._p0 * float(integrand(np.array([0], dtype=np.int64))[0])

        def h(x: float) -> float:
            u = abs(x / m - 1.0)
            val = self._c * x ** -(2.0 + alpha) * u**upow \
                * scale ** (upow - 1.0)
            if logpow:
                val *= math.log1p(u * scale) ** logpow
            return val

        # Exact partial sum in growing blocks; stop once the pointwise term
        # at the cut is below tolerance (the integral remainder then
        # brackets the true tail to within that same term).  Beyond ~2m the
        # summand is decreasing, so sum_{k>K} h(k) <= int_K^inf h(x) dx.
        start, block = 1, 1 << 16
        kmin = max(int(2 * m) + 2, 64)
        while True:
            ks = np.arange(start, start + block, dtype=np.int64)
            total += float(np.dot(self.pmf_vector(ks), integrand(ks)))
            start += block
            kcut = start
            if (kcut > kmin and h(kcut) < tol) or kcut > 1 << 23:
                break
            block = min(block * 2, 1 << 21)
        # Substitute x = K/t to map [K, inf) onto (0, 1]: plain quad on the
        # original slowly decaying integrand silently loses the tail mass.
        k0 = kcut - 0.5
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            tail, _ = integrate.quad(lambda t: h(k0 / t) * k0 / (t * t),
                                     0.0, 1.0, limit=200)
        return total + max(tail, 0.0)

    # -- truncated moment ratio (for the comparison condition) --------------

    def truncated_moment_ratio(self) -> float:
        """``E(X^2; X>=2) / (E(X | X>=1) * E(X; X>=2))``.

        The per-generation term of the uniform moment-ratio condition that
        the series checkers replace; +inf when the second moment diverges.
        """
        p0, p1 = self.pmf(0), self.pmf(1)
        p_ge1 = 1.0 - p0
        p_ge2 = 1.0 - p0 - p1
        if p_ge1 <= 0 or p_ge2 <= 0:
            raise NotApplicableError(
                "moment ratio undefined: conditioning event has zero mass")
        m = self.mean
        v = self.variance
        if math.isinf(v):
            return math.inf
        ex2 = v + m * m
        num = ex2 - p1          # E(X^2; X>=2)
        cond = m / p_ge1        # E(X | X>=1); E(X; X>=1) = E X
        trunc = m - p1          # E(X; X>=2)
        return num / (cond * trunc)
