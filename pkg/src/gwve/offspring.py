"""Offspring distributions on the nonnegative integers.

Four families are supported: an explicit finite table and the geometric,
Poisson and binomial laws.  Every family exposes its probability generating
function f(s) = sum_k q(k) s^k together with the first three derivatives in
closed form, the factorial moments at s = 1, and the two reweighted laws used
by spine constructions: the size-biased law k*q(k)/f'(1) and the pair-biased
law k*(k-1)*q(k)/f''(1).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "DistributionError",
    "OffspringDistribution",
    "FiniteTable",
    "Geometric",
    "Poisson",
    "Binomial",
]

# Tail mass left behind when an infinite-support law is materialized as a
# finite table.  Far below every comparison tolerance in the test suite.
TABLE_TAIL_TOL = 1e-15
# Tighter cut used before reweighting, because multiplying by k or k(k-1)
# inflates relative tail mass.
_REWEIGHT_TAIL_TOL = 1e-18

_PMF_SUM_TOL = 1e-12


class DistributionError(ValueError):
    """Raised when an operation is undefined for the given distribution."""


class OffspringDistribution:
    """Common interface for one generation's offspring law."""

    def pmf(self, k: int) -> float:
        raise NotImplementedError

    def pgf(self, s, order: int = 0):
        """Evaluate f(s), f'(s), f''(s) or f'''(s); accepts scalars or arrays."""
        raise NotImplementedError

    def mean(self) -> float:
        """f'(1)."""
        raise NotImplementedError

    def second_factorial(self) -> float:
        """f''(1) = E[k(k-1)]."""
        raise NotImplementedError

    def third_factorial(self) -> float:
        """f'''(1) = E[k(k-1)(k-2)]."""
        raise NotImplementedError

    def branch_survival(self, u):
        """1 - f(1 - u), evaluated without cancellation for small u.

        If each child's lineage independently survives with probability u,
        this is the probability that at least one lineage survives.
        """
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sum_sample(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        """Draw, for every entry c of `counts`, the sum of c iid copies."""
        raise NotImplementedError

    def to_table(self, tail_tol: float = TABLE_TAIL_TOL) -> "FiniteTable":
        """Materialize as a finite table, truncated and renormalized."""
        raise NotImplementedError

    @property
    def max_support(self) -> int | None:
        """Largest atom, or None for infinite support."""
        raise NotImplementedError

    # ------------------------------------------------------------------
    # Derived quantities shared by all families.

    def nu(self) -> float:
        """Normalized second factorial moment f''(1)/f'(1)^2."""
        m = self.mean()
        if m <= 0.0:
            raise DistributionError("degenerate mean")
        return self.second_factorial() / (m * m)

    def size_biased(self) -> "FiniteTable":
        """The law k*q(k)/f'(1), materialized as a finite table."""
        m = self.mean()
        if m <= 0.0:
            raise DistributionError("size-biasing a distribution degenerate at zero")
        table = self.to_table(_REWEIGHT_TAIL_TOL)
        k = np.arange(table.probs.size, dtype=float)
        w = k * table.probs
        return FiniteTable(w / math.fsum(w))

    def pair_biased(self) -> "FiniteTable":
        """The law k*(k-1)*q(k)/f''(1), materialized as a finite table."""
        if self.second_factorial() <= 0.0:
            raise DistributionError("no pair-biased law")
        table = self.to_table(_REWEIGHT_TAIL_TOL)
        k = np.arange(table.probs.size, dtype=float)
        w = k * (k - 1.0) * table.probs
        w[w == 0.0] = 0.0
        return FiniteTable(w / math.fsum(w))

    def shift_down(self, r: int) -> "OffspringDistribution":
        """The law of (X - r), defined only when P(X < r) = 0."""
        if r < 0:
            raise ValueError("shift must be nonnegative")
        if r == 0:
            return self
        if any(self.pmf(j) > 0.0 for j in range(r)):
            raise DistributionError("shift precondition violated")
        if self.max_support is None:
            # Infinite-support families all put mass at 0, so this is
            # unreachable for them; guard anyway.
            raise DistributionError("shift precondition violated")
        table = self.to_table()
        return FiniteTable(table.probs[r:])

    def regularity_ratio(self) -> float:
        """E[X^2 1{X>=2}] / (E[X 1{X>=2}] * E[X | X>=1]).

        The smallest constant c for which this distribution satisfies the
        uniform regularity inequality; computed by direct summation on a
        table truncated at 1e-14 tail mass.
        """
        table = self.to_table(1e-14)
        q = table.probs
        k = np.arange(q.size, dtype=float)
        num = math.fsum(k[2:] * k[2:] * q[2:])
        den1 = math.fsum(k[2:] * q[2:])
        p_ge1 = math.fsum(q[1:])
        if den1 <= 0.0 or p_ge1 <= 0.0:
            raise DistributionError("ratio undefined")
        cond_mean = math.fsum(k * q) / p_ge1
        return num / (den1 * cond_mean)

    def condition_a_ratio(self) -> float:
        """f'''(1) / (f''(1) * (1 + f'(1)))."""
        fpp = self.second_factorial()
        if fpp <= 0.0:
            raise DistributionError("third-moment ratio undefined: f''(1) = 0")
        return self.third_factorial() / (fpp * (1.0 + self.mean()))


class FiniteTable(OffspringDistribution):
    """Explicit pmf on {0, ..., K}.

    Entries must be nonnegative and sum to 1 within 1e-12; the vector is
    renormalized exactly once at construction.
    """

    def __init__(self, probs: Sequence[float] | np.ndarray):
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DistributionError("pmf must be a nonempty 1-d vector")
        if np.any(p < 0.0) or not np.all(np.isfinite(p)):
            raise DistributionError("pmf entries must be finite and nonnegative")
        total = math.fsum(p.tolist())
        if abs(total - 1.0) > _PMF_SUM_TOL:
            raise DistributionError(f"pmf sums to {total!r}, not 1 within {_PMF_SUM_TOL}")
        p = p / total
        # Canonical form: no trailing zeros.
        last = int(np.max(np.nonzero(p)[0])) if np.any(p > 0) else 0
        self.probs = p[: last + 1].copy()
        self.probs.setflags(write=False)
        self._cdf = np.cumsum(self.probs)
        k = np.arange(self.probs.size, dtype=float)
        self._moments = (
            math.fsum(k * self.probs),
            math.fsum(k * (k - 1.0) * self.probs),
            math.fsum(k * (k - 1.0) * (k - 2.0) * self.probs),
        )
        # Coefficient vectors of f and its first three derivatives.
        self._dcoefs = [self.probs]
        for r in range(1, 4):
            prev = self._dcoefs[-1]
            self._dcoefs.append(prev[1:] * np.arange(1, prev.size, dtype=float))

    def __repr__(self) -> str:
        return f"FiniteTable({np.round(self.probs, 12).tolist()})"

    def __eq__(self, other) -> bool:
        return isinstance(other, FiniteTable) and self.probs.shape == other.probs.shape \
            and bool(np.all(self.probs == other.probs))

    def __hash__(self) -> int:
        return hash(self.probs.tobytes())

    def pmf(self, k: int) -> float:
        if k < 0:
            raise ValueError("support is the nonnegative integers")
        return float(self.probs[k]) if k < self.probs.size else 0.0

    def pgf(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be in {0, 1, 2, 3}")
        c = self._dcoefs[order]
        if c.size == 0:
            return np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0
        out = np.polynomial.polynomial.polyval(s, c)
        return out if np.ndim(s) else float(out)

    def mean(self) -> float:
        return self._moments[0]

    def second_factorial(self) -> float:
        return self._moments[1]

    def third_factorial(self) -> float:
        return self._moments[2]

    def branch_survival(self, u):
        u_arr = np.asarray(u, dtype=float)
        k = np.arange(1, self.probs.size, dtype=float)
        if k.size == 0:
            return np.zeros_like(u_arr) if np.ndim(u) else 0.0
        # 1 - (1-u)^k, stable for u near 0; k >= 1 so u = 1 is fine too.
        with np.errstate(divide="ignore"):
            terms = -np.expm1(np.multiply.outer(np.log1p(-u_arr), k))
        out = terms @ self.probs[1:]
        return out if np.ndim(u) else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        idx = np.searchsorted(self._cdf, u, side="right")
        idx = np.minimum(idx, self.probs.size - 1)
        return int(idx) if size is None else idx.astype(np.int64)

    def sum_sample(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts)
        drawn = rng.multinomial(counts, self.probs)
        k = np.arange(self.probs.size, dtype=np.int64)
        return drawn @ k

    def to_table(self, tail_tol: float = TABLE_TAIL_TOL) -> "FiniteTable":
        return self

    @property
    def max_support(self) -> int:
        return self.probs.size - 1


class Geometric(OffspringDistribution):
    """Geometric law q(k) = p (1-p)^k on {0, 1, 2, ...}.

    pgf f(s) = p / (1 - (1-p) s); mean (1-p)/p.
    """

    def __init__(self, p: float):
        if not (0.0 < p <= 1.0):
            raise DistributionError("geometric parameter must satisfy 0 < p <= 1")
        self.p = float(p)

    def __repr__(self) -> str:
        return f"Geometric(p={self.p!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Geometric) and self.p == other.p

    def __hash__(self) -> int:
        return hash(("geometric", self.p))

    def pmf(self, k: int) -> float:
        if k < 0:
            raise ValueError("support is the nonnegative integers")
        return self.p * (1.0 - self.p) ** k

    def pgf(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be in {0, 1, 2, 3}")
        q = 1.0 - self.p
        out = math.factorial(order) * self.p * q**order / (1.0 - q * np.asarray(s, dtype=float)) ** (order + 1)
        return out if np.ndim(s) else float(out)

    def mean(self) -> float:
        return (1.0 - self.p) / self.p

    def second_factorial(self) -> float:
        return 2.0 * (1.0 - self.p) ** 2 / self.p**2

    def third_factorial(self) -> float:
        return 6.0 * (1.0 - self.p) ** 3 / self.p**3

    def branch_survival(self, u):
        q = 1.0 - self.p
        u_arr = np.asarray(u, dtype=float)
        out = q * u_arr / (self.p + q * u_arr)
        return out if np.ndim(u) else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.geometric(self.p, size) - 1
        return int(out) if size is None else out.astype(np.int64)

    def sum_sample(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        counts = np.asarray(counts)
        out = np.zeros(counts.shape, dtype=np.int64)
        pos = counts > 0
        if np.any(pos):
            out[pos] = rng.negative_binomial(counts[pos], self.p)
        return out

    def to_table(self, tail_tol: float = TABLE_TAIL_TOL) -> FiniteTable:
        if self.p == 1.0:
            return FiniteTable([1.0])
        # Tail beyond K is (1-p)^(K+1).
        kmax = int(math.ceil(math.log(tail_tol) / math.log1p(-self.p))) + 1
        k = np.arange(kmax + 1, dtype=float)
        probs = self.p * (1.0 - self.p) ** k
        return FiniteTable(probs / math.fsum(probs))

    @property
    def max_support(self) -> int | None:
        return 0 if self.p == 1.0 else None


class Poisson(OffspringDistribution):
    """Poisson law with parameter lam; pgf f(s) = exp(lam (s-1))."""

    def __init__(self, lam: float):
        if not (lam > 0.0 and math.isfinite(lam)):
            raise DistributionError("poisson parameter must be positive and finite")
        self.lam = float(lam)

    def __repr__(self) -> str:
        return f"Poisson(lam={self.lam!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Poisson) and self.lam == other.lam

    def __hash__(self) -> int:
        return hash(("poisson", self.lam))

    def pmf(self, k: int) -> float:
        if k < 0:
            raise ValueError("support is the nonnegative integers")
        return math.exp(k * math.log(self.lam) - self.lam - math.lgamma(k + 1))

    def pgf(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be in {0, 1, 2, 3}")
        out = self.lam**order * np.exp(self.lam * (np.asarray(s, dtype=float) - 1.0))
        return out if np.ndim(s) else float(out)

    def mean(self) -> float:
        return self.lam

    def second_factorial(self) -> float:
        return self.lam**2

    def third_factorial(self) -> float:
        return self.lam**3

    def branch_survival(self, u):
        u_arr = np.asarray(u, dtype=float)
        out = -np.expm1(-self.lam * u_arr)
        return out if np.ndim(u) else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.poisson(self.lam, size)
        return int(out) if size is None else out.astype(np.int64)

    def sum_sample(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        return rng.poisson(self.lam * np.asarray(counts, dtype=float)).astype(np.int64)

    def to_table(self, tail_tol: float = TABLE_TAIL_TOL) -> FiniteTable:
        probs = [math.exp(-self.lam)]
        cum = probs[0]
        k = 0
        while 1.0 - cum > tail_tol:
            k += 1
            probs.append(probs[-1] * self.lam / k)
            cum += probs[-1]
        arr = np.asarray(probs)
        return FiniteTable(arr / math.fsum(arr))

    @property
    def max_support(self) -> int | None:
        return None


class Binomial(OffspringDistribution):
    """Binomial law with n trials and success probability p."""

    def __init__(self, n: int, p: float):
        if int(n) != n or n < 1:
            raise DistributionError("binomial trial count must be a positive integer")
        if not (0.0 < p <= 1.0):
            raise DistributionError("binomial parameter must satisfy 0 < p <= 1")
        self.n = int(n)
        self.p = float(p)

    def __repr__(self) -> str:
        return f"Binomial(n={self.n}, p={self.p!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Binomial) and self.n == other.n and self.p == other.p

    def __hash__(self) -> int:
        return hash(("binomial", self.n, self.p))

    def pmf(self, k: int) -> float:
        if k < 0:
            raise ValueError("support is the nonnegative integers")
        if k > self.n:
            return 0.0
        return math.comb(self.n, k) * self.p**k * (1.0 - self.p) ** (self.n - k)

    def pgf(self, s, order: int = 0):
        if order not in (0, 1, 2, 3):
            raise ValueError("order must be in {0, 1, 2, 3}")
        if order > self.n:
            return np.zeros_like(np.asarray(s, dtype=float)) if np.ndim(s) else 0.0
        falling = math.prod(range(self.n - order + 1, self.n + 1))
        base = 1.0 - self.p + self.p * np.asarray(s, dtype=float)
        out = falling * self.p**order * base ** (self.n - order)
        return out if np.ndim(s) else float(out)

    def mean(self) -> float:
        return self.n * self.p

    def second_factorial(self) -> float:
        return self.n * (self.n - 1) * self.p**2

    def third_factorial(self) -> float:
        return self.n * (self.n - 1) * (self.n - 2) * self.p**3

    def branch_survival(self, u):
        u_arr = np.asarray(u, dtype=float)
        out = -np.expm1(self.n * np.log1p(-self.p * u_arr))
        return out if np.ndim(u) else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.binomial(self.n, self.p, size)
        return int(out) if size is None else out.astype(np.int64)

    def sum_sample(self, rng: np.random.Generator, counts: np.ndarray) -> np.ndarray:
        return rng.binomial(self.n * np.asarray(counts, dtype=np.int64), self.p).astype(np.int64)

    def to_table(self, tail_tol: float = TABLE_TAIL_TOL) -> FiniteTable:
        return FiniteTable([self.pmf(k) for k in range(self.n + 1)])

    @property
    def max_support(self) -> int:
        return self.n
