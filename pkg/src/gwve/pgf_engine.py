"""Numerical evaluation of composed generating functions and their transforms.

For an environment with per-generation pgfs f_1, f_2, ... the composition
f_{m,n}(s) = f_{m+1}(f_{m+2}(... f_n(s))) is evaluated by one backward pass
that records every intermediate value (a `CompositionTrace`).  The trace is
then enough to produce, in O(1) per index m,

  * f_{m,n}(s) itself,
  * f'_{m,n}(s)  = prod_{l>m} f'_l(v_l)                (log-space prefix sums)
  * f''_{m,n}(s) = f'_{m,n}(s)^2 * sum_{l>m} f''_l(v_l) /
                   (f'_l(v_l)^2 * prod_{m<j<l} f'_j(v_j))   (shifted suffix sums)

where v_l = f_{l,n}(s).  On top of these sit the Laplace transforms of the
plain, size-biased and pair-biased population sizes, the law of the spine
branching generation K_n, the normalizer ratios A_{n,m} along with their
step-function CDF, and the two-sided assembly of the spine decomposition
identity.

Quantities of the form 1 - f_{m,n}(s) (survival probabilities, conditional
transforms) are computed by iterating the complement map u -> 1 - f(1 - u)
with per-family stable forms, which avoids the cancellation that makes the
naive difference lose a relative n*eps.
"""

from __future__ import annotations

import math

import numpy as np

from .environment import Environment
from .offspring import DistributionError

__all__ = [
    "CompositionTrace",
    "EngineError",
    "composition_trace",
    "compose",
    "d1_compose",
    "d2_compose",
    "one_minus_compose",
    "survival_prob",
    "laplace_z",
    "laplace_zdot",
    "laplace_zddot",
    "laplace_zdot_shifted",
    "laplace_hanging_qdot",
    "laplace_hanging_qddot",
    "g_ratio",
    "g_gap_profile",
    "kn_pmf",
    "kn_pmf_vector",
    "a_ratio",
    "partition_points",
    "partition_norm",
    "a_kn_cdf",
    "kolmogorov_ratio",
    "conditional_laplace_z",
    "two_spine_rhs",
]

# Survival below this is treated as extinction for conditional transforms.
EXTINCT_EPS = 1e-300

# The two algebraically equal forms of the subtree-ratio g must agree this
# tightly; a larger gap means a regression in a derivative code path.
_G_CONSISTENCY_TOL = 1e-12


class EngineError(RuntimeError):
    """Internal consistency failure between redundant computation paths."""


class CompositionTrace:
    """Backward composition values v_l = f_{l,n}(s) for l = n down to 0."""

    def __init__(self, env: Environment, n: int, s: float):
        if n < 0:
            raise ValueError("horizon must be nonnegative")
        if not (0.0 <= s <= 1.0):
            raise ValueError("pgf argument must lie in [0, 1]")
        self.env = env
        self.n = n
        self.s = float(s)
        values = np.empty(n + 1)
        values[n] = s
        for l in range(n, 0, -1):
            values[l - 1] = env.dist_at(l).pgf(values[l], 0)
        self.values = values
        self._deriv_ready = False

    def value(self, m: int) -> float:
        """f_{m,n}(s)."""
        return float(self.values[m])

    # ------------------------------------------------------------------

    def _prepare_derivatives(self) -> None:
        if self._deriv_ready:
            return
        n = self.n
        fp = np.empty(n + 1)   # fp[l] = f'_l(v_l), index 0 unused
        fpp = np.empty(n + 1)  # fpp[l] = f''_l(v_l)
        fp[0] = fpp[0] = math.nan
        for l in range(1, n + 1):
            d = self.env.dist_at(l)
            v = self.values[l]
            fp[l] = d.pgf(v, 1)
            fpp[l] = d.pgf(v, 2)
        zero = fp[:] == 0.0
        zero[0] = False
        # Zero factors contribute log 1 here and are tracked by the zero
        # counter instead, so prefix-sum differences stay exact.
        logs = np.log(np.where(zero | ~(fp > 0.0), 1.0, fp))
        logs[0] = 0.0
        # C[l] = sum_{j<=l} log f'_j(v_j) over nonzero factors only;
        # zc[l] counts zero factors among 1..l.
        self._C = np.concatenate([[0.0], np.cumsum(logs[1:])])
        self._zc = np.concatenate([[0], np.cumsum(zero[1:].astype(np.int64))])
        # Summands of the second-derivative formula, shifted by their max so
        # the suffix sums neither overflow nor flush to zero.
        with np.errstate(divide="ignore"):
            w = np.where(fpp[1:] > 0.0, np.log(np.where(fpp[1:] > 0.0, fpp[1:], 1.0)), -math.inf)
        w = w - 2.0 * logs[1:] - self._C[:-1]
        finite = w[np.isfinite(w)]
        self._w_shift = float(np.max(finite)) if finite.size else -math.inf
        ew = np.exp(w - self._w_shift) if finite.size else np.zeros(n)
        ew[~np.isfinite(w)] = 0.0
        # suffix[m] = sum_{l>m} exp(w_l - shift)
        self._w_suffix = np.concatenate([np.cumsum(ew[::-1])[::-1], [0.0]])
        self._fp = fp
        self._fpp = fpp
        self._deriv_ready = True

    def _log_d1(self, m: int) -> float:
        """log f'_{m,n}(s), or -inf when some factor vanishes."""
        self._prepare_derivatives()
        if self._zc[self.n] - self._zc[m] > 0:
            return -math.inf
        return float(self._C[self.n] - self._C[m])

    def d1(self, m: int) -> float:
        """f'_{m,n}(s)."""
        if not 0 <= m <= self.n:
            raise ValueError("m must lie in [0, n]")
        if m == self.n:
            return 1.0
        log = self._log_d1(m)
        try:
            return math.exp(log)
        except OverflowError:
            return math.inf

    def d2(self, m: int) -> float:
        """f''_{m,n}(s)."""
        if not 0 <= m <= self.n:
            raise ValueError("m must lie in [0, n]")
        if m == self.n:
            return 0.0
        self._prepare_derivatives()
        if self._zc[self.n] - self._zc[m] > 0:
            return self._d2_chain(m)
        log = self._log_d2(m)
        if log == -math.inf:
            return 0.0
        try:
            return math.exp(log)
        except OverflowError:
            return math.inf

    def _log_d2(self, m: int) -> float:
        self._prepare_derivatives()
        ss = self._w_suffix[m]
        if ss <= 0.0:
            return -math.inf
        return 2.0 * self._C[self.n] - self._C[m] + self._w_shift + math.log(ss)

    def _d2_chain(self, m: int) -> float:
        # Division-free fallback: build (f_{l,n})'', (f_{l,n})' downward.
        # Needed only when some f'_l(v_l) = 0, which requires s = 0.
        d1, d2 = 1.0, 0.0
        for l in range(self.n, m, -1):
            fp, fpp = self._fp[l], self._fpp[l]
            d2 = fpp * d1 * d1 + fp * d2
            d1 = fp * d1
        return d2


def composition_trace(env: Environment, n: int, s: float) -> CompositionTrace:
    return CompositionTrace(env, n, s)


def _check_range(m: int, n: int) -> None:
    if not 0 <= m <= n:
        raise ValueError("need 0 <= m <= n")


def compose(env: Environment, m: int, n: int, s: float, trace: CompositionTrace | None = None) -> float:
    """f_{m,n}(s) by backward iteration."""
    _check_range(m, n)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    return t.value(m)

def d1_compose(env: Environment, m: int, n: int, s: float, trace: CompositionTrace | None = None) -> float:
    """f'_{m,n}(s)."""
    _check_range(m, n)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    return t.d1(m)

def d2_compose(env: Environment, m: int, n: int, s: float, trace: CompositionTrace | None = None) -> float:
    """f''_{m,n}(s)."""
    _check_range(m, n)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    return t.d2(m)


def one_minus_compose(env: Environment, m: int, n: int, s: float) -> float:
    """1 - f_{m,n}(s), evaluated without cancellation.

    Iterates u -> 1 - f_l(1 - u) downward from u_n = 1 - s using each
    family's stable complement form.
    """
    _check_range(m, n)
    if not (0.0 <= s <= 1.0):
        raise ValueError("pgf argument must lie in [0, 1]")
    u = 1.0 - s
    for l in range(n, m, -1):
        u = env.dist_at(l).branch_survival(u)
    return u


def survival_prob(env: Environment, n: int) -> float:
    """P(Z_n > 0) = 1 - f_{0,n}(0)."""
    return one_minus_compose(env, 0, n, 0.0)


def laplace_z(env: Environment, n: int, lam: float) -> float:
    """E[exp(-lam Z_n)]."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    return compose(env, 0, n, math.exp(-lam))


def laplace_zdot(env: Environment, n: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """E[exp(-lam Zdot_n)] = f'_{0,n}(e^-lam) e^-lam / mu_n."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    s = math.exp(-lam)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    if n == 0:
        return s
    log = t._log_d1(0) - env.log_mu(n) - lam
    return math.exp(log) if log > -math.inf else 0.0


def laplace_zdot_shifted(env: Environment, n: int, m: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """E[exp(-lam Zdot^{(m+1)}_{n-(m+1)})] = (mu_{m+1}/mu_n) f'_{m+1,n}(e^-lam) e^-lam."""
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    s = math.exp(-lam)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    log = env.log_mu(m + 1) - env.log_mu(n) + t._log_d1(m + 1) - lam
    return math.exp(log) if log > -math.inf else 0.0


def laplace_zddot(env: Environment, n: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """E[exp(-lam Zddot_n)] = f''_{0,n}(e^-lam) e^-2lam / (mu_n^2 S_n)."""
    if n < 1:
        raise ValueError("the pair-biased process needs n >= 1")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    s_n = env.cum_nu_over_mu(n)
    if s_n <= 0.0:
        raise DistributionError("no pair-biased law: S_n = 0")
    s = math.exp(-lam)
    t = trace if trace is not None else CompositionTrace(env, n, s)
    log = t._log_d2(0) - 2.0 * env.log_mu(n) - math.log(s_n) - 2.0 * lam
    return math.exp(log) if log > -math.inf else 0.0


def laplace_hanging_qdot(env: Environment, n: int, m: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """Laplace transform of the subtree grown from a shifted size-biased root,
    f'_{m+1}(f_{m+1,n}(e^-lam)) / f'_{m+1}(1)."""
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    t = trace if trace is not None else CompositionTrace(env, n, math.exp(-lam))
    d = env.dist_at(m + 1)
    return d.pgf(t.value(m + 1), 1) / d.mean()


def laplace_hanging_qddot(env: Environment, n: int, m: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """Laplace transform of the subtree grown from a shifted pair-biased root,
    f''_{m+1}(f_{m+1,n}(e^-lam)) / (nu_{m+1} f'_{m+1}(1)^2)."""
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    d = env.dist_at(m + 1)
    if d.second_factorial() <= 0.0:
        raise DistributionError("no pair-biased law")
    t = trace if trace is not None else CompositionTrace(env, n, math.exp(-lam))
    return d.pgf(t.value(m + 1), 2) / (d.nu() * d.mean() ** 2)


def g_ratio(env: Environment, n: int, m: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """Ratio of the pair-biased to size-biased hanging-subtree transforms.

    Computes both the quotient of the two transforms and its closed form
    f'_{m+1}(1) f''_{m+1}(v) / (f'_{m+1}(v) f''_{m+1}(1)) with
    v = f_{m+1,n}(e^-lam), and insists they agree; a mismatch indicates a
    regression in one of the derivative paths.
    """
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    d = env.dist_at(m + 1)
    if d.second_factorial() <= 0.0:
        raise DistributionError("no pair-biased law")
    t = trace if trace is not None else CompositionTrace(env, n, math.exp(-lam))
    v = t.value(m + 1)
    closed = (d.mean() / d.pgf(v, 1)) * (d.pgf(v, 2) / d.second_factorial())
    quotient = laplace_hanging_qddot(env, n, m, lam, t) / laplace_hanging_qdot(env, n, m, lam, t)
    if abs(closed - quotient) > _G_CONSISTENCY_TOL * max(1.0, abs(closed)):
        raise EngineError(
            f"g-ratio forms disagree at n={n}, m={m}, lam={lam}: "
            f"{closed!r} vs {quotient!r}"
        )
    return closed


def g_gap_profile(env: Environment, n: int, lam: float, trace: CompositionTrace | None = None) -> np.ndarray:
    """1 - g(n, m, lam) for every m in 0..n-1; NaN where nu_{m+1} = 0.

    Shares one trace across all m and keeps the built-in agreement check of
    the two g forms.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    t = trace if trace is not None else CompositionTrace(env, n, math.exp(-lam))
    out = np.empty(n)
    for m in range(n):
        d = env.dist_at(m + 1)
        if d.second_factorial() <= 0.0:
            out[m] = math.nan
            continue
        out[m] = 1.0 - g_ratio(env, n, m, lam, t)
    return out


def kn_pmf(env: Environment, n: int, r: int) -> float:
    """P(K_n = r) = (nu_{r+1}/mu_r) / S_n."""
    if not 0 <= r <= n - 1:
        raise ValueError("need 0 <= r <= n-1")
    terms = env.nu_over_mu_terms(n)
    s_n = env.cum_nu_over_mu(n)
    if s_n <= 0.0:
        raise DistributionError("K_n undefined: S_n = 0")
    return float(terms[r]) / s_n


def kn_pmf_vector(env: Environment, n: int) -> np.ndarray:
    """The full law of K_n on {0, ..., n-1}."""
    if n < 1:
        raise ValueError("need n >= 1")
    terms = env.nu_over_mu_terms(n)
    s_n = env.cum_nu_over_mu(n)
    if s_n <= 0.0:
        raise DistributionError("K_n undefined: S_n = 0")
    return terms / s_n


def a_ratio(env: Environment, n: int, m: int) -> float:
    """A_{n,m} = a^{(m+1)}_{n-(m+1)} / a_n = sum_{j>m} (nu_{j+1}/mu_j) / S_n."""
    if not 0 <= m < n:
        raise ValueError("need 0 <= m < n")
    terms = env.nu_over_mu_terms(n)
    return math.fsum(terms[m + 1 :].tolist()) / env.cum_nu_over_mu(n)


def partition_points(env: Environment, n: int) -> np.ndarray:
    """The points 0 = Pi_0 <= ... <= Pi_n = 1 with Pi_k = A_{n,n-k-1}."""
    if n < 1:
        raise ValueError("need n >= 1")
    terms = env.nu_over_mu_terms(n)
    s_n = env.cum_nu_over_mu(n)
    pts = np.concatenate([[0.0], np.cumsum(terms[::-1]) / s_n])
    pts[-1] = 1.0
    return pts


def partition_norm(env: Environment, n: int) -> float:
    """Largest step of the A_{n,K_n} partition, max_r P(K_n = r)."""
    return float(np.max(kn_pmf_vector(env, n)))


def a_kn_cdf(env: Environment, n: int, y: float) -> float:
    """P(A_{n,K_n} <= y): the step function through the partition points."""
    if not 0.0 <= y <= 1.0:
        raise ValueError("y must lie in [0, 1]")
    if y >= 1.0:
        return 1.0
    pts = partition_points(env, n)
    l = int(np.searchsorted(pts, y, side="right")) - 1
    return float(pts[l + 1])


def kolmogorov_ratio(env: Environment, n: int) -> float:
    """(a_n / mu_n) P(Z_n > 0) = (S_n / 2) P(Z_n > 0)."""
    if n < 1:
        raise ValueError("need n >= 1")
    return 0.5 * env.cum_nu_over_mu(n) * survival_prob(env, n)


def conditional_laplace_z(env: Environment, n: int, lam: float) -> float:
    """E[exp(-lam Z_n) | Z_n > 0]."""
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    surv = survival_prob(env, n)
    if surv <= EXTINCT_EPS:
        raise DistributionError("process is extinct by this horizon")
    return 1.0 - one_minus_compose(env, 0, n, math.exp(-lam)) / surv


def two_spine_rhs(env: Environment, n: int, lam: float, trace: CompositionTrace | None = None) -> float:
    """Right-hand side of the spine decomposition of E[exp(-lam Zddot_n)]:

        E[e^{-lam Zdot_n}] * sum_m P(K_n=m) E[e^{-lam Zdot^{(m+1)}_{n-(m+1)}}] g(n,m,lam)
    """
    if n < 1:
        raise ValueError("need n >= 1")
    if lam < 0.0:
        raise ValueError("lambda must be nonnegative")
    t = trace if trace is not None else CompositionTrace(env, n, math.exp(-lam))
    weights = kn_pmf_vector(env, n)
    parts = []
    for m in range(n):
        if weights[m] == 0.0:
            continue
        parts.append(
            weights[m]
            * laplace_zdot_shifted(env, n, m, lam, t)
            * g_ratio(env, n, m, lam, t)
        )
    return laplace_zdot(env, n, lam, t) * math.fsum(parts)
