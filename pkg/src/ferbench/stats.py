"""Pearson correlation, one-way ANOVA, and Tukey pairwise comparisons.

The test statistics (r, F, studentized q) are computed here from first
principles; only the tail probabilities are delegated to scipy's t, F, and
studentized-range distributions, whose numerical integration is better than
anything worth rewriting.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as _spstats


@dataclass(frozen=True)
class StatsResult:
    """One test outcome: the statistic, its p value, and degrees of freedom.

    `df` is a tuple whose arity depends on the test: (n-2,) for a
    correlation, (k-1, N-k) for an F test, (k, N-k) for a studentized range.
    `comparison` names the two groups for per-pair results, None otherwise.
    """

    statistic: float
    p_value: float
    df: tuple
    comparison: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p value must lie in [0, 1], got {self.p_value}")
        object.__setattr__(self, "statistic", float(self.statistic))
        object.__setattr__(self, "p_value", float(self.p_value))
        object.__setattr__(self, "df", tuple(int(d) for d in self.df))


def pearson_r(x, y) -> StatsResult:
    """Pearson correlation with a two-sided p from the t distribution (n-2 df)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 points for a correlation, got {n}")
    xm = x - x.mean()
    ym = y - y.mean()
    sx2 = float(xm @ xm)
    sy2 = float(ym @ ym)
    if sx2 == 0.0 or sy2 == 0.0:
        raise ValueError("zero variance in at least one input")
    if np.array_equal(x, y):
        # identical sequences correlate at exactly 1; the closed form dodges
        # the last-ulp roundoff of sqrt(s)*sqrt(s)
        return StatsResult(statistic=1.0, p_value=0.0, df=(n - 2,))
    r = float(np.clip((xm @ ym) / (np.sqrt(sx2) * np.sqrt(sy2)), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * np.sqrt((n - 2) / (1.0 - r * r))
        p = float(min(1.0, 2.0 * _spstats.t.sf(abs(t), df=n - 2)))
    return StatsResult(statistic=r, p_value=p, df=(n - 2,))


def _checked_groups(groups):
    gs = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(gs) < 2:
        raise ValueError(f"need at least 2 groups, got {len(gs)}")
    for i, g in enumerate(gs):
        if g.size < 2:
            raise ValueError(f"group {i} has {g.size} values, need at least 2")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"group {i} contains non-finite values")
    return gs


def _anova_pieces(gs):
    """Between/within sums of squares shared by the F test and Tukey."""
    n_total = sum(g.size for g in gs)
    grand = sum(float(g.sum()) for g in gs) / n_total
    ssb = sum(g.size * (g.mean() - grand) ** 2 for g in gs)
    ssw = sum(float(((g - g.mean()) ** 2).sum()) for g in gs)
    df_between = len(gs) - 1
    df_within = n_total - len(gs)
    return ssb, ssw, df_between, df_within


def one_way_anova(groups) -> StatsResult:
    """Standard one-way F test over k groups of possibly unequal size."""
    gs = _checked_groups(groups)
    ssb, ssw, dfb, dfw = _anova_pieces(gs)
    msb = ssb / dfb
    msw = ssw / dfw
    if msw == 0.0:
        # zero within-group variance: either nothing separates (F = 0) or the
        # groups are perfectly separated (F unbounded)
        f_stat, p = (0.0, 1.0) if msb == 0.0 else (np.inf, 0.0)
    else:
        f_stat = msb / msw
        p = float(_spstats.f.sf(f_stat, dfb, dfw))
    return StatsResult(statistic=float(f_stat), p_value=p, df=(dfb, dfw))


def tukey_pairwise(groups, names=None) -> list:
    """Tukey HSD over every group pair, using pooled within-group variance.

    The statistic for pair (i, j) is (mean_j - mean_i) / se with
    se = sqrt(msw/2 * (1/n_i + 1/n_j)), the Tukey-Kramer form that reduces
    to the classical q for balanced groups.  Signed, so swapping the two
    groups flips it; the p value uses |q| against the studentized-range
    distribution with (k, N-k) parameters.
    """
    gs = _checked_groups(groups)
    k = len(gs)
    if names is None:
        names = [f"group{i}" for i in range(k)]
    elif len(names) != k:
        raise ValueError(f"{len(names)} names for {k} groups")
    _, ssw, _, dfw = _anova_pieces(gs)
    msw = ssw / dfw
    means = [float(g.mean()) for g in gs]
    results = []
    for i in range(k):
        for j in range(i + 1, k):
            se = np.sqrt(msw / 2.0 * (1.0 / gs[i].size + 1.0 / gs[j].size))
            diff = means[j] - means[i]
            if se == 0.0:
                q, p = (0.0, 1.0) if diff == 0.0 else (np.sign(diff) * np.inf, 0.0)
            elif diff == 0.0:
                q, p = 0.0, 1.0
            else:
                q = diff / se
                p = float(np.clip(_spstats.studentized_range.sf(abs(q), k, dfw), 0.0, 1.0))
            results.append(StatsResult(statistic=float(q), p_value=p, df=(k, dfw),
                                       comparison=f"{names[i]}-vs-{names[j]}"))
    return results
