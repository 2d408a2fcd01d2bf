"""Bundle-level statistics from click records.

Rates are in units of ``gamma_a`` and times in units of ``1/gamma_a``,
matching :class:`~nbundle.trajectories.ClickRecord`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import gammaln, xlogy

from .steady import CorrelationSeries
from .trajectories import ClickRecord

DEFAULT_WINDOW = 5.0


@dataclass(frozen=True)
class BundleStream:
    t_start: np.ndarray
    t_end: np.ndarray
    size: np.ndarray
    window: float
    t_min: float    # observation interval (t_min, t_max]
    t_max: float
    n_clicks: int

    def __len__(self):
        return len(self.size)

    @property
    def observed_time(self) -> float:
        return self.t_max - self.t_min

    def starts(self, size: int | None = None) -> np.ndarray:
        return self.t_start if size is None else self.t_start[self.size == size]

    def histogram(self) -> "SizeHistogram":
        return size_histogram(self)


@dataclass(frozen=True)
class SizeHistogram:
    counts: dict[int, int]
    total_time: float

    def __getitem__(self, size: int) -> int:
        return self.counts.get(size, 0)

    def __add__(self, other: "SizeHistogram") -> "SizeHistogram":
        merged = dict(self.counts)
        for k, v in other.counts.items():
            merged[k] = merged.get(k, 0) + v
        return SizeHistogram(dict(sorted(merged.items())), self.total_time + other.total_time)

    @property
    def n_bundles(self) -> int:
        return sum(self.counts.values())

    @property
    def n_clicks(self) -> int:
        return sum(k * v for k, v in self.counts.items())


@dataclass(frozen=True)
class RateEstimate:
    N: int
    lambda_1: float
    lambda_N: float
    other_rate: float
    stderr_1: float
    stderr_N: float
    stderr_other: float
    count_1: int
    count_N: int
    count_other: int
    total_time: float


def cluster(record: ClickRecord, window: float = DEFAULT_WINDOW) -> BundleStream:
    """Group cavity clicks whose successive gaps are below ``window``.

    Emitter clicks are ignored: they leave through another channel.
    """
    if not window > 0:
        raise ValueError(f"window must be > 0, got {window}")
    t = np.asarray(record.cavity_times, dtype=float)
    return cluster_times(t, window, record.burn_in, record.duration)


def cluster_times(t: np.ndarray, window: float, t_min: float, t_max: float) -> BundleStream:
    t = np.asarray(t, dtype=float)
    if t.size == 0:
        empty = np.array([], dtype=float)
        return BundleStream(empty, empty, np.array([], dtype=int), window, t_min, t_max, 0)
    breaks = np.flatnonzero(np.diff(t) >= window) + 1
    first = np.concatenate(([0], breaks))
    last = np.concatenate((breaks - 1, [t.size - 1]))
    return BundleStream(t[first], t[last], last - first + 1, float(window),
                        float(t_min), float(t_max), int(t.size))


def size_histogram(stream: BundleStream) -> SizeHistogram:
    sizes, counts = np.unique(stream.size, return_counts=True)
    return SizeHistogram({int(s): int(c) for s, c in zip(sizes, counts)}, stream.observed_time)


def estimate_rates(hist: SizeHistogram, N: int) -> RateEstimate:
    """Rates of single clicks, ``N``-bundles and everything else (per ``1/gamma_a``)."""
    if N < 2:
        raise ValueError(f"purity needs a bundle size N >= 2, got {N}")
    T = hist.total_time
    if not T > 0:
        raise ValueError("total observation time must be > 0")
    c1, cN = hist[1], hist[N]
    co = hist.n_bundles - c1 - cN
    return RateEstimate(N, c1 / T, cN / T, co / T,
                        math.sqrt(c1) / T, math.sqrt(cN) / T, math.sqrt(co) / T,
                        c1, cN, co, T)


def purity(est: RateEstimate) -> float:
    """Fraction of single-or-``N`` emission events that are ``N``-bundles."""
    total = est.lambda_1 + est.lambda_N
    if not total > 0:
        raise ValueError("purity undefined: no single clicks and no N-bundles")
    return est.lambda_N / total


def purity_stderr(est: RateEstimate) -> float:
    """Poisson-propagated standard error of :func:`purity`."""
    n = est.count_1 + est.count_N
    if n == 0:
        raise ValueError("purity undefined: no single clicks and no N-bundles")
    p = est.count_N / n
    return math.sqrt(p * (1 - p) / n)


def counting_pmf(lambda_1: float, lambda_N: float, N: int, T: float, n):
    """Probability of ``n`` photons in a window ``T`` for singles plus ``N``-bundles.

    The count is ``X_1 + N X_N`` with independent Poisson ``X_1`` (mean
    ``lambda_1 T``) and ``X_N`` (mean ``lambda_N T``).
    """
    if lambda_1 < 0 or lambda_N < 0 or not T > 0:
        raise ValueError("rates must be >= 0 and T > 0")
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    scalar = np.ndim(n) == 0
    n_arr = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if np.any(n_arr < 0):
        raise ValueError("photon number must be >= 0")
    m1, mN = lambda_1 * T, lambda_N * T
    out = np.zeros(n_arr.shape, dtype=float)
    for idx, nn in enumerate(n_arr):
        k = np.arange(nn // N + 1)
        rest = nn - N * k
        with np.errstate(divide="ignore"):
            logt = (xlogy(rest, m1) + xlogy(k, mN) - gammaln(k + 1) - gammaln(rest + 1))
        logt = logt[np.isfinite(logt)]
        if logt.size:
            top = logt.max()
            out[idx] = math.exp(top - (m1 + mN)) * np.exp(logt - top).sum()
    return float(out[0]) if scalar else out


def window_counts(record: ClickRecord, T: float) -> np.ndarray:
    """Cavity clicks in consecutive windows of length ``T`` after burn-in."""
    n_win = int(record.observed_time // T)
    if n_win < 1:
        raise ValueError("record shorter than one counting window")
    edges = record.burn_in + T * np.arange(n_win + 1)
    counts, _ = np.histogram(record.cavity_times, bins=edges)
    return counts


def moment_start(counts, N: int, T: float) -> tuple[float, float]:
    """Method-of-moments ``(lambda_1, lambda_N)``: mean ``(l1 + N lN) T``,
    variance ``(l1 + N^2 lN) T``, clipped to stay positive."""
    counts = np.asarray(counts, dtype=float)
    m, v = counts.mean(), counts.var()
    lN = max((v - m) / (N * (N - 1) * T), 0.0) if N > 1 else 0.0
    lN = min(lN, 0.99 * m / (N * T))
    l1 = max(m / T - N * lN, 0.01 * m / T)
    return l1, max(lN, 0.01 * m / (N * T))


def fit_counting_mle(counts, N: int, T: float, start: tuple[float, float] | None = None
                     ) -> tuple[float, float]:
    """Maximum-likelihood ``(lambda_1, lambda_N)`` from per-window photon counts.

    The likelihood is multimodal when counts are not compound Poisson, so
    Nelder-Mead is started from the moment estimate, from all-singles and
    from all-bundles splits, and the best optimum is kept.
    """
    counts = np.asarray(counts, dtype=np.int64)
    values, freq = np.unique(counts, return_counts=True)
    mean = max(counts.mean(), 1e-12)
    starts = [start] if start is not None else [
        moment_start(counts, N, T), (0.9 * mean / T, 0.1 * mean / (N * T)),
        (0.1 * mean / T, 0.9 * mean / (N * T)), (0.5 * mean / T, 0.5 * mean / (N * T))]

    def nll(x):
        l1, lN = np.exp(x)
        p = counting_pmf(l1, lN, N, T, values)
        return -np.sum(freq * np.log(np.maximum(p, 1e-300)))

    best = None
    for s0 in starts:
        res = optimize.minimize(nll, np.log(np.maximum(s0, 1e-12)), method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 4000})
        if best is None or res.fun < best.fun:
            best = res
    l1, lN = np.exp(best.x)
    return float(l1), float(lN)


def counting_chisquare(counts, lambda_1: float, lambda_N: float, N: int, T: float,
                       n_fitted: int = 2, min_expected: float = 5.0):
    """Pearson chi-square of a window-count histogram against :func:`counting_pmf`.

    Adjacent photon numbers are pooled until every cell expects at least
    ``min_expected`` windows; the upper tail goes into the last cell.
    Returns ``(statistic, p_value, dof)``.
    """
    counts = np.asarray(counts, dtype=np.int64)
    W = counts.size
    n_hi = int(counts.max())
    observed = np.bincount(counts, minlength=n_hi + 1).astype(float)
    pmf = counting_pmf(lambda_1, lambda_N, N, T, np.arange(n_hi + 1))
    expected = W * pmf
    expected[-1] += W * max(0.0, 1.0 - pmf.sum())
    obs_cells, exp_cells = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
            o_acc = e_acc = 0.0
    if e_acc > 0 or o_acc > 0:
        if obs_cells:
            obs_cells[-1] += o_acc
            exp_cells[-1] += e_acc
        else:
            obs_cells.append(o_acc)
            exp_cells.append(e_acc)
    obs_cells, exp_cells = np.array(obs_cells), np.array(exp_cells)
    dof = obs_cells.size - 1 - n_fitted
    if dof < 1:
        raise ValueError("too few populated cells for a chi-square test")
    stat = float(np.sum((obs_cells - exp_cells) ** 2 / exp_cells))
    return stat, float(stats.chi2.sf(stat, dof)), dof


def _pairs_below(t: np.ndarray, lag: float) -> int:
    """Ordered pairs ``i < j`` with ``t_j - t_i < lag``."""
    idx = np.searchsorted(t, t + lag, side="left")
    return int(np.maximum(idx - np.arange(t.size) - 1, 0).sum())


def bundle_g2_from_clicks(stream: BundleStream, size_filter: int, tau_bins) -> CorrelationSeries:
    """Coincidence histogram of bundle start times, normalised to a Poisson stream.

    Only bundles of exactly ``size_filter`` clicks take part.  The Poisson
    reference has the same number of events ``M`` spread uniformly over the
    observation interval ``T``: ``M(M-1)/T^2 * int_bin (T - tau) dtau`` pairs.
    ``stderr`` is ``sqrt(counts)/expected`` with a one-count floor.
    """
    edges = np.asarray(tau_bins, dtype=float)
    t = stream.starts(size_filter)
    M, T = t.size, stream.observed_time
    centres = 0.5 * (edges[:-1] + edges[1:])
    cum = np.array([_pairs_below(t, e) for e in edges]) if M else np.zeros(edges.size)
    counts = np.diff(cum).astype(float)
    lo, hi = edges[:-1], edges[1:]
    expected = M * max(M - 1, 0) / T**2 * ((hi - lo) * T - 0.5 * (hi**2 - lo**2))
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(expected > 0, counts / expected, np.nan)
        err = np.where(expected > 0, np.sqrt(np.maximum(counts, 1.0)) / expected, np.nan)
    rate = M / T if T > 0 else 0.0
    return CorrelationSeries(centres, values, f"g2_N{size_filter}_clicks", rate,
                             stderr=err, counts=counts)


def expected_pair_counts(stream: BundleStream, size_filter: int, tau_bins) -> np.ndarray:
    """Poisson-reference pair counts used by :func:`bundle_g2_from_clicks`."""
    edges = np.asarray(tau_bins, dtype=float)
    M, T = stream.starts(size_filter).size, stream.observed_time
    lo, hi = edges[:-1], edges[1:]
    return M * max(M - 1, 0) / T**2 * ((hi - lo) * T - 0.5 * (hi**2 - lo**2))


@dataclass(frozen=True)
class Correlation2D:
    tau1: np.ndarray
    tau2: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    counts: np.ndarray
    expected: np.ndarray


def _triple_counts(t: np.ndarray, e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    counts = np.zeros((e1.size - 1, e2.size - 1))
    for i in range(t.size):
        j_hi = np.searchsorted(t, t[i] + e1[-1], side="left")
        for j in range(i + 1, j_hi):
            k_hi = np.searchsorted(t, t[j] + e2[-1], side="left")
            if k_hi <= j + 1:
                continue
            b1 = np.searchsorted(e1, t[j] - t[i], side="right") - 1
            if not 0 <= b1 < counts.shape[0]:
                continue
            b2 = np.searchsorted(e2, t[j + 1:k_hi] - t[j], side="right") - 1
            ok = (b2 >= 0) & (b2 < counts.shape[1])
            np.add.at(counts[b1], b2[ok], 1)
    return counts


def bundle_g3_check(stream: BundleStream, tau1_bins, tau2_bins,
                    size_filter: int | None = None, n_blocks: int = 20) -> Correlation2D:
    """Third-order coincidences of bundle starts at ``t, t+tau1, t+tau1+tau2``.

    Normalised by the uniform-Poisson expectation
    ``M(M-1)(M-2)/T^3 * int int (T - tau1 - tau2)``.  Triples sharing events
    are correlated, so ``stderr`` comes from the scatter of counts over
    ``n_blocks`` contiguous time blocks, floored at the Poisson value.
    Diagnostic only.
    """
    e1 = np.asarray(tau1_bins, dtype=float)
    e2 = np.asarray(tau2_bins, dtype=float)
    t = stream.starts(size_filter)
    M, T = t.size, stream.observed_time
    counts = _triple_counts(t, e1, e2)
    w1, w2 = np.diff(e1), np.diff(e2)
    c1, c2 = 0.5 * (e1[:-1] + e1[1:]), 0.5 * (e2[:-1] + e2[1:])
    norm = M * max(M - 1, 0) * max(M - 2, 0) / T**3 if T > 0 else 0.0
    expected = norm * np.outer(w1, w2) * (T - c1[:, None] - c2[None, :])
    spread = np.sqrt(np.maximum(counts, 1.0))
    if n_blocks > 1 and M > 2:
        edges = stream.t_min + T * np.arange(n_blocks + 1) / n_blocks
        cut = np.searchsorted(t, edges)
        per_block = np.array([_triple_counts(t[a:b], e1, e2) for a, b in zip(cut[:-1], cut[1:])])
        spread = np.maximum(spread, np.sqrt(n_blocks) * per_block.std(axis=0, ddof=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(expected > 0, counts / expected, np.nan)
        err = np.where(expected > 0, spread / expected, np.nan)
    return Correlation2D(c1, c2, values, err, counts, expected)


def write_bundles_csv(stream: BundleStream, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write("t_start,t_end,size\n")
        for a, b, s in zip(stream.t_start, stream.t_end, stream.size):
            fh.write(f"{float(a)!r},{float(b)!r},{int(s)}\n")


def write_histogram_csv(hist: SizeHistogram, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        fh.write(f"# total_time={hist.total_time!r}\n")
        fh.write("size,count\n")
        for s, c in sorted(hist.counts.items()):
            fh.write(f"{s},{c}\n")
