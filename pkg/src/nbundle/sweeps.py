"""Parameter-space computations behind the CLI: resonance tables, steady-state
scans, extremum search along ``C_N`` and Monte Carlo purity sweeps."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.optimize import minimize_scalar

from .bundles import (BundleStream, bundle_g2_from_clicks, cluster, counting_chisquare,
                      counting_pmf, estimate_rates, fit_counting_mle, purity, purity_stderr,
                      window_counts)
from .model import SystemParams, resonance_dressed, resonance_ladder
from .qspace import SpaceDescriptor, build_space
from .steady import TruncationWarning, bundle_g2_tau, normal_moment, observables, solve
from .trajectories import simulate, trajectory_seed


def resonance_table(N_values, omegas, delta: float, g: float = 1.0) -> list[dict]:
    rows = []
    for om in omegas:
        for N in N_values:
            try:
                dressed = resonance_dressed(int(N), float(om), delta)
            except ValueError:
                dressed = float("nan")
            rows.append({"N": int(N), "omega": float(om),
                         "eq1_detuning": resonance_ladder(int(N), g, delta),
                         "eq2_detuning": dressed})
    return rows


def laser_detuning(rule: str, params: SystemParams, space: SpaceDescriptor, N: int) -> float:
    if rule == "fixed":
        return params.omega_L_detuning
    if rule == "ladder":
        return resonance_ladder(N, params.g, params.delta)
    if rule == "dressed":
        return resonance_dressed(N, params.omega, params.delta)
    if rule == "ridge":
        return ridge_detuning(params, space, N)
    raise ValueError(f"unknown omega_L rule {rule!r}")


def ridge_detuning(params: SystemParams, space: SpaceDescriptor, N: int,
                   half_width: float = 0.05, points: int = 41) -> float:
    """Laser detuning maximising ``<a^+^N a^N>`` within ``half_width`` of the dressed formula.

    The dressed-atom formula ignores the cavity coupling, which displaces the
    resonance by a few ``g**2/|delta|``; for a narrow cavity that exceeds the
    resonance width.
    """
    centre = resonance_dressed(N, params.omega, params.delta)

    def neg_moment(x):
        _, rho = solve(params.with_(omega_L_detuning=x), space)
        return -normal_moment(rho, N)

    xs = centre + np.linspace(-half_width, half_width, points)
    i = int(np.argmin([neg_moment(x) for x in xs]))
    lo, hi = xs[max(i - 1, 0)], xs[min(i + 1, points - 1)]
    res = minimize_scalar(neg_moment, bounds=(lo, hi), method="bounded", options={"xatol": 1e-9})
    return float(res.x)


def local_maxima(y) -> np.ndarray:
    """Interior indices strictly above both neighbours."""
    y = np.asarray(y, dtype=float)
    return np.flatnonzero((y[1:-1] > y[:-2]) & (y[1:-1] > y[2:])) + 1


def refine_extremum(f, lo: float, hi: float, maximize: bool = True, xatol: float = 1e-6):
    sign = -1.0 if maximize else 1.0
    res = minimize_scalar(lambda x: sign * f(x), bounds=(lo, hi), method="bounded",
                          options={"xatol": xatol})
    return float(res.x), float(sign * res.fun)


def _quiet_observables(params, space, orders):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        return observables(params, space, orders)


def scan_point(args) -> dict:
    params, n_max, orders = args
    row = {"omega": params.omega, "omega_L_detuning": params.omega_L_detuning}
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            row.update(observables(params, build_space(n_max), tuple(orders)))
        row["status"] = "ok" if not caught else "truncation-warning"
    except Exception as exc:  # isolate failures per point
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def _pool_map(fn, jobs, workers):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def scan(base: SystemParams, omegas, detunings, n_max: int, orders=(2, 3, 4, 5),
         workers: int = 1) -> list[dict]:
    """Steady observables over the (omega, detuning) grid, omega-major order."""
    jobs = [(base.with_(omega=float(om), omega_L_detuning=float(d)), n_max, tuple(orders))
            for om in omegas for d in detunings]
    return _pool_map(scan_point, jobs, workers)


def gn_peaks(base: SystemParams, space: SpaceDescriptor, n: int, detunings,
             refine: bool = True) -> list[tuple[float, float]]:
    """Local maxima of ``log g^(n)(0)`` over the laser detuning.

    Grid maxima are polished with a bounded scalar search between neighbours.
    """
    detunings = np.asarray(detunings, dtype=float)

    def log_gn(x):
        obs = _quiet_observables(base.with_(omega_L_detuning=x), space, (n,))
        return math.log(obs[f"g{n}"])

    values = np.array([log_gn(x) for x in detunings])
    peaks = []
    for i in local_maxima(values):
        if refine:
            x, v = refine_extremum(log_gn, detunings[i - 1], detunings[i + 1], xatol=1e-6)
        else:
            x, v = detunings[i], values[i]
        peaks.append((x, math.exp(v)))
    return peaks


def cn_profile(base: SystemParams, space: SpaceDescriptor, N: int, omegas,
               order: int = 2) -> list[dict]:
    """Steady ``n_a`` and ``g^(order)(0)`` along the dressed resonance ``C_N``."""
    rows = []
    for om in omegas:
        p = base.with_(omega=float(om)).on_dressed_resonance(N)
        obs = _quiet_observables(p, space, (order,))
        rows.append({"omega": float(om), "omega_L": p.omega_L_detuning,
                     "n_a": obs["n_a"], f"g{order}": obs[f"g{order}"]})
    return rows


def cn_extrema(base: SystemParams, space: SpaceDescriptor, N: int = 2, omegas=None,
               order: int = 2) -> dict:
    """Global maximum of ``g^(order)(0)``, its deepest local minimum beyond that
    maximum, and the ``n_a`` maximum, all along ``C_N`` and refined in ``omega``."""
    omegas = np.linspace(0.5, 60.0, 120) if omegas is None else np.asarray(omegas, dtype=float)
    rows = cn_profile(base, space, N, omegas, order)
    g = np.array([r[f"g{order}"] for r in rows])
    na = np.array([r["n_a"] for r in rows])

    def obs(om):
        return _quiet_observables(base.with_(omega=om).on_dressed_resonance(N), space, (order,))

    def bracket(i):
        return omegas[max(i - 1, 0)], omegas[min(i + 1, len(omegas) - 1)]

    i_max = int(np.argmax(g))
    om_max, g_max = refine_extremum(lambda x: obs(x)[f"g{order}"], *bracket(i_max))
    minima = [i for i in local_maxima(-g) if i > i_max]
    if minima:
        i_min = min(minima, key=lambda i: g[i])
        om_min, g_min = refine_extremum(lambda x: obs(x)[f"g{order}"], *bracket(i_min),
                                        maximize=False)
    else:
        om_min = g_min = float("nan")
    i_na = int(np.argmax(na))
    om_na, na_max = refine_extremum(lambda x: obs(x)["n_a"], *bracket(i_na))
    return {"omega_gmax": om_max, "gmax": g_max, "omega_gmin": om_min, "gmin": g_min,
            "omega_namax": om_na, "namax": na_max, "profile": rows}


def bundle_duration(n_a: float, N: int, target_bundles: int, burn_in: float,
                    max_duration: float) -> float:
    """Trajectory length (1/gamma_a) expected to yield ``target_bundles`` N-bundles.

    Uses ``lambda_N ~ gamma_a n_a / N``; a 10% margin covers Poisson scatter.
    """
    if not n_a > 0:
        return max_duration
    return min(burn_in + 1.1 * target_bundles * N / n_a, max_duration)


def sweep_point(args) -> dict:
    (params, n_max, N, rule, seed, dt, burn_in, window, target, max_duration,
     duration) = args
    row = {"omega": params.omega}
    try:
        space = build_space(n_max)
        params = params.with_(omega_L_detuning=laser_detuning(rule, params, space, N))
        row["omega_L"] = params.omega_L_detuning
        obs = _quiet_observables(params, space, sorted({2, N}))
        row.update(n_a=obs["n_a"], g2=obs["g2"], gN=obs[f"g{N}"])
        T = duration if duration is not None else bundle_duration(
            obs["n_a"], N, target, burn_in, max_duration)
        record = simulate(params, space, T, seed, dt=dt, burn_in=burn_in)
        est = estimate_rates(cluster(record, window).histogram(), N)
        ga = params.gamma_a
        row.update(lambda1=est.lambda_1 * ga, lambda1_err=est.stderr_1 * ga,
                   lambdaN=est.lambda_N * ga, lambdaN_err=est.stderr_N * ga,
                   purity=purity(est), purity_err=purity_stderr(est),
                   other_rate=est.other_rate * ga, n_bundles=est.count_1 + est.count_N
                   + est.count_other, duration=T, seed=seed, status="ok")
    except Exception as exc:
        row["status"] = f"error: {type(exc).__name__}: {exc}"
    return row


def sweep_cn(base: SystemParams, omegas, N: int, n_max: int, master_seed: int,
             rule: str = "dressed", dt: float = 0.05, burn_in: float = 50.0, window: float = 5.0,
             target_bundles: int = 3000, max_duration: float = 2e8,
             duration: float | None = None, workers: int = 1) -> list[dict]:
    """Steady state plus Monte Carlo purity at each omega along ``C_N``.

    Rates in the returned rows are in units of ``g``.
    """
    jobs = [(base.with_(omega=float(om)), n_max, N, rule, trajectory_seed(master_seed, i),
             dt, burn_in, window, target_bundles, max_duration, duration)
            for i, om in enumerate(omegas)]
    return _pool_map(sweep_point, jobs, workers)


def click_stream(record) -> BundleStream:
    """Every cavity click as its own size-1 bundle, for plain photon correlations."""
    t = np.asarray(record.cavity_times, dtype=float)
    return BundleStream(t, t, np.ones(t.size, dtype=int), 0.0, record.burn_in,
                        record.duration, int(t.size))


def bin_average(series_fn, edges, sub: int = 5) -> np.ndarray:
    """Midpoint-rule average of a regression curve over each histogram bin."""
    edges = np.asarray(edges, dtype=float)
    w = np.diff(edges)
    if not np.allclose(w, w[0]):
        raise ValueError("bin averaging needs uniform bins")
    offsets = (np.arange(sub) + 0.5) / sub * w[0]
    grid = (edges[:-1, None] + offsets[None, :]).ravel()
    return series_fn(grid).reshape(-1, sub).mean(axis=1)


def correlation_table(record, N: int, window: float, tau_max: float, tau_bin: float,
                      space: SpaceDescriptor | None = None) -> dict:
    """Click-based and regression-based ``g^(2)_1`` and ``g^(2)_N`` on shared bins.

    Returns columns keyed by name; the regression curves are averaged over
    each bin so both estimates refer to the same quantity.
    """
    params = record.params
    space = space or build_space(int(record.settings.get("n_max", 2 * N + 6)))
    L, rho = solve(params, space)
    edges = np.arange(0.0, tau_max + 0.5 * tau_bin, tau_bin)
    stream = cluster(record, window)
    cols = {"tau": 0.5 * (edges[:-1] + edges[1:])}
    for n, src in ((1, click_stream(record)), (N, stream)):
        clicks = bundle_g2_from_clicks(src, 1 if n == 1 else N, edges)
        reg = bin_average(lambda g: bundle_g2_tau(L, rho, n, params.gamma_a, g).values, edges)
        cols[f"g2_N{n}_regression"] = reg
        cols[f"g2_N{n}_clicks"] = clicks.values
        cols[f"g2_N{n}_clicks_err"] = clicks.stderr
        cols[f"g2_N{n}_pairs"] = clicks.counts
    return cols


def counting_table(record, N: int, T: float) -> dict:
    """Window-count histogram with the fitted counting law and its chi-square."""
    counts = window_counts(record, T)
    l1, lN = fit_counting_mle(counts, N, T)
    n = np.arange(int(counts.max()) + 1)
    observed = np.bincount(counts, minlength=n.size)
    expected = counts.size * counting_pmf(l1, lN, N, T, n)
    try:
        stat, p, dof = counting_chisquare(counts, l1, lN, N, T)
    except ValueError:
        stat, p, dof = float("nan"), float("nan"), 0
    return {"n": n, "observed": observed, "expected": expected, "lambda1": l1, "lambdaN": lN,
            "chi2": stat, "p_value": p, "dof": dof, "windows": counts.size, "T": T,
            "mean": float(counts.mean()), "variance": float(counts.var())}


def rate_summary(record, N: int, window: float, space: SpaceDescriptor | None = None) -> dict:
    """Bundle rates, purity and raw click rates next to their steady-state values.

    All rates are in units of ``g``.
    """
    params = record.params
    ga = params.gamma_a
    space = space or build_space(int(record.settings.get("n_max", 2 * N + 6)))
    obs = _quiet_observables(params, space, ())
    hist = cluster(record, window).histogram()
    T = record.observed_time / ga
    n_cav, n_em = record.cavity_times.size, record.emitter_times.size
    row = {"N": N, "window": window, "n_bundles": hist.n_bundles, "observed_time": T,
           "cavity_rate": n_cav / T, "cavity_rate_err": math.sqrt(max(n_cav, 1)) / T,
           "cavity_rate_steady": ga * obs["n_a"],
           "emitter_rate": n_em / T, "emitter_rate_err": math.sqrt(max(n_em, 1)) / T,
           "emitter_rate_steady": params.gamma_sigma * obs["n_sigma"],
           "fraction_in_N": N * hist[N] / max(hist.n_clicks, 1)}
    if N >= 2:
        est = estimate_rates(hist, N)
        row.update(lambda1=est.lambda_1 * ga, lambda1_err=est.stderr_1 * ga,
                   lambdaN=est.lambda_N * ga, lambdaN_err=est.stderr_N * ga,
                   lambdaN_steady=ga * obs["n_a"] / N, purity=purity(est),
                   purity_err=purity_stderr(est), other_rate=est.other_rate * ga)
    return row
