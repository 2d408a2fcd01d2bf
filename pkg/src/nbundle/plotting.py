"""PNG figures written next to the CSV outputs when ``--figures`` is given."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_resonances(rows: list[dict], path):
    fig, ax = plt.subplots(figsize=(5, 4))
    for N in sorted({r["N"] for r in rows}):
        sub = [r for r in rows if r["N"] == N]
        om = [r["omega"] for r in sub]
        ax.plot(om, [r["eq2_detuning"] for r in sub], "o-", label=f"N={N}")
        ax.axhline(sub[0]["eq1_detuning"], ls=":", color="grey", lw=0.8)
    ax.set_xlabel(r"$\Omega/g$")
    ax.set_ylabel(r"$(\omega_L-\omega_a)/g$")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_scan(rows: list[dict], orders, path):
    omegas = sorted({r["omega"] for r in rows})
    fig, axes = plt.subplots(len(omegas), 1, figsize=(6, 2.6 * len(omegas)), squeeze=False)
    for ax, om in zip(axes[:, 0], omegas):
        sub = [r for r in rows if r["omega"] == om and not r["status"].startswith("error")]
        x = np.array([r["omega_L_detuning"] for r in sub])
        for n in orders:
            ax.semilogy(x, [r.get(f"g{n}", np.nan) for r in sub], label=f"$g^{{({n})}}$")
        ax.set_title(rf"$\Omega={om:g}g$", fontsize=9)
        ax.set_xlabel(r"$(\omega_L-\omega_a)/g$")
    axes[0, 0].legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(rows: list[dict], N: int, path):
    ok = [r for r in rows if r["status"] == "ok"]
    om = np.array([r["omega"] for r in ok])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    ax1.semilogy(om, [r["gN"] for r in ok], "o-")
    ax1.set_ylabel(f"$g^{{({N})}}(0)$")
    ax2.errorbar(om, [r["purity"] for r in ok], yerr=[r["purity_err"] for r in ok], fmt="o-")
    ax2.set_ylabel(rf"$\pi_{N}$")
    ax2.set_xlabel(r"$\Omega/g$")
    return _save(fig, path)


def plot_clicks(record, path, span: float = 200.0, snapshot=None):
    t0 = record.burn_in
    fig, axes = plt.subplots(2 if snapshot is not None else 1, 1, figsize=(7, 3.5), squeeze=False)
    ax = axes[0, 0]
    for ch, y, c in ((0, 1.0, "tab:blue"), (1, 0.0, "tab:orange")):
        t = record.channel_times(ch)
        t = t[t < t0 + span]
        ax.vlines(t, y, y + 0.8, color=c, lw=0.8)
    ax.set_yticks([0.4, 1.4], ["emitter", "cavity"])
    ax.set_xlabel(r"$t\gamma_a$")
    if snapshot is not None:
        axes[1, 0].plot(snapshot.times, snapshot.populations, lw=0.6)
        axes[1, 0].set_xlabel(r"$t\gamma_a$")
        axes[1, 0].set_ylabel("population")
    return _save(fig, path)


def plot_correlations(cols: dict, N: int, path):
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.2))
    for ax, n in zip(axes, (1, N)):
        ax.plot(cols["tau"], cols[f"g2_N{n}_regression"], "-", label="regression")
        ax.errorbar(cols["tau"], cols[f"g2_N{n}_clicks"], yerr=cols[f"g2_N{n}_clicks_err"],
                    fmt=".", label="clicks")
        ax.axhline(1.0, color="grey", lw=0.6)
        ax.set_xlabel(r"$\tau\gamma_a$")
        ax.set_ylabel(f"$g^{{(2)}}_{{{n}}}(\\tau)$")
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def plot_counting(table: dict, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(table["n"], table["observed"], alpha=0.6, label="windows")
    ax.plot(table["n"], table["expected"], "ko-", ms=3, label="fitted law")
    ax.set_xlabel("photons per window")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    return _save(fig, path)
