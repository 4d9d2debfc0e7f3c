"""Optional SVG figures for CLI runs (needs matplotlib).

Output is byte-deterministic: no creation date and a fixed hash salt for
element ids.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "denjoylab"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_log_derivative(path, measured, floor):
    ns = sorted(measured)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogx(ns, [measured[n] for n in ns], "o-", label="max |log Df^n| on I_0")
    ax.semilogx(ns, [floor[n] for n in ns], "s--", label="log(l_0 / l_n)")
    ax.set_xlabel("n")
    ax.legend()
    _save(fig, path)


def plot_ball_system(path, system, count=200):
    fig, ax = plt.subplots(figsize=(5, 5))
    if system.k == 2:
        for j in range(-min(count, system.J), min(count, system.J) + 1):
            c, r = system.center(j), system.radius(j)
            ax.add_patch(plt.Circle(tuple(c), r, fill=False, lw=0.5))
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_aspect("equal")
    else:
        ax.loglog(1 + np.abs(system.indices), system.radii, ".", ms=2)
        ax.set_xlabel("1 + |j|")
        ax.set_ylabel("radius")
    _save(fig, path)


def plot_distortion(path, trace, contrast, bound):
    n = np.arange(1, trace.n + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(n, trace.direct, label="D_n (volume-matched)")
    ax.plot(n, contrast.direct, label="D_n (constant)")
    ax.axhline(bound, color="k", ls=":", label="M * sum vol")
    ax.set_yscale("symlog", linthresh=1e-6)
    ax.set_xlabel("n")
    ax.legend()
    _save(fig, path)


def plot_flatness(path, fit):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ok = fit.dist > 0
    ax.loglog(fit.ell[ok], fit.dist[ok], ".", ms=3)
    xs = np.sort(fit.ell[ok])
    ax.loglog(xs, np.exp(fit.intercept) * xs**fit.slope, "-", label=f"slope {fit.slope:.3f}")
    ax.set_xlabel("chord half-length")
    ax.set_ylabel("distance to round")
    ax.legend()
    _save(fig, path)


def plot_trap(path, system, cert):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    j = np.arange(1, cert.n + 1)
    ax.semilogy(j, [system.radius(i) for i in j], lw=0.7, label="alpha_n")
    ax.axhline(cert.threshold1, color="k", ls=":", label="radius threshold")
    ax.axvline(cert.n, color="r", lw=0.7)
    ax.set_xlabel("n")
    ax.legend()
    _save(fig, path)
