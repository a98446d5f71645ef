"""Desk-scale verification pipelines producing machine-checkable reports.

Each entry point reruns one quantitative construction at laboratory size:
the padding cascade over an energy grid, the twist/repeat/slide composite
for discrete families, a random surrogate for the accumulated growth sums,
rotation-sandwich norm identities, and threshold metrics for growth and
spectral quality.  Reports are plain dicts (or small dataclasses with a
``to_json``) so the command line layer can serialize them canonically.

Everything here is deterministic given its inputs; stochastic routines
take an explicit seed and use a counter-based generator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import sl2
from . import cocycle as cyc
from . import deform
from .errors import (
    DomainError,
    PipelineCollapseError,
    ValidationError,
)
from .potentials import ContinuumPotential, DiscreteFamily
from .util import parallel_map

__all__ = [
    "Lemma22Report",
    "RandomModelSpec",
    "run_lemma22",
    "run_asd12",
    "wj_model",
    "wj_tail_check",
    "carleson_parseval",
    "random_polar_matrices",
    "carleson_b1",
    "crooked_metric",
    "good_nice_metrics",
    "growth_minimax",
]

_I2 = np.eye(2)
# elliptic placeholder for excluded rows, keeps batch operations tame
_SAFE_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


# ---------------------------------------------------------------------------
# small shared helpers
# ---------------------------------------------------------------------------


def _finite_or_none(values):
    """JSON cells for a per-energy column: None marks undefined entries."""
    return [float(x) if math.isfinite(x) else None for x in np.asarray(values)]


def _dist_to_int(x):
    """Distance from x to the nearest integer, elementwise."""
    x = np.asarray(x, dtype=float)
    return np.abs(x - np.round(x))


def _orbit_max_gap(theta, count):
    """Largest circular gap left by the orbit {k theta mod 1 : k < count}.

    theta is a 1-d array of angles in turns; returns one gap per row.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    k = np.arange(count, dtype=float)
    orbit = np.mod(theta[:, None] * k[None, :], 1.0)
    orbit.sort(axis=1)
    inner = np.diff(orbit, axis=1).max(axis=1) if count > 1 else np.ones(len(theta))
    wrap = 1.0 - orbit[:, -1] + orbit[:, 0]
    return np.maximum(inner, wrap)


def _batch_eye(count):
    out = np.empty((count, 2, 2))
    out[:] = _I2
    return out


def _dist_to_base(u):
    """Hyperbolic distance from each upper-half-plane point to i."""
    return sl2.hyp_dist2(u, np.full(np.shape(u), 1j))


# ---------------------------------------------------------------------------
# padding cascade over an energy grid
# ---------------------------------------------------------------------------


@dataclass
class Lemma22Report:
    """Outcome of a padding cascade run over a fixed energy grid.

    Fractions are always relative to the initially elliptic grid energies;
    ``averages`` carries the final per-energy time-averaged distance to the
    base point (NaN where the energy was excluded along the way).
    """

    delta: float
    xi: float
    C0: float
    M: float
    P: int
    kappa: float
    grid: int
    measure_band: float
    c_step0: float
    cprime_fit: float
    retained_fraction: float
    sup_ge_C0_fraction: float
    max_average_gain: float
    steps: list = field(default_factory=list)
    averages: np.ndarray | None = None
    base_averages: np.ndarray | None = None
    energies: np.ndarray | None = None
    retained: np.ndarray | None = None

    def validate(self):
        for name in ("retained_fraction", "sup_ge_C0_fraction"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValidationError(f"{name} outside [0,1]: {val}")
        for rec in self.steps:
            if not 0.0 <= rec["excluded_fraction"] <= 1.0:
                raise ValidationError("step excluded_fraction outside [0,1]")
        if self.averages is not None and self.retained is not None:
            kept = self.averages[self.retained]
            if kept.size and not np.all(np.isfinite(kept)):
                raise ValidationError("averages not finite on retained set")
        return self

    def to_json(self):
        return {
            "kind": "padding-cascade-report",
            "delta": self.delta,
            "xi": self.xi,
            "C0": self.C0,
            "M": self.M,
            "P": self.P,
            "kappa": self.kappa,
            "grid": self.grid,
            "measure_band": self.measure_band,
            "c_step0": self.c_step0,
            "cprime_fit": self.cprime_fit,
            "retained_fraction": self.retained_fraction,
            "sup_ge_C0_fraction": self.sup_ge_C0_fraction,
            "max_average_gain": self.max_average_gain,
            "steps": self.steps,
            "averages": _finite_or_none(self.averages),
            "base_averages": _finite_or_none(self.base_averages),
            "energies": [float(x) for x in np.asarray(self.energies)],
            "retained": [bool(x) for x in np.asarray(self.retained)],
        }


def _choose_block_count(theta, start, cap, fill=0.01, quota=0.99):
    """Smallest power-of-two multiple of `start` whose rotation orbits are
    `fill`-dense for at least a `quota` fraction of the rows."""
    count = start
    while True:
        gaps = _orbit_max_gap(theta, count)
        if np.mean(gaps < fill) >= quota or count >= cap:
            return count
        count *= 2


def _pad_lengths(delta, big_n, n):
    j = np.arange(2 * n, dtype=float)
    return delta * np.sin(np.pi * j / (2.0 * n)) ** (2 * big_n)


def _padding_step(E, A, u, delta, big_n, n, kappa, keep_stride=0):
    """One padding step on raw monodromies, streaming in block index.

    Returns (A_next, u_next, alive, epsilon, kept) where alive flags the
    rows that stayed elliptic factor by factor with fixed-point drift
    below kappa, epsilon is the block-boundary excursion proxy
    2 sinh(max_m d(B_m u', u) / 2), and kept maps a strided subset of
    block indices to the partial products B_m (for time averaging).
    """
    count = A.shape[0]
    pads = _pad_lengths(delta, big_n, n)
    apow = sl2.power2(A, big_n)
    alive = np.ones(count, dtype=bool)

    def factor(m):
        if pads[m] != 0.0:
            gap = cyc.free_block(E, pads[m]).reshape(count, 2, 2)
            return sl2.mul2(gap, apow)
        return apow

    acc = _batch_eye(count)
    with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
        for m in range(2 * n):
            fac = factor(m)
            alive &= np.abs(sl2.tr2(fac)) < 2.0
            acc = sl2.renorm2(sl2.mul2(fac, acc))
        a_next = acc
        alive &= np.abs(sl2.tr2(a_next)) < 2.0 - 1e-9
        u_next = sl2.fixed_points2(a_next)
        drift = sl2.hyp_dist2(np.where(alive, u_next, 1j), np.where(alive, u, 1j))
        alive &= np.isfinite(drift) & (drift < kappa)
        u_next = np.where(alive, u_next, np.nan * (1 + 1j))
        safe_u = np.where(alive, u_next, 1j)
        base_u = np.where(alive, u, 1j)
        dmax = np.zeros(count)
        kept = {}
        acc = _batch_eye(count)
        for m in range(2 * n):
            if keep_stride and m % keep_stride == 0:
                kept[m] = acc
            um = sl2.moebius2(acc, safe_u)
            dmax = np.maximum(dmax, sl2.hyp_dist2(um, base_u))
            acc = sl2.renorm2(sl2.mul2(factor(m), acc))
    epsilon = np.where(alive, 2.0 * np.sinh(dmax / 2.0), 0.0)
    return a_next, u_next, alive, epsilon, kept


def _choose_pad_count(E, A, u, delta, big_n, kappa, cap):
    """Double the pad count until the subsample fraction of energies whose
    fixed-point drift reaches kappa falls below delta / 2 (or the cap)."""
    n = 8
    while True:
        _, u_next, alive, _, _ = _padding_step(E, A, u, delta, big_n, n, np.inf)
        drift = sl2.hyp_dist2(np.where(alive, u_next, 1j), np.where(alive, u, 1j))
        bad = float(np.mean(alive & (drift >= kappa)))
        if bad <= delta / 2.0 or n >= cap:
            return n
        n *= 2


def _stratified_average(A_prev, big_n, kept, u_next, prefix_frac, alive):
    """Time-averaged distance to i sampled over (block, power, fraction)."""
    count = A_prev.shape[0]
    k_samples = sorted(set(int(round(x)) for x in np.linspace(0, big_n - 1, 4)))
    total = np.zeros(count)
    taken = 0
    safe_u = np.where(alive, u_next, 1j)
    with np.errstate(invalid="ignore", divide="ignore"):
        for k in k_samples:
            apk = sl2.power2(A_prev, k)
            for block in kept.values():
                mid = sl2.mul2(apk, block)
                for f in range(prefix_frac.shape[1]):
                    pre = sl2.mul2(prefix_frac[:, f], mid)
                    total += _dist_to_base(sl2.moebius2(pre, safe_u))
                    taken += 1
    return total / taken


def run_lemma22(
    pot: ContinuumPotential,
    M: float = 6.0,
    xi: float = 0.2,
    C0: float = 4.0,
    delta: float = 0.05,
    energy_grid: int = 2000,
    *,
    P: int | None = None,
    kappa: float = 1e-3,
    n_start: int = 256,
    n_cap: int = 4096,
    pad_cap: int = 4096,
    gamma_levels=(0.1, 0.2, 0.25, 0.4),
    frac_samples: int = 8,
    avg_blocks: int = 64,
    jobs: int = 1,
) -> Lemma22Report:
    """Iterated padding cascade on raw monodromies over an energy grid.

    Each step raises the base monodromy to a block power, interleaves free
    gap propagators of slowly modulated lengths, and tracks per energy:
    ellipticity of every factor, fixed-point drift below kappa, excursion
    proxies at block boundaries, and a stratified time-average of the
    distance to the base point.  Stops after P steps (default floor(xi /
    delta)).  Raises a pipeline-collapse error if a step excludes every
    remaining energy.
    """
    if delta < 0:
        raise DomainError("pad scale must be nonnegative")
    if delta > 0 and P is None:
        P = int(math.floor(xi / delta))
    elif P is None:
        P = 4
    system = cyc.ContinuumCocycle(pot)
    period0 = system.period
    energies = M * (np.arange(energy_grid) + 0.5) / energy_grid

    def _mono(chunk):
        return system.monodromy(np.asarray(chunk))

    chunks = np.array_split(energies, max(1, energy_grid // 256))
    A = np.concatenate(parallel_map(_mono, list(chunks), jobs=jobs), axis=0)
    elliptic = np.abs(sl2.tr2(A)) < 2.0 - 1e-9
    if not np.any(elliptic):
        raise PipelineCollapseError(0, "no elliptic energies on the grid")
    A = np.where(elliptic[:, None, None], A, _SAFE_ROT)
    u = np.where(elliptic, sl2.fixed_points2(A), 1j)

    frac = (np.arange(frac_samples) + 0.5) / frac_samples

    def _prefixes(chunk_idx):
        sub = energies[chunk_idx]
        return system.prefix_grid(sub, frac * period0)

    idx_chunks = np.array_split(np.arange(energy_grid), max(1, energy_grid // 256))
    prefix_frac = np.concatenate(
        parallel_map(_prefixes, list(idx_chunks), jobs=jobs), axis=0
    )

    base_avg = np.zeros(energy_grid)
    for f in range(frac_samples):
        base_avg += _dist_to_base(sl2.moebius2(prefix_frac[:, f], u))
    base_avg /= frac_samples
    base_avg = np.where(elliptic, base_avg, np.nan)
    c_step0 = float(np.nanmax(base_avg))

    alive = elliptic.copy()
    initial = int(alive.sum())
    avg = base_avg.copy()
    growth_log = np.zeros(energy_grid)
    steps = []
    f_first = None

    for step in range(1, P + 1):
        theta = sl2.rotation_angles2(A)
        big_n = _choose_block_count(theta[alive], n_start, n_cap)
        if delta > 0:
            dense = np.zeros(energy_grid, dtype=bool)
            dense[alive] = _orbit_max_gap(theta[alive], big_n) < 0.01
        else:
            dense = alive.copy()
        sub = slice(None, None, 8)
        n = _choose_pad_count(
            energies[alive][sub], A[alive][sub], u[alive][sub],
            delta, big_n, kappa, pad_cap,
        ) if delta > 0 else 2
        stride = max(1, (2 * n) // avg_blocks)
        a_next, u_next, ok, epsilon, kept = _padding_step(
            energies, A, u, delta, big_n, n, kappa, keep_stride=stride
        )
        ok &= alive & dense
        excluded = int(alive.sum()) - int(ok.sum())
        gamma = _dist_to_int(2.0 * big_n * theta)
        window = ok & (gamma > 2.0 * delta) & (gamma < 0.25)
        scaled = (
            epsilon[window] * np.sin(np.pi * gamma[window]) / delta
            if delta > 0
            else np.array([])
        )
        kbar = float(np.median(scaled)) if scaled.size else float("nan")
        events = {}
        for level in gamma_levels:
            if delta > 0 and np.isfinite(kbar) and kbar > 0:
                threshold = 6.0 * kbar * delta / (math.pi * level)
                frac_ev = float(np.mean(epsilon[ok] >= threshold)) if ok.any() else 0.0
            else:
                frac_ev = 0.0
            events[f"{level:g}"] = {"fraction": frac_ev, "predicted": level / 3.0}
        avg_next = _stratified_average(A, big_n, kept, u_next, prefix_frac, ok)
        avg = np.where(ok, avg_next, np.nan)
        growth_log = np.where(ok, growth_log + np.arcsinh(epsilon / 2.0), growth_log)
        steps.append(
            {
                "step": step,
                "N": int(big_n),
                "n": int(n),
                "excluded_count": excluded,
                "excluded_fraction": excluded / initial,
                "kbar": kbar,
                "growth_events": events,
                "median_drift": float(
                    np.median(sl2.hyp_dist2(u_next[ok], u[ok]))
                ) if ok.any() else float("nan"),
                "max_average": float(np.nanmax(avg)) if ok.any() else float("nan"),
            }
        )
        if f_first is None:
            f_first = excluded / initial
        if not ok.any():
            raise PipelineCollapseError(step, "all energies excluded")
        A = np.where(ok[:, None, None], a_next, _SAFE_ROT)
        u = np.where(ok, u_next, 1j)
        alive = ok

    cprime_fit = f_first / (2.0 * delta) if delta > 0 else 0.0
    sup_frac = float(np.mean(np.exp(growth_log[alive]) >= C0)) if alive.any() else 0.0
    gain = np.nanmax(avg - base_avg) if alive.any() else float("nan")
    report = Lemma22Report(
        delta=delta,
        xi=xi,
        C0=C0,
        M=M,
        P=P,
        kappa=kappa,
        grid=energy_grid,
        measure_band=2.0 / energy_grid,
        c_step0=c_step0,
        cprime_fit=cprime_fit,
        retained_fraction=float(alive.sum()) / initial,
        sup_ge_C0_fraction=sup_frac,
        max_average_gain=float(gain),
        steps=steps,
        averages=avg,
        base_averages=base_avg,
        energies=energies,
        retained=alive,
    )
    return report.validate()


# ---------------------------------------------------------------------------
# twist / repeat / slide composite for discrete families
# ---------------------------------------------------------------------------


def _family_prefix_norms(family, t, energies, block_len):
    """Transfer norms, block-factor norms, and monodromy for one slice.

    Returns (norms, block_norms, mono); norms has shape (sites, E),
    block_norms (sites / block_len, E) for the product decomposition into
    consecutive stretches of block_len sites.
    """
    pot = family.slice(float(t))
    sys_t = cyc.DiscreteCocycle(pot)
    sites = np.arange(0, sys_t.sites + 1)
    with np.errstate(all="ignore"):
        pref = sys_t.prefix_grid(np.asarray(energies, dtype=float), sites)
        norms = sl2.norms2(pref[:, 1:])
        cuts = np.arange(0, sys_t.sites + 1, block_len)
        bnorms = []
        for j in range(len(cuts) - 1):
            blk = sl2.mul2(pref[:, cuts[j + 1]], sl2.inv2(pref[:, cuts[j]]))
            bnorms.append(sl2.norms2(blk))
    return norms.T, np.stack(bnorms), pref[:, -1]


def run_asd12(
    family: DiscreteFamily,
    e_lo: float,
    e_hi: float,
    *,
    delta: float = 0.05,
    twist_pre: int = 3,
    reps: int = 6,
    slide_n: int = 4,
    twist_post: int = 3,
    energy_grid: int = 200,
    t_points: int = 24,
    C0: float = 4.0,
    u0_family: DiscreteFamily | None = None,
    jobs: int = 1,
) -> dict:
    """Twist, repeat, slide, twist composite with growth bookkeeping.

    Builds the four-stage deformation of the input family, then over an
    energy grid and a parameter grid tracks: sampled C^1 closeness of the
    slice fixed points to the comparison family's, inf-over-t of the
    sup-over-sites transfer norms, the parameter-averaged distance to the
    base point, and a product-decomposition certificate counting (t, j)
    pairs whose decomposition-factor norm (consecutive stretches one
    pre-final-twist period long) falls below exp((C0 - 2 C_meas) / 4) / 2,
    with C_meas the mean log of the largest factor norm per slice.
    """
    if delta < 0:
        raise DomainError("slide size must be nonnegative")
    base = u0_family if u0_family is not None else family
    fam1 = deform.twist_family(family, twist_pre)
    fam2 = deform.repeat_family(fam1, reps)
    fam3 = deform.slide_family(fam2, delta, slide_n)
    fam4 = deform.twist_family(fam3, twist_post)

    energies = e_lo + (e_hi - e_lo) * (np.arange(energy_grid) + 0.5) / energy_grid
    t_lo, t_hi = -1.0, 2.0
    ts = t_lo + (t_hi - t_lo) * np.arange(t_points) / t_points

    block_len = fam3.n1

    def _slice_stats(t):
        norms, bnorms, mono = _family_prefix_norms(fam4, t, energies, block_len)
        with np.errstate(all="ignore"):
            tr = sl2.tr2(mono)
            ell = np.isfinite(tr) & (np.abs(tr) < 2.0 - 1e-9)
            pot0 = base.slice(float(t))
            mono0 = cyc.DiscreteCocycle(pot0).monodromy(energies)
            ell0 = np.abs(sl2.tr2(mono0)) < 2.0 - 1e-9
            u_t = sl2.fixed_points2(np.where(ell[:, None, None], mono, _SAFE_ROT))
            u_0 = sl2.fixed_points2(np.where(ell0[:, None, None], mono0, _SAFE_ROT))
            u_t = np.where(ell, u_t, np.nan * (1 + 1j))
            u_0 = np.where(ell0, u_0, np.nan * (1 + 1j))
        return norms, bnorms, u_t, u_0, ell & ell0

    stats = parallel_map(_slice_stats, list(ts), jobs=jobs)
    sup_log = np.stack([np.log(np.max(s[0], axis=0)) for s in stats])
    u_grid = np.stack([s[2] for s in stats])
    u0_grid = np.stack([s[3] for s in stats])
    ell_grid = np.stack([s[4] for s in stats])

    retained = np.all(ell_grid, axis=0)
    theta0 = np.full(energy_grid, np.nan)
    mono_pre = cyc.DiscreteCocycle(fam2.slice(0.0)).monodromy(energies)
    pre_ell = np.abs(sl2.tr2(mono_pre)) < 2.0 - 1e-9
    theta0[pre_ell] = sl2.rotation_angles2(mono_pre[pre_ell])
    resonance = _dist_to_int(3.0 * theta0) < delta
    retained &= ~resonance & pre_ell
    if not retained.any():
        raise PipelineCollapseError(1, "no retained energies in the window")

    dt = ts[1] - ts[0]
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gap_t = sl2.hyp_dist2(u_grid, u0_grid)
        c0_close = np.nanmax(np.where(ell_grid, gap_t, np.nan), axis=0)
        vel = np.abs(np.diff(u_grid, axis=0) - np.diff(u0_grid, axis=0)) / dt
        c1_close = c0_close + np.nanmax(
            np.where(ell_grid[:-1] & ell_grid[1:], vel, np.nan), axis=0
        )
        avg_dist = np.nanmean(
            np.where(ell_grid, _dist_to_base(np.where(ell_grid, u_grid, 1j)), np.nan),
            axis=0,
        )

    inf_sup = np.min(sup_log, axis=0)
    block_sup = np.stack([np.log(np.max(s[1], axis=0)) for s in stats])
    c_meas = float(np.mean(block_sup[:, retained]))
    tau = math.exp((C0 - 2.0 * c_meas) / 4.0) / 2.0
    bad = 0
    total = 0
    for s in stats:
        blocks_kept = s[1][:, retained]
        bad += int(np.sum(blocks_kept < tau))
        total += blocks_kept.size
    report = {
        "kind": "composite-deformation-report",
        "delta": delta,
        "twist_pre": twist_pre,
        "reps": reps,
        "slide_n": slide_n,
        "twist_post": twist_post,
        "C0": C0,
        "energy_window": [float(e_lo), float(e_hi)],
        "grid": energy_grid,
        "t_points": t_points,
        "measure_band": 2.0 / energy_grid,
        "sites": int(fam4.n1),
        "block_len": int(block_len),
        "excluded_fraction": float(np.mean(~retained)),
        "resonant_fraction": float(np.mean(resonance)),
        "predicted_resonant": 2.0 * delta,
        "c1_closeness": float(np.nanmax(c1_close[retained])),
        "inf_sup_log_norm": _finite_or_none(inf_sup),
        "min_inf_sup": float(np.min(inf_sup[retained])),
        "avg_dist_max": float(np.nanmax(avg_dist[retained])),
        "c_meas": c_meas,
        "tau": tau,
        "bad_fraction": bad / total if total else 0.0,
        "certificate_bound": C0 ** -0.5,
        "retained": [bool(x) for x in retained],
        "energies": [float(x) for x in energies],
    }
    return report


# ---------------------------------------------------------------------------
# random surrogate for accumulated growth sums
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomModelSpec:
    """Parameters of the heavy-tailed surrogate for per-step growth.

    Each step draws W with tail law p(W >= l / R) = delta R / (3 l Cprime)
    clipped to [0, 1] over the admissible range l / R in
    [4 delta / Cprime, 1 / Cprime^2]; below the range the draw is 0, above
    it the tail is saturated at the right endpoint.
    """

    delta: float
    R: float
    cprime: float
    P: int
    trials: int
    seed: int

    def __post_init__(self):
        if self.delta <= 0 or self.R <= 0 or self.cprime <= 0:
            raise ValidationError("delta, R, cprime must be positive")
        if 4.0 * self.delta * self.cprime >= 1.0:
            raise ValidationError(
                "admissible range empty: need 4 delta cprime < 1"
            )
        if self.P < 0 or self.trials < 1:
            raise ValidationError("P must be >= 0 and trials >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")

    @property
    def w_min(self):
        return 4.0 * self.delta / self.cprime

    @property
    def w_max(self):
        return self.cprime ** -2.0

    def tail_probability(self, w):
        """p(W >= w) for w >= 0, with the clipping built in."""
        w = np.asarray(w, dtype=float)
        head = self.delta / (3.0 * self.cprime * self.w_min)
        with np.errstate(divide="ignore"):
            raw = self.delta / (3.0 * self.cprime * np.maximum(w, 1e-300))
        out = np.where(w <= self.w_min, head, raw)
        out = np.where(w > self.w_max, 0.0, out)
        return np.clip(out, 0.0, 1.0)

    def draw_sums(self):
        """Simulate the trials x P table of W draws; returns the row sums."""
        rng = np.random.Generator(np.random.Philox(self.seed))
        shape = (self.trials, self.P)
        uni = rng.random(shape)
        head = self.tail_probability(self.w_min)
        atom = self.tail_probability(self.w_max)
        with np.errstate(divide="ignore"):
            inv = self.delta / (3.0 * self.cprime * np.maximum(uni, 1e-300))
        w = np.where(uni < head, inv, 0.0)
        w = np.where(uni <= atom, self.w_max, w)
        return w.sum(axis=1), w


def wj_model(spec: RandomModelSpec, C0: float = 2.0, bins: int = 40) -> dict:
    """Monte Carlo statistics of the accumulated surrogate growth sums."""
    sums, _ = spec.draw_sums()
    hi = spec.P * spec.w_max if spec.P else 1.0
    counts, edges = np.histogram(sums, bins=bins, range=(0.0, hi))
    return {
        "kind": "growth-sum-model-report",
        "delta": spec.delta,
        "R": spec.R,
        "cprime": spec.cprime,
        "P": spec.P,
        "trials": spec.trials,
        "seed": spec.seed,
        "C0": C0,
        "mean_sum": float(np.mean(sums)),
        "p_below_C0": float(np.mean(sums < C0)),
        "histogram": {
            "edges": [float(x) for x in edges],
            "counts": [int(c) for c in counts],
        },
    }


def wj_tail_check(spec: RandomModelSpec, lengths) -> dict:
    """Empirical tail frequencies against the model law with 3-sigma bands."""
    _, w = spec.draw_sums()
    flat = w.reshape(-1)
    rows = []
    for l in lengths:
        wv = float(l) / spec.R
        p_model = float(spec.tail_probability(wv))
        p_emp = float(np.mean(flat >= wv))
        sigma = math.sqrt(max(p_model * (1 - p_model), 1e-12) / flat.size)
        rows.append(
            {
                "l": float(l),
                "w": wv,
                "model": p_model,
                "empirical": p_emp,
                "sigma": sigma,
                "within_3sigma": bool(abs(p_emp - p_model) <= 3.0 * sigma),
            }
        )
    return {"kind": "tail-check-report", "seed": spec.seed, "rows": rows}


# ---------------------------------------------------------------------------
# rotation-sandwich norm identities
# ---------------------------------------------------------------------------


def _norm_functional2(mats):
    """ln((s + 1/s) / 2) with s the operator norm, batched."""
    s = sl2.norms2(mats)
    return np.log((s + 1.0 / s) / 2.0)


def carleson_parseval(mats, grid: int = 2**14) -> dict:
    """Quadrature check of the rotation-averaged norm-functional identity.

    lhs integrates N(A_n R_theta ... A_1 R_theta) over a full turn of
    theta with the periodic rectangle rule; rhs sums N(A_j).
    """
    mats = [np.asarray(a, dtype=float) for a in mats]
    for a in mats:
        if a.shape != (2, 2) or abs(float(np.linalg.det(a)) - 1.0) > 1e-9:
            raise ValidationError("factors must be unimodular 2x2 matrices")
    theta = np.arange(grid, dtype=float) / grid
    rots = sl2.rotation2(theta)
    prod = np.broadcast_to(_I2, (grid, 2, 2))
    for a in mats:
        prod = sl2.mul2(np.broadcast_to(a, (grid, 2, 2)), sl2.mul2(rots, prod))
    lhs = float(np.mean(_norm_functional2(prod)))
    rhs = float(sum(_norm_functional2(a.reshape(1, 2, 2))[0] for a in mats))
    return {
        "kind": "norm-average-report",
        "n": len(mats),
        "grid": grid,
        "lhs": lhs,
        "rhs": rhs,
        "gap": abs(lhs - rhs),
    }


def random_polar_matrices(count: int, lam_max: float, seed: int):
    """Random unimodular factors R_a diag(e^l, e^-l) R_b with l <= lam_max."""
    rng = np.random.Generator(np.random.Philox(seed))
    a = rng.random(count)
    b = rng.random(count)
    lam = lam_max * rng.random(count)
    diag = np.zeros((count, 2, 2))
    diag[:, 0, 0] = np.exp(lam)
    diag[:, 1, 1] = np.exp(-lam)
    out = sl2.mul2(sl2.rotation2(a), sl2.mul2(diag, sl2.rotation2(b)))
    return [out[i] for i in range(count)]


def _rot_mat(turns: float) -> np.ndarray:
    """Plain 2x2 rotation array by ``turns`` turns."""
    ang = 2.0 * math.pi * turns
    c, s = math.cos(ang), math.sin(ang)
    return np.array([[c, -s], [s, c]])


def _sandwich_product(lambdas, betas, theta, s):
    """Product of diag(e^{s l_j}, e^{-s l_j}) R_{beta_j} R_theta factors."""
    out = _I2.copy()
    for lam, beta in zip(lambdas, betas):
        d = np.diag([math.exp(s * lam), math.exp(-s * lam)])
        out = d @ _rot_mat(beta + theta) @ out
    return out


def carleson_b1(lambdas, betas, theta: float, s: float = 1e-3,
                *, n: int | None = None) -> dict:
    """Zeroth and first stretch-order of a rotation-sandwich product.

    The product multiplies diag(e^{s lam_j}, e^{-s lam_j}) R_{beta_j + theta}
    left to right in j; b0 is its value at s = 0 (a pure rotation by
    alpha_n + n theta) and b1 the exact first derivative in s, assembled as
    a sum of suffix * diag(1,-1) * prefix chains.  secant_error certifies
    the expansion: || A(s) - b0 - s b1 || / s^2 at the given s.
    """
    lambdas = [float(x) for x in lambdas]
    betas = [float(x) for x in betas]
    if len(lambdas) != len(betas):
        raise ValidationError("lambda and beta lists must be equally long")
    if n is not None and n != len(lambdas):
        raise ValidationError("factor count does not match the parameter lists")
    if any(l < 0 for l in lambdas):
        raise ValidationError("stretch rates must be nonnegative")
    count = len(lambdas)
    alpha_n = sum(betas)
    b0 = _rot_mat(alpha_n + count * theta)
    lam_flip = np.diag([1.0, -1.0])
    prefix = _I2.copy()
    b1 = np.zeros((2, 2))
    prefixes = []
    for j in range(count):
        prefixes.append(prefix.copy())
        prefix = _rot_mat(betas[j] + theta) @ prefix
    suffix = _I2.copy()
    for j in range(count - 1, -1, -1):
        rot_j = _rot_mat(betas[j] + theta)
        b1 = b1 + lambdas[j] * (suffix @ lam_flip @ rot_j @ prefixes[j])
        suffix = suffix @ rot_j
    a_s = _sandwich_product(lambdas, betas, theta, s)
    secant = float(np.linalg.norm(a_s - b0 - s * b1) / (s * s))
    return {
        "kind": "stretch-expansion-report",
        "n": count,
        "theta": theta,
        "alpha_n": alpha_n,
        "b0": b0.tolist(),
        "b1": b1.tolist(),
        "s": s,
        "secant_error": secant,
    }


# ---------------------------------------------------------------------------
# threshold metrics for growth and spectral quality
# ---------------------------------------------------------------------------


def _band_energy_grid(bands, m_cap, per_band):
    """Grid energies and weights covering the bands clipped at m_cap."""
    energies = []
    weights = []
    for band in bands.bands:
        lo, hi = band.lo, min(band.hi, m_cap)
        if hi <= lo:
            continue
        width = hi - lo
        pts = lo + width * (np.arange(per_band) + 0.5) / per_band
        energies.append(pts)
        weights.append(np.full(per_band, width / per_band))
    if not energies:
        return np.array([]), np.array([])
    return np.concatenate(energies), np.concatenate(weights)


def crooked_metric(
    pot: ContinuumPotential,
    eps1: float,
    C1: float,
    M: float,
    *,
    per_band: int = 48,
    t_samples: int = 256,
    basepoints: int = 32,
    jobs: int = 1,
) -> dict:
    """Measure of the spectrum below M where growth clears C1 robustly.

    An energy passes when the growth functional from more than a 1 - eps1
    fraction of sampled basepoints exceeds C1, i.e. the distance curve at
    the basepoint sits below its sup minus 2 ln C1.  Returns the passing
    measure (a union of grid cells) and the deficit.
    """
    system = cyc.ContinuumCocycle(pot)
    lo, hi_scan = system.scan_range(M)
    bands = cyc.band_spectrum(system, lo, M)
    energies, weights = _band_energy_grid(bands, M, per_band)
    if energies.size == 0:
        return {
            "kind": "robust-growth-report",
            "eps1": eps1,
            "C1": C1,
            "M": M,
            "total_measure": 0.0,
            "passing_measure": 0.0,
            "deficit": 0.0,
            "passing_fraction": 1.0,
        }
    t_grid = system.period * (np.arange(t_samples) + 0.5) / t_samples
    stride = max(1, t_samples // basepoints)

    def _one(e):
        mono = system.monodromy(np.asarray([e]))
        if abs(float(sl2.tr2(mono)[0])) >= 2.0 - 1e-9:
            return False
        u0 = sl2.fixed_points2(mono)[0]
        pref = system.prefix_grid(np.asarray([e]), t_grid)[0]
        us = sl2.moebius2(pref, np.full(t_samples, u0))
        dists = _dist_to_base(us)
        sup_d = float(np.max(dists))
        base = dists[::stride]
        frac = float(np.mean(base <= sup_d - 2.0 * math.log(C1) + 1e-12))
        return frac > 1.0 - eps1

    passing = parallel_map(_one, [float(e) for e in energies], jobs=jobs)
    passing = np.asarray(passing, dtype=bool)
    total = float(np.sum(weights))
    gamma = float(np.sum(weights[passing]))
    return {
        "kind": "robust-growth-report",
        "eps1": eps1,
        "C1": C1,
        "M": M,
        "per_band": per_band,
        "t_samples": t_samples,
        "basepoints": basepoints,
        "total_measure": total,
        "passing_measure": gamma,
        "deficit": total - gamma,
        "passing_fraction": gamma / total,
        "crooked": bool(gamma / total > 1.0 - 1e-9),
    }


def _band_ids_integral(system, band, m_cap, nodes, t_samples=512):
    """Integral of the state density over one band, edge singularities
    absorbed by trig or square-root substitution."""
    lo, hi = band.lo, band.hi
    if m_cap >= hi:
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        uu = (np.arange(nodes) + 0.5) / nodes
        ee = mid - half * np.cos(np.pi * uu)
        jac = half * np.pi * np.sin(np.pi * uu) / nodes
    else:
        span = m_cap - lo
        if span <= 0:
            return 0.0
        uu = (np.arange(nodes) + 0.5) / nodes
        ee = lo + span * uu * uu
        jac = 2.0 * span * uu / nodes
    if system.kind == "continuum":
        # batched fixed-point density: same formula as the per-energy
        # routine, vectorized so fine quadrature stays desk scale
        with np.errstate(invalid="ignore", divide="ignore"):
            mono = system.monodromy(ee)
            u = sl2.fixed_points2(mono)
            grid = np.linspace(0.0, system.period, t_samples, endpoint=False)
            pref = system.prefix_grid(ee, grid)
            us = sl2.moebius2(pref, np.broadcast_to(u[:, None], pref.shape[:2]))
            dens = np.mean(1.0 / us.imag, axis=1) / (2.0 * np.pi)
    else:
        # clamp the rotation-angle difference step inside the band so
        # near-edge nodes never straddle a band edge
        dens = np.empty(nodes)
        for i, e in enumerate(ee):
            gap = min(e - lo, hi - e)
            step = min(1e-6, 0.25 * gap / max(1.0, abs(e)))
            dens[i] = cyc.density(system, float(e), fd_step=step)
    terms = dens * jac
    return float(np.sum(np.where(np.isfinite(terms), terms, 0.0)))


def good_nice_metrics(
    pot,
    eps: float,
    M: float,
    *,
    per_band: int = 32,
    quad_nodes: int = 2048,
) -> dict:
    """Exponent-flatness and density-consistency metrics below a cap.

    sup_L is the largest Lyapunov exponent over band grid energies capped
    at M; ids_deficit compares the integrated density of states at M with
    the bandwise integral of the density, using substitutions that absorb
    the inverse square-root band-edge divergence.
    """
    if isinstance(pot, ContinuumPotential):
        system = cyc.ContinuumCocycle(pot)
        lo, _ = system.scan_range(M)
        bands = cyc.band_spectrum(system, lo, M)
    else:
        sliced = pot.slice(0.0) if isinstance(pot, DiscreteFamily) else pot
        system = cyc.DiscreteCocycle(sliced)
        bands = cyc.discrete_band_spectrum(system)
    energies, _ = _band_energy_grid(bands, M, per_band)
    if energies.size:
        lyap = cyc.lyapunov(system, energies)
        sup_l = float(np.max(lyap))
    else:
        sup_l = 0.0
    # evaluate just below the cap so a scan-clipped top band reads its
    # interior rotation value rather than the full-band edge value
    m_eval = M - 1e-9 * max(1.0, abs(M))
    ids_at_m = cyc.ids(system, m_eval, bands) if energies.size else 0.0
    integral = 0.0
    for band in bands.bands:
        if band.lo >= M:
            continue
        integral += _band_ids_integral(system, band, M, quad_nodes)
    deficit = abs(float(ids_at_m) - integral)
    return {
        "kind": "spectral-quality-report",
        "eps": eps,
        "M": M,
        "sup_L": sup_l,
        "ids_at_M": float(ids_at_m),
        "ids_integral": integral,
        "ids_deficit": deficit,
        "good": bool(sup_l <= eps),
        "nice": bool(deficit <= eps),
    }


# ---------------------------------------------------------------------------
# brute-force minimax oracle for the growth functional
# ---------------------------------------------------------------------------


def growth_minimax(
    system,
    E: float,
    *,
    directions: int = 720,
    horizon: int = 5000,
    t_samples: int = 64,
    psi_grid: int = 4096,
) -> dict:
    """Brute-force inf over directions of sup over times of transfer norms.

    Expands times as s + k T with s on a one-period grid and k below the
    horizon; monodromy powers enter through their exact rotation form, so
    the sup reduces to a lookup of max_s quadratic forms on a fine circle
    grid.  Compared against the closed-form growth functional.
    """
    e_arr = np.asarray([float(E)])
    mono = system.monodromy(e_arr)
    if abs(float(sl2.tr2(mono)[0])) >= 2.0 - 1e-9:
        raise DomainError("energy not elliptic; minimax growth undefined")
    u0 = sl2.fixed_points2(mono)[0]
    frame = sl2.frames2(np.asarray([u0]))[0]
    frame_inv = np.linalg.inv(frame)
    theta = float(sl2.rotation_angles2(mono)[0])
    if system.kind == "continuum":
        t_grid = system.period * np.arange(t_samples) / t_samples
        pref = system.prefix_grid(e_arr, t_grid)[0]
    else:
        pref = system.prefix_grid(e_arr, np.arange(system.sites))[0]
    lead = sl2.mul2(pref, np.broadcast_to(frame_inv, pref.shape))
    gram = np.einsum("sij,sik->sjk", lead, lead)
    psi = 2.0 * np.pi * np.arange(psi_grid) / psi_grid
    cs = np.stack([np.cos(psi), np.sin(psi)])
    quad = np.einsum("ip,sij,jp->sp", cs, gram, cs)
    h_max = np.sqrt(np.max(quad, axis=0))
    phases = np.mod(np.arange(horizon, dtype=float) * theta, 1.0)
    best = np.inf
    arg_best = 0.0
    for phi_w in (np.arange(directions) + 0.5) / directions * 0.5:
        w = np.array([math.cos(2.0 * math.pi * phi_w), math.sin(2.0 * math.pi * phi_w)])
        v = frame @ w
        scale = math.hypot(v[0], v[1])
        ang = math.atan2(v[1], v[0])
        idx = np.mod(
            np.round((ang + 2.0 * np.pi * phases) / (2.0 * np.pi) * psi_grid).astype(int),
            psi_grid,
        )
        sup_norm = scale * float(np.max(h_max[idx]))
        if sup_norm < best:
            best = sup_norm
            arg_best = phi_w
    rep = cyc.growth_value(system, float(E))
    rel = abs(best - rep.value) / rep.value
    return {
        "kind": "minimax-growth-report",
        "E": float(E),
        "directions": directions,
        "horizon": horizon,
        "oracle": float(best),
        "functional": float(rep.value),
        "rel_gap": float(rel),
        "arg_direction": float(arg_best),
    }
