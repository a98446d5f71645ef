"""Closed-form expression trees for potentials and parameter families.

Two small languages: scalar trees over one variable (potential profiles,
circle potentials) and family trees over a pair (t, j) (parameter
families of integer-indexed potentials).  Every node evaluates on numpy
arrays and serializes to a canonical JSON dict, so deformation
operators can stay symbolic instead of resampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ValidationError

# ---------------------------------------------------------------------------
# smooth bump machinery
# ---------------------------------------------------------------------------


def _cutoff(s):
    """exp(-1/s) for s > 0, extended by 0; the standard C-infinity cutoff."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0.0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_ramp(s):
    """Monotone C-infinity ramp: 0 for s <= 0, 1 for s >= 1."""
    f = _cutoff(np.asarray(s, dtype=float))
    g = _cutoff(1.0 - np.asarray(s, dtype=float))
    return f / (f + g)


@dataclass(frozen=True)
class BumpProfile:
    """Window profile used by the slide deformation.

    Vanishes off [-3/4, 7/4], equals 1 on [-1/4, 5/4], rises and falls
    through C-infinity ramps of width 1/2.
    """

    lo_start: float = -0.75
    lo_end: float = -0.25
    hi_start: float = 1.25
    hi_end: float = 1.75

    def __post_init__(self):
        if not (self.lo_start < self.lo_end <= self.hi_start < self.hi_end):
            raise ValidationError("bump profile knots must be increasing")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        up = smooth_ramp((x - self.lo_start) / (self.lo_end - self.lo_start))
        down = smooth_ramp((self.hi_end - x) / (self.hi_end - self.hi_start))
        return up * down

    def to_json(self):
        return {
            "kind": "bump_profile",
            "lo_start": self.lo_start,
            "lo_end": self.lo_end,
            "hi_start": self.hi_start,
            "hi_end": self.hi_end,
        }

    @staticmethod
    def from_json(d):
        return BumpProfile(d["lo_start"], d["lo_end"], d["hi_start"], d["hi_end"])


# ---------------------------------------------------------------------------
# scalar expression trees
# ---------------------------------------------------------------------------


class ScalarExpr:
    """Base class; subclasses are frozen dataclasses with __call__ and to_json."""

    def __call__(self, x):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Const(ScalarExpr):
    value: float

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)

    def to_json(self):
        return {"kind": "const", "value": self.value}


@dataclass(frozen=True)
class Cos(ScalarExpr):
    """cos(2 pi (freq x + phase))."""

    freq: float
    phase: float = 0.0

    def __call__(self, x):
        return np.cos(2.0 * np.pi * (self.freq * np.asarray(x, dtype=float) + self.phase))

    def to_json(self):
        return {"kind": "cos", "freq": self.freq, "phase": self.phase}


@dataclass(frozen=True)
class Bump(ScalarExpr):
    """exp(1 - 1/(1 - s^2)) with s = (x - center)/width, zero for |s| >= 1."""

    center: float
    width: float

    def __call__(self, x):
        s = (np.asarray(x, dtype=float) - self.center) / self.width
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        si = s[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - si * si))
        return out

    def to_json(self):
        return {"kind": "bump", "center": self.center, "width": self.width}


@dataclass(frozen=True)
class Sum(ScalarExpr):
    terms: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for t in self.terms:
            out = out + t(x)
        return out

    def to_json(self):
        return {"kind": "sum", "terms": [t.to_json() for t in self.terms]}


@dataclass(frozen=True)
class Scale(ScalarExpr):
    factor: float
    of: ScalarExpr

    def __call__(self, x):
        return self.factor * self.of(x)

    def to_json(self):
        return {"kind": "scale", "factor": self.factor, "of": self.of.to_json()}


@dataclass(frozen=True)
class Affine(ScalarExpr):
    """Reparameterization x -> of(a x + b)."""

    a: float
    b: float
    of: ScalarExpr

    def __call__(self, x):
        return self.of(self.a * np.asarray(x, dtype=float) + self.b)

    def to_json(self):
        return {"kind": "affine", "a": self.a, "b": self.b, "of": self.of.to_json()}


@dataclass(frozen=True)
class CrumbleExpr(ScalarExpr):
    """Two-speed traversal of a period-N profile, total period 3 n N.

    Runs through the parent n+1 times on [0, nN] and another 2n+1 times
    on [nN, 3nN], so the output is continuous and 3nN-periodic.
    """

    n: int
    parent_period: float
    of: ScalarExpr

    def __call__(self, x):
        n, N = self.n, self.parent_period
        x = np.mod(np.asarray(x, dtype=float), 3.0 * n * N)
        first = x <= n * N
        arg = np.where(first, (n + 1.0) * x / n, (2.0 * n + 1.0) * (x - n * N) / (2.0 * n))
        # honor the parent's circle identification even for non-periodic exprs
        return self.of(np.mod(arg, N))

    def to_json(self):
        return {
            "kind": "crumble",
            "n": self.n,
            "parent_period": self.parent_period,
            "of": self.of.to_json(),
        }


_SCALAR_KINDS = {}


def scalar_from_json(d) -> ScalarExpr:
    try:
        kind = d["kind"]
    except (TypeError, KeyError):
        raise ValidationError(f"scalar expression needs a 'kind' field: {d!r}")
    if kind == "const":
        return Const(float(d["value"]))
    if kind == "cos":
        return Cos(float(d["freq"]), float(d.get("phase", 0.0)))
    if kind == "bump":
        return Bump(float(d["center"]), float(d["width"]))
    if kind == "sum":
        return Sum(tuple(scalar_from_json(t) for t in d["terms"]))
    if kind == "scale":
        return Scale(float(d["factor"]), scalar_from_json(d["of"]))
    if kind == "affine":
        return Affine(float(d["a"]), float(d["b"]), scalar_from_json(d["of"]))
    if kind == "crumble":
        return CrumbleExpr(int(d["n"]), float(d["parent_period"]), scalar_from_json(d["of"]))
    raise ValidationError(f"unknown scalar expression kind {kind!r}")


# ---------------------------------------------------------------------------
# family expression trees over (t, j)
# ---------------------------------------------------------------------------


class FamilyExpr:
    def __call__(self, t, j):
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True)
class FConst(FamilyExpr):
    value: float

    def __call__(self, t, j):
        t, j = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(j))
        return np.full(t.shape, self.value)

    def to_json(self):
        return {"kind": "fconst", "value": self.value}


@dataclass(frozen=True)
class TCos(FamilyExpr):
    """amp cos(2 pi (harmonic t / period + phase)); constant in j."""

    amp: float
    period: float
    harmonic: int = 1
    phase: float = 0.0

    def __call__(self, t, j):
        t, j = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(j))
        return self.amp * np.cos(
            2.0 * np.pi * (self.harmonic * t / self.period + self.phase)
        )

    def to_json(self):
        return {
            "kind": "tcos",
            "amp": self.amp,
            "period": self.period,
            "harmonic": self.harmonic,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class JCos(FamilyExpr):
    """amp cos(2 pi (harmonic j / period + phase)); constant in t."""

    amp: float
    period: int
    harmonic: int = 1
    phase: float = 0.0

    def __call__(self, t, j):
        t, j = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(j))
        return self.amp * np.cos(
            2.0 * np.pi * (self.harmonic * np.asarray(j, dtype=float) / self.period + self.phase)
        )

    def to_json(self):
        return {
            "kind": "jcos",
            "amp": self.amp,
            "period": self.period,
            "harmonic": self.harmonic,
            "phase": self.phase,
        }


@dataclass(frozen=True)
class FSum(FamilyExpr):
    terms: tuple

    def __call__(self, t, j):
        t, j = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(j))
        out = np.zeros(t.shape)
        for term in self.terms:
            out = out + term(t, j)
        return out

    def to_json(self):
        return {"kind": "fsum", "terms": [t.to_json() for t in self.terms]}


@dataclass(frozen=True)
class FScale(FamilyExpr):
    factor: float
    of: FamilyExpr

    def __call__(self, t, j):
        return self.factor * self.of(t, j)

    def to_json(self):
        return {"kind": "fscale", "factor": self.factor, "of": self.of.to_json()}


@dataclass(frozen=True)
class RepeatExpr(FamilyExpr):
    """Same values, integer period multiplied by n at the family level."""

    n: int
    of: FamilyExpr

    def __call__(self, t, j):
        return self.of(t, j)

    def to_json(self):
        return {"kind": "repeat", "n": self.n, "of": self.of.to_json()}


@dataclass(frozen=True)
class TwistExpr(FamilyExpr):
    """Block k of the enlarged index reads the parent at t + n0 k / n.

    n0, n1 are the parent periods; the child integer period is n n1.
    """

    n: int
    n0: float
    n1: int
    of: FamilyExpr

    def __call__(self, t, j):
        t = np.asarray(t, dtype=float)
        j = np.asarray(j)
        t, j = np.broadcast_arrays(t, j)
        jm = np.mod(j, self.n * self.n1)
        k = jm // self.n1
        l = np.mod(jm, self.n1)
        return self.of(t + self.n0 * np.asarray(k, dtype=float) / self.n, l)

    def to_json(self):
        return {
            "kind": "twist",
            "n": self.n,
            "n0": self.n0,
            "n1": self.n1,
            "of": self.of.to_json(),
        }


@dataclass(frozen=True)
class SlideExpr(FamilyExpr):
    """Last third of a tripled index slides by delta inside a bump window.

    Parent periods (n0, n1); child periods (2 n n0, 3 n1).  The window
    sits at parameter time n n0 and has the shape of ``bump``.
    """

    delta: float
    n: int
    n0: float
    n1: int
    bump: BumpProfile
    of: FamilyExpr

    def __call__(self, t, j):
        t = np.asarray(t, dtype=float)
        j = np.asarray(j)
        t, j = np.broadcast_arrays(t, j)
        l = np.mod(j, 3 * self.n1)
        tm = np.mod(t, 2.0 * self.n * self.n0)
        shift = np.where(
            l >= 2 * self.n1, self.delta * self.bump(tm - self.n * self.n0), 0.0
        )
        return self.of(t + shift, np.mod(l, self.n1))

    def to_json(self):
        return {
            "kind": "slide",
            "delta": self.delta,
            "n": self.n,
            "n0": self.n0,
            "n1": self.n1,
            "bump": self.bump.to_json(),
            "of": self.of.to_json(),
        }


@dataclass(frozen=True)
class SamplingExpr(FamilyExpr):
    """Sampling change of variables: reads the parent at (t - j a, j)."""

    a_num: int
    a_den: int
    of: FamilyExpr

    @property
    def a(self) -> Fraction:
        return Fraction(self.a_num, self.a_den)

    def __call__(self, t, j):
        t = np.asarray(t, dtype=float)
        j = np.asarray(j)
        t, j = np.broadcast_arrays(t, j)
        a = self.a_num / self.a_den
        return self.of(t - np.asarray(j, dtype=float) * a, j)

    def to_json(self):
        return {
            "kind": "sampling",
            "a_num": self.a_num,
            "a_den": self.a_den,
            "of": self.of.to_json(),
        }


def family_from_json(d) -> FamilyExpr:
    try:
        kind = d["kind"]
    except (TypeError, KeyError):
        raise ValidationError(f"family expression needs a 'kind' field: {d!r}")
    if kind == "fconst":
        return FConst(float(d["value"]))
    if kind == "tcos":
        return TCos(float(d["amp"]), float(d["period"]), int(d.get("harmonic", 1)),
                    float(d.get("phase", 0.0)))
    if kind == "jcos":
        return JCos(float(d["amp"]), int(d["period"]), int(d.get("harmonic", 1)),
                    float(d.get("phase", 0.0)))
    if kind == "fsum":
        return FSum(tuple(family_from_json(t) for t in d["terms"]))
    if kind == "fscale":
        return FScale(float(d["factor"]), family_from_json(d["of"]))
    if kind == "repeat":
        return RepeatExpr(int(d["n"]), family_from_json(d["of"]))
    if kind == "twist":
        return TwistExpr(int(d["n"]), float(d["n0"]), int(d["n1"]), family_from_json(d["of"]))
    if kind == "slide":
        return SlideExpr(
            float(d["delta"]), int(d["n"]), float(d["n0"]), int(d["n1"]),
            BumpProfile.from_json(d["bump"]), family_from_json(d["of"]),
        )
    if kind == "sampling":
        return SamplingExpr(int(d["a_num"]), int(d["a_den"]), family_from_json(d["of"]))
    raise ValidationError(f"unknown family expression kind {kind!r}")
