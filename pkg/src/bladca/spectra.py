"""
Frequency grids, spectra and wave conversion.

Grids are index based: every bin is an integer ``k`` against a base frequency
``f0``, optionally shifted by a constant offset (zippered tickler grids).
Frequencies are therefore ``k * f0 + offset`` and two grids built from the same
fundamental never disagree through rounding.

Spectra are one-sided peak amplitudes: a real periodic signal is

    x(t) = X[0] + sum_k Re{ X[k] exp(j 2 pi f_k t) }

so a sine ``A sin(2 pi f t + phi)`` has the complex amplitude ``-1j * A * exp(1j * phi)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import DomainError, StructuralError

EXCITED = "excited"
DETECTION = "detection"
EVEN = "even"
ODD_NONEXCITED = "odd-nonexcited"
OUT_OF_BAND = "out-of-band"
TICKLER = "tickler"
LABELS = (EXCITED, DETECTION, EVEN, ODD_NONEXCITED, OUT_OF_BAND, TICKLER)

QUANTITY_KINDS = ("voltage", "current", "incident_wave", "reflected_wave", "abstract")

DEFAULT_Z0 = 50.0


def exact(x) -> Fraction:
    """Exact rational value of a frequency given as int, float, str or Fraction.

    Floats go through their shortest decimal repr, so ``0.1`` becomes ``1/10``;
    a float that is the nearest double to a fraction with denominator up to 10**6
    (``1/6``) maps to that fraction.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x)
    x = float(x)
    dec = Fraction(repr(x))
    near = Fraction(x).limit_denominator(10 ** 6)
    if near.denominator < dec.denominator and float(near) == x:
        return near
    return dec


def _frozen(a, dtype=None):
    arr = np.array(a, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Ordered set of bins ``k`` on the lattice ``k * f0 + offset``.

    Parameters
    ----------
    f0 : float
        Base frequency in Hz.
    bins : array_like of int
        Strictly increasing nonnegative bin indices.
    offset : float
        Zippering shift in Hz, ``|offset| < f0 / 2``.
    labels : sequence of str, optional
        One label per bin, defaults to ``"excited"``.
    warp_ts : float, optional
        When set, :attr:`frequencies` reports trapezoidal-warped frequencies for
        this time step.
    """

    f0: float
    bins: np.ndarray
    offset: float = 0.0
    labels: tuple = None
    warp_ts: float | None = None

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.int64).ravel()
        if self.f0 <= 0:
            raise DomainError(f"base frequency must be positive, got {self.f0}")
        if bins.size and bins.min() < 0:
            raise DomainError("bin indices must be nonnegative")
        if np.any(np.diff(bins) <= 0):
            raise StructuralError("bin indices must be strictly increasing")
        if not abs(self.offset) < self.f0 / 2:
            raise DomainError(f"|offset| = {abs(self.offset)} must be below f0/2 = {self.f0 / 2}")
        labels = self.labels
        if labels is None:
            labels = (EXCITED,) * bins.size
        labels = tuple(labels)
        if len(labels) != bins.size:
            raise StructuralError(f"{len(labels)} labels for {bins.size} bins")
        bad = set(labels) - set(LABELS)
        if bad:
            raise StructuralError(f"unknown bin labels {sorted(bad)}")
        object.__setattr__(self, "bins", _frozen(bins))
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return int(self.bins.size)

    def __eq__(self, other):
        if not isinstance(other, FrequencyGrid):
            return NotImplemented
        return (exact(self.f0) == exact(other.f0) and exact(self.offset) == exact(other.offset)
                and np.array_equal(self.bins, other.bins) and self.labels == other.labels
                and self.warp_ts == other.warp_ts)

    def __hash__(self):
        return hash((exact(self.f0), exact(self.offset), self.bins.tobytes(), self.labels, self.warp_ts))

    @property
    def nominal_frequencies(self) -> np.ndarray:
        """Unwarped bin frequencies in Hz."""
        return self.bins * self.f0 + self.offset

    @property
    def frequencies(self) -> np.ndarray:
        f = self.nominal_frequencies
        if self.warp_ts is None:
            return f
        return np.tan(np.pi * f * self.warp_ts) / (np.pi * self.warp_ts)

    def exact_frequencies(self) -> list[Fraction]:
        f0, off = exact(self.f0), exact(self.offset)
        return [int(k) * f0 + off for k in self.bins]

    def same_lattice(self, other: "FrequencyGrid") -> bool:
        return (np.array_equal(self.bins, other.bins) and exact(self.f0) == exact(other.f0)
                and exact(self.offset) == exact(other.offset))

    def select(self, label: str) -> np.ndarray:
        """Positions (not bin indices) of the bins carrying ``label``."""
        return np.array([i for i, lab in enumerate(self.labels) if lab == label], dtype=np.int64)

    def subset(self, positions) -> "FrequencyGrid":
        positions = np.asarray(positions, dtype=np.int64)
        return replace(self, bins=self.bins[positions], labels=tuple(self.labels[i] for i in positions))

    def relabel(self, labels) -> "FrequencyGrid":
        return replace(self, labels=tuple(labels))


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Complex amplitudes on a :class:`FrequencyGrid`."""

    grid: FrequencyGrid
    values: np.ndarray
    kind: str = "abstract"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex).ravel()
        if values.size != len(self.grid):
            raise StructuralError(f"{values.size} values for a grid of {len(self.grid)} bins")
        if self.kind not in QUANTITY_KINDS:
            raise StructuralError(f"unknown quantity kind {self.kind!r}")
        if len(self.grid) and self.grid.bins[0] == 0 and self.grid.offset == 0:
            if abs(values[0].imag) > 1e-12 * max(1.0, np.abs(values).max()):
                raise DomainError("the DC bin of a real signal must be real")
            values[0] = values[0].real
        object.__setattr__(self, "values", _frozen(values))

    def __len__(self):
        return len(self.grid)

    def power(self) -> np.ndarray:
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class WavePair:
    """Incident (``a``) and reflected (``b``) waves at a port."""

    a: Spectrum
    b: Spectrum
    z0: float = DEFAULT_Z0

    def __post_init__(self):
        if not self.a.grid.same_lattice(self.b.grid):
            raise StructuralError("incident and reflected waves must share one grid")
        _check_z0(self.z0)


def _check_z0(z0):
    if isinstance(z0, complex) or not np.isreal(z0) or not z0 > 0:
        raise DomainError(f"reference impedance must be real and positive, got {z0}")


def vi_to_waves(v: Spectrum, i: Spectrum, z0: float = DEFAULT_Z0) -> WavePair:
    """Convert port voltage and current (flowing into the port) to power waves.

    ``b = (V - Z0 I) / (2 sqrt(Z0))`` and ``a = (V + Z0 I) / (2 sqrt(Z0))``.
    """
    if not v.grid.same_lattice(i.grid):
        raise StructuralError("voltage and current spectra are on different grids")
    _check_z0(z0)
    z0 = float(z0)
    scale = 2.0 * math.sqrt(z0)
    a = (v.values + z0 * i.values) / scale
    b = (v.values - z0 * i.values) / scale
    return WavePair(Spectrum(v.grid, a, "incident_wave"), Spectrum(v.grid, b, "reflected_wave"), z0)


def waves_to_vi(w: WavePair) -> tuple[Spectrum, Spectrum]:
    """Inverse of :func:`vi_to_waves`."""
    root = math.sqrt(w.z0)
    v = root * (w.a.values + w.b.values)
    i = (w.a.values - w.b.values) / root
    return Spectrum(w.a.grid, v, "voltage"), Spectrum(w.a.grid, i, "current")


def warp_frequencies(f, ts: float) -> np.ndarray:
    """Frequencies seen by a trapezoidal (bilinear) discretisation with step ``ts``."""
    f = np.asarray(f, dtype=float)
    if not ts > 0:
        raise DomainError(f"time step must be positive, got {ts}")
    if np.any(np.abs(f) * ts >= 0.5):
        raise DomainError("frequency at or above the Nyquist frequency of the time step")
    return np.tan(np.pi * f * ts) / (np.pi * ts)


def warp_grid(grid: FrequencyGrid, ts: float) -> FrequencyGrid:
    """Return ``grid`` annotated so that its frequencies are warped for step ``ts``."""
    warp_frequencies(grid.nominal_frequencies, ts)
    return replace(grid, warp_ts=float(ts))


def frac_gcd(values) -> Fraction:
    """Greatest common divisor of nonzero rationals."""
    out = Fraction(0)
    for v in values:
        v = abs(exact(v))
        if v == 0:
            continue
        if out == 0:
            out = v
        else:
            den = out.denominator * v.denominator // math.gcd(out.denominator, v.denominator)
            out = Fraction(math.gcd(int(out * den), int(v * den)), den)
    if out == 0:
        raise DomainError("no nonzero frequency to build a lattice from")
    return out


def union_fundamental(grids) -> Fraction:
    """Finest lattice spacing holding every bin of every grid."""
    vals = []
    for g in grids:
        vals.append(g.f0)
        if g.offset:
            vals.append(g.offset)
    return frac_gcd(vals)


def to_lattice(grid: FrequencyGrid, fundamental: Fraction) -> np.ndarray:
    """Integer positions of ``grid``'s bins on a finer lattice of spacing ``fundamental``."""
    out = []
    for f in grid.exact_frequencies():
        q = f / fundamental
        if q.denominator != 1:
            raise StructuralError(f"frequency {float(f)} Hz is not on the lattice of {float(fundamental)} Hz")
        out.append(int(q))
    return np.array(out, dtype=np.int64)


# --- columnar text format -------------------------------------------------------------

_COLUMNS = ("k", "f_hz", "re", "im", "label")


def write_spectrum(spectrum: Spectrum, path=None) -> str:
    """Write the columnar text form of a spectrum; returns the text."""
    buf = io.StringIO()
    g = spectrum.grid
    buf.write(f"# f0_hz={g.f0!r} offset_hz={g.offset!r} kind={spectrum.kind}")
    if g.warp_ts is not None:
        buf.write(f" warp_ts={g.warp_ts!r}")
    buf.write("\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_COLUMNS)
    for k, f, v, lab in zip(g.bins, g.frequencies, spectrum.values, g.labels):
        w.writerow([int(k), f"{f:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}", lab])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_spectrum(source) -> Spectrum:
    """Parse the columnar text form (a path or the text itself)."""
    text = Path(source).read_text() if not (isinstance(source, str) and "\n" in source) else source
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise StructuralError("missing metadata line")
    meta = dict(item.split("=", 1) for item in lines[0][1:].split())
    rows = list(csv.reader(lines[1:]))
    if tuple(rows[0]) != _COLUMNS:
        raise StructuralError(f"unexpected header {rows[0]}")
    rows = rows[1:]
    bins = [int(r[0]) for r in rows]
    values = [complex(float(r[2]), float(r[3])) for r in rows]
    labels = [r[4] for r in rows]
    warp = float(meta["warp_ts"]) if "warp_ts" in meta else None
    grid = FrequencyGrid(float(meta["f0_hz"]), bins, float(meta["offset_hz"]), labels, warp)
    return Spectrum(grid, values, meta.get("kind", "abstract"))
