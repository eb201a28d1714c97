"""
Random-phase multisine design.

A multisine ``r(t) = sum_k A_k sin(2 pi (k f0 + f_eps) t + phi_k)`` is described
by a :class:`MultisineSpec` (which lines, which amplitudes) and drawn as
:class:`Realization` objects that only differ in their phases.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import DomainError, StructuralError
from .spectra import DETECTION, EXCITED, FrequencyGrid, Spectrum, exact
from . import textdoc

KINDS = ("full", "odd", "random_odd", "tickler")


def sub_rng(seed: int, stage: str, *keys: int) -> np.random.Generator:
    """Generator for one (seed, stage, index...) cell; stable across runs and platforms."""
    key = (zlib.crc32(stage.encode()),) + tuple(int(k) for k in keys)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass(frozen=True, eq=False)
class MultisineSpec:
    """Excited grid and amplitudes of a multisine family.

    ``grid`` holds the excited lines only. For random-odd designs the removed
    lines are kept in ``detection_bins`` (zero amplitude).
    """

    grid: FrequencyGrid
    amplitudes: np.ndarray
    rms: float
    kind: str
    seed: int = 0
    detection_group_size: int = 3
    detection_bins: tuple = ()
    band: tuple = (None, None)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=float).ravel()
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "detection_bins", tuple(int(k) for k in self.detection_bins))
        if self.kind not in KINDS:
            raise StructuralError(f"unknown multisine kind {self.kind!r}")
        if amps.size != len(self.grid):
            raise StructuralError(f"{amps.size} amplitudes for {len(self.grid)} excited lines")
        if np.any(amps <= 0):
            raise DomainError("amplitudes must be positive on excited lines")
        if self.kind in ("odd", "random_odd") and np.any(self.grid.bins % 2 == 0):
            raise DomainError("odd multisines may only excite odd lines")
        if self.kind == "tickler" and self.grid.offset == 0:
            raise DomainError("a tickler needs a nonzero frequency offset")
        if self.band == (None, None) and len(self.grid):
            object.__setattr__(self, "band", (int(self.grid.bins[0]), int(self.grid.bins[-1])))

    @property
    def n_lines(self) -> int:
        return len(self.grid)

    @property
    def f0(self) -> float:
        return self.grid.f0

    def achieved_rms(self) -> float:
        return float(np.sqrt(np.sum(self.amplitudes ** 2) / 2))


@dataclass(frozen=True, eq=False)
class Realization:
    """One phase draw of a multisine."""

    spec: MultisineSpec
    m: int
    phases: np.ndarray
    spectrum: Spectrum

    def time_signal(self, t) -> np.ndarray:
        """Evaluate ``r(t)`` at the given instants (seconds)."""
        t = np.asarray(t, dtype=float)
        f = self.spec.grid.nominal_frequencies
        arg = 2 * np.pi * np.multiply.outer(t, f) + self.phases
        return np.sin(arg) @ self.spec.amplitudes


def _bin_index(f, f0, name):
    q = exact(f) / exact(f0)
    if q.denominator != 1:
        raise DomainError(f"{name} = {f} Hz is not an integer multiple of f0 = {f0} Hz")
    return int(q)


def _scale(shape, rms):
    shape = np.asarray(shape, dtype=float)
    return shape * (rms / np.sqrt(np.sum(shape ** 2) / 2))


def design_multisine(f0, f_min, f_max, rms, kind="full", seed=0, detection_group_size=3,
                     psd_mask=None) -> MultisineSpec:
    """Select the excited lines of a multisine and scale them to an RMS value.

    Parameters
    ----------
    f0, f_min, f_max : float
        Base frequency and band edges in Hz; the edges must be multiples of ``f0``.
    rms : float
        RMS value of the continuous-time signal, ``sqrt(sum A_k^2 / 2)``.
    kind : {"full", "odd", "random_odd"}
    seed : int
        Drives the random choice of detection lines for ``random_odd``.
    detection_group_size : int
        Size of the groups of consecutive odd lines from which one line is removed.
    psd_mask : array_like, optional
        Relative power per line of the band ``k_min..k_max`` (all candidates,
        excited or not). Flat when omitted.
    """
    if kind not in ("full", "odd", "random_odd"):
        raise DomainError(f"design_multisine cannot build kind {kind!r}")
    if not rms > 0:
        raise DomainError(f"rms must be positive, got {rms}")
    kmin = _bin_index(f_min, f0, "f_min")
    kmax = _bin_index(f_max, f0, "f_max")
    if kmin > kmax:
        raise DomainError("f_min exceeds f_max")
    kmin = max(kmin, 1)
    candidates = np.arange(kmin, kmax + 1)
    detection = []
    if kind == "full":
        excited = candidates
    else:
        odd = candidates[candidates % 2 == 1]
        if kind == "odd":
            excited = odd
        else:
            if detection_group_size < 2:
                raise DomainError("detection groups need at least two lines")
            rng = sub_rng(seed, "detection-lines")
            n_groups = odd.size // detection_group_size
            drop = set()
            for g in range(n_groups):
                pick = int(rng.integers(detection_group_size))
                drop.add(int(odd[g * detection_group_size + pick]))
            detection = sorted(drop)
            excited = np.array([k for k in odd if int(k) not in drop], dtype=np.int64)
    if excited.size == 0:
        raise DomainError("the requested band contains no excited line")
    if psd_mask is None:
        shape = np.ones(excited.size)
    else:
        mask = np.asarray(psd_mask, dtype=float).ravel()
        if mask.size != candidates.size:
            raise StructuralError(f"psd_mask has {mask.size} entries, the band has {candidates.size} lines")
        shape = np.sqrt(mask[excited - kmin])
    grid = FrequencyGrid(float(f0), excited)
    return MultisineSpec(grid, _scale(shape, rms), float(rms), kind, int(seed), int(detection_group_size),
                         tuple(detection), (kmin, kmax))


def design_tickler(main: MultisineSpec, f_eps, rms, seed=0, others=()) -> MultisineSpec:
    """Zippered copy of ``main``'s excited lines, shifted by ``f_eps`` Hz.

    ``others`` lists tickler specs already present in the experiment; their offsets
    must differ from ``f_eps``.
    """
    f_eps = float(f_eps)
    if f_eps == 0 or not abs(f_eps) < main.f0 / 2:
        raise DomainError(f"tickler offset must satisfy 0 < |f_eps| < f0/2 = {main.f0 / 2}, got {f_eps}")
    if not rms > 0:
        raise DomainError(f"rms must be positive, got {rms}")
    for other in others:
        if exact(other.grid.offset) == exact(f_eps):
            raise DomainError(f"another tickler already uses the offset {f_eps} Hz")
    bins = main.grid.bins
    grid = FrequencyGrid(main.f0, bins, f_eps)
    return MultisineSpec(grid, _scale(np.ones(bins.size), rms), float(rms), "tickler", int(seed),
                         main.detection_group_size, (), main.band)


def realization(spec: MultisineSpec, m: int, seed=None, stream: int = 0) -> Realization:
    """Draw realization ``m``; a pure function of ``(spec, m, seed, stream)``.

    ``stream`` separates independent phase sequences sharing one seed (the main
    multisine uses 0, tickler ``i`` uses ``i``).
    """
    seed = spec.seed if seed is None else seed
    keys = (m,) if stream == 0 else (m, stream)
    phases = sub_rng(seed, "phases", *keys).uniform(0.0, 2 * np.pi, spec.n_lines)
    phases.flags.writeable = False
    values = -1j * spec.amplitudes * np.exp(1j * phases)
    return Realization(spec, int(m), phases, Spectrum(spec.grid, values))


def draw_realizations(spec: MultisineSpec, count: int, seed=None, start=0, stream=0) -> list[Realization]:
    """Realizations ``start .. start + count - 1`` with independent uniform phases."""
    if count < 1:
        raise DomainError("at least one realization is required")
    return [realization(spec, m, seed, stream) for m in range(start, start + count)]


# --- spec documents -------------------------------------------------------------------

_SPEC_KEYS = {"f0_hz", "fmin_hz", "fmax_hz", "kind", "rms", "seed", "detection_group_size", "psd_mask"}


def spec_from_document(doc, seed=None) -> MultisineSpec:
    """Build a spec from a loaded document (see :func:`load_spec`)."""
    if not isinstance(doc, textdoc.Located):
        doc = textdoc.Located(doc, {})
    d = doc.data
    unknown = set(d) - _SPEC_KEYS
    if unknown:
        raise doc.error(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
    for key in ("f0_hz", "fmax_hz", "rms"):
        if key not in d:
            raise doc.error(f"missing required key {key!r}")
    kind = d.get("kind", "full")
    try:
        return design_multisine(
            d["f0_hz"], d.get("fmin_hz", d["f0_hz"]), d["fmax_hz"], float(d["rms"]), kind,
            int(d.get("seed", 0) if seed is None else seed), int(d.get("detection_group_size", 3)),
            d.get("psd_mask"))
    except (DomainError, StructuralError) as exc:
        raise doc.error(str(exc), "kind") from None


def load_spec(source, seed=None) -> MultisineSpec:
    """Read a multisine spec document; ``seed`` overrides the document's seed."""
    return spec_from_document(textdoc.load(source), seed)


def spec_to_document(spec: MultisineSpec) -> dict:
    """Declarative form of a spec plus the resolved line list."""
    kmin, kmax = spec.band
    return {
        "f0_hz": spec.f0,
        "fmin_hz": kmin * spec.f0,
        "fmax_hz": kmax * spec.f0,
        "kind": spec.kind,
        "rms": spec.rms,
        "seed": spec.seed,
        "detection_group_size": spec.detection_group_size,
        "resolved": {
            "offset_hz": spec.grid.offset,
            "excited_bins": [int(k) for k in spec.grid.bins],
            "amplitudes": [float(a) for a in spec.amplitudes],
            "detection_bins": list(spec.detection_bins),
        },
    }


def spec_from_resolved(doc: dict) -> MultisineSpec:
    """Rebuild a spec from :func:`spec_to_document` output without redrawing anything."""
    r = doc["resolved"]
    f0 = float(doc["f0_hz"])
    grid = FrequencyGrid(f0, r["excited_bins"], float(r.get("offset_hz", 0.0)))
    kmin = int(round(float(doc["fmin_hz"]) / f0))
    kmax = int(round(float(doc["fmax_hz"]) / f0))
    return MultisineSpec(grid, r["amplitudes"], float(doc["rms"]), doc["kind"], int(doc["seed"]),
                         int(doc.get("detection_group_size", 3)), tuple(r.get("detection_bins", ())),
                         (kmin, kmax))
