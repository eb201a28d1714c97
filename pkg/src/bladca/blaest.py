"""
Best linear approximation estimates with sample uncertainty.

Every estimate is a ratio of averaged, reference-normalised spectra:
``Z^(m) = [outputs; inputs] / R^(m)`` averaged over the realizations, with the
sample covariance of that mean. Two covariance variants are kept: ``cz`` in
reference-normalised units and ``cz_raw`` in signal units (each residual
scaled back by ``|R^(m)|``).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import DomainError, StructuralError
from .spectra import FrequencyGrid


def tree_sum(arr, axis=0):
    """Pairwise sum along ``axis``; the association order depends only on the length."""
    a = np.moveaxis(np.asarray(arr), axis, 0)
    while a.shape[0] > 1:
        n = a.shape[0]
        head = a[: n - n % 2].reshape((n // 2, 2) + a.shape[1:]).sum(axis=1)
        a = np.concatenate([head, a[n - n % 2:]]) if n % 2 else head
    return a[0]


def _grid_doc(g: FrequencyGrid):
    return {"f0_hz": g.f0, "offset_hz": g.offset, "bins": g.bins.tolist(), "labels": list(g.labels),
            "warp_ts": g.warp_ts}


def _grid_from(d):
    return FrequencyGrid(d["f0_hz"], d["bins"], d["offset_hz"], d.get("labels"), d.get("warp_ts"))


def _cplx(a):
    a = np.asarray(a)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _uncplx(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] + 1j * x[..., 1]


@dataclass(eq=False)
class SimoBlaEstimate:
    grid: FrequencyGrid
    z: np.ndarray          # (K, n)
    cz: np.ndarray         # (K, n, n)
    cz_raw: np.ndarray     # (K, n, n)
    m_used: int
    names: tuple
    reference: str
    provenance: dict = field(default_factory=dict)

    def index(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            return int(key)
        try:
            return self.names.index(key)
        except ValueError:
            raise StructuralError(f"no signal {key!r} in estimate ({', '.join(self.names)})") from None

    def covariance(self, variant="normalized"):
        if variant not in ("normalized", "signal"):
            raise DomainError(f"unknown covariance variant {variant!r}")
        return self.cz if variant == "normalized" else self.cz_raw

    def to_document(self):
        return {"type": "simo", "grid": _grid_doc(self.grid), "names": list(self.names),
                "reference": self.reference, "m_used": self.m_used, "z": _cplx(self.z), "cz": _cplx(self.cz),
                "cz_raw": _cplx(self.cz_raw), "provenance": self.provenance}

    @classmethod
    def from_document(cls, d):
        return cls(_grid_from(d["grid"]), _uncplx(d["z"]), _uncplx(d["cz"]), _uncplx(d["cz_raw"]),
                   int(d["m_used"]), tuple(d["names"]), d["reference"], d.get("provenance", {}))


@dataclass(eq=False)
class SisoBlaEstimate:
    grid: FrequencyGrid
    g: np.ndarray
    var: np.ndarray
    flagged: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def sigma(self):
        return np.sqrt(self.var)

    def to_document(self):
        return {"type": "siso", "grid": _grid_doc(self.grid), "g": _cplx(self.g), "var": self.var.tolist(),
                "flagged": self.flagged.tolist(), "provenance": self.provenance}

    @classmethod
    def from_document(cls, d):
        return cls(_grid_from(d["grid"]), _uncplx(d["g"]), np.asarray(d["var"], dtype=float),
                   np.asarray(d["flagged"], dtype=bool), d.get("provenance", {}))


@dataclass(eq=False)
class MimoBlaEstimate:
    """``S^BLA`` (K, p, p) with the covariance of its column-major vectorisation."""

    grid: FrequencyGrid
    s: np.ndarray
    cov: np.ndarray
    cond: np.ndarray
    flagged: np.ndarray
    ports: tuple
    references: tuple
    g_rz: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.s.shape[-1]

    def sigma(self):
        """Standard deviation of each ``S`` entry, shape (K, p, p)."""
        d = np.sqrt(np.maximum(np.einsum("kii->ki", self.cov).real, 0.0))
        return d.reshape(-1, self.p, self.p).transpose(0, 2, 1)

    def to_document(self):
        return {"type": "mimo", "grid": _grid_doc(self.grid), "ports": list(self.ports),
                "references": list(self.references), "s": _cplx(self.s), "cov": _cplx(self.cov),
                "cond": self.cond.tolist(), "flagged": self.flagged.tolist(), "provenance": self.provenance}

    @classmethod
    def from_document(cls, d):
        return cls(_grid_from(d["grid"]), _uncplx(d["s"]), _uncplx(d["cov"]), np.asarray(d["cond"], dtype=float),
                   np.asarray(d["flagged"], dtype=bool), tuple(d["ports"]), tuple(d["references"]),
                   provenance=d.get("provenance", {}))


def save_estimate(est, path):
    with open(path, "w") as fh:
        json.dump(est.to_document(), fh, sort_keys=True)


def load_estimate(path):
    with open(path) as fh:
        d = json.load(fh)
    kind = {"simo": SimoBlaEstimate, "siso": SisoBlaEstimate, "mimo": MimoBlaEstimate}.get(d.get("type"))
    if kind is None:
        raise StructuralError(f"{path}: not an estimate document")
    return kind.from_document(d)


# --- robust method --------------------------------------------------------------------

def estimate_simo(records, reference: str, signals, provenance=None) -> SimoBlaEstimate:
    """Averaged reference-normalised spectra and their sample covariance.

    Parameters
    ----------
    records : RecordSet
    reference : str
        Source name (``"R"`` for the main multisine, ``"T1"``... for ticklers);
        the estimate lives on that source's excited bins.
    signals : sequence of str
        Signal names stacked into ``Z``, outputs first by convention.
    """
    M = len(records)
    if M < 2:
        raise DomainError("at least two realizations are needed for a covariance")
    signals = tuple(signals)
    pos = records.positions(reference)
    R = records.signal(reference)[:, pos]
    zero = np.argwhere(R == 0)
    if zero.size:
        m, k = zero[0]
        raise DomainError(f"reference {reference!r} is zero at realization {records.m_indices[m]}, "
                          f"bin {records.grid.bins[pos[k]]}")
    X = np.stack([records.signal(s)[:, pos] for s in signals], axis=-1)   # (M, K, n)
    Zm = X / R[..., None]
    Z = tree_sum(Zm) / M
    r = Zm - Z
    cz = tree_sum(r[..., :, None] * r[..., None, :].conj()) / (M * (M - 1))
    rr = r * np.abs(R)[..., None]
    cz_raw = tree_sum(rr[..., :, None] * rr[..., None, :].conj()) / (M * (M - 1))
    prov = {"records": records.content_hash(), "m_used": M, "seed": records.meta.get("seed"),
            "reference": reference}
    prov.update(provenance or {})
    return SimoBlaEstimate(records.source_grid(reference), Z, cz, cz_raw, M, signals, reference, prov)


def simo_to_siso(simo: SimoBlaEstimate, out_index, in_index, floor=1e-300) -> SisoBlaEstimate:
    """``G = Z_out / Z_in`` with ``var = |1/Z_in|^2 V C V^H``, ``V = [1, -G]``."""
    i, j = simo.index(out_index), simo.index(in_index)
    zo, zi = simo.z[:, i], simo.z[:, j]
    flagged = np.abs(zi) <= floor
    safe = np.where(flagged, 1.0, zi)
    g = np.where(flagged, 0.0, zo / safe)
    c = simo.cz[:, [i, j]][:, :, [i, j]]
    v = np.stack([np.ones_like(g), -g], axis=-1)
    quad = np.einsum("ka,kab,kb->k", v, c, v.conj()).real
    var = np.where(flagged, np.inf, np.maximum(quad, 0.0) / np.abs(safe) ** 2)
    prov = dict(simo.provenance, output=simo.names[i], input=simo.names[j])
    return SisoBlaEstimate(simo.grid, g, var, flagged, prov)


def estimate_siso(records, output: str, input: str, reference: str = "R") -> SisoBlaEstimate:
    return simo_to_siso(estimate_simo(records, reference, (output, input)), 0, 1)


# --- zippered MIMO estimate -----------------------------------------------------------

def interpolate_columns(f_src, z, cz, f_dst):
    """Linear interpolation of values (real/imag separately) and their covariance.

    Outside ``f_src`` the nearest value is held.
    """
    f_src = np.asarray(f_src, dtype=float)
    f_dst = np.asarray(f_dst, dtype=float)
    hi = np.clip(np.searchsorted(f_src, f_dst), 1, f_src.size - 1) if f_src.size > 1 else np.zeros(f_dst.size, int)
    lo = hi - 1 if f_src.size > 1 else hi
    if f_src.size > 1:
        w = (f_dst - f_src[lo]) / (f_src[hi] - f_src[lo])
        w = np.clip(w, 0.0, 1.0)
    else:
        w = np.zeros(f_dst.size)
    w = w[:, None]
    zi = (1 - w) * z[lo] + w * z[hi]
    w2 = w[:, :, None]
    ci = (1 - w2) ** 2 * cz[lo] + w2 ** 2 * cz[hi]
    return zi, ci


def estimate_mimo(records, references, a_names, b_names, cond_threshold=1e8, overrides=None) -> MimoBlaEstimate:
    """``S^BLA = G_{R->B} G_{R->A}^{-1}`` on the first reference's grid.

    Parameters
    ----------
    references : sequence of str
        Main reference first, then ticklers; at least ``p`` of them.
    a_names, b_names : sequence of str
        Incident and reflected wave signals of the ``p`` ports.
    overrides : dict, optional
        ``{(i, j): value}`` pins ``S[i, j]`` (0-based) to a scalar or a per-bin
        array, typically a small-signal value. Pinned entries carry zero variance.
    """
    references = tuple(references)
    p = len(a_names)
    if len(b_names) != p:
        raise StructuralError("one reflected wave per incident wave is required")
    if len(references) < p:
        raise StructuralError(f"{len(references)} references cannot identify a {p}-port; at least {p} are needed")
    signals = tuple(b_names) + tuple(a_names)
    simos = [estimate_simo(records, r, signals) for r in references]
    grid = simos[0].grid
    f_main = grid.nominal_frequencies
    cols, covs = [simos[0].z], [simos[0].cz]
    for est in simos[1:]:
        z, c = interpolate_columns(est.grid.nominal_frequencies, est.z, est.cz, f_main)
        cols.append(z)
        covs.append(c)
    G = np.stack(cols, axis=-1)                # (K, 2p, n_r)
    G_rb, G_ra = G[:, :p], G[:, p:]
    cond = np.linalg.cond(G_ra)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    flagged = cond > cond_threshold
    inv = np.linalg.pinv(G_ra)                 # (K, n_r, p)
    S = G_rb @ inv
    # vec(S) = (inv^T kron [I, -S]) vec(G_rz) to first order
    K = S.shape[0]
    n_r = len(references)
    left = np.concatenate([np.broadcast_to(np.eye(p), (K, p, p)), -S], axis=-1)    # (K, p, 2p)
    T = np.einsum("kij,kab->kiajb", np.transpose(inv, (0, 2, 1)), left).reshape(K, p * p, n_r * 2 * p)
    Cg = np.zeros((K, n_r * 2 * p, n_r * 2 * p), dtype=complex)
    for r, c in enumerate(covs):
        sl = slice(r * 2 * p, (r + 1) * 2 * p)
        Cg[:, sl, sl] = c
    cov = T @ Cg @ np.conj(np.transpose(T, (0, 2, 1)))
    prov = {"references": list(references), "m_used": len(records), "cond_threshold": cond_threshold,
            "records": records.content_hash(), "overrides": []}
    for (i, j), value in (overrides or {}).items():
        S[:, i, j] = np.broadcast_to(np.asarray(value, dtype=complex), (K,))
        idx = j * p + i
        cov[:, idx, :] = 0
        cov[:, :, idx] = 0
        prov["overrides"].append([int(i), int(j)])
    return MimoBlaEstimate(grid, S, cov, cond, flagged, tuple(zip(a_names, b_names)), references, G, prov)


# --- realization budget ---------------------------------------------------------------

@dataclass
class BudgetResult:
    m_used: int
    sigma: float
    attained: bool
    history: list


def realization_budget(loop, target_sigma, batch, max_M) -> BudgetResult:
    """Grow ``M`` in steps of ``batch`` until ``max(loop(M)) <= target_sigma``.

    ``loop(M)`` returns the per-bin standard deviations obtained with ``M``
    realizations. Stopping at ``max_M`` is reported through ``attained``.
    """
    if not target_sigma > 0:
        raise DomainError("target_sigma must be positive")
    if batch < 2 or max_M < batch:
        raise DomainError("batch must be at least 2 and max_M at least one batch")
    history = []
    m = batch
    while True:
        sigma = float(np.max(loop(m)))
        history.append((m, sigma))
        if sigma <= target_sigma:
            return BudgetResult(m, sigma, True, history)
        if m >= max_M:
            return BudgetResult(m, sigma, False, history)
        m = min(m + batch, max_M)
