"""
Distortion contribution analysis.

The output distortion of a network whose sub-systems are replaced by their BLAs
plus distortion sources ``D`` is ``D_t = T_out D``; its power splits into

    T C_D T^H = sum_i [C_D]_ii |T_i|^2 + sum_{i>j} 2 Re{[C_D]_ij T_i conj(T_j)}

direct terms and correlation terms. ``T_out`` comes either from the SISO
feedback algebra ``B (I + G M)^{-1}`` or from the wave system of the package
view, ``W = C - T`` with the load's incident-wave row of ``W^{-1}``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import DomainError, StructuralError
from .blaest import estimate_simo
from .netmodel import PortNetwork, SisoFeedbackNetwork, block_diagonal, wave_index, wave_matrix
from .spectra import FrequencyGrid

SINGULAR_COND = 1e12

#: C_D variant used unless asked otherwise; see :func:`build_cd`.
DEFAULT_VARIANT = "signal"


@dataclass(eq=False)
class DistortionCovariance:
    grid: FrequencyGrid
    cd: np.ndarray            # (K, N, N)
    labels: tuple
    groups: tuple
    variant: str
    min_eig: np.ndarray
    flagged: np.ndarray
    m_used: int = 0
    provenance: dict = field(default_factory=dict)


@dataclass(eq=False)
class OutputReferral:
    grid: FrequencyGrid
    t: np.ndarray             # (K, N)
    view: str
    flagged: np.ndarray
    g_total: np.ndarray | None = None


@dataclass(eq=False)
class ContributionReport:
    """Per-bin direct and correlation contributions.

    ``pairs`` lists ``(i, j)`` with ``i > j`` in the order of the columns of
    ``correlation``. Excluded bins are absent from ``grid`` and listed in
    ``excluded`` (bin indices).
    """

    grid: FrequencyGrid
    labels: tuple
    total: np.ndarray
    direct: np.ndarray
    correlation: np.ndarray
    pairs: tuple
    excluded: tuple = ()
    lineage: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def n_sources(self):
        return len(self.labels)

    def sum_of_contributions(self):
        return self.direct.sum(axis=1) + self.correlation.sum(axis=1)

    def conservation_error(self):
        scale = np.maximum(np.abs(self.direct).sum(axis=1) + np.abs(self.correlation).sum(axis=1), 1e-300)
        return np.abs(self.sum_of_contributions() - self.total) / scale

    def percentages(self, suppress=1e-12):
        """Signed percentages of the total; NaN where the total is negligible."""
        scale = np.abs(self.direct).sum(axis=1)
        ok = np.abs(self.total) > suppress * np.maximum(scale, 1e-300)
        den = np.where(ok, self.total, 1.0)[:, None]
        d = np.where(ok[:, None], 100 * self.direct / den, np.nan)
        c = np.where(ok[:, None], 100 * self.correlation / den, np.nan)
        return d, c

    def column_names(self):
        return [f"C[{lab}]" for lab in self.labels] + [
            f"C[{self.labels[i]},{self.labels[j]}]" for i, j in self.pairs]

    def to_document(self):
        return {
            "labels": list(self.labels), "pairs": [list(p) for p in self.pairs],
            "bins": self.grid.bins.tolist(), "f_hz": self.grid.frequencies.tolist(),
            "f0_hz": self.grid.f0, "offset_hz": self.grid.offset, "warp_ts": self.grid.warp_ts,
            "total": self.total.tolist(), "direct": self.direct.tolist(),
            "correlation": self.correlation.tolist(), "excluded": list(self.excluded),
            "lineage": self.lineage, "provenance": self.provenance,
        }

    @classmethod
    def from_document(cls, d):
        grid = FrequencyGrid(d["f0_hz"], d["bins"], d["offset_hz"], warp_ts=d.get("warp_ts"))
        n = len(d["labels"])
        corr = np.asarray(d["correlation"], dtype=float).reshape(len(d["bins"]), -1)
        return cls(grid, tuple(d["labels"]), np.asarray(d["total"], dtype=float),
                   np.asarray(d["direct"], dtype=float).reshape(-1, n), corr,
                   tuple(tuple(p) for p in d["pairs"]), tuple(d["excluded"]), d.get("lineage", {}),
                   d.get("provenance", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_document(), fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_document(json.load(fh))

    def wide_table(self, percent=False) -> str:
        """CSV: bin, f_hz, total, one column per contribution."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "f_hz", "total"] + self.column_names())
        vals = np.hstack([self.direct, self.correlation])
        if percent:
            vals = np.hstack(self.percentages())
        for k, f, t, row in zip(self.grid.bins, self.grid.frequencies, self.total, vals):
            w.writerow([int(k), f"{f:.12g}", f"{t:.12g}"] + [f"{v:.12g}" for v in row])
        return buf.getvalue()

    def ranked_text(self, percent=False, top=None) -> str:
        """Per-frequency table of contributions sorted by magnitude."""
        names = self.column_names()
        vals = np.hstack([self.direct, self.correlation])
        pct = np.hstack(self.percentages())
        lines = []
        for i, (k, f, t) in enumerate(zip(self.grid.bins, self.grid.frequencies, self.total)):
            lines.append(f"bin {int(k)}  f = {f:.6g} Hz  total = {t:.6g}")
            order = np.argsort(-np.abs(vals[i]), kind="stable")[:top]
            for c in order:
                p = pct[i, c]
                extra = f"  {p:8.2f} %" if percent and np.isfinite(p) else ""
                lines.append(f"    {names[c]:<30s} {vals[i, c]: .6g}{extra}")
        if self.excluded:
            lines.append("excluded bins: " + " ".join(str(k) for k in self.excluded))
        return "\n".join(lines) + "\n"


# --- C_D ------------------------------------------------------------------------------

def build_cd(records, bla, out_names, in_names, reference="R", labels=None, groups=None,
             variant=DEFAULT_VARIANT, flagged=None, min_realizations=True) -> DistortionCovariance:
    """``C_D = M [I, -G] C_Z [I, -G]^H`` from stacked output/input spectra.

    Parameters
    ----------
    bla : array_like
        (K, n, n) BLA matrix on the reference grid: diagonal for SISO blocks,
        block diagonal (``S^BLA``) for the wave view.
    variant : {"signal", "normalized"}
        ``"signal"`` keeps the distortion in the units of the measured signals,
        so that ``T C_D T^H`` compares directly with output distortion power;
        ``"normalized"`` stays relative to the reference.
    """
    out_names, in_names = tuple(out_names), tuple(in_names)
    n = len(out_names)
    if len(in_names) != n:
        raise StructuralError("one input per output is required")
    M = len(records)
    if min_realizations and M < 2 * n:
        raise StructuralError(f"{M} realizations cannot give a full-rank covariance over {n} sources; "
                              f"at least 2N = {2 * n} are required")
    simo = estimate_simo(records, reference, out_names + in_names)
    G = np.asarray(bla, dtype=complex)
    if G.shape != (len(simo.grid), n, n):
        raise StructuralError(f"BLA has shape {G.shape}, expected {(len(simo.grid), n, n)}")
    V = np.concatenate([np.broadcast_to(np.eye(n), G.shape), -G], axis=-1)
    cz = simo.covariance("normalized" if variant == "normalized" else "signal")
    cd = M * V @ cz @ np.conj(np.transpose(V, (0, 2, 1)))
    cd = 0.5 * (cd + np.conj(np.transpose(cd, (0, 2, 1))))
    min_eig = np.linalg.eigvalsh(cd)[:, 0]
    flags = np.zeros(len(simo.grid), dtype=bool) if flagged is None else np.asarray(flagged, dtype=bool)
    labels = tuple(labels) if labels is not None else out_names
    groups = tuple(groups) if groups is not None else labels
    prov = dict(simo.provenance, variant=variant)
    return DistortionCovariance(simo.grid, cd, labels, groups, variant, min_eig, flags, M, prov)


def siso_signals(network: SisoFeedbackNetwork):
    n = network.n_blocks
    return tuple(f"Y{i + 1}" for i in range(n)), tuple(f"U{i + 1}" for i in range(n))


def wave_signals(network: PortNetwork):
    labs = network.port_labels
    return tuple(f"B:{x}" for x in labs), tuple(f"A:{x}" for x in labs)


def siso_bla(records, network: SisoFeedbackNetwork, reference="R"):
    """Per-block BLAs ``G_n = Z_Yn / Z_Un`` stacked as a diagonal (K, N, N)."""
    outs, ins = siso_signals(network)
    simo = estimate_simo(records, reference, outs + ins)
    n = network.n_blocks
    g = simo.z[:, :n] / simo.z[:, n:]
    return np.einsum("kn,nm->knm", g, np.eye(n)), simo


def siso_cd(records, network: SisoFeedbackNetwork, bla=None, variant=DEFAULT_VARIANT, reference="R"):
    if bla is None:
        bla, _ = siso_bla(records, network, reference)
    outs, ins = siso_signals(network)
    return build_cd(records, bla, outs, ins, reference, network.labels, [b.group for b in network.blocks], variant)


def wave_cd(records, network: PortNetwork, s_bla, variant=DEFAULT_VARIANT, reference="R", flagged=None):
    s = _as_block_diagonal(network, s_bla)
    outs, ins = wave_signals(network)
    return build_cd(records, s, outs, ins, reference, network.port_labels, network.port_groups, variant, flagged)


def _as_block_diagonal(network, s_bla):
    if isinstance(s_bla, (list, tuple)):
        s_bla = block_diagonal([np.asarray(s, dtype=complex) for s in s_bla])
    s_bla = np.asarray(s_bla, dtype=complex)
    P = network.total_ports
    if s_bla.shape[-2:] != (P, P):
        raise StructuralError(f"S^BLA must be {P}x{P} per bin, got {s_bla.shape[-2:]}")
    return s_bla


# --- output referral ------------------------------------------------------------------

def tout_siso(network: SisoFeedbackNetwork, bla, grid: FrequencyGrid) -> OutputReferral:
    """``t = B (I + G M)^{-1}`` and ``G_{R->Yt} = t G A`` per bin."""
    f = grid.frequencies
    A, M, B = network.maps(f)
    G = np.asarray(bla, dtype=complex)
    if G.ndim == 2:
        G = np.einsum("kn,nm->knm", G, np.eye(G.shape[1]))
    N = network.n_blocks
    loop = np.eye(N)[None] + G @ M
    cond = np.linalg.cond(loop)
    flagged = ~(cond < SINGULAR_COND)
    safe = np.where(flagged[:, None, None], np.eye(N)[None], loop)
    # t solves t (I + G M) = B
    t = np.linalg.solve(np.transpose(safe, (0, 2, 1)), B[..., None])[..., 0]
    t[flagged] = np.nan
    g_total = np.einsum("kn,knm,km->k", t, G, A)
    return OutputReferral(grid, t, "siso", flagged, g_total)


def _wave_solve(network, s_bla, f, gamma_s=None):
    s = _as_block_diagonal(network, s_bla)
    gin = network.gamma_in(f) if gamma_s is None else np.broadcast_to(np.asarray(gamma_s, dtype=complex), f.shape)
    W = wave_matrix(gin, network.gamma_out(f), network.package(f), s)
    cond = np.linalg.cond(W)
    flagged = ~(cond < SINGULAR_COND)
    safe = np.where(flagged[:, None, None], np.eye(W.shape[-1])[None], W)
    return np.linalg.inv(safe), flagged, gin


def tout_wave(network: PortNetwork, s_bla, grid: FrequencyGrid) -> OutputReferral:
    """Row of ``W^{-1}`` for the load's incident wave over the sub-circuit source columns."""
    f = grid.frequencies
    winv, flagged, _ = _wave_solve(network, s_bla, f)
    idx = wave_index(network.total_ports)
    t = winv[:, idx["load"], :][:, idx["sub"]]
    t[flagged] = np.nan
    return OutputReferral(grid, t, "wave", flagged)


def predict_reference_frf(network: PortNetwork, s_bla, grid: FrequencyGrid, gamma_s=None) -> dict:
    """FRFs from the source voltage to every wave, ``W^{-1} N`` with ``N_1 = (1 - Gamma_S)/(2 sqrt(Z0))``.

    Returns a dict with ``"A:<port>"``, ``"B:<port>"``, ``"Bt"`` and the
    per-bin ``"flagged"`` mask.
    """
    f = grid.frequencies
    winv, flagged, gin = _wave_solve(network, s_bla, f, gamma_s)
    x = winv[:, :, 0] * ((1 - gin) / (2 * math.sqrt(network.z0)))[:, None]
    x[flagged] = np.nan
    idx = wave_index(network.total_ports)
    out = {"flagged": flagged, "Bt": x[:, idx["load"]]}
    for lab, ia, ib in zip(network.port_labels, idx["sub"], idx["package_internal"]):
        out[f"A:{lab}"] = x[:, ia]
        out[f"B:{lab}"] = x[:, ib]
    return out


# --- decomposition --------------------------------------------------------------------

def decompose(cd: DistortionCovariance, t: OutputReferral) -> ContributionReport:
    """Direct and correlation contributions; flagged bins are dropped and listed."""
    C = cd.cd
    T = np.asarray(t.t)
    if T.shape != C.shape[:2]:
        raise StructuralError(f"referral has shape {T.shape}, covariance {C.shape}")
    if not cd.grid.same_lattice(t.grid) and len(cd.grid) == len(t.grid):
        if not np.array_equal(cd.grid.bins, t.grid.bins):
            raise StructuralError("covariance and referral are on different grids")
    bad = np.asarray(cd.flagged) | np.asarray(t.flagged) | ~np.all(np.isfinite(T), axis=1)
    keep = np.flatnonzero(~bad)
    C, T = C[keep], T[keep]
    n = C.shape[1]
    direct = np.einsum("kii->ki", C).real * np.abs(T) ** 2
    pairs = tuple((i, j) for i in range(n) for j in range(i))
    corr = np.empty((len(keep), len(pairs)))
    for c, (i, j) in enumerate(pairs):
        corr[:, c] = 2 * np.real(C[:, i, j] * T[:, i] * np.conj(T[:, j]))
    total = np.einsum("ki,kij,kj->k", T, C, np.conj(T)).real
    grid = cd.grid.subset(keep)
    lineage = {lab: [lab] for lab in cd.labels}
    prov = dict(cd.provenance, view=t.view)
    return ContributionReport(grid, cd.labels, total, direct, corr, pairs,
                              tuple(int(k) for k in cd.grid.bins[bad]), lineage, prov)


def aggregate(report: ContributionReport, grouping) -> ContributionReport:
    """Sum contributions over a partition of the sources.

    ``grouping`` is either a mapping from source label to group name or a list
    of groups, each a list of source labels or indices.
    """
    labels = report.labels
    if isinstance(grouping, dict):
        missing = [lab for lab in labels if lab not in grouping]
        if missing or set(grouping) - set(labels):
            raise StructuralError(f"grouping is not a partition of the sources (missing {missing})")
        names = []
        for lab in labels:
            if grouping[lab] not in names:
                names.append(grouping[lab])
        member = np.array([names.index(grouping[lab]) for lab in labels])
    else:
        groups = [[labels.index(x) if isinstance(x, str) else int(x) for x in g] for g in grouping]
        flat = sorted(i for g in groups for i in g)
        if flat != list(range(len(labels))) or any(not g for g in groups):
            raise StructuralError("grouping is not a partition of the sources")
        names = ["+".join(labels[i] for i in g) for g in groups]
        member = np.empty(len(labels), dtype=int)
        for gi, g in enumerate(groups):
            member[g] = gi
    G = len(names)
    K = report.total.size
    direct = np.zeros((K, G))
    for i in range(len(labels)):
        direct[:, member[i]] += report.direct[:, i]
    pairs = tuple((a, b) for a in range(G) for b in range(a))
    pidx = {p: c for c, p in enumerate(pairs)}
    corr = np.zeros((K, len(pairs)))
    for c, (i, j) in enumerate(report.pairs):
        a, b = member[i], member[j]
        if a == b:
            direct[:, a] += report.correlation[:, c]
        else:
            corr[:, pidx[(max(a, b), min(a, b))]] += report.correlation[:, c]
    lineage = {}
    for gi, name in enumerate(names):
        lineage[name] = [x for i, lab in enumerate(labels) if member[i] == gi for x in report.lineage.get(lab, [lab])]
    return ContributionReport(report.grid, tuple(names), report.total.copy(), direct, corr, pairs,
                              report.excluded, lineage, dict(report.provenance))


def group_paths(labels, groups, depth=None, split=()):
    """Map each source to its group path cut at ``depth`` levels.

    Group paths use ``/`` between levels (``"ota1/stage1"``). Groups named in
    ``split`` are refined one level further (down to the individual sources).
    """
    out = {}
    for lab, path in zip(labels, groups):
        parts = [p for p in str(path).split("/") if p]
        d = len(parts) if depth is None else int(depth)
        key = "/".join(parts[:d]) or lab
        if key in split or any(key == s.split(":")[0] for s in split):
            deeper = "/".join(parts[:d + 1])
            key = deeper if deeper != key else f"{key}/{lab}"
        out[lab] = key
    return out


# --- small-signal validity ------------------------------------------------------------

@dataclass(eq=False)
class ValidityVerdict:
    grid: FrequencyGrid
    valid: np.ndarray
    ratio: np.ndarray
    names: tuple
    factor: float

    @property
    def fraction_valid(self):
        return float(np.mean(self.valid))


def smallsignal_validity(network: PortNetwork, smallsignal_s, records, factor=1.0, reference="R",
                         waves=None) -> ValidityVerdict:
    """Compare FRFs predicted from small-signal S-matrices with the measured BLAs.

    A wave passes at a bin when ``|predicted - measured|^2`` stays below
    ``factor`` times its distortion level ``M diag(C_Z)`` (the spread of a single
    realization around the BLA). A bin is valid when every wave passes.
    """
    names = tuple(waves) if waves is not None else wave_signals(network)[0] + wave_signals(network)[1] + ("Bt",)
    simo = estimate_simo(records, reference, names)
    pred = predict_reference_frf(network, smallsignal_s, simo.grid)
    P = np.stack([pred[n] for n in names], axis=-1)
    level = len(records) * np.einsum("kii->ki", simo.cz).real
    diff2 = np.abs(P - simo.z) ** 2
    floor = (1e-9 * np.abs(simo.z)) ** 2 + 1e-300
    ratio = diff2 / (level + floor)
    valid = np.all(diff2 <= factor * level + floor, axis=1) & ~pred["flagged"]
    return ValidityVerdict(simo.grid, valid, ratio, names, factor)


# --- SISO chain lifted to the wave view -----------------------------------------------

def lift_chain(network: SisoFeedbackNetwork, z0=50.0) -> PortNetwork:
    """Matched 2-port cascade equivalent to a SISO chain.

    Requires ``A = [a, 0, ...]``, ``M`` nonzero only on the first subdiagonal,
    ``B = [0, ..., b]``, real constant maps, and static (or composed with
    constant real pre/post gains) blocks. Block ``n`` becomes a 2-port with
    ``b2 = o_n f_n(w_n a1)``; the load's incident wave equals ``Y_t``.
    """
    from .netmodel import Branch, MatrixResponse, WaveBlock, chain_pairs, through_package

    N = network.n_blocks
    mats = []
    for m in (network.input_map, network.feedback_map, network.output_map):
        if not all(e.is_const for row in m.entries for e in row):
            raise StructuralError("lifting needs constant maps")
        mats.append(np.array([[e.value for e in row] for row in m.entries]))
    A, M, B = mats[0][:, 0], mats[1], mats[2][0]
    if np.any(np.iscomplex(A)) or np.any(np.iscomplex(M)) or np.any(np.iscomplex(B)):
        raise StructuralError("lifting needs real maps")
    A, M, B = A.real, M.real, B.real
    chain = np.diag(np.diag(M, -1), -1)
    if np.any(A[1:]) or np.any(B[:-1]) or np.any(M != chain):
        raise StructuralError("lifting needs a pure cascade (A on block 1, B on block N, M on the subdiagonal)")
    subs = []
    for n, blk in enumerate(network.blocks):
        if blk.is_linear:
            raise StructuralError("lifting supports memoryless blocks only")
        pre, post = blk.pre_frf(), blk.post_frf()
        if not (pre.is_const and post.is_const) or pre.value.imag or post.value.imag:
            raise StructuralError("lifting needs real constant pre/post gains")
        w = A[0] * 2 * math.sqrt(z0) if n == 0 else -M[n, n - 1]
        o = B[-1] if n == N - 1 else 1.0
        br = Branch([w * pre.value.real, 0.0], blk.core(), [0.0, o * post.value.real])
        subs.append(WaveBlock(2, MatrixResponse.from_array(np.zeros((2, 2))), [br], name=blk.name, group=blk.group))
    pkg = through_package(2 * N + 2, chain_pairs([2] * N))
    return PortNetwork(subs, pkg, 0.0, 0.0, z0)
