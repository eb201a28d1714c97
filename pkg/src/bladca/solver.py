"""
Periodic steady state of a network driven by multisines.

Both network views are reduced to one per-bin linear descriptor around a DC
operating point. Every nonlinear branch ``j`` sees an input ``x_j`` and produces
``z_j = h_j(x_j) = kappa_j x_j + g_j``, where ``kappa_j`` is the slope at the
operating point. With the slopes folded into the linear part,

    x = F_s s + F_g g,        observables = O_s s + O_g g,

and only the residual ``g`` is iterated: branches are swept in declaration
order (Gauss-Seidel), each one evaluating ``h_j`` on an oversampled time grid.
A feedforward cascade is therefore exact after one sweep, and a linear network
never iterates at all.

Spectra live on the union micro-grid ``i * g`` where ``g`` is the exact greatest
common divisor of ``f0`` and every tickler offset.
"""
from __future__ import annotations

import json
import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal as sps

from . import DomainError, NumericalError, StructuralError
from .excitation import MultisineSpec, Realization, realization
from .netmodel import (NonlinearBlock, PortNetwork, SisoFeedbackNetwork, eval_static, static_derivative,
                       wave_index, wave_matrix)
from .spectra import (DETECTION, EVEN, EXCITED, ODD_NONEXCITED, OUT_OF_BAND, TICKLER, FrequencyGrid, Spectrum,
                      exact, to_lattice, union_fundamental, warp_frequencies, write_spectrum)


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 200
    harmonic_order: int | None = None
    damping: float = 1.0
    oversample: int = 8
    mode: str = "freq"
    ts: float | None = None
    periods: int = 20
    tickler_mode: str = "simultaneous"
    settle_tol: float = 1e-8
    warp_ts: float | None = None
    keep: str = "all"
    batch: int = 256
    threads: int = 1
    max_samples: int = 1 << 22

    def __post_init__(self):
        if self.mode not in ("freq", "time"):
            raise DomainError(f"mode must be 'freq' or 'time', got {self.mode!r}")
        if self.tickler_mode not in ("simultaneous", "sequential"):
            raise DomainError(f"tickler_mode must be 'simultaneous' or 'sequential', got {self.tickler_mode!r}")
        if self.keep not in ("all", "sources"):
            raise DomainError(f"keep must be 'all' or 'sources', got {self.keep!r}")
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if not self.tol > 0 or self.max_iter < 1 or self.oversample < 2:
            raise DomainError("tol > 0, max_iter >= 1 and oversample >= 2 are required")
        if self.mode == "time" and not (self.ts and self.ts > 0):
            raise DomainError("time-domain mode needs a positive ts")

    @classmethod
    def from_document(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise StructuralError(f"unknown solver keys {sorted(unknown)}")
        return cls(**d)

    def to_document(self):
        return asdict(self)


@dataclass(frozen=True)
class Source:
    """An excitation together with where it enters the network.

    ``injection`` is a vector on the network's source space: block inputs for a
    SISO network (added to ``U``), wave-system rows for a port network (added to
    the outgoing source waves). ``None`` means the reference input.
    """

    spec: MultisineSpec
    injection: np.ndarray | None = None
    name: str = "R"


def siso_injection(network: SisoFeedbackNetwork, block: int, gain=1.0) -> np.ndarray:
    v = np.zeros(network.n_blocks, dtype=complex)
    v[block] = gain
    return v


def load_current_injection(network: PortNetwork, gamma_out=None) -> np.ndarray:
    """Wave injection of a current source (into the node) in parallel with the load."""
    g = complex(network.gamma_out(np.array([0.0]))[0]) if gamma_out is None else complex(gamma_out)
    v = np.zeros(2 * network.total_ports + 4, dtype=complex)
    v[1] = math.sqrt(network.z0) * (1 + g) / 2
    return v


def wave_injection(network: PortNetwork, row: int, scale=1.0) -> np.ndarray:
    v = np.zeros(2 * network.total_ports + 4, dtype=complex)
    v[row] = scale
    return v


# --- records --------------------------------------------------------------------------

@dataclass(eq=False)
class SteadyStateRecord:
    """Steady-state spectra of one realization on the union grid."""

    m: int
    grid: FrequencyGrid
    signals: tuple
    values: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    aliased: float = 0.0

    def __getitem__(self, name) -> Spectrum:
        return Spectrum(self.grid, self.values[self.signals.index(name)])


@dataclass(eq=False)
class RecordSet:
    """``M`` steady-state records sharing one union grid, stored as one array.

    Indexing yields :class:`SteadyStateRecord` objects; ``data`` has shape
    ``(M, n_signals, n_bins)``.
    """

    grid: FrequencyGrid
    signals: tuple
    data: np.ndarray
    m_indices: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    aliased: np.ndarray
    sources: dict
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.data.shape[0])

    def __getitem__(self, i) -> SteadyStateRecord:
        return SteadyStateRecord(int(self.m_indices[i]), self.grid, self.signals, self.data[i],
                                 int(self.iterations[i]), float(self.residuals[i]), float(self.aliased[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def M(self):
        return len(self)

    def signal(self, name) -> np.ndarray:
        """(M, n_bins) spectra of one signal."""
        try:
            return self.data[:, self.signals.index(name)]
        except ValueError:
            raise StructuralError(f"no signal {name!r}; available: {', '.join(self.signals)}") from None

    def positions(self, source: str) -> np.ndarray:
        """Grid positions holding the excited bins of ``source``."""
        return np.asarray(self.sources[source]["positions"], dtype=np.int64)

    def source_grid(self, source: str) -> FrequencyGrid:
        d = self.sources[source]
        return FrequencyGrid(d["f0_hz"], d["bins"], d["offset_hz"], warp_ts=self.grid.warp_ts)

    def distortion_positions(self) -> np.ndarray:
        used = np.zeros(len(self.grid), dtype=bool)
        for name in self.sources:
            used[self.positions(name)] = True
        return np.flatnonzero(~used)

    def select(self, rows) -> "RecordSet":
        rows = np.asarray(rows)
        return RecordSet(self.grid, self.signals, self.data[rows], self.m_indices[rows], self.iterations[rows],
                         self.residuals[rows], self.aliased[rows], self.sources, dict(self.meta))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.data).tobytes())
        h.update(json.dumps(self._grid_doc(), sort_keys=True).encode())
        return h.hexdigest()

    def _grid_doc(self):
        g = self.grid
        return {"f0_hz": g.f0, "offset_hz": g.offset, "bins": g.bins.tolist(), "labels": list(g.labels),
                "warp_ts": g.warp_ts, "signals": list(self.signals), "sources": self.sources}

    def save(self, directory) -> Path:
        """Write ``manifest.json``, ``grid.json`` and ``signals.npy`` into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "signals.npy", np.ascontiguousarray(self.data), allow_pickle=False)
        (d / "grid.json").write_text(json.dumps(self._grid_doc(), indent=1, sort_keys=True))
        manifest = {
            "m": self.m_indices.tolist(), "iterations": self.iterations.tolist(),
            "residuals": self.residuals.tolist(), "aliased": self.aliased.tolist(),
            "meta": self.meta, "sha256": self.content_hash(),
        }
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "RecordSet":
        d = Path(directory)
        g = json.loads((d / "grid.json").read_text())
        man = json.loads((d / "manifest.json").read_text())
        data = np.load(d / "signals.npy", allow_pickle=False)
        grid = FrequencyGrid(g["f0_hz"], g["bins"], g["offset_hz"], g["labels"], g["warp_ts"])
        return cls(grid, tuple(g["signals"]), data, np.array(man["m"]), np.array(man["iterations"]),
                   np.array(man["residuals"]), np.array(man["aliased"]), g["sources"], man["meta"])

    def export_columnar(self, directory, kinds=None):
        """One columnar spectrum file per signal per realization."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        kinds = kinds or {}
        out = []
        for rec in self:
            for name in self.signals:
                p = d / f"m{rec.m:05d}_{name.replace(':', '_')}.txt"
                write_spectrum(Spectrum(self.grid, rec.values[self.signals.index(name)],
                                        kinds.get(name, "abstract")), p)
                out.append(p)
        return out


# --- union grid -----------------------------------------------------------------------

@dataclass
class _Layout:
    g: Fraction
    order: int
    n_time: int
    positions: dict
    labels: tuple


def _layout(sources, config: SolverConfig) -> _Layout:
    main = sources[0].spec
    grids = [s.spec.grid for s in sources]
    offsets = [exact(s.spec.grid.offset) for s in sources[1:]]
    if len(set(offsets)) != len(offsets):
        raise DomainError("tickler offsets must be pairwise distinct")
    if any(o == 0 for o in offsets):
        raise DomainError("tickler offsets must be nonzero")
    g = union_fundamental(grids)
    positions = {s.name: to_lattice(s.spec.grid, g) for s in sources}
    top = max(int(p.max()) for p in positions.values())
    order = int(config.harmonic_order) if config.harmonic_order else 3 * top
    if order < top:
        raise DomainError(f"harmonic order {order} is below the highest excited bin {top}")
    n_time = max(int(config.oversample) * order, 2 * order + 2)
    n_time += n_time % 2
    if n_time > config.max_samples:
        raise DomainError(f"{n_time} time samples per period exceed max_samples = {config.max_samples}; "
                          "tickler offsets that are not simple fractions of f0 blow up the period")
    ratio = exact(main.f0) / g
    assert ratio.denominator == 1
    step = int(ratio)
    exc = set(int(k) for k in main.grid.bins)
    det = set(main.detection_bins)
    kmin, kmax = main.band
    tick = set()
    for s in sources[1:]:
        tick.update(int(p) for p in positions[s.name])
    labels = []
    for i in range(order + 1):
        if i in tick:
            labels.append(TICKLER)
            continue
        if i % step:
            labels.append(OUT_OF_BAND)
            continue
        k = i // step
        if k in exc:
            labels.append(EXCITED)
        elif k in det:
            labels.append(DETECTION)
        elif k < kmin or k > kmax:
            labels.append(OUT_OF_BAND)
        elif k % 2 == 0:
            labels.append(EVEN)
        else:
            labels.append(ODD_NONEXCITED)
    return _Layout(g, order, n_time, positions, tuple(labels))


# --- compiled descriptors -------------------------------------------------------------

@dataclass
class _Compiled:
    names: tuple
    F_s: np.ndarray   # (K, J, S)
    F_g: np.ndarray   # (K, J, J)
    O_s: np.ndarray   # (K, O, S)
    O_g: np.ndarray   # (K, O, J)
    statics: list
    kappa: np.ndarray


def _siso_branches(net: SisoFeedbackNetwork):
    return [(n, b.core()) for n, b in enumerate(net.blocks) if not b.is_linear]


def _siso_compile(net: SisoFeedbackNetwork, f, kappa, injections):
    K, N = f.size, net.n_blocks
    A, M, B = net.maps(f)
    branches = _siso_branches(net)
    J = len(branches)
    L = np.empty((K, N), dtype=complex)
    P = np.zeros((K, N), dtype=complex)
    pre = np.zeros((K, J), dtype=complex)
    E = np.zeros((N, J))
    j = 0
    for n, b in enumerate(net.blocks):
        if b.is_linear:
            L[:, n] = b.frf(f)
        else:
            pr, po = b.pre_frf()(f), b.post_frf()(f)
            L[:, n] = po * kappa[j] * pr
            P[:, n] = po
            pre[:, j] = pr
            E[n, j] = 1.0
            j += 1
    S = 1 + len(injections)
    Ain = np.empty((K, N, S), dtype=complex)
    Ain[:, :, 0] = A
    for i, v in enumerate(injections, start=1):
        Ain[:, :, i] = v
    loop = np.eye(N)[None] + M * L[:, None, :]
    Q = np.linalg.inv(loop)
    U_s = Q @ Ain
    PE = P[:, :, None] * E[None]
    U_g = -Q @ (M @ PE)
    Y_s = L[:, :, None] * U_s
    Y_g = L[:, :, None] * U_g + PE
    Yt_s = np.einsum("kn,kns->ks", B, Y_s)[:, None]
    Yt_g = np.einsum("kn,knj->kj", B, Y_g)[:, None]
    rows = [n for n, _ in branches]
    F_s = pre[:, :, None] * U_s[:, rows, :]
    F_g = pre[:, :, None] * U_g[:, rows, :]
    eye_s = np.broadcast_to(np.eye(S, dtype=complex), (K, S, S))
    O_s = np.concatenate([eye_s, U_s, Y_s, Yt_s], axis=1)
    O_g = np.concatenate([np.zeros((K, S, J), dtype=complex), U_g, Y_g, Yt_g], axis=1)
    names = tuple([f"U{n + 1}" for n in range(N)] + [f"Y{n + 1}" for n in range(N)] + ["Yt"])
    return names, F_s, F_g, O_s, O_g, [s for _, s in branches]


def _port_branches(net: PortNetwork):
    out = []
    for n, (sub, sl) in enumerate(zip(net.subcircuits, net.slices())):
        for br in sub.branches:
            out.append((n, sl, br))
    return out


def _port_compile(net: PortNetwork, f, kappa, injections):
    K, P = f.size, net.total_ports
    idx = wave_index(P)
    branches = _port_branches(net)
    J = len(branches)
    subs = []
    j = 0
    for sub in net.subcircuits:
        s = sub.s_lin(f)
        for br in sub.branches:
            s = s + kappa[j] * np.outer(br.out_weights, br.in_weights)[None]
            j += 1
        subs.append(s)
    from .netmodel import block_diagonal
    W = wave_matrix(net.gamma_in(f), net.gamma_out(f), net.package(f), block_diagonal(subs))
    Winv = np.linalg.inv(W)
    D = W.shape[-1]
    S = 1 + len(injections)
    Ns = np.zeros((K, D, S), dtype=complex)
    Ns[:, 0, 0] = (1 - net.gamma_in(f)) / (2 * math.sqrt(net.z0))
    for i, v in enumerate(injections, start=1):
        Ns[:, :, i] = v
    E = np.zeros((D, J))
    inw = np.zeros((J, D))
    for j, (n, sl, br) in enumerate(branches):
        rows = idx["sub"][sl]
        E[rows, j] = br.out_weights
        inw[j, rows] = br.in_weights
    a_s = Winv @ Ns
    a_g = Winv @ E
    F_s = np.einsum("jd,kds->kjs", inw, a_s)
    F_g = np.einsum("jd,kdi->kji", inw, a_g)
    pick = list(idx["sub"]) + list(idx["package_internal"]) + [idx["load"]]
    eye_s = np.broadcast_to(np.eye(S, dtype=complex), (K, S, S))
    O_s = np.concatenate([eye_s, a_s[:, pick, :]], axis=1)
    O_g = np.concatenate([np.zeros((K, S, J), dtype=complex), a_g[:, pick, :]], axis=1)
    labels = net.port_labels
    names = tuple([f"A:{lab}" for lab in labels] + [f"B:{lab}" for lab in labels] + ["Bt"])
    return names, F_s, F_g, O_s, O_g, [br.static for _, _, br in branches]


def _compile_any(net, f, kappa, injections):
    if isinstance(net, SisoFeedbackNetwork):
        return _siso_compile(net, f, kappa, injections)
    if isinstance(net, PortNetwork):
        return _port_compile(net, f, kappa, injections)
    raise StructuralError(f"cannot solve a {type(net).__name__}")


def _n_branches(net):
    return len(_siso_branches(net)) if isinstance(net, SisoFeedbackNetwork) else len(_port_branches(net))


def operating_point(net, injections=(), max_iter=200):
    """DC branch inputs with every source at zero, and the branch slopes there.

    Plain fixed-point iteration on the raw branch outputs; non-finite outputs
    (e.g. a logarithm at zero) count as zero. If the iteration does not settle,
    the origin is used.
    """
    J = _n_branches(net)
    if J == 0:
        return np.zeros(0), np.zeros(0)
    _, F_s, F_g, _, _, statics = _compile_any(net, np.array([0.0]), np.zeros(J), injections)
    Fg = F_g[0].real

    def h(x):
        with np.errstate(all="ignore"):
            z = np.array([float(_safe_static(s, xi)) for s, xi in zip(statics, x)])
        z[~np.isfinite(z)] = 0.0
        return z

    z = h(np.zeros(J))
    x = Fg @ z
    for _ in range(max_iter):
        z_new = h(x)
        x_new = Fg @ z_new
        if np.all(np.abs(x_new - x) <= 1e-13 * (1 + np.abs(x))):
            x = x_new
            break
        x, z = x_new, z_new
    else:
        x = np.zeros(J)
    with np.errstate(all="ignore"):
        kappa = np.array([float(static_derivative(s, xi)) for s, xi in zip(statics, x)])
    kappa[~np.isfinite(kappa)] = 0.0
    return x, kappa


def _safe_static(block, x):
    if block.kind == "static_log" and not x > 0:
        return np.nan
    return eval_static(block, x)


# --- frequency-domain path ------------------------------------------------------------

def _to_time(X, n_time):
    c = np.zeros(X.shape[:-1] + (n_time // 2 + 1,), dtype=complex)
    k = X.shape[-1]
    c[..., :k] = X * (n_time / 2)
    c[..., 0] = X[..., 0].real * n_time
    return np.fft.irfft(c, n=n_time)


def _to_freq(x, n_bins):
    F = np.fft.rfft(x)
    X = F[..., :n_bins] * (2.0 / x.shape[-1])
    X[..., 0] = F[..., 0].real / x.shape[-1]
    total = np.sum(np.abs(F) ** 2, axis=-1)
    beyond = np.sum(np.abs(F[..., n_bins:]) ** 2, axis=-1)
    return X, np.where(total > 0, beyond / np.where(total > 0, total, 1.0), 0.0)


def _solve_batch(comp: _Compiled, s, n_time, config: SolverConfig):
    """Gauss-Seidel sweeps for a batch of source spectra ``s`` (B, S, K)."""
    Bn, S, K = s.shape
    J = comp.F_g.shape[1]
    g = np.zeros((Bn, J, K), dtype=complex)
    x_src = np.einsum("kjs,bsk->bjk", comp.F_s, s)
    iterations = np.zeros(Bn, dtype=int)
    residual = np.zeros(Bn)
    aliased = np.zeros(Bn)
    if J:
        with np.errstate(over="ignore", invalid="ignore"):
            g, iterations, residual, aliased = _sweeps(comp, x_src, g, n_time, config)
    else:
        iterations[:] = 1
    obs = np.einsum("kos,bsk->bok", comp.O_s, s) + np.einsum("koj,bjk->bok", comp.O_g, g)
    return obs, iterations, residual, aliased


def _sweeps(comp, x_src, g, n_time, config):
    Bn, J, K = g.shape
    iterations = np.zeros(Bn, dtype=int)
    residual = np.full(Bn, np.inf)
    aliased = np.zeros(Bn)
    for it in range(1, config.max_iter + 1):
        delta = np.zeros(Bn)
        norm = np.zeros(Bn)
        alias_it = np.zeros(Bn)
        for j in range(J):
            xj = x_src[:, j] + np.einsum("ki,bik->bk", comp.F_g[:, j, :], g)
            xt = _to_time(xj, n_time)
            try:
                zt = eval_static(comp.statics[j], xt)
            except DomainError as exc:
                raise DomainError(f"branch {j + 1}: {exc}") from None
            Z, al = _to_freq(zt, K)
            g_new = Z - comp.kappa[j] * xj
            d = g_new - g[:, j]
            delta += np.sum(np.abs(d) ** 2, axis=-1)
            norm += np.sum(np.abs(Z) ** 2, axis=-1)
            alias_it = np.maximum(alias_it, al)
            g[:, j] = g[:, j] + config.damping * d
        res = np.sqrt(delta / np.where(norm > 0, norm, 1.0))
        if not np.all(np.isfinite(res)):
            # report the last finite residual, not the overflow
            raise NumericalError(f"iteration diverged at sweep {it}, last finite residual "
                                 f"{residual.max():.3e}", residual=residual, iterate=g)
        residual, aliased = res, alias_it
        iterations[:] = it
        if np.all(res < config.tol):
            break
    else:
        raise NumericalError(f"no convergence after {config.max_iter} sweeps, residual {residual.max():.3e}",
                             residual=residual, iterate=g)
    return g, iterations, residual, aliased


def _source_spectra(sources, layout: _Layout, m, seed, active=None):
    S = len(sources)
    out = np.zeros((S, layout.order + 1), dtype=complex)
    for i, src in enumerate(sources):
        if active is not None and i not in active:
            continue
        r = realization(src.spec, m, seed, stream=i)
        out[i, layout.positions[src.name]] = r.spectrum.values
    return out


def _prepare(network, sources, config):
    layout = _layout(sources, config)
    f = np.arange(layout.order + 1) * float(layout.g)
    fc = warp_frequencies(f, config.warp_ts) if config.warp_ts else f
    injections = [np.asarray(s.injection, dtype=complex) if s.injection is not None else None for s in sources[1:]]
    for v, s in zip(injections, sources[1:]):
        if v is None:
            raise StructuralError(f"source {s.name!r} needs an injection vector")
    x0, kappa = operating_point(network, injections)
    names, F_s, F_g, O_s, O_g, statics = _compile_any(network, fc, kappa, injections)
    comp = _Compiled(tuple(s.name for s in sources) + names, F_s, F_g, O_s, O_g, statics, kappa)
    return layout, comp


def _normalize_sources(network, main, ticklers):
    srcs = [main if isinstance(main, Source) else Source(main, None, "R")]
    for i, t in enumerate(ticklers, start=1):
        if not isinstance(t, Source):
            inj = (load_current_injection(network) if isinstance(network, PortNetwork)
                   else np.asarray(network.input_map(np.array([0.0]))[0, :, 0]))
            t = Source(t, inj, f"T{i}")
        elif t.name == "R":
            t = Source(t.spec, t.injection, f"T{i}")
        srcs.append(t)
    names = [s.name for s in srcs]
    if len(set(names)) != len(names):
        raise StructuralError(f"duplicate source names {names}")
    return srcs


def _grid(layout, config, ts=None):
    return FrequencyGrid(float(layout.g), np.arange(layout.order + 1), 0.0, layout.labels,
                         ts if ts is not None else config.warp_ts)


def _freq_records(network, sources, ms, seed, config):
    layout, comp = _prepare(network, sources, config)
    S = len(sources)
    groups = [None]
    if config.tickler_mode == "sequential" and S > 2:
        groups = [{0, i} for i in range(1, S)]

    def run(chunk):
        outs = []
        for active in groups:
            s = np.stack([_source_spectra(sources, layout, m, seed, active) for m in chunk])
            outs.append(_solve_batch(comp, s, layout.n_time, config))
        if len(outs) == 1:
            return outs[0]
        # bins of tickler i come from the solve where tickler i was active; the rest from the first
        obs = outs[0][0].copy()
        for i, out in enumerate(outs[1:], start=2):
            obs[:, :, layout.positions[sources[i].name]] = out[0][:, :, layout.positions[sources[i].name]]
        its = np.max([o[1] for o in outs], axis=0)
        res = np.max([o[2] for o in outs], axis=0)
        al = np.max([o[3] for o in outs], axis=0)
        return obs, its, res, al

    chunks = [ms[i:i + config.batch] for i in range(0, len(ms), config.batch)]
    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(_annotate(run), chunks))
    else:
        results = [_annotate(run)(c) for c in chunks]
    return layout, comp.names, results


def _annotate(fn):
    def wrapped(chunk):
        try:
            return fn(chunk)
        except (NumericalError, DomainError) as exc:
            exc.args = (f"realizations {chunk[0]}..{chunk[-1]}: {exc.args[0]}",) + exc.args[1:]
            raise
    return wrapped


def _assemble(layout, names, results, ms, sources, config, meta, ts=None):
    data = np.concatenate([r[0] for r in results])
    its = np.concatenate([r[1] for r in results])
    res = np.concatenate([r[2] for r in results])
    al = np.concatenate([r[3] for r in results])
    grid = _grid(layout, config, ts)
    srcs = {}
    for s in sources:
        srcs[s.name] = {"f0_hz": s.spec.f0, "offset_hz": s.spec.grid.offset,
                        "bins": [int(k) for k in s.spec.grid.bins],
                        "positions": [int(p) for p in layout.positions[s.name]]}
    rs = RecordSet(grid, names, data, np.asarray(ms), its, res, al, srcs, meta)
    if config.keep == "sources":
        keep = np.unique(np.concatenate([layout.positions[s.name] for s in sources]))
        remap = {int(p): i for i, p in enumerate(keep)}
        for d in srcs.values():
            d["positions"] = [remap[p] for p in d["positions"]]
        rs = RecordSet(grid.subset(keep), names, data[:, :, keep], rs.m_indices, its, res, al, srcs, meta)
    return rs


def solve_frequency_domain(network, excitations, config: SolverConfig | None = None) -> SteadyStateRecord:
    """Steady state for one set of realizations (main first, then ticklers).

    ``excitations`` holds :class:`Realization` objects, or ``(Realization,
    injection)`` pairs for ticklers. All realizations must share one index ``m``.
    """
    config = config or SolverConfig()
    excitations = list(excitations)
    if not excitations:
        raise StructuralError("at least the main excitation is required")
    reals, sources = [], []
    for i, e in enumerate(excitations):
        r, inj = (e if isinstance(e, tuple) else (e, None))
        reals.append(r)
        sources.append(Source(r.spec, inj, "R" if i == 0 else f"T{i}"))
    sources = _normalize_sources(network, sources[0], sources[1:])
    layout, comp = _prepare(network, sources, config)
    s = np.zeros((1, len(sources), layout.order + 1), dtype=complex)
    for i, (src, r) in enumerate(zip(sources, reals)):
        s[0, i, layout.positions[src.name]] = r.spectrum.values
    obs, its, res, al = _solve_batch(comp, s, layout.n_time, config)
    return SteadyStateRecord(reals[0].m, _grid(layout, config), comp.names, obs[0], int(its[0]), float(res[0]),
                             float(al[0]))


# --- time-domain path -----------------------------------------------------------------

def _discrete(frf, fs):
    """(b, a) of the trapezoidal discretisation of a constant or rational FRF."""
    if frf.kind == "const":
        if frf.value.imag:
            raise StructuralError("complex constant gains have no real-time realization")
        return np.array([frf.value.real]), np.array([1.0])
    if frf.kind == "rational":
        return sps.bilinear(frf.num, frf.den, fs)
    raise StructuralError("tabulated FRFs have no time-domain realization; use rational or constant entries")


def _time_plan(net, fs):
    if not isinstance(net, SisoFeedbackNetwork):
        raise StructuralError("the time-domain path supports SISO feedforward networks only")
    N = net.n_blocks
    consts = []
    for mat in (net.input_map, net.feedback_map, net.output_map):
        if not all(e.is_const for row in mat.entries for e in row):
            raise StructuralError("the time-domain path needs constant A, M and B maps")
        arr = np.array([[e.value for e in row] for row in mat.entries])
        if np.any(arr.imag):
            raise StructuralError("the time-domain path needs real A, M and B maps")
        consts.append(arr.real)
    A, M, B = consts
    if np.any(np.triu(M) != 0):
        raise StructuralError("the time-domain path needs a strictly lower-triangular (feedforward) M")
    plan = []
    for b in net.blocks:
        if b.is_linear:
            plan.append(("linear", _discrete(b.frf, fs), None, None))
        else:
            plan.append(("static", _discrete(b.pre_frf(), fs), b.core(), _discrete(b.post_frf(), fs)))
    return A[:, 0], M, B[0], plan


def _time_run(net, sources, layout, ms, seed, ts, periods, config):
    fs = 1.0 / ts
    n_per = Fraction(1) / (layout.g * exact(ts))
    if n_per.denominator != 1:
        raise DomainError(f"ts = {ts} s does not divide the period 1/{float(layout.g)} s into whole samples")
    n_per = int(n_per)
    if n_per // 2 <= layout.order:
        raise DomainError(f"{n_per} samples per period cannot hold {layout.order} harmonics")
    if periods < 2:
        raise DomainError("at least two periods are needed to check settling")
    A, M, B, plan = _time_plan(net, fs)
    N = len(plan)
    injections = [np.real(np.asarray(s.injection, dtype=complex)) for s in sources[1:]]
    t = np.arange(periods * n_per) * ts
    results = []
    for m in ms:
        reals = [realization(src.spec, m, seed, stream=i) for i, src in enumerate(sources)]
        r = [re.time_signal(t) for re in reals]
        U = np.zeros((N, t.size))
        Y = np.zeros((N, t.size))
        for n, (kind, pre, core, post) in enumerate(plan):
            u = A[n] * r[0] - M[n, :n] @ Y[:n]
            for v, rr in zip(injections, r[1:]):
                u = u + v[n] * rr
            U[n] = u
            x = sps.lfilter(pre[0], pre[1], u)
            if kind == "static":
                x = sps.lfilter(post[0], post[1], eval_static(core, x))
            Y[n] = x
        sig = np.vstack([np.stack(r), U, Y, (B @ Y)[None]])
        last, prev = sig[:, -n_per:], sig[:, -2 * n_per:-n_per]
        disc = np.linalg.norm(last - prev) / max(np.linalg.norm(last), 1e-300)
        if disc > config.settle_tol:
            raise NumericalError(f"realization {m}: transient not settled, last-two-period discrepancy {disc:.3e}",
                                 residual=disc)
        X, al = _to_freq(last, layout.order + 1)
        results.append((X, disc, float(np.max(al))))
    data = np.stack([x for x, _, _ in results])
    return data, np.array([d for _, d, _ in results]), np.array([a for _, _, a in results])


def solve_time_domain(network, excitation: Realization, ts: float, periods: int = 20,
                      config: SolverConfig | None = None, ticklers=()) -> SteadyStateRecord:
    """Trapezoidal simulation over ``periods`` periods; the last one is transformed.

    The record's grid carries ``warp_ts = ts``: linear dynamics in it respond at
    the warped frequencies of :func:`bladca.spectra.warp_frequencies`.
    """
    config = config or SolverConfig(mode="time", ts=ts, periods=periods)
    sources = _normalize_sources(network, Source(excitation.spec, None, "R"), list(ticklers))
    layout = _layout(sources, config)
    data, disc, al = _time_run(network, sources, layout, [excitation.m], None, ts, periods, config)
    names = tuple(s.name for s in sources) + tuple(
        [f"U{n + 1}" for n in range(network.n_blocks)] + [f"Y{n + 1}" for n in range(network.n_blocks)] + ["Yt"])
    return SteadyStateRecord(excitation.m, _grid(layout, config, ts), names, data[0], periods, float(disc[0]),
                             float(al[0]))


# --- experiments ----------------------------------------------------------------------

def run_experiment(network, main_spec, tickler_specs=(), M: int = 1, seed: int | None = None,
                   config: SolverConfig | None = None, start: int = 0) -> RecordSet:
    """Solve ``M`` phase realizations ``start .. start + M - 1``.

    ``tickler_specs`` entries are :class:`MultisineSpec` (injected at the default
    point: the reference input of a SISO network, a load-side current source of
    a port network) or :class:`Source` objects.
    """
    config = config or SolverConfig()
    if M < 1:
        raise DomainError("M must be at least 1")
    seed = main_spec.seed if seed is None else int(seed)
    sources = _normalize_sources(network, main_spec, list(tickler_specs))
    ms = list(range(start, start + M))
    meta = {"seed": seed, "config": config.to_document(), "view": type(network).__name__,
            "sources": [s.name for s in sources]}
    if config.mode == "time":
        layout = _layout(sources, config)
        data, disc, al = _time_run(network, sources, layout, ms, seed, config.ts, config.periods, config)
        names = tuple(s.name for s in sources) + tuple(
            [f"U{n + 1}" for n in range(network.n_blocks)] + [f"Y{n + 1}" for n in range(network.n_blocks)]
            + ["Yt"])
        results = [(data, np.full(M, config.periods), disc, al)]
        return _assemble(layout, names, results, ms, sources, config, meta, ts=config.ts)
    layout, names, results = _freq_records(network, sources, ms, seed, config)
    return _assemble(layout, names, results, ms, sources, config, meta)
