"""
Network descriptions for the two analysis views.

* :class:`SisoFeedbackNetwork` -- ``N`` single-input single-output blocks in a
  linear structure ``U = A R - M Y``, ``Y_t = B Y``.
* :class:`PortNetwork` -- multi-port sub-circuits embedded in a linear package
  with two external ports (source side first, load side second), described in
  power waves.

Package port ordering is fixed: external port 1 (source), external port 2
(load), then the sub-circuit ports in declaration order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import DomainError, StructuralError
from .spectra import DEFAULT_Z0
from . import textdoc
from .textdoc import DocumentError, format_complex, parse_complex


# --- frequency dependent entries ------------------------------------------------------

class FRF:
    """A scalar frequency response: constant, tabulated, or rational in ``s = j 2 pi f``."""

    def __init__(self, kind="const", value=0.0, freqs=None, values=None, num=None, den=None):
        self.kind = kind
        if kind == "const":
            self.value = complex(value)
        elif kind == "table":
            f = np.asarray(freqs, dtype=float)
            v = np.asarray(values, dtype=complex)
            if f.ndim != 1 or f.shape != v.shape or f.size < 1:
                raise StructuralError("FRF table needs matching one-dimensional frequency and value lists")
            if np.any(np.diff(f) <= 0):
                raise StructuralError("FRF table frequencies must be strictly increasing")
            self.freqs, self.values = f, v
        elif kind == "rational":
            self.num = np.atleast_1d(np.asarray(num, dtype=float))
            self.den = np.atleast_1d(np.asarray(den, dtype=float))
            if not np.any(self.den):
                raise DomainError("rational FRF has a zero denominator")
        else:
            raise StructuralError(f"unknown FRF kind {kind!r}")

    @classmethod
    def const(cls, value):
        return cls("const", value)

    @classmethod
    def table(cls, freqs, values):
        return cls("table", freqs=freqs, values=values)

    @classmethod
    def rational(cls, num, den):
        return cls("rational", num=num, den=den)

    @property
    def is_const(self):
        return self.kind == "const"

    def covers(self, fmin, fmax) -> bool:
        if self.kind != "table":
            return True
        return self.freqs[0] <= fmin and self.freqs[-1] >= fmax

    def __call__(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if self.kind == "const":
            return np.full(f.shape, self.value, dtype=complex)
        if self.kind == "table":
            if f.size and (f.min() < self.freqs[0] - 1e-9 * abs(self.freqs[0]) or
                           f.max() > self.freqs[-1] * (1 + 1e-12)):
                raise DomainError(f"FRF table covers {self.freqs[0]}..{self.freqs[-1]} Hz, "
                                  f"requested {f.min()}..{f.max()} Hz")
            return (np.interp(f, self.freqs, self.values.real)
                    + 1j * np.interp(f, self.freqs, self.values.imag))
        s = 2j * np.pi * f
        return np.polyval(self.num, s) / np.polyval(self.den, s)

    def to_document(self):
        if self.kind == "const":
            return self.value.real if self.value.imag == 0 else format_complex(self.value)
        if self.kind == "table":
            return {"table": {"f_hz": self.freqs.tolist(), "re": self.values.real.tolist(),
                              "im": self.values.imag.tolist()}}
        return {"rational": {"num": self.num.tolist(), "den": self.den.tolist()}}

    def __eq__(self, other):
        if not isinstance(other, FRF) or other.kind != self.kind:
            return False
        if self.kind == "const":
            return self.value == other.value
        if self.kind == "table":
            return np.array_equal(self.freqs, other.freqs) and np.array_equal(self.values, other.values)
        return np.array_equal(self.num, other.num) and np.array_equal(self.den, other.den)

    def __repr__(self):
        if self.kind == "const":
            return f"FRF.const({self.value})"
        return f"FRF.{self.kind}(...)"


def as_frf(x) -> FRF:
    return x if isinstance(x, FRF) else FRF.const(x)


def frf_from_document(value) -> FRF:
    if isinstance(value, dict):
        if "table" in value:
            t = value["table"]
            vals = np.asarray(t["re"], dtype=float) + 1j * np.asarray(t.get("im", [0.0] * len(t["re"])), dtype=float)
            return FRF.table(t["f_hz"], vals)
        if "rational" in value:
            r = value["rational"]
            return FRF.rational(r["num"], r["den"])
        raise StructuralError(f"unknown frequency response entry {sorted(value)}")
    return FRF.const(parse_complex(value))


class MatrixResponse:
    """Matrix of :class:`FRF` entries."""

    def __init__(self, entries):
        rows = [[as_frf(e) for e in row] for row in entries]
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise StructuralError("matrix entries must form a rectangle")
        self.entries = rows

    @classmethod
    def from_array(cls, arr):
        arr = np.atleast_2d(np.asarray(arr, dtype=complex))
        return cls([[complex(v) for v in row] for row in arr])

    @classmethod
    def from_tables(cls, freqs, stack):
        stack = np.asarray(stack, dtype=complex)
        n, m = stack.shape[1:]
        return cls([[FRF.table(freqs, stack[:, i, j]) for j in range(m)] for i in range(n)])

    @property
    def shape(self):
        return len(self.entries), len(self.entries[0])

    def __call__(self, f) -> np.ndarray:
        f = np.atleast_1d(np.asarray(f, dtype=float))
        out = np.empty((f.size,) + self.shape, dtype=complex)
        for i, row in enumerate(self.entries):
            for j, e in enumerate(row):
                out[:, i, j] = e(f)
        return out

    def covers(self, fmin, fmax):
        return all(e.covers(fmin, fmax) for row in self.entries for e in row)

    def to_document(self):
        return [[e.to_document() for e in row] for row in self.entries]

    def __eq__(self, other):
        return isinstance(other, MatrixResponse) and self.entries == other.entries


# --- nonlinear block primitives -------------------------------------------------------

STATIC_KINDS = ("static_polynomial", "static_exp", "static_log", "static_saturation")
BLOCK_KINDS = STATIC_KINDS + ("linear_frf", "composed")


@dataclass(eq=False)
class NonlinearBlock:
    """Memoryless map, linear FRF, or FRF - static map - FRF sandwich.

    Static maps: ``static_polynomial`` evaluates ``sum_i coeffs[i-1] u**i``;
    ``static_exp`` is ``scale * exp(u / scale)`` and ``static_log`` its inverse
    ``scale * log(u / scale)``; ``static_saturation`` clips to ``[-limit, limit]``.
    """

    kind: str
    coeffs: tuple = ()
    scale: float = 1.0
    limit: float = 1.0
    frf: FRF | None = None
    pre: FRF | None = None
    post: FRF | None = None
    static: "NonlinearBlock | None" = None
    name: str = ""
    group: str = ""

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise StructuralError(f"unknown block kind {self.kind!r}")
        self.coeffs = tuple(float(c) for c in self.coeffs)
        if self.kind == "static_polynomial" and not self.coeffs:
            raise StructuralError("a polynomial block needs at least one coefficient")
        if self.kind in ("static_exp", "static_log") and not self.scale > 0:
            raise DomainError("exp/log scale must be positive")
        if self.kind == "static_saturation" and not self.limit > 0:
            raise DomainError("saturation limit must be positive")
        if self.kind == "linear_frf" and self.frf is None:
            raise StructuralError("a linear_frf block needs an FRF")
        if self.kind == "composed":
            if self.static is None or not self.static.is_static:
                raise StructuralError("a composed block needs a static core")
            self.pre = as_frf(1.0 if self.pre is None else self.pre)
            self.post = as_frf(1.0 if self.post is None else self.post)

    @property
    def is_static(self):
        return self.kind in STATIC_KINDS

    @property
    def is_linear(self):
        return self.kind == "linear_frf"

    def core(self) -> "NonlinearBlock":
        return self.static if self.kind == "composed" else self

    def pre_frf(self) -> FRF:
        return self.pre if self.kind == "composed" else FRF.const(1.0)

    def post_frf(self) -> FRF:
        return self.post if self.kind == "composed" else FRF.const(1.0)

    def to_document(self):
        d = {"name": self.name} if self.name else {}
        d["kind"] = self.kind
        if self.kind == "static_polynomial":
            d["coeffs"] = list(self.coeffs)
        elif self.kind in ("static_exp", "static_log"):
            d["scale"] = self.scale
        elif self.kind == "static_saturation":
            d["limit"] = self.limit
        elif self.kind == "linear_frf":
            d["frf"] = self.frf.to_document()
        else:
            d["pre"] = self.pre.to_document()
            d["static"] = self.static.to_document()
            d["post"] = self.post.to_document()
        if self.group and self.group != self.name:
            d["group"] = self.group
        return d

    def __eq__(self, other):
        return isinstance(other, NonlinearBlock) and self.to_document() == other.to_document()


def eval_static(block: NonlinearBlock, u):
    """Evaluate a memoryless block pointwise.

    Raises
    ------
    DomainError
        For a logarithm of a nonpositive sample; the message names the flat index
        of the first offending sample.
    """
    if not block.is_static:
        raise StructuralError(f"block kind {block.kind!r} is not memoryless")
    u = np.asarray(u, dtype=float)
    if block.kind == "static_polynomial":
        out = np.zeros_like(u)
        for c in reversed(block.coeffs):
            out = (out + c) * u
        return out
    if block.kind == "static_exp":
        return block.scale * np.exp(u / block.scale)
    if block.kind == "static_log":
        bad = np.flatnonzero(~(u > 0))
        if bad.size:
            i = int(bad[0])
            raise DomainError(f"logarithm of nonpositive value {u.flat[i]!r} at sample {i}")
        return block.scale * np.log(u / block.scale)
    return np.clip(u, -block.limit, block.limit)


def static_derivative(block: NonlinearBlock, u):
    """Slope of a memoryless block at ``u``."""
    u = np.asarray(u, dtype=float)
    if block.kind == "static_polynomial":
        out = np.zeros_like(u)
        for i, c in reversed(list(enumerate(block.coeffs, start=1))):
            out = out * u + i * c
        return out
    if block.kind == "static_exp":
        return np.exp(u / block.scale)
    if block.kind == "static_log":
        return block.scale / u
    return (np.abs(u) < block.limit).astype(float)


def polynomial(*coeffs, **kw):
    return NonlinearBlock("static_polynomial", coeffs=coeffs, **kw)


def exp_block(scale=1.0, **kw):
    return NonlinearBlock("static_exp", scale=scale, **kw)


def log_block(scale=1.0, **kw):
    return NonlinearBlock("static_log", scale=scale, **kw)


def saturation(limit=1.0, **kw):
    return NonlinearBlock("static_saturation", limit=limit, **kw)


def linear(frf, **kw):
    return NonlinearBlock("linear_frf", frf=as_frf(frf), **kw)


def composed(static, pre=1.0, post=1.0, **kw):
    return NonlinearBlock("composed", static=static, pre=as_frf(pre), post=as_frf(post), **kw)


# --- SISO view ------------------------------------------------------------------------

@dataclass(eq=False)
class SisoFeedbackNetwork:
    """``N`` blocks wired by ``U = A R - M Y`` and observed through ``Y_t = B Y``."""

    blocks: list
    input_map: MatrixResponse
    feedback_map: MatrixResponse
    output_map: MatrixResponse
    analysis_range: tuple = (0.0, math.inf)

    def __post_init__(self):
        n = len(self.blocks)
        if n == 0:
            raise StructuralError("a network needs at least one block")
        self.input_map = _as_matrix(self.input_map, column=True)
        self.feedback_map = _as_matrix(self.feedback_map)
        self.output_map = _as_matrix(self.output_map, row=True)
        if self.input_map.shape != (n, 1):
            raise StructuralError(f"input map must be {n}x1, got {self.input_map.shape}")
        if self.feedback_map.shape != (n, n):
            raise StructuralError(f"feedback map must be {n}x{n}, got {self.feedback_map.shape}")
        if self.output_map.shape != (1, n):
            raise StructuralError(f"output map must be 1x{n}, got {self.output_map.shape}")
        for i, b in enumerate(self.blocks):
            if not b.name:
                b.name = f"block{i + 1}"
            if not b.group:
                b.group = b.name

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def labels(self):
        return [b.name for b in self.blocks]

    def maps(self, f):
        """``A`` (K, N), ``M`` (K, N, N) and ``B`` (K, N) at frequencies ``f``."""
        return self.input_map(f)[:, :, 0], self.feedback_map(f), self.output_map(f)[:, 0, :]

    def block_frf(self, n, f):
        """Small-signal independent linear factors of block ``n``: (pre, post) or (H, None)."""
        b = self.blocks[n]
        if b.is_linear:
            return b.frf(f), None
        return b.pre_frf()(f), b.post_frf()(f)


def _as_matrix(x, column=False, row=False):
    if isinstance(x, MatrixResponse):
        return x
    arr = np.asarray(x, dtype=object)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if column else arr.reshape(1, -1)
    return MatrixResponse(arr.tolist())


# --- port view ------------------------------------------------------------------------

@dataclass(eq=False)
class Branch:
    """Static map driven by ``x = in_weights . a`` adding ``out_weights * f(x)`` to ``b``."""

    in_weights: np.ndarray
    static: NonlinearBlock
    out_weights: np.ndarray

    def __post_init__(self):
        self.in_weights = np.asarray(self.in_weights, dtype=float).ravel()
        self.out_weights = np.asarray(self.out_weights, dtype=float).ravel()
        if not self.static.is_static:
            raise StructuralError("branches need a memoryless map")


@dataclass(eq=False)
class WaveBlock:
    """Multi-port sub-circuit ``b = S_lin a + sum_j out_j f_j(in_j . a)``."""

    ports: int
    s_lin: MatrixResponse
    branches: list = field(default_factory=list)
    name: str = ""
    group: str = ""

    def __post_init__(self):
        self.s_lin = self.s_lin if isinstance(self.s_lin, MatrixResponse) else MatrixResponse.from_array(self.s_lin)
        if self.s_lin.shape != (self.ports, self.ports):
            raise StructuralError(f"{self.name or 'sub-circuit'}: S matrix must be {self.ports}x{self.ports}")
        for br in self.branches:
            if br.in_weights.size != self.ports or br.out_weights.size != self.ports:
                raise StructuralError(f"{self.name or 'sub-circuit'}: branch weights must have {self.ports} entries")

    def small_signal(self, f, operating_point=None) -> np.ndarray:
        """Linearisation around ``x = 0`` (or the given branch inputs): (K, p, p)."""
        s = self.s_lin(f)
        for j, br in enumerate(self.branches):
            x0 = 0.0 if operating_point is None else operating_point[j]
            s = s + float(static_derivative(br.static, x0)) * np.outer(br.out_weights, br.in_weights)
        return s

    def to_document(self):
        d = {"name": self.name, "ports": self.ports, "kind": "wave_block", "s_lin": self.s_lin.to_document()}
        if self.branches:
            d["branches"] = [{"in": br.in_weights.tolist(), "static": br.static.to_document(),
                              "out": br.out_weights.tolist()} for br in self.branches]
        if self.group and self.group != self.name:
            d["group"] = self.group
        return d


def transconductor(gm, static=None, r_in=math.inf, r_out=math.inf, mu=0.0, z0=DEFAULT_Z0, name="", group=""):
    """Two-port with input conductance and a controlled output current ``gm * f(v1) + mu * a2``.

    Port currents flow into the device. With ``f`` the identity this is the
    classic voltage-controlled current source; ``mu`` adds a dependence of the
    controlling signal on the incident wave at the output port.
    """
    g1 = (r_in - z0) / (r_in + z0) if math.isfinite(r_in) else 1.0
    g2 = (r_out - z0) / (r_out + z0) if math.isfinite(r_out) else 1.0
    root = math.sqrt(z0)
    out_scale = -root * gm / (1 + (z0 / r_out if math.isfinite(r_out) else 0.0))
    static = static if static is not None else polynomial(1.0)
    branch = Branch([root * (1 + g1), mu], static, [0.0, out_scale])
    return WaveBlock(2, MatrixResponse.from_array(np.diag([g1, g2])), [branch], name=name, group=group)


class NodalPackage:
    """Package S-matrix computed from admittances between nodes (node 0 is ground)."""

    def __init__(self, n_nodes, elements, port_nodes, z0=DEFAULT_Z0):
        self.n_nodes = int(n_nodes)
        self.elements = [(int(i), int(j), as_frf(y)) for i, j, y in elements]
        self.port_nodes = [int(p) for p in port_nodes]
        self.z0 = float(z0)
        for i, j, _ in self.elements:
            if not (0 <= i <= self.n_nodes and 0 <= j <= self.n_nodes):
                raise StructuralError(f"element between nodes {i} and {j} outside 0..{self.n_nodes}")
        if any(not 1 <= p <= self.n_nodes for p in self.port_nodes):
            raise StructuralError("ports must sit on non-ground nodes")

    @property
    def shape(self):
        n = len(self.port_nodes)
        return n, n

    def covers(self, fmin, fmax):
        return all(y.covers(fmin, fmax) for _, _, y in self.elements)

    def __call__(self, f):
        f = np.atleast_1d(np.asarray(f, dtype=float))
        n, q, z0 = self.n_nodes, len(self.port_nodes), self.z0
        Y = np.zeros((f.size, n + 1, n + 1), dtype=complex)
        for i, j, y in self.elements:
            yv = y(f)
            Y[:, i, i] += yv
            Y[:, j, j] += yv
            Y[:, i, j] -= yv
            Y[:, j, i] -= yv
        Y = Y[:, 1:, 1:]
        E = np.zeros((n, q))
        for p, node in enumerate(self.port_nodes):
            E[node - 1, p] = 1.0
            Y[:, node - 1, node - 1] += 1.0 / z0
        # port p driven by 2 sqrt(z0) a_p behind z0: node voltages for a = I
        V = np.linalg.solve(Y, np.broadcast_to(E / z0 * 2 * math.sqrt(z0), (f.size, n, q)))
        v = np.einsum("np,knq->kpq", E, V)
        a = np.eye(q)
        i_into = (2 * math.sqrt(z0) * a - v) / z0
        return (v - z0 * i_into) / (2 * math.sqrt(z0))

    def to_document(self):
        return {"nodal": {"nodes": self.n_nodes, "ports": self.port_nodes,
                          "elements": [[i, j, y.to_document()] for i, j, y in self.elements]}}


def through_package(n_ports, pairs) -> MatrixResponse:
    """Ideal lossless interconnect joining 0-based package ports pairwise."""
    s = np.zeros((n_ports, n_ports), dtype=complex)
    used = set()
    for i, j in pairs:
        if i in used or j in used or i == j:
            raise StructuralError(f"package port used twice in {pairs}")
        used.update((i, j))
        s[i, j] = s[j, i] = 1.0
    return MatrixResponse.from_array(s)


def chain_pairs(port_counts):
    """Pairs for a cascade: source -> sub1.p1, sub_n.p2 -> sub_n+1.p1, ..., sub_N.p2 -> load."""
    offsets = np.concatenate([[0], np.cumsum(port_counts)]) + 2
    pairs = [(0, int(offsets[0]))]
    for n in range(len(port_counts) - 1):
        pairs.append((int(offsets[n] + 1), int(offsets[n + 1])))
    pairs.append((int(offsets[len(port_counts) - 1] + 1), 1))
    return pairs


@dataclass(eq=False)
class PortNetwork:
    """Sub-circuits embedded in a two-external-port package with source and load terminations."""

    subcircuits: list
    package: object
    gamma_in: FRF = None
    gamma_out: FRF = None
    z0: float = DEFAULT_Z0
    analysis_range: tuple = (0.0, math.inf)

    def __post_init__(self):
        if not self.subcircuits:
            raise StructuralError("a network needs at least one sub-circuit")
        self.gamma_in = as_frf(0.0 if self.gamma_in is None else self.gamma_in)
        self.gamma_out = as_frf(0.0 if self.gamma_out is None else self.gamma_out)
        if not isinstance(self.package, (MatrixResponse, NodalPackage)):
            self.package = MatrixResponse.from_array(self.package)
        q = self.total_ports + 2
        if self.package.shape != (q, q):
            raise StructuralError(f"package must be {q}x{q} for {self.total_ports} sub-circuit ports "
                                  f"and two external ports, got {self.package.shape}")
        for i, s in enumerate(self.subcircuits):
            if not s.name:
                s.name = f"sub{i + 1}"
            if not s.group:
                s.group = s.name

    @property
    def port_counts(self):
        return [s.ports for s in self.subcircuits]

    @property
    def total_ports(self):
        return int(sum(self.port_counts))

    @property
    def port_labels(self):
        return [f"{s.name}.{p + 1}" for s in self.subcircuits for p in range(s.ports)]

    @property
    def port_groups(self):
        return [s.group for s in self.subcircuits for _ in range(s.ports)]

    def slices(self):
        out, start = [], 0
        for s in self.subcircuits:
            out.append(slice(start, start + s.ports))
            start += s.ports
        return out

    def small_signal(self, f) -> list:
        return [s.small_signal(f) for s in self.subcircuits]


def block_diagonal(blocks) -> np.ndarray:
    """Stack per-frequency square blocks (K, p_n, p_n) into (K, P, P)."""
    k = blocks[0].shape[0]
    p = sum(b.shape[-1] for b in blocks)
    out = np.zeros((k, p, p), dtype=complex)
    i = 0
    for b in blocks:
        n = b.shape[-1]
        out[:, i:i + n, i:i + n] = b
        i += n
    return out


# --- S-matrix tabulation files --------------------------------------------------------

def write_smatrix_file(path, freqs, s, z0=DEFAULT_Z0):
    """Per-frequency rows ``f_hz re im re im ...`` with column-major entries."""
    s = np.asarray(s, dtype=complex)
    n = s.shape[1]
    lines = [f"# ports={n} z0={z0!r}"]
    for f, m in zip(freqs, s):
        flat = m.T.ravel()
        lines.append(" ".join([f"{f:.17g}"] + [f"{v.real:.17g} {v.imag:.17g}" for v in flat]))
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def read_smatrix_file(path):
    """Return ``(freqs, s, z0)`` from a tabulation file."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise DocumentError("missing '# ports=.. z0=..' header", 1, str(path))
    meta = dict(item.split("=", 1) for item in lines[0][1:].split())
    n = int(meta["ports"])
    z0 = float(meta.get("z0", DEFAULT_Z0))
    freqs, mats = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        vals = [float(v) for v in ln.split()]
        if len(vals) != 1 + 2 * n * n:
            raise DocumentError(f"expected {1 + 2 * n * n} numbers, got {len(vals)}", lineno, str(path))
        c = np.array(vals[1::2]) + 1j * np.array(vals[2::2])
        freqs.append(vals[0])
        mats.append(c.reshape(n, n).T)
    return np.array(freqs), np.array(mats), z0


# --- netlist documents ----------------------------------------------------------------

def _block_from_doc(doc, d, path):
    kind = d.get("kind")
    if kind not in BLOCK_KINDS:
        raise DocumentError(f"unknown block kind {kind!r}", doc.line(*path, "kind"), doc.source)
    common = {"name": str(d.get("name", "")), "group": str(d.get("group", ""))}
    try:
        if kind == "static_polynomial":
            return polynomial(*d["coeffs"], **common)
        if kind == "static_exp":
            return exp_block(float(d.get("scale", 1.0)), **common)
        if kind == "static_log":
            return log_block(float(d.get("scale", 1.0)), **common)
        if kind == "static_saturation":
            return saturation(float(d.get("limit", 1.0)), **common)
        if kind == "linear_frf":
            return linear(frf_from_document(d["frf"]), **common)
        core = _block_from_doc(doc, d["static"], path + ("static",))
        return composed(core, frf_from_document(d.get("pre", 1.0)), frf_from_document(d.get("post", 1.0)), **common)
    except KeyError as exc:
        raise DocumentError(f"block is missing key {exc.args[0]!r}", doc.line(*path), doc.source) from None
    except (ValueError, TypeError) as exc:
        raise DocumentError(str(exc), doc.line(*path), doc.source) from None


def _subcircuit_from_doc(doc, d, path, z0):
    kind = d.get("kind", "wave_block")
    name, group = str(d.get("name", "")), str(d.get("group", ""))
    try:
        if kind == "transconductor":
            static = _block_from_doc(doc, d["static"], path + ("static",)) if "static" in d else None
            return transconductor(float(d["gm"]), static, float(d.get("r_in", math.inf)),
                                  float(d.get("r_out", math.inf)), float(d.get("mu", 0.0)), z0, name, group)
        if kind != "wave_block":
            raise DocumentError(f"unknown sub-circuit kind {kind!r}", doc.line(*path, "kind"), doc.source)
        p = int(d["ports"])
        if "s_lin" in d:
            s = MatrixResponse([[frf_from_document(v) for v in row] for row in d["s_lin"]])
        else:
            s = MatrixResponse.from_array(np.zeros((p, p)))
        branches = []
        for j, br in enumerate(d.get("branches", [])):
            branches.append(Branch(br["in"], _block_from_doc(doc, br["static"], path + ("branches", j, "static")),
                                   br["out"]))
        return WaveBlock(p, s, branches, name, group)
    except KeyError as exc:
        raise DocumentError(f"sub-circuit is missing key {exc.args[0]!r}", doc.line(*path), doc.source) from None
    except StructuralError as exc:
        if isinstance(exc, DocumentError):
            raise
        raise DocumentError(f"dimension mismatch: {exc}", doc.line(*path), doc.source) from None


def _package_from_doc(doc, d, n_ports, base):
    if "through" in d:
        pairs = [(int(i) - 1, int(j) - 1) for i, j in d["through"]]
        return through_package(n_ports, pairs)
    if "chain" in d:
        return None
    if "matrix" in d:
        return MatrixResponse([[frf_from_document(v) for v in row] for row in d["matrix"]])
    if "file" in d:
        p = Path(d["file"])
        if not p.is_absolute() and base is not None:
            p = Path(base).parent / p
        freqs, s, _ = read_smatrix_file(p)
        return MatrixResponse.from_tables(freqs, s)
    if "nodal" in d:
        nd = d["nodal"]
        elements = [(i, j, frf_from_document(y)) for i, j, y in nd["elements"]]
        return NodalPackage(nd["nodes"], elements, nd["ports"], d.get("z0", DEFAULT_Z0))
    raise DocumentError("package needs one of through, chain, matrix, file, nodal", doc.line("package"), doc.source)


def parse_network(document):
    """Validate a netlist document and build the network it describes.

    ``document`` may be a path, YAML text, a dict, or an already loaded
    :class:`bladca.textdoc.Located`. Diagnostics raise
    :class:`bladca.textdoc.DocumentError` with the offending line.
    """
    if isinstance(document, textdoc.Located):
        doc = document
    elif isinstance(document, dict):
        doc = textdoc.Located(document, {})
    else:
        doc = textdoc.load(document)
    d = doc.data
    grid = d.get("analysis_grid", {}) or {}
    fmin = float(grid.get("fmin_hz", 0.0))
    fmax = float(grid.get("fmax_hz", math.inf))
    blocks_doc = d.get("blocks")
    if not blocks_doc:
        raise doc.error("the blocks section is empty or missing", "blocks")
    view = d.get("view", "port" if "package" in d else "siso")
    if view == "siso":
        blocks = [_block_from_doc(doc, b, ("blocks", i)) for i, b in enumerate(blocks_doc)]
        maps = d.get("maps")
        if maps is None:
            raise doc.error("a SISO network needs a maps section (input, feedback, output)")
        try:
            A = MatrixResponse([[frf_from_document(v)] for v in maps["input"]])
            M = MatrixResponse([[frf_from_document(v) for v in row] for row in maps["feedback"]])
            B = MatrixResponse([[frf_from_document(v) for v in maps["output"]]])
        except KeyError as exc:
            raise doc.error(f"maps is missing {exc.args[0]!r}", "maps") from None
        except StructuralError as exc:
            raise doc.error(f"dimension mismatch: {exc}", "maps") from None
        n = len(blocks)
        for key, m, want in (("input", A, (n, 1)), ("feedback", M, (n, n)), ("output", B, (1, n))):
            if m.shape != want:
                raise doc.error(f"dimension mismatch: {key} map is {m.shape[0]}x{m.shape[1]}, "
                                f"expected {want[0]}x{want[1]} for {n} blocks", "maps", key)
        net = SisoFeedbackNetwork(blocks, A, M, B, (fmin, fmax))
        checks = [(("maps",), m) for m in (A, M, B)]
        checks += [(("blocks", i), b) for i, b in enumerate(blocks)]
    elif view == "port":
        z0 = float(d.get("z0", DEFAULT_Z0))
        subs = [_subcircuit_from_doc(doc, b, ("blocks", i), z0) for i, b in enumerate(blocks_doc)]
        n_ports = sum(s.ports for s in subs) + 2
        pkg_doc = d.get("package")
        if not isinstance(pkg_doc, dict):
            raise doc.error("the package section is missing", "package")
        pkg = _package_from_doc(doc, pkg_doc, n_ports, doc.source)
        if pkg is None:
            pkg = through_package(n_ports, chain_pairs([s.ports for s in subs]))
        term = d.get("terminations", {}) or {}
        try:
            net = PortNetwork(subs, pkg, frf_from_document(term.get("gamma_in", 0.0)),
                              frf_from_document(term.get("gamma_out", 0.0)), z0, (fmin, fmax))
        except StructuralError as exc:
            raise doc.error(f"dimension mismatch: {exc}", "package") from None
        checks = [(("package",), pkg), (("terminations",), net.gamma_in), (("terminations",), net.gamma_out)]
        checks += [(("blocks", i), s.s_lin) for i, s in enumerate(subs)]
    else:
        raise doc.error(f"unknown view {view!r}", "view")
    if math.isfinite(fmax):
        for path, obj in checks:
            if isinstance(obj, NonlinearBlock):
                frfs = [f for f in (obj.frf, obj.pre, obj.post) if f is not None]
                ok = all(f.covers(fmin, fmax) for f in frfs)
            else:
                ok = obj.covers(fmin, fmax)
            if not ok:
                raise doc.error(f"undefined grid coverage: a tabulated response does not span "
                                f"{fmin}..{fmax} Hz", *path)
    return net


def network_to_document(net) -> dict:
    """Inverse of :func:`parse_network` (tables are written inline)."""
    fmin, fmax = net.analysis_range
    d = {}
    if math.isfinite(fmax):
        d["analysis_grid"] = {"fmin_hz": fmin, "fmax_hz": fmax}
    if isinstance(net, SisoFeedbackNetwork):
        d["view"] = "siso"
        d["blocks"] = [b.to_document() for b in net.blocks]
        d["maps"] = {
            "input": [row[0].to_document() for row in net.input_map.entries],
            "feedback": net.feedback_map.to_document(),
            "output": [e.to_document() for e in net.output_map.entries[0]],
        }
        return d
    d["view"] = "port"
    d["z0"] = net.z0
    d["blocks"] = [s.to_document() for s in net.subcircuits]
    pkg = net.package
    d["package"] = pkg.to_document() if isinstance(pkg, NodalPackage) else {"matrix": pkg.to_document()}
    d["terminations"] = {"gamma_in": net.gamma_in.to_document(), "gamma_out": net.gamma_out.to_document()}
    return d


# --- wave system ----------------------------------------------------------------------
# Unknowns are the waves incident on every block of the connected system, ordered
# [source, load, package ports (ext1, ext2, internal 1..P), sub-circuit ports 1..P].

def wave_index(total_ports):
    """0-based positions of the wave-system groups for ``P`` sub-circuit ports."""
    p = int(total_ports)
    return {"source": 0, "load": 1, "ext1": 2, "ext2": 3,
            "package_internal": np.arange(4, 4 + p), "sub": np.arange(4 + p, 4 + 2 * p)}


def connection_matrix(total_ports) -> np.ndarray:
    """Symmetric permutation pairing source-ext1, load-ext2 and package-sub-circuit ports."""
    p = int(total_ports)
    d = 2 * p + 4
    c = np.zeros((d, d))
    pairs = [(0, 2), (1, 3)] + [(4 + i, 4 + p + i) for i in range(p)]
    for i, j in pairs:
        c[i, j] = c[j, i] = 1.0
    return c


def wave_matrix(gamma_in, gamma_out, package, s_sub) -> np.ndarray:
    """``W = C - blockdiag(gamma_in, gamma_out, package, s_sub)`` per bin, shape (K, D, D)."""
    gamma_in = np.atleast_1d(gamma_in)
    gamma_out = np.atleast_1d(gamma_out)
    k = package.shape[0]
    p = s_sub.shape[-1]
    if package.shape[-1] != p + 2:
        raise StructuralError(f"package has {package.shape[-1]} ports, expected {p + 2}")
    d = 2 * p + 4
    t = np.zeros((k, d, d), dtype=complex)
    t[:, 0, 0] = gamma_in
    t[:, 1, 1] = gamma_out
    t[:, 2:p + 4, 2:p + 4] = package
    t[:, p + 4:, p + 4:] = s_sub
    return connection_matrix(p)[None] - t
