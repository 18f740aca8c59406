"""Aggregation structure: summing matrix S and its block operators.

Rows of S are ordered aggregates first (by depth, then declaration order) and
bottom series last, so that ``S = [C; I_n]``, ``J = [0 | I_n]`` and
``U^T = [I_{m*} | -C]``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    DuplicateNode,
    EmptyBottomLevel,
    HierarchyParseError,
    OrderingViolated,
)

DEFAULT_COHERENCE_TOL = 1e-8


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class HierarchySpec:
    """Nodes plus parent -> children aggregation constraints.

    Grouped structures are written as explicit constraint rows; a bottom node
    may then have several parents.
    """

    node_ids: tuple[str, ...]
    edges: dict[str, tuple[str, ...]]
    bottom_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "bottom_ids", tuple(self.bottom_ids))
        object.__setattr__(self, "edges", {k: tuple(v) for k, v in self.edges.items()})

    @classmethod
    def from_edges(cls, edges: dict[str, Sequence[str]]) -> "HierarchySpec":
        """Build a spec whose bottom level is every node that never appears as a parent."""
        nodes: list[str] = []
        seen = set()
        for parent, children in edges.items():
            for name in (parent, *children):
                if name not in seen:
                    seen.add(name)
                    nodes.append(name)
        bottom = [x for x in nodes if x not in edges]
        return cls(tuple(nodes), dict(edges), tuple(bottom))

    @classmethod
    def parse(cls, text: str) -> "HierarchySpec":
        """Parse ``PARENT = CHILD1 + CHILD2 + ...`` lines (``#`` starts a comment)."""
        edges: dict[str, list[str]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.count("=") != 1:
                raise HierarchyParseError(f"line {lineno}: expected 'PARENT = CHILD + ...', got {raw!r}")
            lhs, rhs = (part.strip() for part in line.split("="))
            children = [c.strip() for c in rhs.split("+")]
            if not lhs or any(not c for c in children):
                raise HierarchyParseError(f"line {lineno}: empty node name in {raw!r}")
            bad = [x for x in (lhs, *children) if not re.fullmatch(r"[^\s,=+]+", x)]
            if bad:
                raise HierarchyParseError(f"line {lineno}: invalid node name(s) {bad}")
            if lhs in edges:
                raise DuplicateNode(f"line {lineno}: node {lhs!r} defined twice")
            if len(set(children)) != len(children):
                raise DuplicateNode(f"line {lineno}: repeated child in {raw!r}")
            edges[lhs] = children
        if not edges:
            raise EmptyBottomLevel("hierarchy file declares no constraints")
        return cls.from_edges(edges)

    @classmethod
    def read(cls, path) -> "HierarchySpec":
        return cls.parse(Path(path).read_text())

    def to_text(self) -> str:
        return "".join(f"{p} = {' + '.join(ch)}\n" for p, ch in self.edges.items())


@dataclass(frozen=True)
class SummingMatrix:
    s: np.ndarray
    c: np.ndarray
    j: np.ndarray
    u_t: np.ndarray
    m: int
    n: int
    m_star: int
    labels: tuple[str, ...] = ()
    levels: tuple[str, ...] = field(default=())

    @property
    def bottom_labels(self) -> tuple[str, ...]:
        return self.labels[self.m_star:]

    @classmethod
    def from_matrix(cls, s, labels: Sequence[str] | None = None,
                    levels: Sequence[str] | None = None) -> "SummingMatrix":
        """Wrap an existing aggregates-first S (bottom block must be the identity)."""
        s = np.asarray(s)
        if s.ndim != 2:
            raise DimensionMismatch("S must be a 2-d matrix")
        if np.any(s != np.round(s)):
            raise DimensionMismatch("S must contain integers")
        s = s.astype(np.int64)
        m, n = s.shape
        u_t = derive_null_space(s)
        m_star = m - n
        c = s[:m_star].copy()
        j = np.hstack([np.zeros((n, m_star), dtype=np.int64), np.eye(n, dtype=np.int64)])
        if labels is None:
            labels = [f"s{i}" for i in range(m)]
        if len(labels) != m:
            raise DimensionMismatch(f"{len(labels)} labels for {m} rows")
        if levels is None:
            levels = ["Aggregate"] * m_star + ["Bottom"] * n
        return cls(_frozen(s), _frozen(c), _frozen(j), _frozen(u_t), m, n, m_star,
                   tuple(labels), tuple(levels))

    def level_index(self) -> dict[str, list[int]]:
        """Row indices grouped by level label, in level order."""
        out: dict[str, list[int]] = {}
        for i, lev in enumerate(self.levels):
            out.setdefault(lev, []).append(i)
        return out


def derive_null_space(s) -> np.ndarray:
    """Return ``U^T = [I_{m*} | -C]`` for an aggregates-first summing matrix."""
    s = np.asarray(s.s if isinstance(s, SummingMatrix) else s)
    m, n = s.shape
    if m < n or not np.array_equal(s[m - n:], np.eye(n, dtype=s.dtype)):
        raise OrderingViolated("bottom block of S is not I_n; rows must be aggregates first, bottom last")
    m_star = m - n
    c = s[:m_star].astype(np.int64)
    return np.hstack([np.eye(m_star, dtype=np.int64), -c])


def _depths(spec: HierarchySpec) -> dict[str, int]:
    parents: dict[str, list[str]] = {x: [] for x in spec.node_ids}
    for p, children in spec.edges.items():
        for ch in children:
            parents[ch].append(p)
    depth: dict[str, int] = {}

    def visit(node):
        if node not in depth:
            depth[node] = 1 + max((visit(p) for p in parents[node]), default=-1)
        return depth[node]

    for x in spec.node_ids:
        visit(x)
    return depth


def build_summing_matrix(spec: HierarchySpec) -> SummingMatrix:
    if not spec.bottom_ids:
        raise EmptyBottomLevel("no bottom-level series")
    for name, group in (("bottom_ids", spec.bottom_ids), ("node_ids", spec.node_ids)):
        if len(set(group)) != len(group):
            dup = sorted({x for x in group if group.count(x) > 1})
            raise DuplicateNode(f"duplicate entries in {name}: {dup}")
    known = set(spec.node_ids)
    bottom = set(spec.bottom_ids)
    for x in spec.bottom_ids:
        if x not in known:
            raise HierarchyParseError(f"bottom node {x!r} missing from node_ids")
        if spec.edges.get(x):
            raise HierarchyParseError(f"bottom node {x!r} has children")
    for p, children in spec.edges.items():
        if p not in known:
            raise HierarchyParseError(f"parent {p!r} missing from node_ids")
        unknown = [c for c in children if c not in known]
        if unknown:
            raise HierarchyParseError(f"children {unknown} of {p!r} missing from node_ids")
    for x in spec.node_ids:
        if x not in bottom and not spec.edges.get(x):
            raise HierarchyParseError(f"non-bottom node {x!r} has no children")

    # cycle check (iterative DFS, white/grey/black colouring)
    state = dict.fromkeys(spec.node_ids, 0)
    for root in spec.node_ids:
        if state[root]:
            continue
        stack = [(root, iter(spec.edges.get(root, ())))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                raise CycleDetected(f"aggregation cycle through {nxt!r}")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(spec.edges.get(nxt, ()))))

    n = len(spec.bottom_ids)
    col = {x: k for k, x in enumerate(spec.bottom_ids)}
    rows: dict[str, np.ndarray] = {}

    def indicator(node):
        if node not in rows:
            if node in bottom:
                v = np.zeros(n, dtype=np.int64)
                v[col[node]] = 1
            else:
                v = sum(indicator(ch) for ch in spec.edges[node])
                if v.max() > 1:
                    raise HierarchyParseError(f"children of {node!r} overlap; each bottom series may be counted once")
            rows[node] = v
        return rows[node]

    depth = _depths(spec)
    order = {x: k for k, x in enumerate(spec.node_ids)}
    aggregates = sorted((x for x in spec.node_ids if x not in bottom), key=lambda x: (depth[x], order[x]))
    labels = [*aggregates, *spec.bottom_ids]
    s = np.vstack([indicator(x) for x in labels]) if labels else np.zeros((0, n), dtype=np.int64)
    levels = []
    for x in aggregates:
        levels.append("Top" if depth[x] == 0 else f"Level {depth[x]}")
    levels += ["Bottom"] * n
    return SummingMatrix.from_matrix(s, labels, levels)


def one_level(size: int, total: str = "Total") -> HierarchySpec:
    """Total -> bottom series A, B, ... (``one_level(2)`` is the 3-node tree)."""
    import string

    return HierarchySpec.from_edges({total: list(string.ascii_uppercase[:size])})


def two_level(group_sizes: Sequence[int], total: str = "Total") -> HierarchySpec:
    """Total -> groups -> bottom series; groups named A, B, ... and leaves AA, AB, ..."""
    import string

    letters = string.ascii_uppercase
    edges: dict[str, list[str]] = {total: []}
    for g, size in enumerate(group_sizes):
        name = letters[g]
        edges[total].append(name)
        edges[name] = [name + letters[k] for k in range(size)]
    return HierarchySpec.from_edges(edges)


def figure1_hierarchy() -> HierarchySpec:
    """Total -> {A, B}; A -> {AA, AB, AC}; B -> {BA, BB}."""
    return two_level([3, 2])


@dataclass(frozen=True)
class ObservationPanel:
    y: np.ndarray
    b: np.ndarray
    time_index: np.ndarray

    @classmethod
    def from_bottom(cls, b, s: SummingMatrix, time_index=None) -> "ObservationPanel":
        b = np.asarray(b, dtype=float)
        if b.ndim != 2 or b.shape[1] != s.n:
            raise DimensionMismatch(f"bottom panel needs {s.n} columns, got shape {b.shape}")
        y = b @ s.s.T
        if time_index is None:
            time_index = np.arange(b.shape[0])
        return cls(_frozen(y), _frozen(b.copy()), _frozen(np.asarray(time_index)))

    @classmethod
    def from_full(cls, y, s: SummingMatrix, time_index=None) -> "ObservationPanel":
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != s.m:
            raise DimensionMismatch(f"panel needs {s.m} columns, got shape {y.shape}")
        if time_index is None:
            time_index = np.arange(y.shape[0])
        return cls(_frozen(y.copy()), _frozen(y[:, s.m_star:].copy()), _frozen(np.asarray(time_index)))


@dataclass(frozen=True)
class CoherenceReport:
    max_violation: float
    per_row: np.ndarray
    incoherent_rows: tuple[str, ...]
    tol: float

    @property
    def ok(self) -> bool:
        return not self.incoherent_rows


def validate_coherence(panel: ObservationPanel, s: SummingMatrix,
                       tol: float = DEFAULT_COHERENCE_TOL) -> CoherenceReport:
    """Largest ``|y_t - S b_t|`` per series, flagging rows above ``tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    y = np.asarray(panel.y)
    b = np.asarray(panel.b)
    if y.ndim != 2 or y.shape[1] != s.m or b.shape != (y.shape[0], s.n):
        raise DimensionMismatch(f"panel shapes {y.shape}/{b.shape} do not match S {s.s.shape}")
    if y.shape[0] == 0:
        per_row = np.zeros(s.m)
    else:
        per_row = np.abs(y - b @ s.s.T).max(axis=0)
    bad = tuple(s.labels[i] for i in np.flatnonzero(per_row > tol))
    return CoherenceReport(float(per_row.max(initial=0.0)), per_row, bad, tol)
