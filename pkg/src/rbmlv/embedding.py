"""QUBO/Ising conversion, a synthetic annealer graph, and chained minor embedding.

Ising energies use the annealer-hardware sign convention::

    E(s) = sum_j h_j s_j + sum_{i<j} J_ij s_i s_j + offset,   s in {-1, +1}

so a negative field favours ``s = +1`` and a negative coupler is
ferromagnetic. Spin ``+1`` corresponds to bit 1 (``x = (1 + s) / 2``).
"""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .model import EnumerationError, RbmModel, all_states

log = logging.getLogger(__name__)

J_RANGE = (-1.0, 1.0)
H_RANGE = (-4.0, 4.0)
CLAMP_FIELD = 4.0


class EmbeddingError(RuntimeError):
    pass


class HardwareRangeError(ValueError):
    pass


def _clean_pairs(pairs) -> dict:
    out = {}
    for (i, j), val in dict(pairs).items():
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-coupling on variable {i}")
        key = (i, j) if i < j else (j, i)
        out[key] = out.get(key, 0.0) + float(val)
    if not all(np.isfinite(v) for v in out.values()):
        raise ValueError("non-finite quadratic coefficient")
    return dict(sorted(out.items()))


def _pair_matrix(n, pairs):
    M = np.zeros((n, n))
    for (i, j), val in pairs.items():
        M[i, j] = val
        M[j, i] = val
    return M


@dataclass(frozen=True)
class QuboProblem:
    linear: np.ndarray
    quadratic: dict = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float).reshape(-1)
        if not np.all(np.isfinite(lin)):
            raise ValueError("non-finite linear coefficient")
        quad = _clean_pairs(self.quadratic)
        if quad and max(max(k) for k in quad) >= lin.size:
            raise ValueError("quadratic key out of range")
        lin.setflags(write=False)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", quad)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.linear.size

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        Q = np.triu(_pair_matrix(self.n, self.quadratic))
        return x @ self.linear + np.einsum("...i,ij,...j->...", x, Q, x) + self.offset

    def to_dict(self) -> dict:
        return {
            "kind": "qubo",
            "n": self.n,
            "linear": self.linear.tolist(),
            "quadratic": [[i, j, v] for (i, j), v in self.quadratic.items()],
            "offset": self.offset,
        }


@dataclass(frozen=True)
class IsingProblem:
    h: np.ndarray
    J: dict = field(default_factory=dict)
    offset: float = 0.0

    def __post_init__(self):
        h = np.array(self.h, dtype=float).reshape(-1)
        if not np.all(np.isfinite(h)):
            raise ValueError("non-finite field")
        J = _clean_pairs(self.J)
        if J and max(max(k) for k in J) >= h.size:
            raise ValueError("coupler key out of range")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self) -> int:
        return self.h.size

    def J_matrix(self) -> np.ndarray:
        """Symmetric dense coupler matrix with zero diagonal."""
        return _pair_matrix(self.n, self.J)

    def edges(self):
        return list(self.J)

    def energy(self, s):
        s = np.asarray(s, dtype=float)
        return s @ self.h + 0.5 * np.einsum("...i,ij,...j->...", s, self.J_matrix(), s) + self.offset

    def with_fields(self, h) -> "IsingProblem":
        return IsingProblem(h, self.J, self.offset)

    def to_dict(self) -> dict:
        return {
            "kind": "ising",
            "n": self.n,
            "h": self.h.tolist(),
            "J": [[i, j, v] for (i, j), v in self.J.items()],
            "offset": self.offset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsingProblem":
        if d.get("kind") != "ising" or len(d["h"]) != d["n"]:
            raise ValueError("not a valid Ising problem document")
        return cls(d["h"], {(i, j): v for i, j, v in d["J"]}, d.get("offset", 0.0))


def save_problem(problem, path):
    Path(path).write_text(json.dumps(problem.to_dict()))


def load_problem(path):
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "qubo":
        return QuboProblem(d["linear"], {(i, j): v for i, j, v in d["quadratic"]}, d["offset"])
    return IsingProblem.from_dict(d)


def rbm_to_qubo(model: RbmModel) -> QuboProblem:
    """QUBO whose energy equals the RBM energy; variables are visible then hidden."""
    n_v = model.n_v
    quad = {}
    for i, j in zip(*np.nonzero(model.W)):
        quad[(int(j), n_v + int(i))] = -float(model.W[i, j])
    return QuboProblem(np.concatenate([-model.b, -model.c]), quad, 0.0)


def qubo_to_ising(q: QuboProblem) -> IsingProblem:
    """Substitute ``x = (1 + s) / 2``; energies agree pointwise."""
    h = q.linear / 2.0
    J = {}
    offset = q.offset + q.linear.sum() / 2.0
    for (i, j), val in q.quadratic.items():
        J[(i, j)] = val / 4.0
        h[i] += val / 4.0
        h[j] += val / 4.0
        offset += val / 4.0
    return IsingProblem(h, J, offset)


def rbm_to_ising(model: RbmModel) -> IsingProblem:
    return qubo_to_ising(rbm_to_qubo(model))


def scale_problem(p: IsingProblem, sf: float) -> IsingProblem:
    """Divide fields and couplers by ``sf``; the offset is kept as is."""
    if not sf > 0:
        raise ValueError(f"scale factor must be positive, got {sf}")
    scaled = IsingProblem(p.h / sf, {k: v / sf for k, v in p.J.items()}, p.offset)
    max_j = max((abs(v) for v in scaled.J.values()), default=0.0)
    if max_j > J_RANGE[1]:
        log.info("scaled couplers reach |J|=%.3f, above the hardware range", max_j)
    return scaled


def spins_to_bits(s):
    return ((np.asarray(s) + 1) // 2).astype(np.uint8)


def bits_to_spins(x):
    return (2 * np.asarray(x, dtype=np.int8) - 1).astype(np.int8)


def ising_ground_states(p: IsingProblem, cap: int = 24, chunk: int = 1 << 16, atol: float = 1e-9):
    """Brute-force minimum energy and every minimizing spin vector."""
    if p.n > cap:
        raise EnumerationError(f"{p.n} spins exceeds cap {cap}")
    Jm = p.J_matrix()
    best = np.inf
    found = []
    for start in range(0, 2**p.n, chunk):
        r = np.arange(start, min(start + chunk, 2**p.n), dtype=np.int64)
        s = (2 * ((r[:, None] >> np.arange(p.n)) & 1) - 1).astype(float)
        e = s @ p.h + 0.5 * np.einsum("ki,ij,kj->k", s, Jm, s) + p.offset
        m = e.min()
        if m < best - atol:
            best = m
            found = [s[e <= m + atol]]
        elif m <= best + atol:
            found.append(s[e <= best + atol])
    return float(best), np.concatenate(found).astype(np.int8)


def rbm_ground_state(model: RbmModel, cap: int = 22, chunk: int = 1 << 14):
    """Exact RBM ground state by enumerating the smaller layer.

    For a fixed smaller layer the other layer's optimum is separable; returns
    ``(energy, x)`` with the lowest-index state among ties.
    """
    small_hidden = model.n_h <= model.n_v
    n_small = model.n_h if small_hidden else model.n_v
    if n_small > cap:
        raise EnumerationError(f"smaller layer has {n_small} units, cap {cap}")
    best_e, best_x = np.inf, None
    for start in range(0, 2**n_small, chunk):
        r = np.arange(start, min(start + chunk, 2**n_small), dtype=np.int64)
        s = ((r[:, None] >> np.arange(n_small)) & 1).astype(float)
        if small_hidden:
            field_ = s @ model.W + model.b
            other = (field_ > 0).astype(float)
            e = -np.sum(np.maximum(field_, 0), axis=1) - s @ model.c
        else:
            field_ = s @ model.W.T + model.c
            other = (field_ > 0).astype(float)
            e = -np.sum(np.maximum(field_, 0), axis=1) - s @ model.b
        k = int(np.argmin(e))
        if e[k] < best_e:
            best_e = float(e[k])
            v, h = (other[k], s[k]) if small_hidden else (s[k], other[k])
            best_x = np.concatenate([v, h]).astype(np.uint8)
    return best_e, best_x


# ---------------------------------------------------------------------------
# hardware graph


@dataclass(frozen=True)
class HardwareGraph:
    n_nodes: int
    edges: frozenset
    degree_cap: int = 15

    def __post_init__(self):
        edges = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ValueError(f"self-loop on node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge ({u}, {v}) out of range")
            edges.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(edges))
        deg = np.zeros(self.n_nodes, dtype=int)
        adj = [[] for _ in range(self.n_nodes)]
        for u, v in sorted(edges):
            deg[u] += 1
            deg[v] += 1
            adj[u].append(v)
            adj[v].append(u)
        if deg.size and deg.max() > self.degree_cap:
            raise ValueError(f"node degree {deg.max()} exceeds cap {self.degree_cap}")
        object.__setattr__(self, "_adj", tuple(tuple(a) for a in adj))

    def neighbors(self, u: int):
        return self._adj[u]

    def degree(self, u: int) -> int:
        return len(self._adj[u])

    def has_edge(self, u: int, v: int) -> bool:
        return (min(u, v), max(u, v)) in self.edges

    def write_edgelist(self, path):
        lines = [f"# nodes {self.n_nodes} degree_cap {self.degree_cap}"]
        lines += [f"{u} {v}" for u, v in sorted(self.edges)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def read_edgelist(cls, path) -> "HardwareGraph":
        text = Path(path).read_text().splitlines()
        head = text[0].split()
        if head[:2] != ["#", "nodes"] or head[3] != "degree_cap":
            raise ValueError("missing '# nodes N degree_cap D' header")
        edges = [tuple(map(int, ln.split())) for ln in text[1:] if ln.strip()]
        return cls(int(head[2]), frozenset(edges), int(head[4]))


def path_graph(n: int, degree_cap: int = 15) -> HardwareGraph:
    return HardwareGraph(n, frozenset((i, i + 1) for i in range(n - 1)), degree_cap)


def cycle_graph(n: int, degree_cap: int = 15) -> HardwareGraph:
    return HardwareGraph(n, frozenset((i, (i + 1) % n) for i in range(n)), degree_cap)


def lattice_graph(rows: int, cols: int, rng=None, degree_cap: int = 15, radius: int = 2) -> HardwareGraph:
    """Grid whose nodes link to neighbours within Chebyshev ``radius``.

    Candidate edges are visited in random order and kept while both ends stay
    under ``degree_cap``; with the defaults most nodes end with 12-15 links.
    """
    rng = np.random.default_rng(rng)
    cand = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            for dr in range(0, radius + 1):
                for dc in range(-radius, radius + 1):
                    if dr == 0 and dc <= 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols:
                        cand.append((u, rr * cols + cc))
    deg = np.zeros(rows * cols, dtype=int)
    edges = []
    for k in rng.permutation(len(cand)):
        u, v = cand[k]
        if deg[u] < degree_cap and deg[v] < degree_cap:
            edges.append((u, v))
            deg[u] += 1
            deg[v] += 1
    return HardwareGraph(rows * cols, frozenset(edges), degree_cap)


# ---------------------------------------------------------------------------
# embedding


@dataclass(frozen=True)
class Embedding:
    """Map logical unit -> ordered tuple of physical nodes.

    Physical spin vectors handled by this module are indexed by position in
    :attr:`nodes` (the sorted union of all chains).
    """

    chains: dict

    def __post_init__(self):
        chains = {int(k): tuple(int(q) for q in v) for k, v in sorted(dict(self.chains).items())}
        object.__setattr__(self, "chains", chains)
        nodes = sorted(q for ch in chains.values() for q in ch)
        object.__setattr__(self, "_nodes", tuple(nodes))
        object.__setattr__(self, "_pos", {q: i for i, q in enumerate(nodes)})

    @classmethod
    def identity(cls, n: int) -> "Embedding":
        return cls({i: (i,) for i in range(n)})

    @property
    def nodes(self) -> tuple:
        return self._nodes

    @property
    def n_physical(self) -> int:
        return len(self._nodes)

    def position(self, node: int) -> int:
        return self._pos[node]

    def chain_positions(self, unit: int):
        return [self._pos[q] for q in self.chains[unit]]

    def chain_lengths(self) -> dict:
        return {u: len(ch) for u, ch in self.chains.items()}

    def to_dict(self) -> dict:
        return {str(u): list(ch) for u, ch in self.chains.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Embedding":
        return cls({int(u): ch for u, ch in d.items()})


def embedding_problems(emb: Embedding, logical_edges, hw: HardwareGraph) -> list:
    """Violated invariants as human-readable strings (empty when valid)."""
    problems = []
    seen = {}
    for u, ch in emb.chains.items():
        if not ch:
            problems.append(f"unit {u} has an empty chain")
            continue
        for q in ch:
            if not 0 <= q < hw.n_nodes:
                problems.append(f"unit {u} uses missing node {q}")
            elif q in seen:
                problems.append(f"node {q} shared by units {seen[q]} and {u}")
            else:
                seen[q] = u
        members = set(ch)
        stack, reached = [ch[0]], {ch[0]}
        while stack:
            q = stack.pop()
            if not 0 <= q < hw.n_nodes:
                continue
            for r in hw.neighbors(q):
                if r in members and r not in reached:
                    reached.add(r)
                    stack.append(r)
        if reached != members:
            problems.append(f"chain of unit {u} is not connected")
    for a, b in logical_edges:
        if a not in emb.chains or b not in emb.chains:
            problems.append(f"logical edge ({a}, {b}) has an unembedded end")
        elif not _chains_touch(emb.chains[a], emb.chains[b], hw):
            problems.append(f"no physical edge between chains of {a} and {b}")
    return problems


def _chains_touch(ca, cb, hw):
    cb = set(cb)
    return any(r in cb for q in ca for r in hw.neighbors(q))


def validate_embedding(emb: Embedding, logical_edges, hw: HardwareGraph) -> None:
    problems = embedding_problems(emb, logical_edges, hw)
    if problems:
        raise EmbeddingError("; ".join(problems[:5]))


def _bfs_from_chain(chain, hw, free):
    """Distance (in free nodes, counting the endpoint) and parents toward ``chain``."""
    dist = {}
    parent = {}
    queue = deque()
    chain_set = set(chain)
    for q in chain:
        for r in hw.neighbors(q):
            if free[r] and r not in dist:
                dist[r] = 1
                parent[r] = None
                queue.append(r)
    while queue:
        q = queue.popleft()
        for r in hw.neighbors(q):
            if free[r] and r not in dist and r not in chain_set:
                dist[r] = dist[q] + 1
                parent[r] = q
                queue.append(r)
    return dist, parent


def _greedy_embed(n_logical, adj, hw, rng):
    free = np.ones(hw.n_nodes, dtype=bool)
    chains = {}
    start = int(rng.integers(n_logical))
    order, seen = [], {start}
    # BFS order over the logical graph keeps chains of neighbours close together
    pending = [start] + [int(u) for u in rng.permutation(n_logical) if u != start]
    for root in pending:
        if root in order:
            continue
        queue = deque([root])
        seen.add(root)
        while queue:
            u = queue.popleft()
            order.append(u)
            for w in rng.permutation(sorted(adj[u])):
                w = int(w)
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
    for u in order:
        placed = [w for w in adj[u] if w in chains]
        free_nodes = np.flatnonzero(free)
        if free_nodes.size == 0:
            return None
        if not placed:
            score = np.array([sum(free[r] for r in hw.neighbors(q)) for q in free_nodes])
            best = free_nodes[score == score.max()]
            chains[u] = [int(rng.choice(best))]
            free[chains[u][0]] = False
            continue
        searches = [_bfs_from_chain(chains[w], hw, free) for w in placed]
        common = set(searches[0][0])
        for dist, _ in searches[1:]:
            common &= set(dist)
        if not common:
            return None
        cand = sorted(common)
        cost = np.array([sum(d[q] for d, _ in searches) for q in cand], dtype=float)
        best = [q for q, c in zip(cand, cost) if c == cost.min()]
        root = int(best[int(rng.integers(len(best)))])
        chain = [root]
        members = {root}
        for dist, parent in searches:
            q = parent[root]
            while q is not None:
                if q not in members:
                    members.add(q)
                    chain.append(q)
                q = parent[q]
        for q in chain:
            free[q] = False
        chains[u] = chain
    return chains


def find_embedding(logical_edges, hw: HardwareGraph, rng=None, n_logical: int | None = None,
                   tries: int = 8, max_attempts: int = 64) -> Embedding:
    """Randomized greedy chain growth with restarts.

    Up to ``tries`` successful embeddings are collected (at most
    ``max_attempts`` attempts); the one with the shortest longest chain wins,
    then the smallest total chain length, then the earliest attempt.
    """
    rng = np.random.default_rng(rng)
    logical_edges = [tuple(int(a) for a in e) for e in logical_edges]
    if n_logical is None:
        n_logical = 1 + max((max(e) for e in logical_edges), default=-1)
    if n_logical > hw.n_nodes:
        raise EmbeddingError(f"{n_logical} logical units cannot fit in {hw.n_nodes} nodes")
    adj = [set() for _ in range(n_logical)]
    for a, b in logical_edges:
        adj[a].add(b)
        adj[b].add(a)
    best = None
    successes = 0
    for attempt in range(max_attempts):
        chains = _greedy_embed(n_logical, adj, hw, rng)
        if chains is None:
            continue
        emb = Embedding(chains)
        if embedding_problems(emb, logical_edges, hw):
            continue
        lengths = [len(c) for c in chains.values()]
        score = (max(lengths), sum(lengths), attempt)
        if best is None or score < best[0]:
            best = (score, emb)
        successes += 1
        if successes >= tries:
            break
    if best is None:
        raise EmbeddingError(f"no embedding found in {max_attempts} attempts")
    return best[1]


def embed_problem(p: IsingProblem, emb: Embedding, chain_strength: float = -1.0,
                  hw: HardwareGraph | None = None, check_range: bool = True) -> IsingProblem:
    """Physical problem over ``emb.nodes``.

    Fields are split evenly along each chain, every logical coupler goes on the
    first physical edge joining the two chains, and every hardware edge inside
    a chain gets ``chain_strength``.
    """
    if abs(chain_strength) > J_RANGE[1]:
        raise HardwareRangeError(f"|chain_strength| {abs(chain_strength)} exceeds 1")
    if hw is None and any(len(c) > 1 for c in emb.chains.values()):
        # without a graph only single-node chains make sense (full connectivity)
        raise ValueError("a hardware graph is required for non-identity embeddings")
    n = emb.n_physical
    h = np.zeros(n)
    J = {}
    for u in range(p.n):
        if u not in emb.chains:
            raise EmbeddingError(f"logical unit {u} is not embedded")
        pos = emb.chain_positions(u)
        h[pos] += p.h[u] / len(pos)
        chain = emb.chains[u]
        for a in range(len(chain)):
            for b in range(a + 1, len(chain)):
                if hw.has_edge(chain[a], chain[b]):
                    J[(emb.position(chain[a]), emb.position(chain[b]))] = chain_strength
    for (a, b), val in p.J.items():
        edge = _first_edge(emb.chains[a], emb.chains[b], hw)
        if edge is None:
            raise EmbeddingError(f"no physical edge for logical coupler ({a}, {b})")
        key = tuple(sorted((emb.position(edge[0]), emb.position(edge[1]))))
        J[key] = J.get(key, 0.0) + val
    out = IsingProblem(h, J, p.offset)
    if check_range:
        check_hardware_range(out)
    return out


def _first_edge(ca, cb, hw):
    if hw is None:
        return (ca[0], cb[0]) if len(ca) == 1 and len(cb) == 1 else None
    cb_set = set(cb)
    for q in ca:
        for r in sorted(hw.neighbors(q)):
            if r in cb_set:
                return q, r
    return None


def check_hardware_range(p: IsingProblem) -> None:
    if p.h.size and np.abs(p.h).max() > H_RANGE[1] + 1e-12:
        raise HardwareRangeError(f"field magnitude {np.abs(p.h).max():.4g} outside [-4, 4]")
    big = max((abs(v) for v in p.J.values()), default=0.0)
    if big > J_RANGE[1] + 1e-12:
        raise HardwareRangeError(f"coupler magnitude {big:.4g} outside [-1, 1]")


def clamp_units(p: IsingProblem, emb: Embedding, assignments: dict) -> IsingProblem:
    """Pin logical units with saturated fields: -4 forces bit 1, +4 forces bit 0."""
    h = np.array(p.h)
    for unit, bit in assignments.items():
        if unit not in emb.chains:
            raise EmbeddingError(f"unit {unit} is not in the embedding")
        h[emb.chain_positions(unit)] = -CLAMP_FIELD if int(bit) else CLAMP_FIELD
    return p.with_fields(h)


class ChainBreakPolicy(str, Enum):
    MAJORITY_VOTE = "majority_vote"
    DISCARD = "discard"


def unembed_samples(spins, emb: Embedding, policy=ChainBreakPolicy.MAJORITY_VOTE):
    """Vectorized unembedding.

    Returns ``(bits, valid, n_broken)``: logical bits (N, n_logical), a mask of
    samples kept by the policy, and the broken-chain count per sample. Majority
    ties go to the first node in chain order.
    """
    policy = ChainBreakPolicy(policy)
    spins = np.atleast_2d(np.asarray(spins))
    if spins.shape[1] != emb.n_physical:
        raise ValueError(f"expected {emb.n_physical} physical spins, got {spins.shape[1]}")
    units = sorted(emb.chains)
    bits = np.zeros((spins.shape[0], len(units)), dtype=np.uint8)
    broken = np.zeros(spins.shape[0], dtype=int)
    ties = 0
    for k, u in enumerate(units):
        chain = spins[:, emb.chain_positions(u)].astype(int)
        total = chain.sum(axis=1)
        unanimous = np.abs(total) == chain.shape[1]
        broken += ~unanimous
        tie = total == 0
        ties += int(tie.sum())
        value = np.where(tie, chain[:, 0], np.sign(total))
        bits[:, k] = (value > 0).astype(np.uint8)
    if ties:
        log.debug("%d majority-vote ties resolved by the first chain node", ties)
    valid = np.ones(spins.shape[0], dtype=bool)
    if policy is ChainBreakPolicy.DISCARD:
        valid = broken == 0
    return bits, valid, broken


def unembed_sample(spins, emb: Embedding, policy=ChainBreakPolicy.MAJORITY_VOTE):
    """Single-sample unembedding: ``(bits or None, broken_chain_count)``."""
    bits, valid, broken = unembed_samples(np.asarray(spins)[None, :], emb, policy)
    return (bits[0] if valid[0] else None), int(broken[0])
