"""State-generation engines: block Gibbs, zero-temperature relaxation,
simulated annealing and path-integral simulated quantum annealing."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np

from .embedding import IsingProblem, rbm_to_ising, spins_to_bits
from .model import Configuration, RbmModel, bits_to_hex, energy, hex_to_bits, hidden_field, visible_field, sigmoid

SAMPLERS = ("gibbs", "sa", "sqa")


class RelaxationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sample sets


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Distinct states with multiplicities.

    ``states`` rows are unique and lexicographically sorted; for RBM samples
    they are joint ``concat(v, h)`` vectors and ``n_v`` is set.
    """

    states: np.ndarray
    counts: np.ndarray
    energies: np.ndarray
    sampler_id: str
    seed: int | None = None
    schedule: dict = field(default_factory=dict)
    n_v: int | None = None
    info: dict = field(default_factory=dict)

    @classmethod
    def from_states(cls, states, energies, sampler_id, seed=None, schedule=None, n_v=None, info=None):
        states = np.asarray(states, dtype=np.uint8)
        energies = np.asarray(energies, dtype=float)
        if states.shape[0] == 0:
            uniq = states.reshape(0, states.shape[1] if states.ndim == 2 else 0)
            counts, first = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=int)
        else:
            uniq, first, counts = np.unique(states, axis=0, return_index=True, return_counts=True)
        if sampler_id not in SAMPLERS:
            raise ValueError(f"unknown sampler id {sampler_id!r}")
        return cls(uniq, counts.astype(np.int64), energies[first], sampler_id, seed,
                   dict(schedule or {}), n_v, dict(info or {}))

    @property
    def n_requested(self) -> int:
        return int(self.counts.sum())

    @property
    def n_distinct(self) -> int:
        return int(self.states.shape[0])

    @property
    def entries(self):
        if self.n_v is None:
            return list(zip(map(tuple, self.states), self.counts.tolist()))
        return [(Configuration.from_joint(x, self.n_v), int(c)) for x, c in zip(self.states, self.counts)]

    def expanded(self) -> np.ndarray:
        return np.repeat(self.states, self.counts, axis=0)

    def metadata(self) -> dict:
        return {
            "sampler_id": self.sampler_id,
            "seed": self.seed,
            "schedule": self.schedule,
            "n_requested": self.n_requested,
            "n_distinct": self.n_distinct,
            "n_bits": int(self.states.shape[1]),
            "n_v": self.n_v,
            "info": self.info,
        }

    def write(self, csv_path) -> None:
        """CSV ``state_hex,multiplicity,energy`` plus a ``.json`` metadata sidecar."""
        csv_path = Path(csv_path)
        with csv_path.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["state_hex", "multiplicity", "energy"])
            for x, c, e in zip(self.states, self.counts, self.energies):
                w.writerow([bits_to_hex(x), int(c), repr(float(e))])
        csv_path.with_suffix(".json").write_text(json.dumps(self.metadata(), indent=2, sort_keys=True))

    @classmethod
    def read(cls, csv_path) -> "SampleSet":
        csv_path = Path(csv_path)
        meta = json.loads(csv_path.with_suffix(".json").read_text())
        with csv_path.open() as f:
            rows = list(csv.DictReader(f))
        n = meta["n_bits"]
        states = np.array([hex_to_bits(r["state_hex"], n) for r in rows], dtype=np.uint8).reshape(-1, n)
        return cls(states, np.array([int(r["multiplicity"]) for r in rows], dtype=np.int64),
                   np.array([float(r["energy"]) for r in rows]), meta["sampler_id"], meta["seed"],
                   meta["schedule"], meta["n_v"], meta.get("info", {}))


def _seed_of(rng):
    return int(rng) if isinstance(rng, (int, np.integer)) else None


# ---------------------------------------------------------------------------
# Gibbs


def sample_hidden(model, v, T, rng):
    p = sigmoid(hidden_field(model, v), T)
    return (rng.random(p.shape) < p).astype(np.uint8)


def sample_visible(model, h, T, rng, clamp=None):
    p = sigmoid(visible_field(model, h), T)
    v = (rng.random(p.shape) < p).astype(np.uint8)
    if clamp is not None:
        mask, values = clamp
        v = np.where(mask, values, v).astype(np.uint8)
    return v


def gibbs_step(model: RbmModel, v, T: float = 1.0, rng=None, clamp=None):
    """One block update: all hidden units from p(h|v), then all visible from p(v|h).

    ``v`` may be a batch. ``clamp=(mask, values)`` keeps the masked visible
    units at ``values`` (their updates are skipped). Returns ``(v, h)``.
    """
    rng = np.random.default_rng(rng)
    if isinstance(v, Configuration):
        v = v.v
    h = sample_hidden(model, v, T, rng)
    return sample_visible(model, h, T, rng, clamp), h


def gibbs_chain(model, v0, k: int, T: float = 1.0, rng=None, clamp=None):
    """Run ``k`` full steps from visible states ``v0``; returns final ``(v, h)``.

    With ``k == 0`` the hidden layer is the deterministic argmax of p(h|v0)
    (ties to 0); callers wanting a seed state unchanged pass full joint states
    to :func:`gibbs_sample` instead.
    """
    rng = np.random.default_rng(rng)
    v = np.asarray(v0, dtype=np.uint8)
    h = None
    for _ in range(k):
        v, h = gibbs_step(model, v, T, rng, clamp)
    if h is None:
        h = (hidden_field(model, v) > 0).astype(np.uint8)
    return v, h


def _joint_seeds(model, seeds):
    arr = np.array([s.x if isinstance(s, Configuration) else np.asarray(s) for s in seeds], dtype=np.uint8)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a non-empty list of seed states")
    if arr.shape[1] == model.n_v:
        arr = np.concatenate([arr, (hidden_field(model, arr) > 0).astype(np.uint8)], axis=1)
    elif arr.shape[1] != model.n_units:
        raise ValueError(f"seed length {arr.shape[1]} matches neither n_v nor n_v+n_h")
    return arr


def run_gibbs_chains(model, seeds, kG: int, T: float, seed: int, n_rpt: int = 1):
    """Terminal joint states, shape (n_rpt * len(seeds), n_units), repetition-major.

    Repetition ``r`` draws from its own generator ``default_rng([seed, r])``, so
    the chains of a smaller ``n_rpt`` are a prefix of those of a larger one.
    """
    if kG < 0 or n_rpt < 1:
        raise ValueError("need kG >= 0 and n_rpt >= 1")
    x0 = _joint_seeds(model, seeds)
    out = []
    for r in range(n_rpt):
        if kG == 0:
            out.append(x0.copy())
            continue
        rng = np.random.default_rng([seed, r])
        v, h = gibbs_chain(model, x0[:, : model.n_v], kG, T, rng)
        out.append(np.concatenate([v, h], axis=1))
    return np.concatenate(out)


def gibbs_sample(model: RbmModel, seeds, kG: int, T: float = 1.0, rng: int = 0, n_rpt: int = 1) -> SampleSet:
    """Terminal states of ``kG``-step chains started at each seed, ``n_rpt`` times each."""
    x = run_gibbs_chains(model, seeds, kG, T, int(rng), n_rpt)
    return SampleSet.from_states(x, energy(model, x), "gibbs", int(rng),
                                 {"kG": kG, "T": T, "n_rpt": n_rpt}, model.n_v)


# ---------------------------------------------------------------------------
# zero-temperature relaxation


def _threshold(field_, current):
    return np.where(field_ > 0, 1, np.where(field_ < 0, 0, current)).astype(np.uint8)


def relax_batch(model: RbmModel, x, max_sweeps: int | None = None):
    """Relax each joint state to a fixed point of the downhill block sweep.

    A sweep sets every hidden unit to 1 iff its local field is positive (kept on
    an exactly-zero field), then does the same for every visible unit. Returns
    ``(fixed_points, sweeps_used)``.
    """
    x = np.array(np.atleast_2d(x), dtype=np.uint8)
    n_v = model.n_v
    cap = 10 * model.n_units if max_sweeps is None else max_sweeps
    active = np.arange(x.shape[0])
    sweeps = np.zeros(x.shape[0], dtype=int)
    for _ in range(cap + 1):
        if active.size == 0:
            return x, sweeps
        v, h = x[active, :n_v], x[active, n_v:]
        h_new = _threshold(hidden_field(model, v), h)
        v_new = _threshold(visible_field(model, h_new), v)
        changed = np.any(h_new != h, axis=1) | np.any(v_new != v, axis=1)
        x[active, :n_v] = v_new
        x[active, n_v:] = h_new
        sweeps[active] += 1
        active = active[changed]
    raise RelaxationError(f"{active.size} states still moving after {cap} sweeps")


def relax_to_minimum(model: RbmModel, config, max_sweeps: int | None = None, return_trace: bool = False):
    """Downhill relaxation of one state to its local minimum.

    With ``return_trace`` also returns the energy after every half-sweep,
    starting with the initial energy.
    """
    as_config = isinstance(config, Configuration)
    x = config.x if as_config else np.asarray(config, dtype=np.uint8)
    if not return_trace:
        out = relax_batch(model, x, max_sweeps)[0][0]
        return Configuration.from_joint(out, model.n_v) if as_config else out
    n_v = model.n_v
    cap = 10 * model.n_units if max_sweeps is None else max_sweeps
    v, h = x[:n_v].copy(), x[n_v:].copy()
    trace = [float(energy(model, v, h))]
    for _ in range(cap):
        h_new = _threshold(hidden_field(model, v), h)
        trace.append(float(energy(model, v, h_new)))
        v_new = _threshold(visible_field(model, h_new), v)
        trace.append(float(energy(model, v_new, h_new)))
        if np.array_equal(h_new, h) and np.array_equal(v_new, v):
            out = np.concatenate([v, h])
            return (Configuration.from_joint(out, n_v) if as_config else out), trace
        v, h = v_new, h_new
    raise RelaxationError(f"state still moving after {cap} sweeps")


# ---------------------------------------------------------------------------
# annealing


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear schedule over ``sweeps`` Metropolis sweeps.

    ``sweeps`` stands in for annealing time. ``T_start -> T_end`` is the
    temperature ramp (keep them equal for a fixed-temperature SQA run);
    ``gamma_start -> gamma_end`` is the transverse field, used only by SQA.
    """

    sweeps: int = 1000
    T_start: float = 3.0
    T_end: float = 0.05
    gamma_start: float = 3.0
    gamma_end: float = 0.01
    trotter_slices: int = 1

    def __post_init__(self):
        if self.sweeps < 0:
            raise ValueError("sweeps must be >= 0")
        if not (self.T_start > 0 and self.T_end > 0):
            raise ValueError("temperatures must be positive")
        if self.trotter_slices < 1:
            raise ValueError("trotter_slices must be >= 1")
        if self.gamma_start < 0 or self.gamma_end < 0:
            raise ValueError("transverse field must be non-negative")

    @classmethod
    def sa(cls, sweeps, T_start=3.0, T_end=0.05):
        return cls(sweeps, T_start, T_end, 0.0, 0.0, 1)

    @classmethod
    def sqa(cls, sweeps, T=0.05, gamma_start=3.0, gamma_end=0.01, trotter_slices=8):
        return cls(sweeps, T, T, gamma_start, gamma_end, trotter_slices)

    def temperatures(self):
        return np.linspace(self.T_start, self.T_end, self.sweeps)

    def gammas(self):
        return np.linspace(self.gamma_start, self.gamma_end, self.sweeps)

    def to_dict(self):
        return asdict(self)


_GAMMA_FLOOR = 1e-12


def replica_coupling(gamma, P: int, T: float):
    """Ferromagnetic coupling between neighbouring Trotter slices."""
    g = np.maximum(gamma, _GAMMA_FLOOR)
    return -(P * T / 2.0) * np.log(np.tanh(g / (P * T)))


def color_classes(problem: IsingProblem):
    """Partition spins into independent sets of the coupler graph."""
    g = nx.Graph()
    g.add_nodes_from(range(problem.n))
    g.add_edges_from(problem.J)
    if nx.is_bipartite(g):
        coloring = nx.bipartite.color(g)
    else:
        coloring = nx.coloring.greedy_color(g, strategy="DSATUR")
    classes = {}
    for node in range(problem.n):
        classes.setdefault(coloring[node], []).append(node)
    return [np.array(classes[k]) for k in sorted(classes)]


def _replica_groups(P):
    if P == 1:
        return [slice(0, 1)]
    if P % 2:
        return [slice(0, P - 1, 2), slice(1, P, 2), slice(P - 1, P)]
    return [slice(0, P, 2), slice(1, P, 2)]


def _neighbor_slices(g, P):
    idx = np.arange(P)[g]
    return (idx - 1) % P, (idx + 1) % P


def anneal(problem: IsingProblem, schedule: AnnealSchedule, n_reads: int, rng=None, transverse: bool = True):
    """Metropolis annealing of ``n_reads`` independent runs; returns spins (n_reads, n).

    With ``trotter_slices = P > 1`` and ``transverse`` set, each read evolves P
    coupled replicas at temperature ``P*T``; the returned read is one replica
    picked uniformly at the end. Spins of one colour class (and one replica
    parity) do not interact, so each such block is updated at once; this is
    the same chain as sequential single-spin sweeps in that order.
    """
    rng = np.random.default_rng(rng)
    P = schedule.trotter_slices if transverse else 1
    n = problem.n
    classes = color_classes(problem)
    perm = np.concatenate(classes) if classes else np.arange(0)
    bounds = np.cumsum([0] + [c.size for c in classes])
    Jm = problem.J_matrix()[np.ix_(perm, perm)]
    h = problem.h[perm]
    blocks = []
    for k in range(len(classes)):
        cs = slice(bounds[k], bounds[k + 1])
        rows = np.flatnonzero(Jm[:, cs].any(axis=1))
        rs = slice(rows.min(), rows.max() + 1) if rows.size else slice(0, 0)
        blocks.append((cs, rs, np.ascontiguousarray(Jm[rs, cs]), h[cs]))
    groups = _replica_groups(P)
    s = rng.choice(np.array([-1.0, 1.0]), size=(P, n_reads, n))
    temps = schedule.temperatures()
    gammas = schedule.gammas()
    for t in range(schedule.sweeps):
        tau = P * temps[t]
        j_perp = replica_coupling(gammas[t], P, temps[t]) if P > 1 else 0.0
        for cs, rs, Jc, hc in blocks:
            for g in groups:
                sg = s[g, :, cs]
                local = s[g, :, rs] @ Jc + hc
                if P > 1:
                    lo, hi = _neighbor_slices(g, P)
                    local -= j_perp * (s[lo, :, cs] + s[hi, :, cs])
                # flipping s costs dE = -2 s * local
                gain = sg * local
                u = rng.random(gain.shape)
                flip = u < np.exp(np.minimum(0.0, gain * (2.0 / tau)))
                sg *= 1.0 - 2.0 * flip
    pick = rng.integers(P, size=n_reads)
    out = np.empty((n_reads, n), dtype=np.int8)
    out[:, perm] = s[pick, np.arange(n_reads)]
    return out


def _problem_of(problem):
    if isinstance(problem, RbmModel):
        return rbm_to_ising(problem), problem
    return problem, None


def _to_sampleset(spins, problem, model, sampler_id, rng, schedule, extra=None):
    bits = spins_to_bits(spins)
    if model is not None:
        e = energy(model, bits)
        n_v = model.n_v
    else:
        e = problem.energy(spins)
        n_v = None
    return SampleSet.from_states(bits, e, sampler_id, _seed_of(rng), schedule.to_dict(), n_v, extra)


def simulated_annealing(problem, schedule: AnnealSchedule, n_reads: int, rng=None) -> SampleSet:
    """Classical Metropolis annealing with ``T`` ramped ``T_start -> T_end``.

    Accepts an :class:`IsingProblem` or an :class:`RbmModel` (annealed through
    its Ising form; states and energies are reported in RBM terms).
    """
    ising, model = _problem_of(problem)
    spins = anneal(ising, schedule, n_reads, np.random.default_rng(rng), transverse=False)
    return _to_sampleset(spins, ising, model, "sa", rng, schedule)


def sqa_sample(problem, schedule: AnnealSchedule, n_reads: int, rng=None) -> SampleSet:
    """Path-integral simulated quantum annealing over ``trotter_slices`` replicas."""
    if schedule.trotter_slices > 1 and not schedule.gamma_start > 0:
        raise ValueError("SQA needs a positive transverse field at the start")
    ising, model = _problem_of(problem)
    spins = anneal(ising, schedule, n_reads, np.random.default_rng(rng), transverse=True)
    return _to_sampleset(spins, ising, model, "sqa", rng, schedule)
