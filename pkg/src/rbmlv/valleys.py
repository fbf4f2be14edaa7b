"""Local-valley (LV) cataloguing and cross-sampler comparison.

Every sampled state is relaxed downhill to its local minimum (LM); two states
share an LV exactly when their LMs agree bit for bit over both layers.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import RbmModel, all_states, bits_to_hex, energy, hex_to_bits, state_keys, ENUMERATION_CAP, EnumerationError
from .samplers import SAMPLERS, SampleSet, relax_batch, run_gibbs_chains

CATALOG_HEADER = ["lm_state_hex", "energy", "hits_gibbs", "hits_sa", "hits_sqa", "first_seen"]


class CatalogMismatch(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LocalValleyRecord:
    lm_state: np.ndarray
    energy: float
    hits: dict
    first_seen: str

    def __eq__(self, other):
        return (
            isinstance(other, LocalValleyRecord)
            and np.array_equal(self.lm_state, other.lm_state)
            and self.energy == other.energy
            and {k: v for k, v in self.hits.items() if v} == {k: v for k, v in other.hits.items() if v}
            and self.first_seen == other.first_seen
        )


def _earliest(a: str, b: str) -> str:
    # canonical sampler order keeps merging order-independent
    return a if SAMPLERS.index(a) <= SAMPLERS.index(b) else b


@dataclass(eq=False)
class LvCatalog:
    """Distinct local minima keyed by their packed bit pattern.

    ``first_seen`` on a record is the earliest sampler, in the fixed order
    gibbs < sa < sqa, that reached it.
    """

    model_ref: str
    n_v: int
    n_h: int
    n_tp: int = 0
    records: dict = field(default_factory=dict)
    n_samples: int = 0

    @classmethod
    def for_model(cls, model: RbmModel, n_tp: int = 0) -> "LvCatalog":
        return cls(model.digest(), model.n_v, model.n_h, n_tp)

    @property
    def n_lv(self) -> int:
        return len(self.records)

    def __len__(self):
        return len(self.records)

    def keys(self) -> set:
        return set(self.records)

    def normalized_n_lv(self) -> float:
        return self.n_lv / self.n_tp if self.n_tp else float("nan")

    def add(self, lm_state, energy_: float, sampler_id: str, hits: int = 1, key: bytes | None = None) -> None:
        if sampler_id not in SAMPLERS:
            raise ValueError(f"unknown sampler {sampler_id!r}")
        key = state_keys(lm_state)[0] if key is None else key
        rec = self.records.get(key)
        if rec is None:
            state = np.array(lm_state, dtype=np.uint8)
            state.setflags(write=False)
            self.records[key] = LocalValleyRecord(state, float(energy_), {sampler_id: int(hits)}, sampler_id)
        else:
            new_hits = dict(rec.hits)
            new_hits[sampler_id] = new_hits.get(sampler_id, 0) + int(hits)
            self.records[key] = LocalValleyRecord(rec.lm_state, rec.energy, new_hits,
                                                  _earliest(rec.first_seen, sampler_id))

    def add_minima(self, model: RbmModel, minima, sampler_id: str, weights=None) -> None:
        minima = np.atleast_2d(np.asarray(minima, dtype=np.uint8))
        if minima.shape[0] == 0:
            return
        weights = np.ones(minima.shape[0], dtype=np.int64) if weights is None else np.asarray(weights)
        uniq, inverse = np.unique(minima, axis=0, return_inverse=True)
        totals = np.bincount(inverse.reshape(-1), weights=weights, minlength=uniq.shape[0]).astype(np.int64)
        energies = energy(model, uniq)
        for x, e, k, t in zip(uniq, energies, state_keys(uniq), totals):
            self.add(x, e, sampler_id, int(t), key=k)
        self.n_samples += int(weights.sum())

    def merge(self, other: "LvCatalog") -> "LvCatalog":
        if other.model_ref != self.model_ref:
            raise CatalogMismatch("catalogs come from different checkpoints")
        out = LvCatalog(self.model_ref, self.n_v, self.n_h, max(self.n_tp, other.n_tp),
                        dict(self.records), self.n_samples + other.n_samples)
        for key, rec in other.records.items():
            for sid, hits in rec.hits.items():
                out.add(rec.lm_state, rec.energy, sid, hits, key=key)
        return out

    def same_records(self, other: "LvCatalog") -> bool:
        return self.records.keys() == other.records.keys() and all(
            self.records[k] == other.records[k] for k in self.records)

    def sorted_records(self):
        """Records ordered by energy, then by bit pattern."""
        return sorted(self.records.values(), key=lambda r: (r.energy, bits_to_hex(r.lm_state)))

    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.records.values()])

    def visible_projection(self) -> set:
        """Distinct visible parts of the catalogued minima (report option only)."""
        return {state_keys(r.lm_state[: self.n_v])[0] for r in self.records.values()}

    def write(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CATALOG_HEADER)
            for r in self.sorted_records():
                w.writerow([bits_to_hex(r.lm_state), repr(r.energy)]
                           + [r.hits.get(s, 0) for s in SAMPLERS] + [r.first_seen])

    @classmethod
    def read(cls, path, model: RbmModel, n_tp: int = 0) -> "LvCatalog":
        cat = cls.for_model(model, n_tp)
        with Path(path).open() as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CATALOG_HEADER:
                raise ValueError(f"unexpected catalog header {reader.fieldnames}")
            for row in reader:
                x = hex_to_bits(row["lm_state_hex"], model.n_units)
                hits = {s: int(row[f"hits_{s}"]) for s in SAMPLERS if int(row[f"hits_{s}"])}
                x.setflags(write=False)
                cat.records[state_keys(x)[0]] = LocalValleyRecord(x, float(row["energy"]), hits, row["first_seen"])
                cat.n_samples += sum(hits.values())
        return cat


def scan_lvs_from_seeds(model: RbmModel, seeds, kG: int, T: float = 1.0, n_rpt: int = 1, rng: int = 0,
                        n_tp: int | None = None, sampler_id: str = "gibbs") -> LvCatalog:
    """``kG`` Gibbs steps at ``T`` from every seed (``n_rpt`` times), then relax and catalogue."""
    seeds = list(seeds)
    x = run_gibbs_chains(model, seeds, kG, T, int(rng), n_rpt)
    minima, _ = relax_batch(model, x)
    cat = LvCatalog.for_model(model, len(seeds) if n_tp is None else n_tp)
    cat.add_minima(model, minima, sampler_id)
    return cat


def scan_lvs_from_samples(model: RbmModel, samples: SampleSet, n_tp: int = 0) -> LvCatalog:
    """Relax every distinct sampled state at T=0 only; hits weighted by multiplicity."""
    if samples.states.shape[1] != model.n_units:
        raise ValueError(f"sample states have {samples.states.shape[1]} bits, model has {model.n_units}")
    minima, _ = relax_batch(model, samples.states)
    cat = LvCatalog.for_model(model, n_tp)
    cat.add_minima(model, minima, samples.sampler_id, samples.counts)
    return cat


def lm_map_exhaustive(model: RbmModel, cap: int | None = None) -> np.ndarray:
    """Local minimum reached from each of the 2**n states (row r is state r's LM)."""
    cap = ENUMERATION_CAP if cap is None else cap
    if model.n_units > cap:
        raise EnumerationError(f"{model.n_units} units exceeds enumeration cap {cap}")
    return relax_batch(model, all_states(model.n_units))[0]


def exhaustive_lm_enumeration(model: RbmModel, cap: int | None = None, sampler_id: str = "gibbs") -> LvCatalog:
    """Catalogue of every fixed point reachable from some state (one hit per start)."""
    cat = LvCatalog.for_model(model)
    cat.add_minima(model, lm_map_exhaustive(model, cap), sampler_id)
    return cat


@dataclass(frozen=True)
class OverlapReport:
    n_a: int
    n_b: int
    shared: int
    missed_by_b: float
    missed_by_a: float


def overlap_stats(a: LvCatalog, b: LvCatalog) -> OverlapReport:
    """Set comparison by exact LM bit pattern; ``missed_by_b = |A - B| / |A|``."""
    if a.model_ref != b.model_ref:
        raise CatalogMismatch("catalogs come from different checkpoints")
    ka, kb = a.keys(), b.keys()
    shared = len(ka & kb)
    return OverlapReport(
        len(ka), len(kb), shared,
        (len(ka) - shared) / len(ka) if ka else 0.0,
        (len(kb) - shared) / len(kb) if kb else 0.0,
    )


@dataclass(frozen=True)
class EnergyHistogram:
    bin_edges: np.ndarray
    counts_all: np.ndarray
    counts_shared: np.ndarray

    def write(self, path) -> None:
        with Path(path).open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "count_all", "count_shared"])
            for lo, hi, ca, cs in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts_all, self.counts_shared):
                w.writerow([repr(float(lo)), repr(float(hi)), int(ca), int(cs)])


def default_edges(catalogs, bins: int = 40) -> np.ndarray:
    """Equal-width edges spanning the union of the catalogs' LM energies."""
    e = np.concatenate([c.energies() for c in catalogs if c.n_lv] or [np.zeros(1)])
    lo, hi = float(e.min()), float(e.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def energy_histogram(src: LvCatalog, ref: LvCatalog | None = None, bins=40) -> EnergyHistogram:
    """Histogram of LM energies in ``src``; ``counts_shared`` keeps LMs also in ``ref``.

    ``bins`` is a bin count (spanning both catalogs) or explicit edges. The
    last bin is closed, as in :func:`numpy.histogram`; energies outside
    explicit edges are not counted.
    """
    if np.ndim(bins) == 0:
        if int(bins) < 1:
            raise ValueError("need at least one bin")
        edges = default_edges([src] + ([ref] if ref is not None else []), int(bins))
    else:
        edges = np.asarray(bins, dtype=float)
    recs = list(src.records.items())
    e_all = np.array([r.energy for _, r in recs])
    counts_all, _ = np.histogram(e_all, edges)
    if ref is None:
        counts_shared = np.zeros_like(counts_all)
    else:
        if ref.model_ref != src.model_ref:
            raise CatalogMismatch("catalogs come from different checkpoints")
        e_sh = np.array([r.energy for k, r in recs if k in ref.records])
        counts_shared, _ = np.histogram(e_sh, edges)
    return EnergyHistogram(edges, counts_all, counts_shared)


def p_gs(samples: SampleSet, gs_energy: float, tol: float = 1e-9) -> float:
    """Fraction of all samples (with multiplicity) whose energy is within ``tol`` of the GS."""
    if samples.n_requested == 0:
        raise ValueError("empty sample set")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    hit = samples.energies <= gs_energy + tol
    return float(samples.counts[hit].sum() / samples.n_requested)
