"""Clamped sampling with a trained RBM: classification, reconstruction, generation.

The MCMC path clamps by skipping updates of clamped visible units. The
annealer path clamps by saturating physical fields (see
:func:`rbmlv.embedding.clamp_units`) and runs the software annealer on the
scaled, embedded Ising problem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import (
    ChainBreakPolicy,
    Embedding,
    HardwareGraph,
    clamp_units,
    embed_problem,
    ising_ground_states,
    rbm_to_ising,
    scale_problem,
    unembed_samples,
)
from .model import RbmModel, energy, hidden_field
from .samplers import AnnealSchedule, SampleSet, anneal, gibbs_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClampMask:
    """Visible units to pin (``clamped``) and the bits they are pinned to."""

    clamped: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.clamped, dtype=bool).reshape(-1)
        vals = np.asarray(self.values, dtype=np.uint8).reshape(-1)
        if vals.size == mask.sum() and vals.size != mask.size:
            full = np.zeros(mask.size, dtype=np.uint8)
            full[mask] = vals
            vals = full
        if vals.size != mask.size:
            raise ValueError("values must cover either every visible unit or exactly the clamped ones")
        object.__setattr__(self, "clamped", mask)
        object.__setattr__(self, "values", np.where(mask, vals, 0).astype(np.uint8))

    @classmethod
    def random_pixels(cls, pattern, n_pixels: int, fraction: float = 0.54, rng=None) -> "ClampMask":
        """Clamp a random ``fraction`` of the first ``n_pixels`` units to ``pattern``."""
        rng = np.random.default_rng(rng)
        pattern = np.asarray(pattern, dtype=np.uint8)
        mask = np.zeros(pattern.size, dtype=bool)
        mask[rng.choice(n_pixels, int(round(fraction * n_pixels)), replace=False)] = True
        return cls(mask, pattern)

    @classmethod
    def label(cls, n_v: int, n_classes: int, label: int) -> "ClampMask":
        mask = np.zeros(n_v, dtype=bool)
        mask[n_v - n_classes :] = True
        vals = np.zeros(n_v, dtype=np.uint8)
        vals[n_v - n_classes + label] = 1
        return cls(mask, vals)

    def as_pair(self):
        return self.clamped, self.values

    def assignments(self) -> dict:
        return {int(j): int(self.values[j]) for j in np.flatnonzero(self.clamped)}


@dataclass(frozen=True)
class McmcConfig:
    burn_in: int = 400
    votes: int = 100
    T: float = 1.0
    n_chains: int = 20


Solver = Callable[[object, int, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class AnnealerConfig:
    """Settings for the annealer path.

    ``embedding=None`` uses an identity embedding (one node per unit, full
    connectivity). ``solver`` replaces SQA with any ``(problem, n_reads, rng)
    -> spins`` callable, e.g. :func:`exhaustive_solver`.
    """

    sf: float = 2.0
    schedule: AnnealSchedule = field(default_factory=lambda: AnnealSchedule.sqa(200))
    n_reads: int = 1000
    policy: ChainBreakPolicy = ChainBreakPolicy.MAJORITY_VOTE
    chain_strength: float = -1.0
    embedding: Embedding | None = None
    hw: HardwareGraph | None = None
    solver: Solver | None = None
    strict_range: bool = False
    sampler_id: str = "sqa"


def exhaustive_solver(problem, n_reads, rng):
    """Every ground state of the physical problem (``n_reads`` ignored)."""
    return ising_ground_states(problem)[1]


def annealer_sample(model: RbmModel, cfg: AnnealerConfig, rng=None, clamp: ClampMask | None = None):
    """Scale, embed, clamp, anneal and unembed; returns ``(SampleSet, info)``.

    States in the returned set are logical RBM configurations and energies are
    RBM energies of the unscaled model. Discarded reads are counted in
    ``info['n_discarded']``.
    """
    rng = np.random.default_rng(rng)
    logical = scale_problem(rbm_to_ising(model), cfg.sf)
    emb = cfg.embedding or Embedding.identity(model.n_units)
    phys = embed_problem(logical, emb, cfg.chain_strength, cfg.hw, check_range=cfg.strict_range)
    if clamp is not None:
        phys = clamp_units(phys, emb, clamp.assignments())
    if cfg.solver is None:
        spins = anneal(phys, cfg.schedule, cfg.n_reads, rng, transverse=cfg.sampler_id == "sqa")
    else:
        spins = np.atleast_2d(cfg.solver(phys, cfg.n_reads, rng))
    bits, valid, broken = unembed_samples(spins, emb, cfg.policy)
    kept = bits[valid]
    info = {
        "n_reads": int(spins.shape[0]),
        "n_discarded": int((~valid).sum()),
        "mean_broken_chains": float(broken.mean()) if broken.size else 0.0,
        "sf": cfg.sf,
    }
    ss = SampleSet.from_states(kept.reshape(-1, model.n_units), energy(model, kept.reshape(-1, model.n_units)),
                               cfg.sampler_id, None, cfg.schedule.to_dict(), model.n_v, info)
    return ss, info


def _label_of(bits, n_classes):
    return int(np.argmax(np.asarray(bits)[-n_classes:]))


# ---------------------------------------------------------------------------
# classification


def classify_mcmc_batch(model: RbmModel, images, cfg: McmcConfig = McmcConfig(), rng=None,
                        n_classes: int = 10) -> np.ndarray:
    """Clamp each image, run ``burn_in`` Gibbs sweeps, then tally label units over ``votes`` sweeps.

    Labels start random once per pattern. The vote is the label unit that was
    on most often (ties go to the lowest class index).
    """
    rng = np.random.default_rng(rng)
    images = np.atleast_2d(np.asarray(images, dtype=np.uint8))
    n_pix = images.shape[1]
    if n_pix + n_classes != model.n_v:
        raise ValueError(f"image length {n_pix} + {n_classes} labels != n_v {model.n_v}")
    v = np.concatenate([images, rng.integers(0, 2, (images.shape[0], n_classes), dtype=np.uint8)], axis=1)
    mask = np.zeros(model.n_v, dtype=bool)
    mask[:n_pix] = True
    clamp = (mask, v)
    for _ in range(cfg.burn_in):
        v, _ = gibbs_step(model, v, cfg.T, rng, clamp)
    tally = np.zeros((images.shape[0], n_classes), dtype=np.int64)
    for _ in range(cfg.votes):
        v, _ = gibbs_step(model, v, cfg.T, rng, clamp)
        tally += v[:, n_pix:]
    ties = np.sum((tally == tally.max(axis=1, keepdims=True)).sum(axis=1) > 1)
    if ties:
        log.debug("%d label votes tied; lowest class index chosen", ties)
    return np.argmax(tally, axis=1)


def classify_mcmc(model: RbmModel, image, burn_in: int = 400, votes: int = 100, rng=None,
                  n_classes: int = 10) -> int:
    return int(classify_mcmc_batch(model, image, McmcConfig(burn_in, votes), rng, n_classes)[0])


def classify_annealer(model: RbmModel, image, cfg: AnnealerConfig = AnnealerConfig(), rng=None,
                      n_classes: int = 10, clamp_labels=None) -> int:
    """Label of the lowest-energy valid read with every pixel clamped."""
    image = np.asarray(image, dtype=np.uint8)
    n_pix = image.size
    vals = np.zeros(model.n_v, dtype=np.uint8)
    vals[:n_pix] = image
    mask = np.zeros(model.n_v, dtype=bool)
    mask[:n_pix] = True
    if clamp_labels is not None:
        vals[n_pix:] = clamp_labels
        mask[n_pix:] = True
    ss, info = annealer_sample(model, cfg, rng, ClampMask(mask, vals))
    if ss.n_distinct == 0:
        raise RuntimeError(f"all {info['n_reads']} reads rejected by the chain-break policy")
    return _label_of(ss.states[np.argmin(ss.energies), : model.n_v], n_classes)


def classification_error(model: RbmModel, test_set, engine=McmcConfig(), rng=None) -> float:
    """Fraction of misclassified test patterns.

    ``engine`` is a :class:`McmcConfig`, an :class:`AnnealerConfig`, or a
    callable ``(model, images, rng) -> labels``.
    """
    if len(test_set) == 0:
        raise ValueError("empty test set")
    rng = np.random.default_rng(rng)
    images, labels = test_set.images, test_set.labels
    if isinstance(engine, McmcConfig):
        pred = classify_mcmc_batch(model, images, engine, rng, test_set.n_classes)
    elif isinstance(engine, AnnealerConfig):
        pred = np.array([classify_annealer(model, im, engine, rng, test_set.n_classes) for im in images])
    else:
        pred = np.asarray(engine(model, images, rng))
    return float(np.mean(pred != labels))


# ---------------------------------------------------------------------------
# reconstruction and generation


def _mcmc_states(model, clamp: ClampMask, cfg: McmcConfig, rng, keep_all=False):
    v = rng.integers(0, 2, (cfg.n_chains, model.n_v), dtype=np.uint8)
    v = np.where(clamp.clamped, clamp.values, v).astype(np.uint8)
    pair = clamp.as_pair()
    seen = []
    for _ in range(cfg.burn_in):
        v, h = gibbs_step(model, v, cfg.T, rng, pair)
        if keep_all:
            seen.append(np.concatenate([v, h], axis=1))
    h = (hidden_field(model, v) > 0).astype(np.uint8)
    final = np.concatenate([v, h], axis=1)
    return np.concatenate(seen) if keep_all and seen else final


def _respecting(states, clamp: ClampMask, n_v):
    ok = np.all(states[:, :n_v][:, clamp.clamped] == clamp.values[clamp.clamped], axis=1)
    return states[ok]


def reconstruct(model: RbmModel, partial: ClampMask, engine=McmcConfig(), rng=None) -> np.ndarray:
    """Fill the unclamped visible units; clamped bits come back unchanged.

    MCMC: final state of the lowest-energy chain after ``burn_in`` sweeps.
    Annealer: lowest-energy read that honours the clamp.
    """
    rng = np.random.default_rng(rng)
    if partial.clamped.size != model.n_v:
        raise ValueError("mask must cover every visible unit")
    if partial.clamped.all():
        return partial.values.copy()
    if isinstance(engine, McmcConfig):
        states = _mcmc_states(model, partial, engine, rng)
    else:
        ss, _ = annealer_sample(model, engine, rng, partial)
        states = _respecting(ss.states, partial, model.n_v)
        if states.shape[0] == 0:
            log.warning("no read honoured every clamped unit; overriding clamped bits")
            states = ss.states
        if states.shape[0] == 0:
            raise RuntimeError("annealer returned no usable reads")
    best = states[np.argmin(energy(model, states))][: model.n_v].copy()
    best[partial.clamped] = partial.values[partial.clamped]
    return best


@dataclass(frozen=True)
class GenerationResult:
    visibles: list
    energies: list
    complete: bool


def generate(model: RbmModel, label: int, engine=McmcConfig(), rng=None, top_k: int = 3,
             n_classes: int = 10) -> GenerationResult:
    """Clamp the label block to ``label`` and return the ``top_k`` lowest-energy distinct visible vectors.

    A visible vector is ranked by the lowest joint energy it appeared with.
    ``complete`` is False when fewer than ``top_k`` distinct vectors were found.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    rng = np.random.default_rng(rng)
    clamp = ClampMask.label(model.n_v, n_classes, label)
    if isinstance(engine, McmcConfig):
        states = _mcmc_states(model, clamp, engine, rng, keep_all=True)
    else:
        ss, _ = annealer_sample(model, engine, rng, clamp)
        states = _respecting(ss.states, clamp, model.n_v)
    e = energy(model, states) if states.shape[0] else np.zeros(0)
    best = {}
    for x, en in zip(states, e):
        key = x[: model.n_v].tobytes()
        if key not in best or en < best[key][0]:
            best[key] = (float(en), x[: model.n_v].copy())
    ranked = sorted(best.values(), key=lambda t: (t[0], t[1].tobytes()))[:top_k]
    if len(ranked) < top_k:
        log.info("only %d distinct visible vectors found for label %d", len(ranked), label)
    return GenerationResult([v for _, v in ranked], [en for en, _ in ranked], len(ranked) >= top_k)
