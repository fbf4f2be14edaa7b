"""Config-driven experiment runs: CSV tables, SVG plots and a digest manifest.

A run is fully described by its :class:`ExperimentConfig`; the manifest
written next to the outputs embeds the resolved config, so feeding a manifest
back to :func:`run_experiment` repeats the run.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .embedding import find_embedding, lattice_graph, rbm_ground_state
from .inference import (
    AnnealerConfig,
    ClampMask,
    McmcConfig,
    annealer_sample,
    classification_error,
    generate,
    reconstruct,
)
from .model import RbmModel, energy, hidden_field, load_model, save_model
from .samplers import AnnealSchedule, relax_batch, run_gibbs_chains
from .training import TrainingConfig, load_optdigits, train, train_test_split, write_sklearn_digits_csv
from .valleys import LvCatalog, default_edges, energy_histogram, overlap_stats, p_gs, scan_lvs_from_samples

log = logging.getLogger(__name__)

EXPERIMENTS = (
    "sf_sweep",
    "error_vs_epoch",
    "pgs_vs_sweeps",
    "nlv_vs_sweeps",
    "nlv_vs_epoch",
    "overlap_vs_epoch",
    "lm_histograms",
    "infer_demo",
)
SWEEP_GRID = (10, 100, 1000, 10000, 100000)
SWEEPS_LABEL = "sweeps (annealing-time analog)"


class ConfigError(ValueError):
    pass


class MissingCatalog(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# configuration


@dataclass
class DatasetSpec:
    path: str | None = None  # None: write scikit-learn's copy of the digits to <out>/data
    resolution: int = 8
    threshold: float | None = None
    n_classes: int = 10
    n_train: int = 100
    n_test: int = 300
    split_seed: int = 0
    full: bool = False  # 1000 training patterns

    def __post_init__(self):
        if self.full:
            self.n_train = 1000


@dataclass
class ModelSpec:
    n_h: int = 74
    init_scale: float = 0.01
    checkpoints: list = field(default_factory=lambda: [20, 90, 600, 1000, 1400, 2000])
    checkpoint_files: list | None = None  # pre-trained checkpoints; skips training


@dataclass
class GibbsSpec:
    kG: list = field(default_factory=lambda: [1, 10, 100])
    n_rpt: int = 10
    T: float = 1.0


@dataclass
class AnnealerSpec:
    sweeps: int = 1000
    n_reads: int = 1000
    trotter_slices: int = 8
    T: float = 0.05
    gamma_start: float = 3.0
    gamma_end: float = 0.01
    sf: float = 2.0
    hardware: dict | None = None  # {"rows", "cols", "degree_cap", "radius"} for a chained embedding

    def schedule(self, sweeps: int | None = None) -> AnnealSchedule:
        return AnnealSchedule.sqa(self.sweeps if sweeps is None else sweeps, self.T, self.gamma_start,
                                  self.gamma_end, self.trotter_slices)


@dataclass
class McmcSpec:
    burn_in: int = 400
    votes: int = 100
    n_chains: int = 20


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run. See the README for the JSON layout."""

    experiment: str
    seed: int = 0
    out: str = "runs/out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    training: dict = field(default_factory=dict)
    gibbs: GibbsSpec = field(default_factory=GibbsSpec)
    sqa: AnnealerSpec = field(default_factory=AnnealerSpec)
    mcmc: McmcSpec = field(default_factory=McmcSpec)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an explicit integer")
        bad = set(self.training) - set(TrainingConfig.__dataclass_fields__) - {"rng_seed"}
        if bad:
            raise ConfigError(f"unknown training keys {sorted(bad)}")
        if self.model.checkpoint_files is not None:
            missing = [p for p in self.model.checkpoint_files if not Path(p).is_file()]
            if missing:
                raise ConfigError(f"checkpoint files not found: {missing}")
        elif not self.model.checkpoints:
            raise ConfigError("no checkpoints requested")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d.get("config", d))  # a manifest carries its config
        parts = {"dataset": DatasetSpec, "model": ModelSpec, "gibbs": GibbsSpec, "sqa": AnnealerSpec,
                 "mcmc": McmcSpec}
        try:
            for key, typ in parts.items():
                if key in d and not isinstance(d[key], typ):
                    d[key] = typ(**d[key])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def training_config(self) -> TrainingConfig:
        opts = dict(self.training)
        opts.setdefault("rng_seed", derive_seed(self.seed, "train"))
        opts.setdefault("epochs", max(self.model.checkpoints))
        opts["checkpoints"] = tuple(self.model.checkpoints)
        return TrainingConfig(**opts)

    def mcmc_config(self) -> McmcConfig:
        return McmcConfig(self.mcmc.burn_in, self.mcmc.votes, 1.0, self.mcmc.n_chains)

    def annealer_config(self, sweeps: int | None = None, n_reads: int | None = None, sf: float | None = None,
                        embedding=None, hw=None) -> AnnealerConfig:
        s = self.sqa
        return AnnealerConfig(sf=s.sf if sf is None else sf, schedule=s.schedule(sweeps),
                              n_reads=s.n_reads if n_reads is None else n_reads, embedding=embedding, hw=hw)


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit seed for one stage of a run, independent of execution order."""
    words = [int(seed)] + [t if isinstance(t, int) else zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(2, np.uint64)[0] >> np.uint64(1))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# shared stages


class _Run:
    """Output directory bookkeeping for one experiment."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[Path] = []
        self.errors: list[dict] = []
        self.checkpoints: list[dict] = []

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, p: Path) -> Path:
        if p not in self.outputs:
            self.outputs.append(p)
        return p

    def write_csv(self, rel: str, header, rows) -> Path:
        p = self.path(rel)
        with p.open("w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        return self.record(p)


def load_dataset(run: _Run):
    ds_spec = run.cfg.dataset
    path = ds_spec.path
    if path is None:
        path = run.path("data/digits.csv")
        if not path.exists():
            write_sklearn_digits_csv(path)
    ds = load_optdigits(path, ds_spec.resolution, ds_spec.threshold, ds_spec.n_classes)
    return train_test_split(ds, ds_spec.n_train, ds_spec.n_test, ds_spec.split_seed)


def obtain_checkpoints(run: _Run, train_set) -> dict:
    """Epoch -> model, either loaded from files or trained here (and saved)."""
    cfg = run.cfg
    models = {}
    if cfg.model.checkpoint_files is not None:
        for i, p in enumerate(cfg.model.checkpoint_files):
            d = json.loads(Path(p).read_text())
            models[int(d.get("epoch", i))] = RbmModel.from_dict(d)
    else:
        tcfg = cfg.training_config()
        init = RbmModel.random(train_set.patterns.shape[1], cfg.model.n_h, derive_seed(cfg.seed, "init"),
                               scale=cfg.model.init_scale)
        _, trace = train(init, train_set, tcfg, checkpoint_dir=run.path("checkpoints"))
        trace.write_csv(run.path("trace.csv"))
        run.record(run.out / "trace.csv")
        models = dict(trace.checkpoints)
        for f in sorted(run.path("checkpoints").glob("epoch_*.json")):
            run.record(f)
    for epoch in sorted(models):
        run.checkpoints.append({"epoch": epoch, "digest": models[epoch].digest()})
    return dict(sorted(models.items()))


def _hardware_embedding(run: _Run, model: RbmModel):
    hw_spec = run.cfg.sqa.hardware
    if not hw_spec:
        return None, None
    rng = np.random.default_rng(derive_seed(run.cfg.seed, "hardware"))
    hw = lattice_graph(hw_spec["rows"], hw_spec["cols"], rng, hw_spec.get("degree_cap", 15), hw_spec.get("radius", 2))
    edges = [(j, model.n_v + i) for i, j in zip(*np.nonzero(model.W))]
    emb = find_embedding(edges, hw, rng, n_logical=model.n_units)
    return emb, hw


def sqa_catalog(run: _Run, model: RbmModel, n_tp: int, tag, sweeps=None, n_reads=None) -> tuple:
    emb, hw = _hardware_embedding(run, model)
    acfg = run.cfg.annealer_config(sweeps, n_reads, embedding=emb, hw=hw)
    ss, info = annealer_sample(model, acfg, derive_seed(run.cfg.seed, "sqa", *tag))
    return scan_lvs_from_samples(model, ss, n_tp) if ss.n_requested else LvCatalog.for_model(model, n_tp), ss


def gibbs_catalog(run: _Run, model: RbmModel, seeds, kG: int, n_samples: int | None, tag) -> LvCatalog:
    """LV catalog from ``kG``-step chains started at the training patterns.

    With ``n_samples`` the seeds are cycled until that many chains ran;
    otherwise every seed runs ``gibbs.n_rpt`` times.
    """
    seeds = np.asarray(seeds, dtype=np.uint8)
    n_tp = seeds.shape[0]
    n_rpt = run.cfg.gibbs.n_rpt if n_samples is None else -(-n_samples // n_tp)
    x = run_gibbs_chains(model, seeds, kG, run.cfg.gibbs.T, derive_seed(run.cfg.seed, "gibbs", kG, *tag), n_rpt)
    if n_samples is not None:
        x = x[:n_samples]
    minima, _ = relax_batch(model, x)
    cat = LvCatalog.for_model(model, n_tp)
    cat.add_minima(model, minima, "gibbs")
    return cat


# ---------------------------------------------------------------------------
# plotting


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "rbmlv"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(run: _Run, fig, rel: str) -> Path:
    p = run.path(rel)
    fig.savefig(p, format="svg", metadata={"Date": None, "Creator": None})
    _pyplot().close(fig)
    return run.record(p)


def _line_plot(run, rel, xs_by_series: dict, xlabel, ylabel, logx=False):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (xs, ys) in xs_by_series.items():
        ax.plot(xs, ys, marker="o", label=str(name))
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(xs_by_series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(run, fig, rel)


# ---------------------------------------------------------------------------
# experiments


def _exp_sf_sweep(run: _Run, train_set, test_set, models):
    p = run.cfg.params
    epoch, model = max(models.items())
    sfs = p.get("sf_values", [0.5, 1, 2, 4, 8])
    n_eval = min(p.get("n_eval", 50), len(test_set))
    subset = test_set.subset(np.arange(n_eval))
    emb, hw = _hardware_embedding(run, model)
    rows = []
    for sf in sfs:
        acfg = run.cfg.annealer_config(sf=float(sf), embedding=emb, hw=hw)
        err = classification_error(model, subset, acfg, derive_seed(run.cfg.seed, "sf", repr(float(sf))))
        rows.append((float(sf), err))
    run.write_csv("sf_sweep.csv", ["sf", "classification_error"], rows)
    _line_plot(run, "sf_sweep.svg", {"annealer": ([r[0] for r in rows], [r[1] for r in rows])},
               "scale factor", "classification error", logx=True)


def _exp_error_vs_epoch(run: _Run, train_set, test_set, models):
    p = run.cfg.params
    engines = p.get("engines", ["mcmc"])
    n_eval = min(p.get("n_eval", len(test_set)), len(test_set))
    subset = test_set.subset(np.arange(n_eval))
    rows, series = [], {}
    for engine in engines:
        for epoch, model in models.items():
            eng = run.cfg.mcmc_config() if engine == "mcmc" else run.cfg.annealer_config()
            err = classification_error(model, subset, eng, derive_seed(run.cfg.seed, "classify", engine, epoch))
            rows.append((epoch, engine, err))
            series.setdefault(engine, ([], []))
            series[engine][0].append(epoch)
            series[engine][1].append(err)
    run.write_csv("error_vs_epoch.csv", ["epoch", "engine", "classification_error"], rows)
    _line_plot(run, "error_vs_epoch.svg", series, "epoch", "classification error")


def _sweep_grid(run):
    return [int(s) for s in run.cfg.params.get("sweeps", SWEEP_GRID)]


def _nlv_over_sweeps(run, model, n_tp, tag, with_gs=None):
    n_runs = int(run.cfg.params.get("n_runs", 1))
    rows = []
    for sweeps in _sweep_grid(run):
        nlv, pg = [], []
        for r in range(n_runs):
            cat, ss = sqa_catalog(run, model, n_tp, (*tag, sweeps, r), sweeps=sweeps)
            nlv.append(cat.n_lv)
            if with_gs is not None:
                pg.append(p_gs(ss, with_gs))
        mean_nlv = float(np.mean(nlv))
        rows.append((sweeps, float(np.mean(pg)) if pg else None, mean_nlv, mean_nlv / n_tp))
    return rows


def _exp_pgs_vs_sweeps(run: _Run, train_set, test_set, models):
    epoch, model = max(models.items())
    gs_energy, _ = rbm_ground_state(model)
    rows = _nlv_over_sweeps(run, model, len(train_set), ("pgs", epoch), with_gs=gs_energy)
    run.write_csv("pgs_vs_sweeps.csv", ["sweeps", "p_gs", "n_lv", "n_lv_norm"], rows)
    xs = [r[0] for r in rows]
    _line_plot(run, "pgs_vs_sweeps.svg", {"P_GS": (xs, [r[1] for r in rows])}, SWEEPS_LABEL, "P_GS", logx=True)
    _line_plot(run, "pgs_nlv_vs_sweeps.svg", {"N_LV/N_TP": (xs, [r[3] for r in rows])}, SWEEPS_LABEL,
               "N_LV / N_TP", logx=True)
    return {"gs_energy": gs_energy}


def _exp_nlv_vs_sweeps(run: _Run, train_set, test_set, models):
    rows, series = [], {}
    for epoch, model in models.items():
        for sweeps, _, nlv, norm in _nlv_over_sweeps(run, model, len(train_set), ("nlv_sweeps", epoch)):
            rows.append((epoch, sweeps, nlv, norm))
            series.setdefault(f"epoch {epoch}", ([], []))
            series[f"epoch {epoch}"][0].append(sweeps)
            series[f"epoch {epoch}"][1].append(norm)
    run.write_csv("nlv_vs_sweeps.csv", ["epoch", "sweeps", "n_lv", "n_lv_norm"], rows)
    _line_plot(run, "nlv_vs_sweeps.svg", series, SWEEPS_LABEL, "N_LV / N_TP", logx=True)


def _exp_nlv_vs_epoch(run: _Run, train_set, test_set, models):
    n_tp = len(train_set)
    engines = run.cfg.params.get("engines", ["gibbs", "sqa"])
    rows, series = [], {}
    for epoch, model in models.items():
        entries = []
        if "gibbs" in engines:
            for kG in run.cfg.gibbs.kG:
                cat = gibbs_catalog(run, model, train_set.patterns, int(kG), None, ("nlv", epoch))
                entries.append((f"gibbs_k{kG}", cat))
        if "sqa" in engines:
            entries.append(("sqa", sqa_catalog(run, model, n_tp, ("nlv", epoch))[0]))
        for name, cat in entries:
            cat.write(run.record(run.path(f"catalogs/nlv_epoch_{epoch:05d}_{name}.csv")))
            rows.append((epoch, name, cat.n_lv, cat.n_lv / n_tp))
            series.setdefault(name, ([], []))
            series[name][0].append(epoch)
            series[name][1].append(cat.n_lv / n_tp)
    run.write_csv("nlv_vs_epoch.csv", ["epoch", "engine", "n_lv", "n_lv_norm"], rows)
    _line_plot(run, "nlv_vs_epoch.svg", series, "epoch", "N_LV / N_TP")


def _suite_grid(cfg: ExperimentConfig):
    p = cfg.params
    return [int(k) for k in p.get("overlap_kG", [1, 100])], [int(n) for n in p.get("n_smp", [1000, 10000])]


def catalog_path(out, epoch: int, engine: str, n_smp: int, kG: int | None = None) -> Path:
    name = f"gibbs_k{kG}" if engine == "gibbs" else engine
    return Path(out) / "catalogs" / f"epoch_{epoch:05d}_{name}_n{n_smp}.csv"


def build_catalogs(run: _Run, train_set, models) -> None:
    """Gibbs (each kG) and annealer catalogs of ``n_smp`` samples at every checkpoint."""
    kGs, n_smps = _suite_grid(run.cfg)
    n_tp = len(train_set)
    for epoch, model in models.items():
        save_model_ref = run.path(f"catalogs/epoch_{epoch:05d}_model.json")
        save_model(model, save_model_ref, epoch=epoch)
        run.record(save_model_ref)
        for n_smp in n_smps:
            cat, _ = sqa_catalog(run, model, n_tp, ("suite", epoch, n_smp), n_reads=n_smp)
            cat.write(run.record(catalog_path(run.out, epoch, "sqa", n_smp)))
            for kG in kGs:
                cat = gibbs_catalog(run, model, train_set.patterns, kG, n_smp, ("suite", epoch))
                cat.write(run.record(catalog_path(run.out, epoch, "gibbs", n_smp, kG)))


def _suite_epochs(cfg: ExperimentConfig, out: Path) -> list:
    files = sorted((out / "catalogs").glob("epoch_*_model.json")) if (out / "catalogs").is_dir() else []
    if not files:
        raise MissingCatalog(f"no catalogs under {out / 'catalogs'}")
    return [int(f.name.split("_")[1]) for f in files]


def _load_suite(out: Path, epoch: int, engine: str, n_smp: int, kG=None):
    model = load_model(out / "catalogs" / f"epoch_{epoch:05d}_model.json")
    p = catalog_path(out, epoch, engine, n_smp, kG)
    if not p.is_file():
        raise MissingCatalog(f"missing catalog {p}")
    return model, LvCatalog.read(p, model)


def report_overlap_suite(config: ExperimentConfig, run: _Run | None = None) -> list:
    """Curves A (annealer LVs missed by Gibbs) and B (Gibbs LVs missed by the annealer), in percent.

    One panel per (kG, N_smp); reads the catalogs written by ``overlap_vs_epoch``.
    Returns the written paths.
    """
    run = run or _Run(config)
    kGs, n_smps = _suite_grid(config)
    epochs = _suite_epochs(config, run.out)
    rows, panels = [], {}
    for kG in kGs:
        for n_smp in n_smps:
            xs, curve_a, curve_b = [], [], []
            for epoch in epochs:
                _, sqa = _load_suite(run.out, epoch, "sqa", n_smp)
                _, gib = _load_suite(run.out, epoch, "gibbs", n_smp, kG)
                rep = overlap_stats(sqa, gib)
                a, b = 100.0 * rep.missed_by_b, 100.0 * rep.missed_by_a
                rows.append((epoch, kG, n_smp, rep.n_a, rep.n_b, rep.shared, a, b))
                xs.append(epoch)
                curve_a.append(a)
                curve_b.append(b)
            panels[(kG, n_smp)] = (xs, curve_a, curve_b)
    written = [run.write_csv("overlap_vs_epoch.csv",
                             ["epoch", "kG", "n_smp", "n_lv_sqa", "n_lv_gibbs", "shared", "pct_a", "pct_b"], rows)]
    plt = _pyplot()
    fig, axes = plt.subplots(len(kGs), len(n_smps), figsize=(4 * len(n_smps), 3 * len(kGs)), squeeze=False)
    for r, kG in enumerate(kGs):
        for c, n_smp in enumerate(n_smps):
            xs, ca, cb = panels[(kG, n_smp)]
            ax = axes[r][c]
            ax.plot(xs, ca, marker="o", label="A: annealer LVs missed by Gibbs")
            ax.plot(xs, cb, marker="s", label="B: Gibbs LVs missed by annealer")
            ax.set_title(f"kG={kG}, N_smp={n_smp}", fontsize=9)
            ax.set_xlabel("epoch")
            ax.set_ylabel("% missed")
            ax.set_ylim(-5, 105)
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    written.append(_save(run, fig, "overlap_vs_epoch.svg"))
    return written


def report_histograms(config: ExperimentConfig, run: _Run | None = None) -> list:
    """LM energy histograms per checkpoint with the shared-with-other-engine counts.

    Uses the largest ``N_smp`` and the first ``kG`` of the suite; both engines
    share one set of bin edges per checkpoint.
    """
    run = run or _Run(config)
    kGs, n_smps = _suite_grid(config)
    kG = int(config.params.get("hist_kG", kGs[0]))
    n_smp = int(config.params.get("hist_n_smp", max(n_smps)))
    bins = int(config.params.get("bins", 40))
    epochs = _suite_epochs(config, run.out)
    rows, panels = [], []
    for epoch in epochs:
        _, sqa = _load_suite(run.out, epoch, "sqa", n_smp)
        _, gib = _load_suite(run.out, epoch, "gibbs", n_smp, kG)
        edges = default_edges([sqa, gib], bins)
        hs = {"sqa": energy_histogram(sqa, gib, edges), f"gibbs_k{kG}": energy_histogram(gib, sqa, edges)}
        for name, h in hs.items():
            for lo, hi, ca, cs in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts_all, h.counts_shared):
                rows.append((epoch, name, float(lo), float(hi), int(ca), int(cs)))
        panels.append((epoch, hs))
    written = [run.write_csv("lm_histograms.csv",
                             ["epoch", "engine", "bin_lo", "bin_hi", "count_all", "count_shared"], rows)]
    plt = _pyplot()
    fig, axes = plt.subplots(len(panels), 2, figsize=(8, 2.6 * len(panels)), squeeze=False)
    for r, (epoch, hs) in enumerate(panels):
        for c, (name, h) in enumerate(hs.items()):
            ax = axes[r][c]
            width = np.diff(h.bin_edges)
            ax.bar(h.bin_edges[:-1], h.counts_all, width, align="edge", color="0.75", label="all")
            ax.bar(h.bin_edges[:-1], h.counts_shared, width, align="edge", color="tab:blue",
                   label="also found by the other engine")
            ax.set_title(f"{name}, epoch {epoch}", fontsize=9)
            ax.set_xlabel("LM energy")
            ax.set_ylabel("N_LV")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    written.append(_save(run, fig, "lm_histograms.svg"))
    return written


def _exp_overlap_vs_epoch(run: _Run, train_set, test_set, models):
    build_catalogs(run, train_set, models)
    report_overlap_suite(run.cfg, run)


def _exp_lm_histograms(run: _Run, train_set, test_set, models):
    build_catalogs(run, train_set, models)
    report_histograms(run.cfg, run)


def write_pgm(path, bits, resolution: int, unknown=None) -> Path:
    """Plain (P2) greyscale image: ink (1) black, background white, ``unknown`` pixels mid-grey."""
    bits = np.asarray(bits).reshape(-1)[: resolution * resolution]
    px = np.where(bits > 0, 0, 255)
    if unknown is not None:
        px = np.where(np.asarray(unknown).reshape(-1)[: resolution * resolution], 128, px)
    lines = [f"P2\n{resolution} {resolution}\n255"]
    lines += [" ".join(str(int(v)) for v in row) for row in px.reshape(resolution, resolution)]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def _exp_infer_demo(run: _Run, train_set, test_set, models):
    p = run.cfg.params
    epoch, model = max(models.items())
    res = run.cfg.dataset.resolution
    n_pix = res * res
    engines = p.get("engines", ["mcmc"])
    fraction = float(p.get("clamp_fraction", 0.54))
    rows = []
    for engine in engines:
        eng = run.cfg.mcmc_config() if engine == "mcmc" else run.cfg.annealer_config()
        for idx in range(min(int(p.get("n_patterns", 3)), len(test_set))):
            pattern = test_set.patterns[idx]
            rng = np.random.default_rng(derive_seed(run.cfg.seed, "reconstruct", engine, idx))
            mask = ClampMask.random_pixels(pattern, n_pix, fraction, rng)
            filled = reconstruct(model, mask, eng, rng)
            stem = f"infer/{engine}_reconstruct_{idx}"
            run.record(write_pgm(run.path(stem + "_original.pgm"), pattern, res))
            run.record(write_pgm(run.path(stem + "_clamped.pgm"), mask.values, res, ~mask.clamped[:n_pix]))
            run.record(write_pgm(run.path(stem + "_result.pgm"), filled, res))
            e = float(_best_joint_energy(model, filled)[0])
            rows.append(("reconstruct", engine, idx, 0, e, int(np.sum(filled[:n_pix] != pattern[:n_pix])),
                         stem + "_result.pgm"))
        for label in p.get("labels", list(range(run.cfg.dataset.n_classes))):
            rng = np.random.default_rng(derive_seed(run.cfg.seed, "generate", engine, label))
            result = generate(model, int(label), eng, rng, int(p.get("top_k", 3)), run.cfg.dataset.n_classes)
            for rank, (v, e) in enumerate(zip(result.visibles, result.energies)):
                rel = f"infer/{engine}_generate_{label}_{rank}.pgm"
                run.record(write_pgm(run.path(rel), v, res))
                rows.append(("generate", engine, label, rank, e, "", rel))
    run.write_csv("infer_demo.csv", ["task", "engine", "index_or_label", "rank", "energy", "pixel_errors", "image"],
                  rows)


def _best_joint_energy(model: RbmModel, v):
    """Lowest joint energy attainable with visible ``v`` (hidden units set optimally)."""
    h = (hidden_field(model, v) > 0).astype(np.uint8)
    return np.atleast_1d(energy(model, v, h))


_RUNNERS = {
    "sf_sweep": _exp_sf_sweep,
    "error_vs_epoch": _exp_error_vs_epoch,
    "pgs_vs_sweeps": _exp_pgs_vs_sweeps,
    "nlv_vs_sweeps": _exp_nlv_vs_sweeps,
    "nlv_vs_epoch": _exp_nlv_vs_epoch,
    "overlap_vs_epoch": _exp_overlap_vs_epoch,
    "lm_histograms": _exp_lm_histograms,
    "infer_demo": _exp_infer_demo,
}


def _manifest(run: _Run, extra: dict) -> dict:
    cfg = run.cfg
    cfg_text = json.dumps(cfg.to_dict(), sort_keys=True)
    return {
        "experiment": cfg.experiment,
        "config": cfg.to_dict(),
        "config_digest": hashlib.sha256(cfg_text.encode()).hexdigest(),
        "seed": cfg.seed,
        "checkpoints": run.checkpoints,
        "outputs": {str(p.relative_to(run.out)): file_digest(p) for p in sorted(run.outputs) if p.exists()},
        "errors": run.errors,
        "status": "failed" if run.errors else "ok",
        **extra,
    }


def run_experiment(config: ExperimentConfig | dict) -> dict:
    """Run one experiment and write ``manifest.json`` into its output directory.

    Failures are recorded in the manifest (status ``failed``) with whatever
    outputs were written before the failing stage.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    run = _Run(cfg)
    extra = {}
    stage = "dataset"
    try:
        train_set, test_set = load_dataset(run)
        stage = "checkpoints"
        models = obtain_checkpoints(run, train_set)
        stage = cfg.experiment
        extra = _RUNNERS[cfg.experiment](run, train_set, test_set, models) or {}
    except Exception as exc:  # recorded, partial outputs kept
        log.exception("stage %s failed", stage)
        run.errors.append({"stage": stage, "error": f"{type(exc).__name__}: {exc}"})
    manifest = _manifest(run, extra)
    (run.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
