"""Command-line entry point: ``rbmlv <subcommand>`` (or ``python -m rbmlv``)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .inference import AnnealerConfig, ClampMask, McmcConfig, classification_error, generate, reconstruct
from .model import RbmModel, load_model, save_model
from .samplers import AnnealSchedule, SampleSet, gibbs_sample, simulated_annealing, sqa_sample
from .training import TrainingConfig, load_optdigits, train, train_test_split, write_sklearn_digits_csv
from .valleys import LvCatalog, energy_histogram, overlap_stats, scan_lvs_from_samples

log = logging.getLogger("rbmlv")


def _dataset(args):
    path = args.data
    if path is None:
        path = Path(args.out) / "data" / "digits.csv"
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            write_sklearn_digits_csv(path)
    ds = load_optdigits(path, args.resolution, args.threshold)
    n_train = 1000 if getattr(args, "full", False) else args.n_train
    return train_test_split(ds, n_train, args.n_test, args.split_seed)


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule(args) -> AnnealSchedule:
    if args.engine == "sa":
        return AnnealSchedule.sa(args.sweeps, args.t_start, args.t_end)
    return AnnealSchedule.sqa(args.sweeps, args.temperature, args.gamma_start, args.gamma_end, args.trotter)


def cmd_train(args):
    out = _out(args)
    train_set, test_set = _dataset(args)
    checkpoints = args.checkpoints or [args.epochs]
    cfg = TrainingConfig(kG=args.kG, learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         weight_decay=args.weight_decay, weight_cap=args.weight_cap, rng_seed=args.seed,
                         checkpoints=tuple(checkpoints))
    init = RbmModel.random(train_set.patterns.shape[1], args.n_h, ex.derive_seed(args.seed, "init"), args.init_scale)
    evaluate = None
    if args.eval:
        mcmc = McmcConfig(args.burn_in, args.votes)
        evaluate = lambda m: classification_error(m, test_set, mcmc, ex.derive_seed(args.seed, "eval"))  # noqa: E731
    model, trace = train(init, train_set, cfg, checkpoint_dir=out / "checkpoints", evaluate=evaluate)
    save_model(model, out / "model.json", epoch=args.epochs, training=cfg.to_dict())
    trace.write_csv(out / "trace.csv")
    print(f"trained {args.epochs} epochs on {len(train_set)} patterns; max|w| {trace.records[-1].max_abs_w:.4f}"
          if trace.records else "no epochs run")


def cmd_sample(args):
    out = _out(args)
    model = load_model(args.model)
    if args.engine == "gibbs":
        if args.seeds_random:
            rng = np.random.default_rng(ex.derive_seed(args.seed, "seeds"))
            seeds = rng.integers(0, 2, (args.seeds_random, model.n_v), dtype=np.uint8)
        else:
            seeds = _dataset(args)[0].patterns
        ss = gibbs_sample(model, seeds, args.kG, args.temperature, args.seed, args.n_rpt)
    elif args.engine == "sa":
        ss = simulated_annealing(model, _schedule(args), args.reads, args.seed)
    else:
        ss = sqa_sample(model, _schedule(args), args.reads, args.seed)
    path = out / (args.name or f"samples_{args.engine}.csv")
    ss.write(path)
    print(f"{ss.n_requested} samples ({ss.n_distinct} distinct) -> {path}")


def cmd_scan(args):
    model = load_model(args.model)
    catalog = None
    for p in args.samples:
        cat = scan_lvs_from_samples(model, SampleSet.read(p), args.n_tp)
        catalog = cat if catalog is None else catalog.merge(cat)
    path = _out(args) / (args.name or "catalog.csv")
    catalog.write(path)
    print(f"N_LV {catalog.n_lv}" + (f" (N_LV/N_TP {catalog.normalized_n_lv():.4f})" if args.n_tp else "")
          + f" -> {path}")


def cmd_compare(args):
    model = load_model(args.model)
    a, b = LvCatalog.read(args.a, model), LvCatalog.read(args.b, model)
    rep = overlap_stats(a, b)
    path = _out(args) / (args.name or "overlap.csv")
    path.write_text("n_a,n_b,shared,missed_by_b,missed_by_a\n"
                    f"{rep.n_a},{rep.n_b},{rep.shared},{rep.missed_by_b!r},{rep.missed_by_a!r}\n")
    print(f"shared {rep.shared}; A missed by B {100 * rep.missed_by_b:.2f}%; B missed by A "
          f"{100 * rep.missed_by_a:.2f}% -> {path}")


def cmd_hist(args):
    model = load_model(args.model)
    src = LvCatalog.read(args.catalog, model)
    ref = LvCatalog.read(args.ref, model) if args.ref else None
    h = energy_histogram(src, ref, args.bins)
    path = _out(args) / (args.name or "histogram.csv")
    h.write(path)
    print(f"{int(h.counts_all.sum())} minima in {args.bins} bins -> {path}")


def cmd_infer(args):
    out = _out(args)
    model = load_model(args.model)
    _, test_set = _dataset(args)
    if args.engine == "mcmc":
        engine = McmcConfig(args.burn_in, args.votes)
    else:
        engine = AnnealerConfig(sf=args.sf, schedule=_schedule(args), n_reads=args.reads)
    res = args.resolution
    n_pix = res * res
    rows = ["task,index_or_label,rank,energy,image"]
    if args.task == "classify":
        err = classification_error(model, test_set.subset(np.arange(min(args.n, len(test_set)))), engine, args.seed)
        print(f"classification error {err:.4f}")
        return
    if args.task == "reconstruct":
        rng = np.random.default_rng(args.seed)
        for idx in range(min(args.n, len(test_set))):
            pattern = test_set.patterns[idx]
            mask = ClampMask.random_pixels(pattern, n_pix, args.fraction, rng)
            filled = reconstruct(model, mask, engine, rng)
            name = f"reconstruct_{idx}.pgm"
            ex.write_pgm(out / name, filled, res)
            e = float(ex._best_joint_energy(model, filled)[0])
            rows.append(f"reconstruct,{idx},0,{e!r},{name}")
    else:
        labels = args.labels if args.labels is not None else list(range(10))
        for label in labels:
            result = generate(model, label, engine, ex.derive_seed(args.seed, "generate", label), args.top_k)
            for rank, (v, e) in enumerate(zip(result.visibles, result.energies)):
                name = f"generate_{label}_{rank}.pgm"
                ex.write_pgm(out / name, v, res)
                rows.append(f"generate,{label},{rank},{e!r},{name}")
    (out / f"{args.task}.csv").write_text("\n".join(rows) + "\n")
    print(f"{len(rows) - 1} images -> {out}")


def _load_config(args) -> ex.ExperimentConfig:
    if not args.config:
        raise SystemExit("--config is required")
    d = json.loads(Path(args.config).read_text())
    d = dict(d.get("config", d))
    if args.out_given:
        d["out"] = args.out
    if args.seed_given:
        d["seed"] = args.seed
    if args.full:
        d.setdefault("dataset", {})["full"] = True
    return ex.ExperimentConfig.from_dict(d)


def cmd_run(args):
    manifest = ex.run_experiment(_load_config(args))
    print(f"{manifest['experiment']}: {manifest['status']}, {len(manifest['outputs'])} outputs")
    for err in manifest["errors"]:
        print(f"  {err['stage']}: {err['error']}", file=sys.stderr)
    return 0 if manifest["status"] == "ok" else 1


def cmd_report(args):
    cfg = _load_config(args)
    written = []
    if args.kind in ("overlap", "all"):
        written += ex.report_overlap_suite(cfg)
    if args.kind in ("histograms", "all"):
        written += ex.report_histograms(cfg)
    for p in written:
        print(p)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    common.add_argument("--config", help="experiment config (JSON) or a run manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="digits CSV (features then label); default: scikit-learn's copy")
    data.add_argument("--resolution", type=int, default=8)
    data.add_argument("--threshold", type=float)
    data.add_argument("--n-train", type=int, default=100)
    data.add_argument("--n-test", type=int, default=300)
    data.add_argument("--split-seed", type=int, default=0)
    data.add_argument("--full", action="store_true", help="1000 training patterns")

    anneal = argparse.ArgumentParser(add_help=False)
    anneal.add_argument("--sweeps", type=int, default=1000)
    anneal.add_argument("--reads", type=int, default=1000)
    anneal.add_argument("--trotter", type=int, default=8)
    anneal.add_argument("--temperature", type=float, default=None)
    anneal.add_argument("--gamma-start", type=float, default=3.0)
    anneal.add_argument("--gamma-end", type=float, default=0.01)
    anneal.add_argument("--t-start", type=float, default=3.0)
    anneal.add_argument("--t-end", type=float, default=0.05)

    mcmc = argparse.ArgumentParser(add_help=False)
    mcmc.add_argument("--burn-in", type=int, default=400)
    mcmc.add_argument("--votes", type=int, default=100)

    p = argparse.ArgumentParser(prog="rbmlv", parents=[common],
                                description="RBM training, sampling and local-valley analysis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", parents=[common, data, mcmc], help="CD-k training with checkpoints")
    s.add_argument("--n-h", type=int, default=74)
    s.add_argument("--epochs", type=int, default=2000)
    s.add_argument("--kG", type=int, default=5)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--batch-size", type=int, default=10)
    s.add_argument("--weight-decay", type=float, default=1e-3)
    s.add_argument("--weight-cap", type=float)
    s.add_argument("--init-scale", type=float, default=0.01)
    s.add_argument("--checkpoints", type=int, nargs="*")
    s.add_argument("--eval", action="store_true", help="MCMC classification error at checkpoints")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", parents=[common, data, anneal], help="draw a SampleSet")
    s.add_argument("--model", required=True)
    s.add_argument("--engine", choices=["gibbs", "sa", "sqa"], default="gibbs")
    s.add_argument("--kG", type=int, default=1)
    s.add_argument("--n-rpt", type=int, default=1)
    s.add_argument("--seeds-random", type=int, help="start Gibbs chains from this many random vectors")
    s.add_argument("--name")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("scan", parents=[common], help="relax samples into an LV catalog")
    s.add_argument("--model", required=True)
    s.add_argument("--samples", nargs="+", required=True)
    s.add_argument("--n-tp", type=int, default=0)
    s.add_argument("--name")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("compare", parents=[common], help="overlap of two catalogs")
    s.add_argument("--model", required=True)
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--name")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("hist", parents=[common], help="LM energy histogram of a catalog")
    s.add_argument("--model", required=True)
    s.add_argument("--catalog", required=True)
    s.add_argument("--ref")
    s.add_argument("--bins", type=int, default=40)
    s.add_argument("--name")
    s.set_defaults(func=cmd_hist)

    s = sub.add_parser("infer", parents=[common, data, anneal, mcmc], help="classify, reconstruct or generate")
    s.add_argument("--model", required=True)
    s.add_argument("--task", choices=["classify", "reconstruct", "generate"], default="reconstruct")
    s.add_argument("--engine", choices=["mcmc", "sqa"], default="mcmc")
    s.add_argument("--sf", type=float, default=2.0)
    s.add_argument("--n", type=int, default=3, help="test patterns to use")
    s.add_argument("--fraction", type=float, default=0.54, help="share of pixels clamped when reconstructing")
    s.add_argument("--labels", type=int, nargs="*")
    s.add_argument("--top-k", type=int, default=3)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("run", parents=[common], help="run an experiment config")
    s.add_argument("--full", action="store_true", help="1000 training patterns")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", parents=[common], help="overlap / histogram reports from existing catalogs")
    s.add_argument("--kind", choices=["overlap", "histograms", "all"], default="all")
    s.add_argument("--full", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.out_given = any(a == "--out" or a.startswith("--out=") for a in argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    if getattr(args, "temperature", 0) is None:
        args.temperature = 1.0 if args.command == "sample" and args.engine == "gibbs" else 0.05
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except (ValueError, FileNotFoundError, ex.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
