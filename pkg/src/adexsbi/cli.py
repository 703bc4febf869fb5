"""Batch pipeline driver: every stage as a subcommand with full seed control.

Each stage writes into its --out directory a `snapshot.json` (the resolved
configuration plus the stage arguments, enough to re-run it exactly) and a
`hashes.json` (SHA-256 of every deterministic artifact). Re-running a stage
from its snapshot reproduces the hashes bit for bit.

Configuration comes from --config (JSON) with built-in desk-scale defaults;
any field can be overridden via ADEXSBI_SECTION__FIELD environment
variables. Exit codes: 0 ok, 2 configuration error, 3 missing or invalid
prerequisite artifact, 4 numerical failure. Failures emit a JSON error
record on stderr.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adex import SimulationError
from .classifier import ClassifierModel, choose_threshold, label_record, train_classifier
from .config import ConfigError, PipelineConfig, load_config, to_dict
from .dataset import (
    Dataset,
    DatasetError,
    constrained_sample,
    generate_dataset,
    load_dataset,
    rate_in_range_fraction,
    sample_prior,
    stimulus_from_config,
)
from .features import FEATURE_NAMES
from .inference import (
    amortized_eval,
    posterior_predictive,
    posterior_samples,
    ppc_report,
    sbc_pipeline,
    select_map_sample,
)
from .nde import NdeModel, train_nde

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREREQUISITE = 3
EXIT_NUMERICAL = 4

SNAPSHOT_FILE = "snapshot.json"
HASHES_FILE = "hashes.json"


class PrerequisiteError(RuntimeError):
    """A required artifact (dataset, model) is missing or unreadable."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_snapshot(out: Path, stage: str, args: dict, cfg: PipelineConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    snapshot = {"tool_version": __version__, "stage": stage,
                "args": {k: (str(v) if isinstance(v, Path) else v)
                         for k, v in args.items()},
                "config": to_dict(cfg)}
    (out / SNAPSHOT_FILE).write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")


def write_hashes(out: Path, exclude: tuple = ("report.json",)) -> dict:
    """Hash every artifact in the run directory except volatile ones."""
    hashes = {}
    for p in sorted(out.rglob("*")):
        if not p.is_file():
            continue
        rel = str(p.relative_to(out))
        if rel in (SNAPSHOT_FILE, HASHES_FILE) or p.name in exclude:
            continue
        hashes[rel] = _sha256(p)
    (out / HASHES_FILE).write_text(json.dumps(hashes, indent=2, sort_keys=True) + "\n")
    return hashes


def _load_cfg(config_path) -> PipelineConfig:
    return load_config(config_path)


def _load_dataset_or_fail(path) -> Dataset:
    p = Path(path)
    if not p.exists():
        raise PrerequisiteError(f"dataset directory not found: {p}")
    try:
        return load_dataset(p)
    except DatasetError as exc:
        raise PrerequisiteError(str(exc)) from exc


def _load_classifier_or_fail(path) -> ClassifierModel:
    p = Path(path)
    if not (p / "classifier.json").exists():
        raise PrerequisiteError(f"no trained classifier at {p} (run train-classifier first)")
    return ClassifierModel.load(p)


def _load_nde_or_fail(path) -> NdeModel:
    p = Path(path)
    if not (p / "nde.json").exists():
        raise PrerequisiteError(f"no trained estimator at {p} (run train-nde first)")
    return NdeModel.load(p)


def _condition_for(model: NdeModel, ds: Dataset, index: int) -> np.ndarray:
    if index < 0 or index >= len(ds):
        raise PrerequisiteError(f"observation {index} outside dataset of size {len(ds)}")
    return model.conditions_for(ds, np.array([index]))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__)
def cli():
    """Amortized inference pipeline over surrogate neuron experiments."""


@cli.command()
@click.option("--n", type=int, default=None, show_default="config dataset.n_initial",
              help="Number of uniform-prior records.")
@click.option("--seed", type=int, required=True, show_default=True,
              help="Master seed for prior draws and per-record streams.")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Output dataset directory.")
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, show_default="built-in desk scale", help="Config JSON.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel simulation workers.")
def generate(n, seed, out, config_path, jobs):
    """Generate a uniform-prior dataset."""
    cfg = _load_cfg(config_path)
    n = cfg.dataset.n_initial if n is None else n
    codes = sample_prior(n, seed)
    manifest = generate_dataset(codes, cfg, out, master_seed=seed,
                                generator={"kind": "uniform", "n": n, "prior_seed": seed},
                                jobs=jobs)
    write_snapshot(out, "generate", {"n": n, "seed": seed, "jobs": jobs}, cfg)
    write_hashes(out)
    fraction = rate_in_range_fraction(load_dataset(out), cfg.dataset.rate_lo,
                                      cfg.dataset.rate_hi)
    click.echo(f"wrote {n} records to {out} (content {manifest.content_hash[:12]}, "
               f"rate-in-range fraction {fraction:.3f})")


@cli.command("train-classifier")
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path),
              required=True, help="Uniform-prior dataset directory.")
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Model output directory.")
@click.option("--epochs", type=int, default=None, show_default="config classifier.epochs")
@click.option("--seed", type=int, required=True, help="Training seed.")
@click.option("--max-fnr", type=float, default=None,
              show_default="config classifier.max_fnr",
              help="False-negative bound for threshold selection.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              show_default="built-in desk scale")
def train_classifier_cmd(dataset_path, out, epochs, seed, max_fnr, config_path):
    """Train the in-range gatekeeper and pick its rejection threshold."""
    cfg = _load_cfg(config_path)
    spec = cfg.classifier
    if epochs is not None:
        import dataclasses

        spec = dataclasses.replace(spec, epochs=epochs)
    max_fnr = spec.max_fnr if max_fnr is None else max_fnr

    ds = _load_dataset_or_fail(dataset_path)
    stim = stimulus_from_config(cfg)
    usable = ds.usable_indexes()
    labels = np.array([
        label_record(ds.spike_times[i], stim, cfg.dataset.count_lo, cfg.dataset.count_hi)
        for i in usable
    ])
    codes = ds.codes[usable]

    split_rng = np.random.default_rng(seed)
    order = split_rng.permutation(len(codes))
    n_holdout = max(1, int(round(spec.holdout_fraction * len(codes))))
    holdout, train = order[:n_holdout], order[n_holdout:]
    if labels[train].all() or not labels[train].any():
        raise PrerequisiteError("training split is single-class; enlarge the dataset")

    model, history = train_classifier(codes[train], labels[train], spec, seed=seed,
                                      count_range=(cfg.dataset.count_lo,
                                                   cfg.dataset.count_hi))
    if not labels[holdout].any():
        raise PrerequisiteError("holdout split has no positives; enlarge the dataset")
    threshold = choose_threshold(model, codes[holdout], labels[holdout], max_fnr)
    model.threshold = threshold
    model.save(out)

    probs = model.predict_prob(codes[holdout])
    metrics = {
        "threshold": threshold,
        "max_fnr": max_fnr,
        "holdout_fnr": float(np.mean(probs[labels[holdout]] < threshold)),
        "holdout_fpr": float(np.mean(probs[~labels[holdout]] >= threshold)),
        "holdout_positive_rate": float(labels[holdout].mean()),
        "train_positive_rate": float(labels[train].mean()),
        "final_loss": history[-1],
    }
    (Path(out) / "metrics.json").write_text(json.dumps(metrics, indent=2,
                                                       sort_keys=True) + "\n")
    write_snapshot(Path(out), "train-classifier",
                   {"dataset": dataset_path, "epochs": spec.epochs, "seed": seed,
                    "max_fnr": max_fnr}, cfg)
    write_hashes(Path(out))
    click.echo(f"classifier saved to {out} (threshold {threshold:.4f}, "
               f"holdout FNR {metrics['holdout_fnr']:.4f})")


@cli.command("build-dataset")
@click.option("--classifier", "classifier_path", type=click.Path(path_type=Path),
              required=True, help="Trained gatekeeper directory.")
@click.option("--n", type=int, default=None, show_default="config dataset.n_train",
              help="Training records to generate.")
@click.option("--n-valid", type=int, default=None, show_default="config dataset.n_valid",
              help="Validation records to generate.")
@click.option("--threshold", type=float, default=None,
              show_default="stored classifier threshold")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True,
              help="Parent directory; train/ and valid/ are created inside.")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              show_default="built-in desk scale")
@click.option("--jobs", type=int, default=1, show_default=True)
def build_dataset(classifier_path, n, n_valid, threshold, seed, out, config_path, jobs):
    """Generate classifier-constrained training and validation datasets."""
    cfg = _load_cfg(config_path)
    n = cfg.dataset.n_train if n is None else n
    n_valid = cfg.dataset.n_valid if n_valid is None else n_valid
    model = _load_classifier_or_fail(classifier_path)
    if threshold is None:
        threshold = model.threshold
    if threshold is None:
        raise PrerequisiteError("classifier has no stored threshold; pass --threshold")

    codes_train, rate_train = constrained_sample(model.predict_prob, threshold, n,
                                                 seed=seed)
    codes_valid, rate_valid = constrained_sample(model.predict_prob, threshold, n_valid,
                                                 seed=seed + 1)
    gen = {"kind": "constrained", "threshold": threshold,
           "classifier": str(classifier_path), "acceptance_rate": rate_train}
    generate_dataset(codes_train, cfg, Path(out) / "train", master_seed=seed,
                     generator={**gen, "split": "train", "sampler_seed": seed},
                     jobs=jobs)
    generate_dataset(codes_valid, cfg, Path(out) / "valid", master_seed=seed + 1,
                     generator={**gen, "split": "valid", "sampler_seed": seed + 1},
                     jobs=jobs)
    write_snapshot(Path(out), "build-dataset",
                   {"classifier": classifier_path, "n": n, "n_valid": n_valid,
                    "threshold": threshold, "seed": seed, "jobs": jobs}, cfg)
    write_hashes(Path(out))
    frac = rate_in_range_fraction(load_dataset(Path(out) / "train"),
                                  cfg.dataset.rate_lo, cfg.dataset.rate_hi)
    click.echo(f"constrained datasets in {out} (acceptance {rate_train:.3f}, "
               f"rate-in-range fraction {frac:.3f})")


@cli.command("train-nde")
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path),
              required=True, help="Constrained training dataset (train/ split).")
@click.option("--mode", type=click.Choice(["handcrafted", "summary"]),
              default="handcrafted", show_default=True)
@click.option("--epochs", type=int, default=None,
              show_default="config nde.epochs_{mode}")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              show_default="built-in desk scale")
def train_nde_cmd(dataset_path, mode, epochs, seed, out, config_path):
    """Train a posterior estimator (handcrafted features or summary network)."""
    cfg = _load_cfg(config_path)
    ds = _load_dataset_or_fail(dataset_path)
    model = train_nde(ds, cfg, mode=mode, seed=seed, epochs=epochs)
    model.save(out)
    write_snapshot(Path(out), "train-nde",
                   {"dataset": dataset_path, "mode": mode, "epochs": epochs,
                    "seed": seed}, cfg)
    write_hashes(Path(out))
    best = model.report.val_nll[model.report.best_epoch] if model.report.val_nll else float("nan")
    click.echo(f"estimator saved to {out} (best val NLL {best:.4f} "
               f"at epoch {model.report.best_epoch + 1})")


@cli.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path),
              required=True, help="Dataset holding the observation.")
@click.option("--observation", type=int, required=True, help="Record index.")
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def infer(model_path, dataset_path, observation, n, seed, out):
    """Draw posterior samples for one stored observation."""
    model = _load_nde_or_fail(model_path)
    ds = _load_dataset_or_fail(dataset_path)
    condition = _condition_for(model, ds, observation)
    draws = posterior_samples(model, condition, n, seed,
                              observation_id=str(observation),
                              model_id=str(model_path))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .config import PARAM_NAMES

    with open(out / "samples.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*PARAM_NAMES, "log_prob", "clipped"])
        for code, lp, cl in zip(draws.codes, draws.log_probs, draws.clipped):
            writer.writerow([*code.tolist(), repr(float(lp)), int(cl)])
    map_code = select_map_sample(draws)
    summary = {"kind": "posterior-samples", "observation": observation, "n": n,
               "seed": seed, "target_code": ds.codes[observation].tolist(),
               "map_code": map_code.tolist(),
               "clipped_fraction": float(draws.clipped.mean())}
    (out / "inference.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, "infer", {"model": model_path, "dataset": dataset_path,
                                  "observation": observation, "n": n, "seed": seed},
                   _cfg_of_model(model))
    write_hashes(out)
    click.echo(f"{n} posterior draws for observation {observation} in {out}")


def _cfg_of_model(model: NdeModel) -> PipelineConfig:
    from .config import from_dict

    return from_dict(model.config)


@cli.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True)
@click.option("--observation", type=int, required=True)
@click.option("--n", type=int, default=1000, show_default=True,
              help="Posterior draws simulated for the predictive distribution.")
@click.option("--trials", type=int, default=100, show_default=True,
              help="Repeated target-code simulations (trial-to-trial reference).")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def ppc(model_path, dataset_path, observation, n, trials, seed, out, jobs):
    """Posterior predictive check in feature space for one observation."""
    model = _load_nde_or_fail(model_path)
    ds = _load_dataset_or_fail(dataset_path)
    cfg = _cfg_of_model(model)
    condition = _condition_for(model, ds, observation)
    draws = posterior_samples(model, condition, n, seed,
                              observation_id=str(observation))
    predictive = posterior_predictive(draws.codes, cfg, seed=seed + 1, jobs=jobs)
    reference = posterior_predictive(ds.codes[observation][None], cfg, seed=seed + 2,
                                     trials_per_code=trials, jobs=jobs)
    report = ppc_report(ds.feature_values[observation], ds.feature_valid[observation],
                        predictive, reference)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "ppc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "target", "target_valid", "q1", "median", "q3",
                         "whisker_lo", "whisker_hi", "ref_q1", "ref_median", "ref_q3",
                         "n_valid", "target_in_iqr"])
        for r in report.rows:
            writer.writerow([r.name, repr(r.target), int(r.target_valid), repr(r.q1),
                             repr(r.median), repr(r.q3), repr(r.whisker_lo),
                             repr(r.whisker_hi), repr(r.ref_q1), repr(r.ref_median),
                             repr(r.ref_q3), r.n_valid, int(r.target_in_iqr)])
    meta = {"kind": "ppc", "observation": observation, "n": n, "trials": trials,
            "n_excluded": report.n_excluded,
            "in_iqr": {r.name: r.target_in_iqr for r in report.rows}}
    (out / "ppc.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, "ppc", {"model": model_path, "dataset": dataset_path,
                                "observation": observation, "n": n, "trials": trials,
                                "seed": seed, "jobs": jobs}, cfg)
    write_hashes(out)
    n_in = sum(r.target_in_iqr for r in report.rows)
    click.echo(f"ppc for observation {observation}: {n_in}/{len(report.rows)} "
               f"target features inside the predictive IQR")


@cli.command()
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--classifier", "classifier_path", type=click.Path(path_type=Path),
              default=None, help="Gate the prior like constrained generation.")
@click.option("--n-datasets", type=int, default=200, show_default=True)
@click.option("--n-posterior", type=int, default=99, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def sbc(model_path, classifier_path, n_datasets, n_posterior, seed, out):
    """Simulation-based calibration audit of the trained estimator."""
    model = _load_nde_or_fail(model_path)
    cfg = _cfg_of_model(model)
    clf = _load_classifier_or_fail(classifier_path) if classifier_path else None
    threshold = clf.threshold if clf else None
    report = sbc_pipeline(model, cfg, n_datasets=n_datasets, n_posterior=n_posterior,
                          seed=seed, classifier=clf, threshold=threshold)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .config import PARAM_NAMES

    with open(out / "sbc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "chi2", "p_value",
                         *[f"bin_{i}" for i in range(report.n_bins)]])
        for d, name in enumerate(PARAM_NAMES):
            writer.writerow([name, repr(float(report.chi2[d])),
                             repr(float(report.p_values[d])),
                             *report.histograms[d].tolist()])
    np.savetxt(out / "ranks.csv", report.ranks, fmt="%d", delimiter=",",
               header=",".join(PARAM_NAMES), comments="")
    meta = {"kind": "sbc", "n_datasets": n_datasets, "n_posterior": n_posterior,
            "p_values": {n: float(p) for n, p in zip(PARAM_NAMES, report.p_values)}}
    (out / "sbc.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, "sbc", {"model": model_path, "classifier": classifier_path,
                                "n_datasets": n_datasets, "n_posterior": n_posterior,
                                "seed": seed}, cfg)
    write_hashes(out)
    worst = float(report.p_values.min())
    click.echo(f"sbc over {n_datasets} synthetic datasets: "
               f"smallest uniformity p-value {worst:.4f}")


@cli.command("amortized-eval")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path),
              required=True, help="Validation dataset.")
@click.option("--k", type=int, default=8, show_default=True)
@click.option("--n", type=int, default=10000, show_default=True,
              help="Posterior draws per observation.")
@click.option("--seed", type=int, required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def amortized_eval_cmd(model_path, dataset_path, k, n, seed, out):
    """MAP posterior-predictive traces for random validation observations."""
    model = _load_nde_or_fail(model_path)
    ds = _load_dataset_or_fail(dataset_path)
    cfg = _cfg_of_model(model)
    report = amortized_eval(model, ds, cfg, k=k, n_draws=n, seed=seed)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "amortized.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["observation", "target_count", "map_count", "matched",
                         "target_code", "map_code"])
        for o in report.observations:
            writer.writerow([o.index, o.target_count, o.map_count, int(o.matched),
                             " ".join(map(str, o.target_code)),
                             " ".join(map(str, o.map_code))])
    for o in report.observations:
        pair = np.stack([o.target_trace.astype(np.float64),
                         o.predictive_trace.astype(np.float64)], axis=1)
        np.savetxt(out / f"traces_{o.index}.csv", pair, delimiter=",",
                   header="target,predictive", comments="")
    meta = {"kind": "amortized-eval", "k": k, "n": n, "seed": seed,
            "n_matched": report.n_matched,
            "observations": [o.index for o in report.observations]}
    (out / "amortized.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    write_snapshot(out, "amortized-eval", {"model": model_path,
                                           "dataset": dataset_path, "k": k, "n": n,
                                           "seed": seed}, cfg)
    write_hashes(out)
    click.echo(f"amortized eval: {report.n_matched}/{k} spike-count matches")


@cli.command("plot-data")
@click.option("--run", "run_path", type=click.Path(path_type=Path), required=True,
              help="Output directory of infer, ppc, or amortized-eval.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def plot_data(run_path, out):
    """Render plot-ready CSV bundles and simple SVGs from a run directory."""
    run = Path(run_path)
    kind = None
    for name in ("inference.json", "ppc.json", "amortized.json"):
        p = run / name
        if p.exists():
            kind = json.loads(p.read_text())["kind"]
            break
    if kind is None:
        raise PrerequisiteError(f"{run} is not an infer/ppc/amortized-eval output")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "adexsbi"
    import matplotlib.pyplot as plt

    if kind == "posterior-samples":
        _plot_corner(run, out, plt)
    elif kind == "ppc":
        _plot_ppc(run, out, plt)
    else:
        _plot_amortized(run, out, plt)
    write_hashes(out, exclude=("report.json",))
    click.echo(f"plot data for {kind} written to {out}")


def _plot_corner(run: Path, out: Path, plt) -> None:
    from .config import CODE_MAX, PARAM_NAMES

    rows = list(csv.reader((run / "samples.csv").open()))
    samples = np.array([[float(x) for x in r[:7]] for r in rows[1:]])
    meta = json.loads((run / "inference.json").read_text())
    target = np.array(meta["target_code"], dtype=float)

    edges = np.linspace(0, CODE_MAX + 1, 21)
    with open(out / "corner_1d.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", *[f"bin_{i}" for i in range(20)]])
        for j, name in enumerate(PARAM_NAMES):
            hist, _ = np.histogram(samples[:, j], bins=edges)
            writer.writerow([name, *hist.tolist()])
    with open(out / "corner_2d.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "row", *[f"col_{i}" for i in range(20)]])
        for a in range(7):
            for b in range(a + 1, 7):
                h2, _, _ = np.histogram2d(samples[:, a], samples[:, b],
                                          bins=[edges, edges])
                for r in range(20):
                    writer.writerow([f"{PARAM_NAMES[a]}-{PARAM_NAMES[b]}", r,
                                     *h2[r].astype(int).tolist()])

    fig, axes = plt.subplots(7, 7, figsize=(14, 14))
    for a in range(7):
        for b in range(7):
            ax = axes[a, b]
            if a == b:
                ax.hist(samples[:, a], bins=edges, color="steelblue")
                ax.axvline(target[a], color="gray")
            elif b < a:
                ax.hist2d(samples[:, b], samples[:, a], bins=[edges, edges],
                          cmap="Blues")
                ax.axvline(target[b], color="gray", lw=0.8)
                ax.axhline(target[a], color="gray", lw=0.8)
            else:
                ax.axis("off")
                continue
            ax.set_xticks([])
            ax.set_yticks([])
            if a == 6:
                ax.set_xlabel(PARAM_NAMES[b])
            if b == 0:
                ax.set_ylabel(PARAM_NAMES[a])
    fig.savefig(out / "corner.svg", metadata={"Date": None})
    plt.close(fig)


def _plot_ppc(run: Path, out: Path, plt) -> None:
    rows = list(csv.DictReader((run / "ppc.csv").open()))
    import shutil

    shutil.copy(run / "ppc.csv", out / "box_data.csv")
    fig, ax = plt.subplots(figsize=(12, 4))
    xs = np.arange(len(rows))
    for x, r in zip(xs, rows):
        q1, med, q3 = float(r["q1"]), float(r["median"]), float(r["q3"])
        lo, hi = float(r["whisker_lo"]), float(r["whisker_hi"])
        if not np.isfinite(q1):
            continue
        span = max(q3 - q1, 1e-30)
        scale = lambda v: (v - med) / span  # noqa: E731
        ax.add_patch(plt.Rectangle((x - 0.3, scale(q1)), 0.6, scale(q3) - scale(q1),
                                   fill=True, color="steelblue", alpha=0.6))
        ax.plot([x - 0.3, x + 0.3], [0, 0], color="white")
        ax.plot([x, x], [scale(lo), scale(q1)], color="steelblue")
        ax.plot([x, x], [scale(q3), scale(hi)], color="steelblue")
        if int(r["target_valid"]):
            ax.plot([x - 0.35, x + 0.35], [scale(float(r["target"]))] * 2, color="gray")
    ax.set_xticks(xs)
    ax.set_xticklabels([r["feature"] for r in rows], rotation=45, ha="right")
    ax.set_ylabel("scaled to predictive IQR")
    fig.tight_layout()
    fig.savefig(out / "box.svg", metadata={"Date": None})
    plt.close(fig)


def _plot_amortized(run: Path, out: Path, plt) -> None:
    meta = json.loads((run / "amortized.json").read_text())
    indexes = meta["observations"]
    fig, axes = plt.subplots(len(indexes), 1, figsize=(8, 2 * len(indexes)),
                             squeeze=False)
    for ax, idx in zip(axes[:, 0], indexes):
        data = np.loadtxt(run / f"traces_{idx}.csv", delimiter=",", skiprows=1)
        np.savetxt(out / f"overlay_{idx}.csv", data, delimiter=",",
                   header="target,predictive", comments="")
        ax.plot(data[:, 0], color="gray", lw=0.7, label="target")
        ax.plot(data[:, 1], color="steelblue", lw=0.7, label="predictive")
        ax.set_ylabel(f"obs {idx}")
        ax.set_xticks([])
    axes[0, 0].legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out / "traces.svg", metadata={"Date": None})
    plt.close(fig)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except (click.UsageError, ConfigError) as exc:
        _emit_error("config", EXIT_CONFIG, exc)
        return EXIT_CONFIG
    except (PrerequisiteError, FileNotFoundError) as exc:
        _emit_error("missing_prerequisite", EXIT_PREREQUISITE, exc)
        return EXIT_PREREQUISITE
    except (SimulationError, DatasetError, FloatingPointError, ValueError,
            RuntimeError) as exc:
        _emit_error("numerical_failure", EXIT_NUMERICAL, exc)
        return EXIT_NUMERICAL


def _emit_error(kind: str, code: int, exc: Exception) -> None:
    record = {"error": kind, "exit_code": code, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
