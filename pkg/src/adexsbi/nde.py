"""Training of the conditional density estimators and their persistence.

Two conditioning modes exist: "handcrafted" conditions a 10-block flow on
the standardized feature statistics (plus validity indicators), "summary"
trains an 8-block flow jointly with the trace-embedding network. Both
minimize the mean negative log likelihood of the parameter codes under the
flow; the checkpoint with the best validation loss is retained.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import NdeConfig, PipelineConfig, from_dict as config_from_dict, to_dict
from .dataset import Dataset
from .features import NormalizationRecord, standardize_features
from .flow import CouplingFlow
from .nn import Adam, Tensor
from .summary import SummaryNet

log = logging.getLogger(__name__)

NDE_SIDECAR = "nde.json"
REPORT_FILE = "report.json"


@dataclass
class TrainingReport:
    mode: str
    seed: int
    epochs: int
    train_nll: list = field(default_factory=list)
    val_nll: list = field(default_factory=list)
    best_epoch: int = -1
    wall_seconds: float = 0.0
    halted_nonfinite: bool = False

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class NdeModel:
    """Trained estimator bundle: flow, conditioning pipeline, report."""

    mode: str
    flow: CouplingFlow
    feature_norm: NormalizationRecord | None
    summary: SummaryNet | None
    report: TrainingReport
    config: dict

    def condition_from_features(self, values: np.ndarray, valid: np.ndarray) -> np.ndarray:
        if self.mode != "handcrafted":
            raise ValueError("model conditions on traces, not features")
        return self.feature_norm.apply(values, valid)

    def condition_from_traces(self, traces: np.ndarray) -> np.ndarray:
        if self.mode != "summary":
            raise ValueError("model conditions on features, not traces")
        return self.summary.forward_np(traces)

    def conditions_for(self, ds: Dataset, idx: np.ndarray) -> np.ndarray:
        if self.mode == "handcrafted":
            return self.condition_from_features(ds.feature_values[idx],
                                                ds.feature_valid[idx])
        return self.condition_from_traces(np.asarray(ds.traces[idx], dtype=np.float64))

    def log_prob(self, theta_raw: np.ndarray, condition: np.ndarray) -> np.ndarray:
        theta_raw = np.atleast_2d(theta_raw)
        condition = np.atleast_2d(condition)
        if len(condition) == 1 and len(theta_raw) > 1:
            condition = np.repeat(condition, len(theta_raw), axis=0)
        return self.flow.log_prob(theta_raw, condition)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.flow.save(out)
        if self.summary is not None:
            self.summary.save(out)
        sidecar = {
            "mode": self.mode,
            "feature_norm": self.feature_norm.to_dict() if self.feature_norm else None,
            "config": self.config,
        }
        (out / NDE_SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        # wall-clock lives here, apart from the content-hashed artifacts
        (out / REPORT_FILE).write_text(json.dumps(self.report.to_dict(), indent=2,
                                                  sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir: str | Path) -> "NdeModel":
        model_dir = Path(model_dir)
        sc = json.loads((model_dir / NDE_SIDECAR).read_text())
        flow = CouplingFlow.load(model_dir)
        feature_norm = (NormalizationRecord.from_dict(sc["feature_norm"])
                        if sc["feature_norm"] else None)
        summary = SummaryNet.load(model_dir) if sc["mode"] == "summary" else None
        report_path = model_dir / REPORT_FILE
        if report_path.exists():
            report = TrainingReport(**json.loads(report_path.read_text()))
        else:
            report = TrainingReport(mode=sc["mode"], seed=-1, epochs=0)
        return cls(mode=sc["mode"], flow=flow, feature_norm=feature_norm,
                   summary=summary, report=report, config=sc["config"])


class _TraceView:
    """Lazy float64 view over selected rows of the on-disk trace matrix."""

    def __init__(self, memmap: np.ndarray, rows: np.ndarray):
        self.memmap = memmap
        self.rows = np.asarray(rows)

    def __len__(self) -> int:
        return len(self.rows)

    def __getitem__(self, idx) -> np.ndarray:
        return np.asarray(self.memmap[self.rows[idx]], dtype=np.float64)

    def moments(self, chunk: int = 1024) -> tuple[float, float]:
        total = 0.0
        total_sq = 0.0
        count = 0
        for start in range(0, len(self.rows), chunk):
            block = np.asarray(self.memmap[self.rows[start : start + chunk]],
                               dtype=np.float64)
            total += block.sum()
            total_sq += np.square(block).sum()
            count += block.size
        mean = total / count
        var = max(total_sq / count - mean * mean, 0.0)
        return mean, float(np.sqrt(var))


def _val_split(n: int, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(val_fraction * n))) if n > 1 else 0
    return order[n_val:], order[:n_val]


def _snapshot(params) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _restore(params, snap) -> None:
    for p, s in zip(params, snap):
        p.data = s.copy()


def fit_flow(flow: CouplingFlow, theta_raw: np.ndarray, conditions: np.ndarray,
             epochs: int, batch_size: int, lr: float, seed: int,
             val_fraction: float = 0.05, report_mode: str = "handcrafted",
             summary: SummaryNet | None = None,
             traces=None) -> TrainingReport:
    """Maximum-likelihood training with a best-validation checkpoint.

    With `summary`/`traces` given, conditions are recomputed through the
    summary network inside the graph each batch so its weights train
    jointly; `conditions` is then only used for the validation split.
    """
    theta_raw = np.atleast_2d(np.asarray(theta_raw, dtype=np.float64))
    n = len(theta_raw)
    joint = summary is not None
    if joint and traces is None:
        raise ValueError("summary training needs the trace matrix")

    train_idx, val_idx = _val_split(n, val_fraction, seed)
    flow.set_normalization(theta_raw[train_idx])
    theta_norm = flow.normalize(theta_raw)

    params = flow.parameters() + (summary.parameters() if joint else [])
    opt = Adam(params, lr=lr)
    shuffle_rng = np.random.default_rng(seed + 1)

    report = TrainingReport(mode=report_mode, seed=seed, epochs=epochs)
    best_val = np.inf
    best = _snapshot(params)
    t0 = time.monotonic()

    def val_nll() -> float:
        if len(val_idx) == 0:
            return np.nan
        cond = (summary.forward_np(traces[val_idx]) if joint
                else conditions[val_idx])
        lp = flow.log_prob(theta_raw[val_idx], cond)
        return float(-np.mean(lp))

    decay_points = {int(0.6 * epochs), int(0.85 * epochs)}
    for epoch in range(epochs):
        if epoch in decay_points and epoch > 0:
            opt.lr *= 0.3
        order = shuffle_rng.permutation(train_idx)
        losses = []
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if joint:
                cond_t = summary.forward_graph(traces[idx])
            else:
                cond_t = Tensor(conditions[idx])
            loss = flow.nll_graph(theta_norm[idx], cond_t)
            if not np.isfinite(loss.data):
                log.warning("training halted: non-finite loss at epoch %d", epoch + 1)
                report.halted_nonfinite = True
                _restore(params, best)
                report.wall_seconds = time.monotonic() - t0
                return report
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        report.train_nll.append(float(np.mean(losses)))
        v = val_nll()
        report.val_nll.append(v)
        if np.isfinite(v) and v < best_val:
            best_val = v
            best = _snapshot(params)
            report.best_epoch = epoch
        log.info("nde epoch %d/%d: train %.4f val %.4f", epoch + 1, epochs,
                 report.train_nll[-1], v)

    _restore(params, best)
    report.wall_seconds = time.monotonic() - t0
    return report


def train_nde(ds: Dataset, cfg: PipelineConfig, mode: str, seed: int,
              epochs: int | None = None) -> NdeModel:
    """Train an estimator of p(code | observation) from a stored dataset."""
    if mode not in ("handcrafted", "summary"):
        raise ValueError(f"unknown mode {mode!r}")
    spec = cfg.nde
    usable = ds.usable_indexes()
    if len(usable) < 10:
        raise ValueError("dataset too small to train on")
    theta = ds.codes[usable].astype(np.float64)

    if mode == "handcrafted":
        epochs = spec.epochs_handcrafted if epochs is None else epochs
        cond_all, feature_norm = standardize_features(ds.feature_values[usable],
                                                      ds.feature_valid[usable])
        flow = CouplingFlow(dim=theta.shape[1], cond_dim=feature_norm.output_dim,
                            n_blocks=spec.handcrafted_blocks, seed=seed,
                            hidden=spec.conditioner_hidden,
                            n_hidden_layers=spec.conditioner_layers,
                            clamp=spec.scale_clamp)
        report = fit_flow(flow, theta, cond_all, epochs=epochs,
                          batch_size=spec.batch_size, lr=spec.lr, seed=seed,
                          val_fraction=spec.val_fraction, report_mode=mode)
        return NdeModel(mode=mode, flow=flow, feature_norm=feature_norm,
                        summary=None, report=report, config=to_dict(cfg))

    epochs = spec.epochs_summary if epochs is None else epochs
    traces = _TraceView(ds.traces, usable)
    summary = SummaryNet(spec, seed=seed + 1, n_input=ds.traces.shape[1])
    summary.set_normalization(*traces.moments())
    flow = CouplingFlow(dim=theta.shape[1], cond_dim=spec.summary_dim,
                        n_blocks=spec.summary_blocks, seed=seed,
                        hidden=spec.conditioner_hidden,
                        n_hidden_layers=spec.conditioner_layers,
                        clamp=spec.scale_clamp)
    report = fit_flow(flow, theta, conditions=np.zeros((len(theta), 0)),
                      epochs=epochs, batch_size=spec.summary_batch_size,
                      lr=spec.lr, seed=seed, val_fraction=spec.val_fraction,
                      report_mode=mode, summary=summary, traces=traces)
    return NdeModel(mode=mode, flow=flow, feature_norm=None, summary=summary,
                    report=report, config=to_dict(cfg))
