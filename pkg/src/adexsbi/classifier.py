"""Residual MLP gatekeeper: predicts whether a code yields an in-range spike count.

Architecture: linear stem into `width` features, four residual blocks
(linear - ReLU - dropout - linear plus identity skip), scalar logit head.
Inputs are z-scored with training statistics stored in the model. Training
minimizes binary cross-entropy with the minority class reweighted to an
effective 1:1 balance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .adex import Stimulus
from .config import ClassifierConfig, N_PARAMS
from .nn import Adam, Linear, Tensor

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "classifier.npt"
SIDECAR_FILE = "classifier.json"


def label_record(spike_times: np.ndarray, stimulus: Stimulus,
                 count_lo: int = 1, count_hi: int = 70) -> bool:
    """True iff the in-stimulus spike count falls inside [count_lo, count_hi]."""
    s = np.asarray(spike_times)
    lo = stimulus.onset
    hi = stimulus.onset + stimulus.duration
    count = int(np.sum((s >= lo) & (s < hi)))
    return count_lo <= count <= count_hi


class ResidualBlock:
    def __init__(self, width: int, rng: np.random.Generator, name: str):
        self.lin1 = Linear(width, width, rng, name=f"{name}.lin1")
        self.lin2 = Linear(width, width, rng, name=f"{name}.lin2")

    def __call__(self, x: Tensor, dropout_p: float = 0.0,
                 rng: np.random.Generator | None = None) -> Tensor:
        h = nn.relu(self.lin1(x))
        if dropout_p > 0.0 and rng is not None:
            h = nn.dropout(h, dropout_p, rng)
        return nn.add(x, self.lin2(h))

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = np.maximum(self.lin1.forward_np(x), 0.0)
        return x + self.lin2.forward_np(h)

    def parameters(self):
        return self.lin1.parameters() + self.lin2.parameters()


class ClassifierModel:
    def __init__(self, spec: ClassifierConfig, seed: int):
        self.spec = spec
        self.seed = seed
        rng = np.random.default_rng(seed)
        w = spec.hidden
        self.stem = Linear(N_PARAMS, w, rng, name="stem")
        self.blocks = [ResidualBlock(w, rng, name=f"block{i}")
                       for i in range(spec.n_blocks)]
        self.head = Linear(w, 1, rng, name="head")
        self.norm_mean = np.zeros(N_PARAMS)
        self.norm_std = np.ones(N_PARAMS)
        self.threshold: float | None = None
        self.count_range = (1, 70)

    def parameters(self):
        params = self.stem.parameters()
        for b in self.blocks:
            params.extend(b.parameters())
        params.extend(self.head.parameters())
        return params

    def standardize(self, codes: np.ndarray) -> np.ndarray:
        return (np.asarray(codes, dtype=np.float64) - self.norm_mean) / self.norm_std

    def logits(self, x: Tensor, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        h = self.stem(x)
        p = self.spec.dropout if train else 0.0
        for block in self.blocks:
            h = block(h, dropout_p=p, rng=rng)
        return self.head(h)

    def logits_np(self, codes: np.ndarray) -> np.ndarray:
        h = self.stem.forward_np(self.standardize(np.atleast_2d(codes)))
        for block in self.blocks:
            h = block.forward_np(h)
        return self.head.forward_np(h)[:, 0]

    def predict_prob(self, codes: np.ndarray) -> np.ndarray:
        """Eval-mode acceptance probabilities (deterministic, no dropout)."""
        z = self.logits_np(codes)
        pos = z >= 0
        e = np.exp(np.where(pos, -z, z))
        return np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))

    # -- persistence -----------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        nn.save_tensors(out / CHECKPOINT_FILE, self.named_tensors())
        sidecar = {
            "n_blocks": self.spec.n_blocks,
            "hidden": self.spec.hidden,
            "dropout": self.spec.dropout,
            "seed": self.seed,
            "norm_mean": self.norm_mean.tolist(),
            "norm_std": self.norm_std.tolist(),
            "threshold": self.threshold,
            "count_range": list(self.count_range),
        }
        (out / SIDECAR_FILE).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir: str | Path) -> "ClassifierModel":
        model_dir = Path(model_dir)
        sidecar = json.loads((model_dir / SIDECAR_FILE).read_text())
        spec = ClassifierConfig(n_blocks=sidecar["n_blocks"], hidden=sidecar["hidden"],
                                dropout=sidecar["dropout"])
        model = cls(spec, seed=sidecar["seed"])
        tensors = nn.load_tensors(model_dir / CHECKPOINT_FILE)
        for p in model.parameters():
            p.data = tensors[p.name]
        model.norm_mean = np.asarray(sidecar["norm_mean"])
        model.norm_std = np.asarray(sidecar["norm_std"])
        model.threshold = sidecar["threshold"]
        model.count_range = tuple(sidecar["count_range"])
        return model


def bce_with_logits(logits: Tensor, targets: np.ndarray,
                    weights: np.ndarray) -> Tensor:
    """Weighted binary cross-entropy from logits (stable softplus form)."""
    y = Tensor(targets.reshape(-1, 1))
    w = Tensor(weights.reshape(-1, 1))
    loss_pos = nn.mul(y, nn.softplus(nn.mul(logits, -1.0)))
    loss_neg = nn.mul(nn.add(Tensor(np.ones_like(targets.reshape(-1, 1))),
                             nn.mul(y, -1.0)),
                      nn.softplus(logits))
    return nn.tmean(nn.mul(w, nn.add(loss_pos, loss_neg)))


def train_classifier(codes: np.ndarray, labels: np.ndarray, spec: ClassifierConfig,
                     seed: int, count_range: tuple[int, int] = (1, 70)):
    """Fit the gatekeeper; deterministic given the seed.

    Returns (model, history) where history is the per-epoch mean training
    loss. Rejects single-class label sets.
    """
    codes = np.atleast_2d(codes)
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("training set must contain both classes")

    model = ClassifierModel(spec, seed=seed)
    model.count_range = count_range
    model.norm_mean = codes.mean(axis=0)
    std = codes.std(axis=0)
    model.norm_std = np.where(std == 0.0, 1.0, std)
    x_all = model.standardize(codes)

    # upweight the positive class when it is the minority; imbalance the
    # other way needs no correction for a high-recall gate
    pos_weight = max(n_neg / n_pos, 1.0)
    weights = np.where(labels > 0.5, pos_weight, 1.0)

    opt = Adam(model.parameters(), lr=spec.lr)
    shuffle_rng = np.random.default_rng(seed + 1)
    dropout_rng = np.random.default_rng(seed + 2)
    history = []
    n = len(labels)
    for epoch in range(spec.epochs):
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            x = Tensor(x_all[idx])
            logits = model.logits(x, train=True, rng=dropout_rng)
            loss = bce_with_logits(logits, labels[idx], weights[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        log.info("classifier epoch %d/%d: loss %.4f", epoch + 1, spec.epochs,
                 history[-1])
    return model, history


def choose_threshold(model: ClassifierModel, codes: np.ndarray, labels: np.ndarray,
                     max_fnr: float = 0.05) -> float:
    """Largest threshold whose false-negative rate on held-out positives
    stays within max_fnr (a code is accepted when prob >= threshold)."""
    labels = np.asarray(labels, dtype=bool)
    if not labels.any():
        raise ValueError("held-out set contains no positives")
    probs = model.predict_prob(np.atleast_2d(codes))
    pos_scores = np.sort(probs[labels])
    n_pos = len(pos_scores)
    k = int(np.floor(max_fnr * n_pos))
    if k >= n_pos:
        return float(np.nextafter(1.0, 0.0))
    threshold = float(pos_scores[k])
    fnr = float(np.mean(probs[labels] < threshold))
    if fnr > max_fnr:
        raise RuntimeError(
            f"no threshold reaches FNR <= {max_fnr}; achievable minimum is {fnr:.4f}"
        )
    log.info("threshold %.6f gives FNR %.4f on %d held-out positives",
             threshold, fnr, n_pos)
    return threshold
