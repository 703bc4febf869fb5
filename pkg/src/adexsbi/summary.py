"""Learned trace embedding: two strided 1-D convolutions, a GRU, a dense head.

Consumes the 10000-point regular-grid voltage trace (globally normalized
with training statistics) and emits a compact summary vector that the flow
conditions on; trained jointly with the flow.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import nn
from .config import NdeConfig
from .nn import Linear, Tensor, glorot_uniform

SUMMARY_CHECKPOINT = "summary.npt"
SUMMARY_SIDECAR = "summary.json"


class SummaryNet:
    def __init__(self, spec: NdeConfig, seed: int, n_input: int = 10000):
        self.spec = spec
        self.seed = seed
        self.n_input = n_input
        rng = np.random.default_rng(seed)

        k1, s1, f1 = spec.conv1_kernel, spec.conv1_stride, spec.conv1_filters
        k2, s2, f2 = spec.conv2_kernel, spec.conv2_stride, spec.conv2_filters
        self.conv1_w = Tensor(glorot_uniform(rng, k1, f1, (k1, 1, f1)),
                              requires_grad=True, name="conv1.weight")
        self.conv2_w = Tensor(glorot_uniform(rng, k2 * f1, f2, (k2, f1, f2)),
                              requires_grad=True, name="conv2.weight")
        self.stride1, self.stride2 = s1, s2

        h = spec.gru_units
        self.gru_w_ih = Tensor(glorot_uniform(rng, f2, 3 * h, (f2, 3 * h)),
                               requires_grad=True, name="gru.w_ih")
        self.gru_w_hh = Tensor(glorot_uniform(rng, h, 3 * h, (h, 3 * h)),
                               requires_grad=True, name="gru.w_hh")
        self.gru_b_ih = Tensor(np.zeros(3 * h), requires_grad=True, name="gru.b_ih")
        self.gru_b_hh = Tensor(np.zeros(3 * h), requires_grad=True, name="gru.b_hh")
        self.head = Linear(h, spec.summary_dim, rng, name="summary_head")

        len1 = nn.conv1d_output_length(n_input, k1, s1)
        self.seq_lengths = (len1, nn.conv1d_output_length(len1, k2, s2))

        # global trace normalization, set from training data
        self.trace_mean = 0.0
        self.trace_std = 1.0

    @property
    def output_dim(self) -> int:
        return self.spec.summary_dim

    def set_normalization(self, mean: float, std: float) -> None:
        self.trace_mean = float(mean)
        self.trace_std = float(std) if std > 0 else 1.0

    def normalize_traces(self, traces: np.ndarray) -> np.ndarray:
        traces = np.atleast_2d(np.asarray(traces, dtype=np.float64))
        if traces.shape[1] != self.n_input:
            raise ValueError(f"expected {self.n_input}-point traces, got {traces.shape[1]}")
        return (traces - self.trace_mean) / self.trace_std

    def parameters(self) -> list[Tensor]:
        return [self.conv1_w, self.conv2_w, self.gru_w_ih, self.gru_w_hh,
                self.gru_b_ih, self.gru_b_hh, *self.head.parameters()]

    def forward_graph(self, traces: np.ndarray) -> Tensor:
        """Raw traces (B, n_input) -> summary Tensor (B, summary_dim)."""
        x = Tensor(self.normalize_traces(traces)[:, :, None])
        h = nn.relu(nn.conv1d(x, self.conv1_w, stride=self.stride1))
        h = nn.relu(nn.conv1d(h, self.conv2_w, stride=self.stride2))
        hidden = nn.gru(h, self.gru_w_ih, self.gru_w_hh, self.gru_b_ih, self.gru_b_hh)
        return self.head(hidden)

    def forward_np(self, traces: np.ndarray) -> np.ndarray:
        """Eval path; reuses the graph ops without gradients, so both paths
        share one numerical implementation."""
        return self.forward_graph(traces).data

    # -- persistence -------------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        nn.save_tensors(out / SUMMARY_CHECKPOINT, self.named_tensors())
        sidecar = {
            "seed": self.seed,
            "n_input": self.n_input,
            "conv1": [self.spec.conv1_kernel, self.spec.conv1_stride, self.spec.conv1_filters],
            "conv2": [self.spec.conv2_kernel, self.spec.conv2_stride, self.spec.conv2_filters],
            "gru_units": self.spec.gru_units,
            "summary_dim": self.spec.summary_dim,
            "trace_mean": self.trace_mean,
            "trace_std": self.trace_std,
        }
        (out / SUMMARY_SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir: str | Path) -> "SummaryNet":
        model_dir = Path(model_dir)
        sc = json.loads((model_dir / SUMMARY_SIDECAR).read_text())
        spec = NdeConfig(
            conv1_kernel=sc["conv1"][0], conv1_stride=sc["conv1"][1],
            conv1_filters=sc["conv1"][2], conv2_kernel=sc["conv2"][0],
            conv2_stride=sc["conv2"][1], conv2_filters=sc["conv2"][2],
            gru_units=sc["gru_units"], summary_dim=sc["summary_dim"],
        )
        net = cls(spec, seed=sc["seed"], n_input=sc["n_input"])
        tensors = nn.load_tensors(model_dir / SUMMARY_CHECKPOINT)
        for p in net.parameters():
            p.data = tensors[p.name]
        net.set_normalization(sc["trace_mean"], sc["trace_std"])
        return net
