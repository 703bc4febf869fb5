"""Conditional affine coupling flow over parameter-code space.

Each block permutes the dimensions (permutation drawn once from the model
seed), keeps an identity part, and applies an affine map to the rest whose
scale and shift come from a ReLU MLP conditioned on the identity part plus
the observation embedding. Scales are soft-clamped with c*tanh(s/c), so
log-determinants stay bounded and early training cannot explode. Block
outputs are returned to the original coordinate order, which keeps the
per-block role of every dimension explicit.

Densities are reported with respect to raw code space: parameters are
z-scored with training statistics stored in the model, and the constant
Jacobian of that normalization is folded into log_prob.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .nn import MLP, Tensor

FLOW_CHECKPOINT = "flow.npt"
FLOW_SIDECAR = "flow.json"

LOG_2PI = float(np.log(2.0 * np.pi))


def _soft_clamp_np(s: np.ndarray, c: float) -> np.ndarray:
    return c * np.tanh(s / c)


@dataclass
class CouplingBlock:
    perm: np.ndarray      # permutation applied to the block input
    inv_perm: np.ndarray
    k: int                # size of the identity (pass-through) part
    net: MLP              # (k + cond_dim) -> 2 * (dim - k)


class CouplingFlow:
    def __init__(self, dim: int, cond_dim: int, n_blocks: int, seed: int,
                 hidden: int = 128, n_hidden_layers: int = 2, clamp: float = 1.9):
        if dim < 2:
            raise ValueError("flow needs at least two dimensions")
        self.dim = dim
        self.cond_dim = cond_dim
        self.n_blocks = n_blocks
        self.seed = seed
        self.hidden = hidden
        self.n_hidden_layers = n_hidden_layers
        self.clamp = float(clamp)
        self.theta_mean = np.zeros(dim)
        self.theta_std = np.ones(dim)

        rng = np.random.default_rng(seed)
        perms = self._draw_covering_perms(rng)
        self.blocks: list[CouplingBlock] = []
        for i, perm in enumerate(perms):
            k = self._split_size(i)
            net = MLP(k + cond_dim, [hidden] * n_hidden_layers, 2 * (dim - k),
                      rng, zero_init_output=True, name=f"block{i}")
            self.blocks.append(CouplingBlock(perm=perm, inv_perm=np.argsort(perm),
                                             k=k, net=net))

    def _split_size(self, i: int) -> int:
        # alternate floor/ceil so odd dimensionalities swap 3/4 splits
        return self.dim // 2 if i % 2 == 0 else self.dim - self.dim // 2

    def _draw_covering_perms(self, rng: np.random.Generator) -> list[np.ndarray]:
        """Random permutations, redrawn until every dimension appears at least
        once in the identity role and once in the transformed role."""
        for _ in range(1000):
            perms = [rng.permutation(self.dim) for _ in range(self.n_blocks)]
            identity_seen = np.zeros(self.dim, dtype=bool)
            transformed_seen = np.zeros(self.dim, dtype=bool)
            for i, perm in enumerate(perms):
                k = self._split_size(i)
                identity_seen[perm[:k]] = True
                transformed_seen[perm[k:]] = True
            if identity_seen.all() and transformed_seen.all():
                return perms
        raise RuntimeError("could not draw covering permutations; too few blocks")

    def parameters(self) -> list[Tensor]:
        params = []
        for b in self.blocks:
            params.extend(b.net.parameters())
        return params

    def set_normalization(self, theta: np.ndarray) -> None:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        self.theta_mean = theta.mean(axis=0)
        std = theta.std(axis=0)
        self.theta_std = np.where(std == 0.0, 1.0, std)

    def normalize(self, theta: np.ndarray) -> np.ndarray:
        return (np.asarray(theta, dtype=np.float64) - self.theta_mean) / self.theta_std

    def denormalize(self, theta_norm: np.ndarray) -> np.ndarray:
        return theta_norm * self.theta_std + self.theta_mean

    # -- numpy fast paths -------------------------------------------------

    def forward_np(self, theta_norm: np.ndarray, cond: np.ndarray):
        """Normalized parameters -> latent; returns (z, log_det)."""
        x = np.atleast_2d(np.asarray(theta_norm, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        self._check_dims(x, cond)
        log_det = np.zeros(len(x))
        for block in self.blocks:
            xp = x[:, block.perm]
            x_id, x_tr = xp[:, : block.k], xp[:, block.k:]
            st = block.net.forward_np(np.concatenate([x_id, cond], axis=1))
            m = self.dim - block.k
            s = _soft_clamp_np(st[:, :m], self.clamp)
            t = st[:, m:]
            y_tr = x_tr * np.exp(s) + t
            x = np.concatenate([x_id, y_tr], axis=1)[:, block.inv_perm]
            log_det += s.sum(axis=1)
        return x, log_det

    def inverse_np(self, z: np.ndarray, cond: np.ndarray) -> np.ndarray:
        """Exact inverse of forward_np (latent -> normalized parameters)."""
        x = np.atleast_2d(np.asarray(z, dtype=np.float64))
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        self._check_dims(x, cond)
        for i in range(self.n_blocks - 1, -1, -1):
            block = self.blocks[i]
            xp = x[:, block.perm]
            x_id, y_tr = xp[:, : block.k], xp[:, block.k:]
            st = block.net.forward_np(np.concatenate([x_id, cond], axis=1))
            m = self.dim - block.k
            s = _soft_clamp_np(st[:, :m], self.clamp)
            t = st[:, m:]
            x_tr = (y_tr - t) * np.exp(-s)
            if not np.all(np.isfinite(x_tr)):
                raise FloatingPointError(f"non-finite intermediate inverting block {i}")
            x = np.concatenate([x_id, x_tr], axis=1)[:, block.inv_perm]
        return x

    def _check_dims(self, x: np.ndarray, cond: np.ndarray) -> None:
        if x.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim}-dim inputs, got {x.shape[1]}")
        if cond.shape[1] != self.cond_dim:
            raise ValueError(f"expected {self.cond_dim}-dim conditions, got {cond.shape[1]}")
        if len(cond) != len(x):
            raise ValueError("batch sizes of inputs and conditions differ")

    # -- differentiable path ------------------------------------------------

    def forward_graph(self, x: Tensor, cond: Tensor):
        """Graph version of forward_np for training; returns (z, log_det)."""
        log_det = None
        for block in self.blocks:
            xp = nn.take_cols(x, block.perm)
            x_id = xp[:, : block.k]
            x_tr = xp[:, block.k:]
            st = block.net(nn.concat([x_id, cond], axis=1))
            m = self.dim - block.k
            s = nn.mul(nn.tanh(nn.mul(st[:, :m], 1.0 / self.clamp)), self.clamp)
            t = st[:, m:]
            y_tr = nn.add(nn.mul(x_tr, nn.exp(s)), t)
            x = nn.take_cols(nn.concat([x_id, y_tr], axis=1), block.inv_perm)
            block_det = nn.tsum(s, axis=1)
            log_det = block_det if log_det is None else nn.add(log_det, block_det)
        return x, log_det

    def nll_graph(self, theta_norm: np.ndarray, cond: Tensor) -> Tensor:
        """Mean negative log likelihood of normalized parameters (training loss).

        The constant raw-space correction sum(log theta_std) is added so the
        reported value matches log_prob in code space.
        """
        z, log_det = self.forward_graph(Tensor(theta_norm), cond)
        quad = nn.tsum(nn.mul(z, z), axis=1)
        per_sample = nn.add(nn.mul(quad, 0.5), nn.mul(log_det, -1.0))
        nll = nn.tmean(per_sample)
        const = 0.5 * self.dim * LOG_2PI + float(np.sum(np.log(self.theta_std)))
        return nn.add(nll, const)

    # -- densities and sampling ----------------------------------------------

    def log_prob(self, theta_raw: np.ndarray, cond: np.ndarray) -> np.ndarray:
        """Log density in raw code space."""
        z, log_det = self.forward_np(self.normalize(theta_raw), cond)
        base = -0.5 * np.sum(z * z, axis=1) - 0.5 * self.dim * LOG_2PI
        return base + log_det - np.sum(np.log(self.theta_std))

    def sample(self, cond: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n raw-space parameter vectors conditioned on one observation."""
        cond = np.atleast_2d(np.asarray(cond, dtype=np.float64))
        if len(cond) == 1:
            cond = np.repeat(cond, n, axis=0)
        z = rng.standard_normal((n, self.dim))
        return self.denormalize(self.inverse_np(z, cond))

    # -- persistence ------------------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        nn.save_tensors(out / FLOW_CHECKPOINT, self.named_tensors())
        sidecar = {
            "dim": self.dim,
            "cond_dim": self.cond_dim,
            "n_blocks": self.n_blocks,
            "seed": self.seed,
            "hidden": self.hidden,
            "n_hidden_layers": self.n_hidden_layers,
            "clamp": self.clamp,
            "perms": [b.perm.tolist() for b in self.blocks],
            "theta_mean": self.theta_mean.tolist(),
            "theta_std": self.theta_std.tolist(),
        }
        (out / FLOW_SIDECAR).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, model_dir: str | Path) -> "CouplingFlow":
        model_dir = Path(model_dir)
        sc = json.loads((model_dir / FLOW_SIDECAR).read_text())
        flow = cls(dim=sc["dim"], cond_dim=sc["cond_dim"], n_blocks=sc["n_blocks"],
                   seed=sc["seed"], hidden=sc["hidden"],
                   n_hidden_layers=sc["n_hidden_layers"], clamp=sc["clamp"])
        for block, perm in zip(flow.blocks, sc["perms"]):
            block.perm = np.asarray(perm, dtype=np.intp)
            block.inv_perm = np.argsort(block.perm)
        tensors = nn.load_tensors(model_dir / FLOW_CHECKPOINT)
        for p in flow.parameters():
            p.data = tensors[p.name]
        flow.theta_mean = np.asarray(sc["theta_mean"])
        flow.theta_std = np.asarray(sc["theta_std"])
        return flow
