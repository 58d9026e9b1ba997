"""Small MLP builders with explicitly seeded initialization."""

from __future__ import annotations

import math
from typing import Dict, Sequence

import numpy as np
import torch
from torch import nn

from skillprior.core import DTYPE, ContractViolation, DiagGaussian, Rng


def mlp(in_dim: int, out_dim: int, hidden: Sequence[int], rng: Rng, xavier_head: bool = False) -> nn.Sequential:
    """ReLU MLP. Hidden layers use PyTorch's default uniform fan-in init."""
    dims = [in_dim, *hidden, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1], dtype=DTYPE))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    net = nn.Sequential(*layers)
    gen = rng.torch_generator()
    linears = [m for m in net if isinstance(m, nn.Linear)]
    with torch.no_grad():
        for j, lin in enumerate(linears):
            bound = 1.0 / math.sqrt(lin.in_features)
            if xavier_head and j == len(linears) - 1:
                nn.init.xavier_uniform_(lin.weight, generator=gen)
                lin.bias.zero_()
            else:
                lin.weight.uniform_(-bound, bound, generator=gen)
                lin.bias.uniform_(-bound, bound, generator=gen)
    return net


class GaussianHead(nn.Module):
    """MLP mapping an input vector to a :class:`DiagGaussian` of dimension ``out_dim``."""

    def __init__(self, in_dim: int, out_dim: int, hidden: Sequence[int], rng: Rng):
        super().__init__()
        self.net = mlp(in_dim, 2 * out_dim, hidden, rng)

    def forward(self, x: torch.Tensor) -> DiagGaussian:
        return DiagGaussian.from_head(self.net(x))


def state_arrays(module: nn.Module, prefix: str = "") -> Dict[str, np.ndarray]:
    return {prefix + k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_arrays(module: nn.Module, arrays: Dict[str, np.ndarray], prefix: str = "") -> None:
    sd = {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in arrays.items() if k.startswith(prefix)}
    module.load_state_dict(sd)


@torch.no_grad()
def ema_update(target: nn.Module, source: nn.Module, tau: float) -> None:
    """In place: target <- tau * source + (1 - tau) * target."""
    tp, sp = list(target.parameters()), list(source.parameters())
    if len(tp) != len(sp) or any(a.shape != b.shape for a, b in zip(tp, sp)):
        raise ContractViolation("EMA target and source have different parameter shapes")
    # lerp is exact at both endpoints (tau = 1, or target == source)
    for t, s in zip(tp, sp):
        t.lerp_(s, tau)
