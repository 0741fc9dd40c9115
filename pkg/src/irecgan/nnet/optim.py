"""Adaptive-moment optimizer with global-norm clipping."""
from __future__ import annotations

import numpy as np

from .core import GradientTape, ParamSet


class NonFiniteGradient(ValueError):
    pass


class Adam:
    """Adam over a :class:`ParamSet`; keeps first/second moments per parameter."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 5.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(v) for name, v in params.items()}
        self.v = {name: np.zeros_like(v) for name, v in params.items()}

    def step(self, params: ParamSet, tape: GradientTape) -> float:
        """Apply one update in place. Returns the pre-clip gradient norm."""
        for name, g in tape.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape mismatch for {name!r}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        norm = tape.global_norm()
        scale = 1.0
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, g in tape.items():
            if scale != 1.0:
                g = g * scale
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def state_arrays(self, prefix: str) -> list[tuple[str, np.ndarray]]:
        """Flatten optimizer state into named arrays for checkpointing."""
        out = [(f"{prefix}.step", np.array([float(self.step_count)]))]
        for name in self.m:
            out.append((f"{prefix}.m.{name}", self.m[name]))
            out.append((f"{prefix}.v.{name}", self.v[name]))
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray]) -> None:
        self.step_count = int(arrays[f"{prefix}.step"][0])
        for name in self.m:
            self.m[name][...] = arrays[f"{prefix}.m.{name}"]
            self.v[name][...] = arrays[f"{prefix}.v.{name}"]
