"""Padded array view of a list of trajectories."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..env import Trajectory


@dataclass
class Batch:
    slates: np.ndarray  # (B, L, K) int, padded with 0
    slate_mask: np.ndarray  # (B, L, K) bool
    clicks: np.ndarray  # (B, L) int
    pos: np.ndarray  # (B, L) index of the click inside its slate
    rewards: np.ndarray  # (B, L) float
    mask: np.ndarray  # (B, L) float, 1 on real steps
    lengths: np.ndarray  # (B,) int
    terminated: np.ndarray  # (B,) bool
    generated: np.ndarray  # (B,) bool

    @property
    def size(self) -> int:
        return len(self.lengths)

    @property
    def max_len(self) -> int:
        return self.clicks.shape[1]

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "Batch":
        if not trajs:
            raise ValueError("empty batch")
        B = len(trajs)
        L = max(len(t) for t in trajs)
        K = max(len(s.slate) for t in trajs for s in t.steps)
        slates = np.zeros((B, L, K), dtype=np.int64)
        smask = np.zeros((B, L, K), dtype=bool)
        clicks = np.zeros((B, L), dtype=np.int64)
        pos = np.zeros((B, L), dtype=np.int64)
        rewards = np.zeros((B, L))
        mask = np.zeros((B, L))
        lengths = np.zeros(B, dtype=np.int64)
        term = np.zeros(B, dtype=bool)
        gen = np.zeros(B, dtype=bool)
        for b, traj in enumerate(trajs):
            lengths[b] = len(traj)
            term[b] = traj.terminated
            gen[b] = traj.provenance == "generated"
            for t, step in enumerate(traj.steps):
                k = len(step.slate)
                slates[b, t, :k] = step.slate
                smask[b, t, :k] = True
                clicks[b, t] = step.click
                pos[b, t] = step.slate.index(step.click)
                rewards[b, t] = step.reward
                mask[b, t] = 1.0
        return cls(slates, smask, clicks, pos, rewards, mask, lengths, term, gen)

    def step_weights(self, scores: Sequence[Sequence[float]] | None) -> np.ndarray:
        """(B, L) array from per-trajectory score lists (``None`` means all ones)."""
        w = self.mask.copy()
        if scores is None:
            return w
        for b, q in enumerate(scores):
            q = np.asarray(q, dtype=float)
            if len(q) != self.lengths[b]:
                raise ValueError(f"score length {len(q)} != trajectory length {self.lengths[b]}")
            w[b, : len(q)] = q
        return w


def scatter_rows(target: np.ndarray, ids: np.ndarray, values: np.ndarray) -> None:
    """``target[ids] += values`` with repeated ids accumulated."""
    np.add.at(target, ids.reshape(-1), values.reshape(-1, target.shape[1]))
