"""Append-only episodic memory with content-based top-K attention reads.

Rows hold the state variables written at each step, one row per step.
Reads score a key against every row by cosine similarity, keep the top-K
rows (ties to the lowest row index), apply a softmax of strength-scaled
similarities over exactly that index set, and return the weighted row
sum. Unwritten rows are zero vectors: their similarity is exactly 0 and
they may legitimately be selected. Reads always see the matrix as it was
before the current step's write.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class MemoryCapacityError(RuntimeError):
    """Write attempted past row N-1; the memory is sized to episode length."""


@dataclass
class ReadOutcome:
    """One head's read: vector, full-length weights, key and strength."""

    vector: Tensor           # length-W readout
    weights: np.ndarray      # length-N, nonnegative, <= top_K nonzeros
    key: Tensor              # length-W
    strength: Tensor         # positive scalar
    indices: np.ndarray      # the selected row indices

    @property
    def argmax_index(self) -> int:
        """Earliest index of the maximal weight (0 for an all-zero row)."""
        return int(np.argmax(self.weights))


class MemoryState:
    """N x W matrix plus a write cursor; rows at or past the cursor are zero."""

    def __init__(self, capacity: int, width: int, dtype=np.float32):
        self.capacity = capacity
        self.width = width
        self.dtype = dtype
        self.rows: list[Tensor] = []

    @property
    def write_cursor(self) -> int:
        return len(self.rows)

    def matrix(self) -> np.ndarray:
        """Materialized N x W matrix (for inspection and traces)."""
        out = np.zeros((self.capacity, self.width), dtype=self.dtype)
        for i, r in enumerate(self.rows):
            out[i] = r.data
        return out

    def write(self, z: Tensor) -> None:
        if self.write_cursor >= self.capacity:
            raise MemoryCapacityError(
                f"memory full at {self.capacity} rows; size memory to episode length")
        if z.shape != (self.width,):
            raise ad.ShapeError(f"write: row shape {z.shape}, expected ({self.width},)")
        self.rows.append(z)


def interface_split(interface: Tensor, num_heads: int, width: int):
    """Split a k*(W+1) interface vector into k keys and k softplus strengths."""
    expected = num_heads * (width + 1)
    if interface.shape != (expected,):
        raise ad.ShapeError(
            f"interface_split: got shape {interface.shape}, expected ({expected},) "
            f"for {num_heads} heads of width {width}")
    keys, strengths = [], []
    for i in range(num_heads):
        base = i * (width + 1)
        keys.append(ad.slice1d(interface, base, base + width))
        strengths.append(ad.softplus(ad.slice1d(interface, base + width, base + width + 1)))
    return keys, strengths


def read(mem: MemoryState, keys: list[Tensor], strengths: list[Tensor],
         top_k: int, eps: float = 1e-6) -> list[ReadOutcome]:
    """Content-based read of every head against the pre-write memory."""
    written = mem.write_cursor
    outcomes = []
    if written > 0:
        matrix = ad.stack_rows(mem.rows)
        row_norms = ad.sqrt(ad.sum_rows(ad.mul(matrix, matrix)))
    for key, strength in zip(keys, strengths):
        if key.shape != (mem.width,):
            raise ad.ShapeError(f"read: key shape {key.shape}, expected ({mem.width},)")
        k_sel = min(top_k, mem.capacity)
        if written == 0:
            # Zero-row convention: uniform weights over selected zero rows.
            sel = np.arange(k_sel)
            weights = np.zeros(mem.capacity, dtype=mem.dtype)
            weights[sel] = 1.0 / k_sel
            outcomes.append(ReadOutcome(
                vector=Tensor(np.zeros(mem.width, dtype=mem.dtype)),
                weights=weights, key=key, strength=strength, indices=sel))
            continue
        key_norm = ad.sqrt(ad.tsum(ad.mul(key, key)))
        denom = ad.add(ad.mul(row_norms, key_norm), Tensor(np.asarray(eps, dtype=mem.dtype)))
        sims = ad.div(ad.matmul(matrix, key), denom)
        # Selection happens on forward values; unwritten rows score 0.
        sims_full = np.zeros(mem.capacity, dtype=np.float64)
        sims_full[:written] = sims.data
        order = np.argsort(-sims_full, kind="stable")
        sel = order[:k_sel]
        sel_written = sel[sel < written]
        sel_unwritten = sel[sel >= written]
        n_zero = k_sel - sel_written.size
        logit_parts = []
        if sel_written.size:
            logit_parts.append(ad.gather(sims, sel_written))
        if n_zero:
            logit_parts.append(Tensor(np.zeros(n_zero, dtype=mem.dtype)))
        logits = ad.mul(ad.concat(logit_parts) if len(logit_parts) > 1 else logit_parts[0],
                        ad.tsum(strength))
        w_sel = ad.softmax(logits)
        if sel_written.size:
            w_written = ad.slice1d(w_sel, 0, sel_written.size)
            vector = ad.matmul(w_written, ad.gather_rows(matrix, sel_written))
        else:
            vector = Tensor(np.zeros(mem.width, dtype=mem.dtype))
        weights = np.zeros(mem.capacity, dtype=mem.dtype)
        weights[sel_written] = w_sel.data[:sel_written.size]
        weights[sel_unwritten] = w_sel.data[sel_written.size:]
        outcomes.append(ReadOutcome(vector=vector, weights=weights, key=key,
                                    strength=strength, indices=sel))
    return outcomes


def read_full_softmax(mem: MemoryState, key: np.ndarray, strength: float,
                      eps: float = 1e-6) -> np.ndarray:
    """Oracle: plain softmax attention over all N rows, zero-row convention."""
    m = mem.matrix().astype(np.float64)
    k = np.asarray(key, dtype=np.float64)
    norms = np.sqrt(np.sum(m * m, axis=1))
    sims = (m @ k) / (norms * np.sqrt(np.sum(k * k)) + eps)
    e = np.exp(strength * (sims - np.max(sims)))
    return e / np.sum(e)
