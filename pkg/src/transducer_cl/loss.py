"""Transducer negative log-likelihood by forward-backward, plus an enumeration oracle."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .exceptions import InvalidArgumentError, InvalidLatticeError, TooLargeError

NEG_INF = -math.inf
NORM_TOL = 1e-9
MAX_ENUMERATION = 14


def logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@dataclass
class AlignmentLattice:
    log_probs: np.ndarray  # T x (U+1) x V, log-softmax normalised
    target: tuple[int, ...]
    blank_id: int = 0

    def __post_init__(self):
        self.log_probs = np.asarray(self.log_probs, dtype=np.float64)
        self.target = tuple(int(y) for y in self.target)

    @property
    def T(self) -> int:
        return self.log_probs.shape[0]

    @property
    def U(self) -> int:
        return len(self.target)


@dataclass
class LossResult:
    loss: float
    alpha: np.ndarray
    beta: np.ndarray
    grad_log_probs: np.ndarray

    @property
    def log_likelihood(self) -> float:
        return -self.loss


def validate_lattice(lat: AlignmentLattice) -> None:
    lp = lat.log_probs
    if lp.ndim != 3 or lp.shape[0] < 1:
        raise InvalidLatticeError(f"log_probs must be T x (U+1) x V with T >= 1, got shape {lp.shape}")
    T, U1, V = lp.shape
    if U1 != lat.U + 1:
        raise InvalidLatticeError(f"lattice has {U1} label positions but target length is {lat.U}")
    if not 0 <= lat.blank_id < V:
        raise InvalidArgumentError(f"blank id {lat.blank_id} outside vocabulary of size {V}")
    for y in lat.target:
        if y == lat.blank_id or not 0 <= y < V:
            raise InvalidArgumentError(f"target label {y} invalid for vocabulary of size {V}")
    if np.isnan(lp).any() or np.isposinf(lp).any():
        raise InvalidLatticeError("log_probs contain NaN or +inf")
    m = lp.max(axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise InvalidLatticeError("a lattice cell assigns zero probability to every symbol")
    lse = m[..., 0] + np.log(np.exp(lp - m).sum(axis=-1))
    if np.max(np.abs(lse)) > NORM_TOL:
        raise InvalidLatticeError(f"log_probs are not normalised (max |logsumexp| = {np.max(np.abs(lse)):.3g})")


def transducer_loss(lattice: AlignmentLattice, check: bool = True) -> LossResult:
    """``-log P(y | h)`` summed over all blank-augmented alignments.

    ``alpha[t, u]`` is the log mass of reaching node (t, u); ``beta[t, u]`` is
    the log mass of finishing from (t, u), including the final blank.
    """
    if check:
        validate_lattice(lattice)
    lp = lattice.log_probs
    T, U1, _ = lp.shape
    U = U1 - 1
    y = np.asarray(lattice.target, dtype=np.int64)
    blank = lp[:, :, lattice.blank_id]
    emit = lp[:, np.arange(U), y] if U else np.zeros((T, 0))
    bl = blank.tolist()
    em = emit.tolist()

    alpha = [[NEG_INF] * U1 for _ in range(T)]
    alpha[0][0] = 0.0
    for u in range(1, U1):
        alpha[0][u] = alpha[0][u - 1] + em[0][u - 1]
    for t in range(1, T):
        prev, row = alpha[t - 1], alpha[t]
        brow, erow = bl[t - 1], em[t]
        row[0] = prev[0] + brow[0]
        for u in range(1, U1):
            row[u] = logaddexp(prev[u] + brow[u], row[u - 1] + erow[u - 1])

    # beta has a sentinel row T and sentinel column U+1.
    beta = [[NEG_INF] * (U1 + 1) for _ in range(T + 1)]
    beta[T][U] = 0.0
    for t in range(T - 1, -1, -1):
        nxt, row = beta[t + 1], beta[t]
        brow, erow = bl[t], em[t]
        row[U] = brow[U] + nxt[U]
        for u in range(U - 1, -1, -1):
            row[u] = logaddexp(brow[u] + nxt[u], erow[u] + row[u + 1])

    log_p = alpha[T - 1][U] + bl[T - 1][U]
    A = np.array(alpha)
    B = np.array(beta)
    grad = np.zeros_like(lp)
    if math.isfinite(log_p):
        with np.errstate(invalid="ignore"):
            occ_blank = -np.exp(A + blank + B[1:, :U1] - log_p)
            grad[:, :, lattice.blank_id] = np.nan_to_num(occ_blank, nan=0.0)
            if U:
                occ_emit = -np.exp(A[:, :U] + emit + B[:T, 1:U1] - log_p)
                grad[:, np.arange(U), y] = np.nan_to_num(occ_emit, nan=0.0)
    return LossResult(-log_p, A, B[:T, :U1].copy(), grad)


def loss_gradients(lattice: AlignmentLattice) -> np.ndarray:
    """``d loss / d log_probs`` with the same shape as the lattice."""
    return transducer_loss(lattice).grad_log_probs


def enumerate_alignments(T: int, U: int) -> Iterator[tuple[int, ...]]:
    """Label-slot positions of every alignment; the final slot is always blank."""
    return itertools.combinations(range(T + U - 1), U)


def brute_force_loss(lattice: AlignmentLattice, return_count: bool = False):
    """Sum path probabilities over every alignment explicitly."""
    lp = lattice.log_probs
    T, U = lp.shape[0], lattice.U
    if T + U > MAX_ENUMERATION:
        raise TooLargeError(f"T + U = {T + U} exceeds the enumeration bound {MAX_ENUMERATION}")
    if lp.ndim != 3 or lp.shape[1] != U + 1:
        raise InvalidLatticeError("lattice shape does not match target length")
    for y in lattice.target:
        if y == lattice.blank_id or not 0 <= y < lp.shape[2]:
            raise InvalidArgumentError(f"target label {y} invalid")
    total = NEG_INF
    count = 0
    for label_slots in enumerate_alignments(T, U):
        slots = set(label_slots)
        t = u = 0
        score = 0.0
        for k in range(T + U):
            if k in slots:
                score += lp[t, u, lattice.target[u]]
                u += 1
            else:
                score += lp[t, u, lattice.blank_id]
                t += 1
        total = logaddexp(total, score)
        count += 1
    return (-total, count) if return_count else -total


def batch_loss(lattices: Sequence[AlignmentLattice]) -> float:
    """Mean loss over utterances."""
    return float(np.mean([transducer_loss(lat).loss for lat in lattices]))
