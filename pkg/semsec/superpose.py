"""
Precoding and superposition of the three transmit streams.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from semsec.errors import NumericalError, ShapeError

# The actor ends in tanh, which bounds every precoder entry.
ACTION_BOUND = 1.0


@dataclass
class PrecoderSet:
    """
    The three precoding matrices V1 (semantic stream), V2 (text jamming)
    and V3 (Gaussian jamming), each (N_m, N_n). A leading batch axis gives
    every frame its own precoder (used by the SVD baseline).
    """
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    def __post_init__(self):
        self.v1, self.v2, self.v3 = (np.asarray(v, dtype=np.float64) for v in (self.v1, self.v2, self.v3))
        if not (self.v1.shape == self.v2.shape == self.v3.shape):
            raise ShapeError(f"V1, V2 and V3 must share a shape, got {self.v1.shape}, {self.v2.shape}, {self.v3.shape}.")
        for v in (self.v1, self.v2, self.v3):
            if not np.all(np.isfinite(v)):
                raise NumericalError("Precoders must be finite.")
            if v.size and np.abs(v).max() > ACTION_BOUND + 1e-12:
                raise ValueError(f"Precoder entries must lie in [-{ACTION_BOUND}, {ACTION_BOUND}].")

    @classmethod
    def identity(cls, n_m: int, n_n: int) -> PrecoderSet:
        """V1 = V2 = V3 = I: the plain sum S1 + S2 + S3."""
        eye = np.eye(n_m, n_n)
        return cls(eye, eye.copy(), eye.copy())

    @classmethod
    def semantic_only(cls, v1: np.ndarray) -> PrecoderSet:
        """Jamming switched off: V2 = V3 = 0."""
        v1 = np.asarray(v1, dtype=np.float64)
        return cls(v1, np.zeros_like(v1), np.zeros_like(v1))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.v1.shape

    def flatten(self) -> np.ndarray:
        """The flat action vector, V1 block first, each block row-major."""
        return np.concatenate([self.v1.ravel(), self.v2.ravel(), self.v3.ravel()])


def reshape_action(a: np.ndarray, n_m: int, n_n: int) -> PrecoderSet:
    """
    Split a flat action of length 3*N_m*N_n into (V1, V2, V3), V1 block
    first, each block row-major.
    """
    a = np.asarray(a, dtype=np.float64)
    block = n_m * n_n
    if a.ndim != 1 or a.size != 3 * block:
        raise ShapeError(f"An action has 3*N_m*N_n = {3 * block} entries, got shape {a.shape}.")
    v1, v2, v3 = (a[i * block:(i + 1) * block].reshape(n_m, n_n) for i in range(3))
    return PrecoderSet(v1, v2, v3)


def superpose(S1: np.ndarray, S2: np.ndarray, S3: np.ndarray, V: PrecoderSet) -> np.ndarray:
    """
    Y = V1 S1 + V2 S2 + V3 S3.

    Parameters
    ----------
    S1, S2, S3: np.ndarray
        (N_n, L_c) or (batch, N_n, L_c) streams.
    V: PrecoderSet
        Shared (N_m, N_n) precoders or per-frame (batch, N_m, N_n) ones.

    Returns
    -------
    np.ndarray
        (N_m, L_c) or (batch, N_m, L_c).
    """
    if not (S1.shape == S2.shape == S3.shape):
        raise ShapeError(f"S1, S2 and S3 must share a shape, got {S1.shape}, {S2.shape}, {S3.shape}.")
    if V.shape[-1] != S1.shape[-2]:
        raise ShapeError(f"Precoders have {V.shape[-1]} columns but the streams have {S1.shape[-2]} rows.")
    return V.v1 @ S1 + V.v2 @ S2 + V.v3 @ S3


def superpose_backward(V: PrecoderSet, grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """dL/dS_i = V_i^T dL/dY for i = 1, 2, 3."""
    return tuple(np.swapaxes(v, -1, -2) @ grad for v in (V.v1, V.v2, V.v3))
