"""
Real-valued MIMO Rayleigh wiretap channel.

Frames are numpy arrays of shape (rows, L_c) or batched (batch, rows, L_c);
channel matrices are (N_n, N_m) or batched (batch, N_n, N_m). Every
differentiable map here has a matching ``*_backward`` function that takes
dL/d(output) and returns dL/d(input).
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Iterable, Union
import pathlib
import logging

import numpy as np
import pandas as pd

from semsec.errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

REDRAW_MODES = ("frame", "epoch")


@dataclass
class ChannelConfig:
    """
    Antenna counts, transmit power and the two link SNRs.

    Parameters
    ----------
    n_m, n_n: int
        Transmit and receive antenna counts. They must be equal.
    power: float
        Average transmit power P (linear).
    snr_leg_db, snr_eve_db: float
        Channel SNRs of Bob's and Eve's links in dB.
    redraw: str
        "frame" draws a fresh H for every frame; "epoch" keeps one H per
        link for a whole epoch.
    """
    n_m: int = 4
    n_n: int = 4
    power: float = 1.0
    snr_leg_db: float = 10.0
    snr_eve_db: float = 10.0
    redraw: str = "frame"

    def validate(self) -> ChannelConfig:
        if self.n_m != self.n_n:
            raise ConfigError(f"The antenna counts must match (n_m={self.n_m}, n_n={self.n_n}).")
        if self.n_m < 1:
            raise ConfigError(f"Antenna counts must be positive, got {self.n_m}.")
        if not self.power > 0:
            raise ConfigError(f"The transmit power must be positive, got {self.power}.")
        if self.redraw not in REDRAW_MODES:
            raise ConfigError(f"redraw must be one of {REDRAW_MODES}, not {self.redraw}.")
        return self

    @property
    def sigma2_leg(self) -> float:
        return snr_to_sigma2(self.snr_leg_db, self.power)

    @property
    def sigma2_eve(self) -> float:
        return snr_to_sigma2(self.snr_eve_db, self.power)


def sample_channel(cfg: ChannelConfig, rng: np.random.Generator, batch: int = None) -> np.ndarray:
    """
    Draw H with i.i.d. N(0, 1) entries.

    Returns
    -------
    np.ndarray
        Shape (n_n, n_m), or (batch, n_n, n_m) if batch is given.
    """
    cfg.validate()
    shape = (cfg.n_n, cfg.n_m) if batch is None else (batch, cfg.n_n, cfg.n_m)
    return rng.standard_normal(shape)


def snr_to_sigma2(snr_db: float, power: float) -> float:
    """Noise variance for an SNR of 10*log10(P/sigma2) dB."""
    if not power > 0:
        raise ConfigError(f"The transmit power must be positive, got {power}.")
    return power / 10 ** (snr_db / 10)


def normalize_power(Y: np.ndarray, power: float) -> np.ndarray:
    """
    Scale each frame so that ||Y~||_F^2 / (rows*L_c) = P exactly.

    Parameters
    ----------
    Y: np.ndarray
        (rows, L_c) or (batch, rows, L_c).
    power: float
        Average transmit power P.

    Returns
    -------
    np.ndarray
        sqrt(P*rows*L_c) * Y / ||Y||_F, frame by frame.
    """
    Y = np.asarray(Y, dtype=np.float64)
    norms = _frame_norms(Y)
    target = np.sqrt(power * Y.shape[-2] * Y.shape[-1])
    return target * Y / norms


def normalize_power_backward(Y: np.ndarray, grad: np.ndarray, power: float) -> np.ndarray:
    """
    Gradient of normalize_power w.r.t. Y. For Y~ = c*Y/n with n = ||Y||_F,
    dL/dY = (c/n) * (g - <g, Y>/n^2 * Y).
    """
    Y = np.asarray(Y, dtype=np.float64)
    norms = _frame_norms(Y)
    c = np.sqrt(power * Y.shape[-2] * Y.shape[-1])
    inner = np.sum(grad * Y, axis=(-2, -1), keepdims=True)
    return (c / norms) * (grad - inner / norms ** 2 * Y)


def _frame_norms(Y: np.ndarray) -> np.ndarray:
    if Y.ndim not in (2, 3):
        raise ShapeError(f"A frame has 2 (or 3 when batched) dimensions, got shape {Y.shape}.")
    norms = np.sqrt(np.sum(Y ** 2, axis=(-2, -1), keepdims=True))
    if np.any(norms < 1e-12):
        raise NumericalError("Degenerate frame: ||Y||_F is below 1e-12 and can't be normalized.")
    return norms


def transmit(Y: np.ndarray, H: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """
    Pass a normalized frame through the channel: H @ Y + N with N ~ N(0, sigma2).
    """
    if H.shape[-1] != Y.shape[-2]:
        raise ShapeError(f"H has {H.shape[-1]} columns but the frame has {Y.shape[-2]} rows.")
    clean = H @ Y
    if sigma2 == 0:
        return clean
    return clean + np.sqrt(sigma2) * rng.standard_normal(clean.shape)


def transmit_backward(H: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """The noise is a constant, so only the linear term H @ Y carries gradient."""
    return np.swapaxes(H, -1, -2) @ grad


def _regularized_gram(H: np.ndarray, sigma2: float, power: float) -> np.ndarray:
    if sigma2 < 0:
        raise ConfigError(f"sigma2 must be >= 0, got {sigma2}.")
    n_n = H.shape[-2]
    return H @ np.swapaxes(H, -1, -2) + (sigma2 / power) * np.eye(n_n)


def _solve(M: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        X = np.linalg.solve(M, B)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"The MMSE system is singular: {err}") from err
    if not np.all(np.isfinite(X)):
        raise NumericalError("The MMSE solve produced non-finite values.")
    return X


def mmse_equalize(Y_recv: np.ndarray, H_hat: np.ndarray, sigma2: float, power: float) -> np.ndarray:
    """
    MMSE equalization H^T (H H^T + sigma2/P I)^-1 Y with perfect CSI.

    The inverse is never formed; the regularized Gram matrix is LU-solved
    (LAPACK gesv through numpy.linalg.solve). Batched inputs are supported.

    Parameters
    ----------
    Y_recv: np.ndarray
        Received frame(s), (n_n, L_c) or (batch, n_n, L_c).
    H_hat: np.ndarray
        Channel estimate(s), (n_n, n_m) or (batch, n_n, n_m).
    sigma2: float
        Noise variance of the link.
    power: float
        Transmit power P.

    Returns
    -------
    np.ndarray
        The equalized frame(s), (n_m, L_c) or (batch, n_m, L_c).

    Raises
    ------
    NumericalError
        If sigma2 = 0 and H is rank deficient.
    """
    if H_hat.shape[-2] != Y_recv.shape[-2]:
        raise ShapeError(f"H has {H_hat.shape[-2]} rows but the received frame has {Y_recv.shape[-2]}.")
    M = _regularized_gram(H_hat, sigma2, power)
    if sigma2 == 0:
        _check_conditioning(M)
    return np.swapaxes(H_hat, -1, -2) @ _solve(M, Y_recv)


def mmse_backward(H_hat: np.ndarray, sigma2: float, power: float, grad: np.ndarray) -> np.ndarray:
    """
    Gradient of mmse_equalize w.r.t. Y_recv. The map is A = H^T M^-1 with a
    symmetric M, so A^T g = M^-1 H g.
    """
    M = _regularized_gram(H_hat, sigma2, power)
    return _solve(M, H_hat @ grad)


def _check_conditioning(M: np.ndarray) -> None:
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1.0 / np.finfo(np.float64).eps):
        raise NumericalError("sigma2 = 0 with a rank-deficient channel leaves the MMSE system singular.")
    return


def zf_equalize(Y_recv: np.ndarray, H_hat: np.ndarray) -> np.ndarray:
    """Zero-forcing (pseudo-inverse) equalization H^+ Y."""
    return np.linalg.pinv(H_hat) @ Y_recv


def svd_precoder(H: np.ndarray) -> np.ndarray:
    """
    Right singular vectors of H = U S V^T, columns ordered by descending
    singular value. Batched channels give batched precoders.
    """
    if not np.all(np.isfinite(H)):
        raise NumericalError("H has non-finite entries.")
    try:
        _, _, Vt = np.linalg.svd(H)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"The SVD of H did not converge: {err}") from err
    return np.swapaxes(Vt, -1, -2)


def dump_channels_csv(channels: Union[np.ndarray, Iterable[np.ndarray]],
                      path: Union[str, pathlib.Path]) -> pathlib.Path:
    """
    Write channel realizations to a CSV with columns frame_id, row, col, value.

    Parameters
    ----------
    channels: np.ndarray or iterable of np.ndarray
        A (batch, n_n, n_m) stack or a sequence of (n_n, n_m) matrices.
    path: str or pathlib.Path
        Output file.
    """
    stack = np.asarray(list(channels) if not isinstance(channels, np.ndarray) else channels)
    if stack.ndim == 2:
        stack = stack[np.newaxis]
    frame_id, row, col = np.indices(stack.shape)
    df = pd.DataFrame({
        "frame_id": frame_id.ravel(), "row": row.ravel(),
        "col": col.ravel(), "value": stack.ravel(),
    })
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path
