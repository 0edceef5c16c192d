"""
Transmit-side encoders, receive-side decoders and their data sources.

Images are (batch, H, W, C) arrays with values in [0, 1]. Every encoder
returns a (batch, N_n, L_c) stack of frames; both decoders map a
(batch, N_n, L_c) stack back to images.
"""
from __future__ import annotations
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Tuple, Union
import pathlib
import logging
import warnings
import zlib

import matplotlib.image
import numpy as np

import semsec
from semsec.errors import ConfigError, ShapeError
from semsec.nn_core import LayerSpec, Network, init_network

logger = logging.getLogger(__name__)

# CU = 1 corresponds to a compression ratio of 1/96.
CR_DENOMINATOR = 96
CIFAR_RECORD_BYTES = 1 + 32 * 32 * 3
MSE_FLOOR = 1e-10


@dataclass(frozen=True)
class CodeShape:
    """
    Channel-use bookkeeping tied to the compression ratio.

    Parameters
    ----------
    cu: int
        The compression knob; CR = cu/96.
    cr: fractions.Fraction
        (N_m*L_c)/(H*W*C).
    l_c: int
        Channel uses per frame.
    """
    cu: int
    cr: Fraction
    l_c: int


def code_shape(cu: int, h: int, w: int, c: int, n_m: int) -> CodeShape:
    """
    Channel uses per frame for a given CU and image size.

    Example
    -------
    | code_shape(1, 32, 32, 3, 4)  # CodeShape(cu=1, cr=Fraction(1, 96), l_c=8)
    """
    if cu < 1:
        raise ConfigError(f"CU must be >= 1, got {cu}.")
    n_pixels = h * w * c
    if n_pixels % (CR_DENOMINATOR * n_m):
        raise ConfigError(
            f"H*W*C = {n_pixels} must be divisible by 96*N_m = {CR_DENOMINATOR * n_m}."
        )
    l_c = cu * n_pixels // (CR_DENOMINATOR * n_m)
    return CodeShape(cu=cu, cr=Fraction(cu, CR_DENOMINATOR), l_c=l_c)


@dataclass
class CodecArchitecture:
    """
    Layer widths of the five codec networks. The defaults are the dense
    stand-ins for the unspecified codec architectures.
    """
    hidden: int = 256
    jam_hidden: int = 64
    text_tokens: int = 16
    embed_dim: int = 16
    vocab: int = 1024


def semantic_encoder_spec(image_shape: Tuple[int, int, int], n_n: int, l_c: int,
                          arch: CodecArchitecture) -> list:
    n_in = int(np.prod(image_shape))
    return [
        LayerSpec.dense(n_in, arch.hidden), LayerSpec.activation("relu", arch.hidden),
        LayerSpec.dense(arch.hidden, n_n * l_c), LayerSpec.reshape((n_n, l_c)),
    ]


def text_jam_encoder_spec(n_n: int, l_c: int, arch: CodecArchitecture) -> list:
    text_dim = arch.text_tokens * arch.embed_dim
    return [
        LayerSpec.embedding(arch.vocab, arch.text_tokens, arch.embed_dim),
        LayerSpec.dense(text_dim, arch.jam_hidden), LayerSpec.activation("relu", arch.jam_hidden),
        LayerSpec.dense(arch.jam_hidden, n_n * l_c), LayerSpec.reshape((n_n, l_c)),
    ]


def gauss_jam_encoder_spec(image_shape: Tuple[int, int, int], n_n: int, l_c: int,
                           arch: CodecArchitecture) -> list:
    n_in = int(np.prod(image_shape))
    return [
        LayerSpec.dense(n_in, arch.jam_hidden), LayerSpec.activation("relu", arch.jam_hidden),
        LayerSpec.dense(arch.jam_hidden, n_n * l_c), LayerSpec.reshape((n_n, l_c)),
    ]


def decoder_spec(image_shape: Tuple[int, int, int], n_n: int, l_c: int,
                 arch: CodecArchitecture) -> list:
    n_out = int(np.prod(image_shape))
    return [
        LayerSpec.dense(n_n * l_c, arch.hidden), LayerSpec.activation("relu", arch.hidden),
        LayerSpec.dense(arch.hidden, n_out), LayerSpec.activation("sigmoid", n_out),
        LayerSpec.reshape(image_shape),
    ]


def build_codec_networks(image_shape: Tuple[int, int, int], n_n: int, l_c: int,
                         arch: CodecArchitecture, rng: np.random.Generator) -> Dict[str, Network]:
    """
    Initialize the semantic encoder (se), text jamming encoder (tje),
    Gaussian jamming encoder (gje), Bob's decoder (sd1) and Eve's decoder
    (sd2). Eve's decoder mirrors Bob's. Each network gets its own seed drawn
    from rng in that fixed order.
    """
    specs = {
        "se": semantic_encoder_spec(image_shape, n_n, l_c, arch),
        "tje": text_jam_encoder_spec(n_n, l_c, arch),
        "gje": gauss_jam_encoder_spec(image_shape, n_n, l_c, arch),
        "sd1": decoder_spec(image_shape, n_n, l_c, arch),
        "sd2": decoder_spec(image_shape, n_n, l_c, arch),
    }
    seeds = rng.integers(0, 2 ** 32, size=len(specs))
    return {name: init_network(spec, int(seed), name=name)
            for (name, spec), seed in zip(specs.items(), seeds)}


def check_images(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        raise ShapeError(f"An image batch has shape (batch, H, W, C), got {X.shape}.")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("Pixel values must lie in [0, 1].")
    return X


def _encode(inputs: np.ndarray, net: Network) -> np.ndarray:
    frames = net.forward(inputs)
    if frames.ndim != 3:
        raise ShapeError(f"{net.name or 'Encoder'} must end in a reshape to (N_n, L_c), got {frames.shape[1:]}.")
    return frames


def semantic_encode(X: np.ndarray, net: Network) -> np.ndarray:
    """S1 = f_SE(X): (batch, H, W, C) images to (batch, N_n, L_c) frames."""
    return _encode(check_images(X), net)


def text_jam_encode(tokens: np.ndarray, net: Network) -> np.ndarray:
    """S2 = f_TJE(T) from (batch, L_t) token ids."""
    tokens = np.atleast_2d(np.asarray(tokens))
    return _encode(tokens, net)


def gauss_jam_encode(G: np.ndarray, net: Network) -> np.ndarray:
    """S3 = f_GJE(G) from (batch, H, W, C) standard normal sources."""
    return _encode(np.asarray(G, dtype=np.float64), net)


def decode(Y_hat: np.ndarray, net: Network) -> np.ndarray:
    """X^ = f_SD(Y^). The final sigmoid keeps every pixel in [0, 1]."""
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    if Y_hat.ndim != 3:
        raise ShapeError(f"Decoders take (batch, N_n, L_c) frames, got {Y_hat.shape}.")
    images = net.forward(Y_hat)
    if images.ndim != 4:
        raise ShapeError(f"{net.name or 'Decoder'} must end in a reshape to (H, W, C).")
    return images


@dataclass
class TextSample:
    """A fixed-length window of token ids from the jamming corpus."""
    token_ids: np.ndarray


class TextCorpus:
    """
    The plain-text jamming corpus. Tokens are whitespace-separated words,
    lower-cased and hashed with crc32 into ``vocab_size`` buckets. You need
    to call ``.load()`` to read the file.

    Parameters
    ----------
    path: str or pathlib.Path
        A plain-text file. Defaults to the corpus bundled with semsec.
    vocab_size: int
        Number of hash buckets.

    Example
    -------
    | import numpy as np
    | import semsec
    |
    | corpus = semsec.TextCorpus()
    | corpus.load()
    | sample = semsec.sample_text(corpus, np.random.default_rng(0), 16)
    """
    def __init__(self, path: Union[str, pathlib.Path] = None, vocab_size: int = 1024) -> None:
        if path is None:
            path = pathlib.Path(semsec.__file__).parent / "data" / "corpus.txt"
        self.path = pathlib.Path(path)
        self.vocab_size = vocab_size
        self.token_ids = np.zeros(0, dtype=np.int64)
        return

    def load(self) -> np.ndarray:
        if not self.path.exists():
            raise FileNotFoundError(f"The text corpus {self.path} does not exist.")
        words = self.path.read_text(encoding="utf-8").split()
        self.token_ids = np.array(
            [zlib.crc32(word.lower().encode("utf-8")) % self.vocab_size for word in words],
            dtype=np.int64,
        )
        logger.debug(f"Loaded {len(self.token_ids)} tokens from {self.path.name}.")
        return self.token_ids

    def __len__(self) -> int:
        return len(self.token_ids)


def sample_text(corpus: Union[TextCorpus, np.ndarray], rng: np.random.Generator, l_t: int) -> TextSample:
    """A uniformly random window of l_t consecutive tokens."""
    return TextSample(sample_text_batch(corpus, rng, l_t, 1)[0])


def sample_text_batch(corpus: Union[TextCorpus, np.ndarray], rng: np.random.Generator,
                      l_t: int, batch: int) -> np.ndarray:
    ids = corpus.token_ids if isinstance(corpus, TextCorpus) else np.asarray(corpus)
    if len(ids) < l_t:
        raise ValueError(f"The corpus holds {len(ids)} tokens, fewer than the window length {l_t}.")
    starts = rng.integers(0, len(ids) - l_t + 1, size=batch)
    return ids[starts[:, np.newaxis] + np.arange(l_t)]


def sample_gauss(h: int, w: int, c: int, rng: np.random.Generator, batch: int = None) -> np.ndarray:
    """A fresh G with i.i.d. N(0, 1) entries, (h, w, c) or (batch, h, w, c)."""
    shape = (h, w, c) if batch is None else (batch, h, w, c)
    return rng.standard_normal(shape)


def synthetic_images(n: int, h: int, w: int, c: int, rng: np.random.Generator,
                     n_modes: int = 6, max_freq: int = 2) -> np.ndarray:
    """
    Smoothed random fields in [0, 1].

    Each image is a sum of n_modes low-frequency cosines (spatial frequency
    up to max_freq half-periods per side) with random amplitudes and phases
    per channel, squashed with a logistic function.
    """
    yy, xx = np.meshgrid(np.linspace(0.0, 1.0, h), np.linspace(0.0, 1.0, w), indexing="ij")
    fy = rng.integers(0, max_freq + 1, size=(n, n_modes))
    fx = rng.integers(0, max_freq + 1, size=(n, n_modes))
    amps = rng.standard_normal((n, n_modes, c)) * 1.5 / np.sqrt(n_modes)
    phases = rng.uniform(0.0, 2 * np.pi, size=(n, n_modes, c))

    field = np.zeros((n, h, w, c))
    for k in range(n_modes):
        arg = np.pi * (fy[:, k, None, None] * yy + fx[:, k, None, None] * xx)
        field += amps[:, None, None, k, :] * np.cos(arg[..., None] + phases[:, None, None, k, :])
    return 1.0 / (1.0 + np.exp(-2.0 * field))


def load_images(path: Union[str, pathlib.Path], limit: int = None) -> np.ndarray:
    """
    Load an image set as a (n, H, W, C) float64 array in [0, 1].

    Parameters
    ----------
    path: str or pathlib.Path
        Either a CIFAR-10 flat-binary file (records of 1 label byte followed
        by 3072 channel-major pixel bytes), a directory of such ``*.bin``
        files, or a directory of equally sized PNG images.
    limit: int
        Optional maximum number of images.

    Returns
    -------
    np.ndarray
    """
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"The image source {path} does not exist.")
    if path.is_file():
        images = _read_cifar_binary(path)
    elif sorted(path.glob("*.bin")):
        images = np.concatenate([_read_cifar_binary(p) for p in sorted(path.glob("*.bin"))
                                 if p.stat().st_size >= CIFAR_RECORD_BYTES])
    else:
        png_paths = sorted(path.glob("*.png"))
        if len(png_paths) == 0:
            raise FileNotFoundError(f"{path} contains neither *.bin nor *.png files.")
        if limit is not None:
            png_paths = png_paths[:limit]
        images = np.stack([_read_png(p) for p in png_paths])
        images = images.astype(np.float64)
    if limit is not None:
        images = images[:limit]
    logger.info(f"Loaded {images.shape[0]} images of shape {images.shape[1:]} from {path}.")
    return images


def _read_png(path: pathlib.Path) -> np.ndarray:
    """
    The RGB pixels of a PNG as floats in [0, 1]. Grayscale images (with or
    without alpha) get their luminance copied into all three channels.
    """
    pixels = matplotlib.image.imread(path)
    if pixels.ndim == 2:
        pixels = pixels[..., np.newaxis]
    if pixels.ndim != 3 or pixels.shape[-1] not in (1, 2, 3, 4):
        raise ShapeError(f"{path} has unsupported pixel shape {pixels.shape}.")
    if pixels.shape[-1] <= 2:
        pixels = np.repeat(pixels[..., :1], 3, axis=-1)
    return pixels[..., :3]


def _read_cifar_binary(path: pathlib.Path) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    n = raw.size // CIFAR_RECORD_BYTES
    if raw.size % CIFAR_RECORD_BYTES:
        warnings.warn(f"{path.name} has {raw.size % CIFAR_RECORD_BYTES} trailing bytes that were ignored.")
    records = raw[: n * CIFAR_RECORD_BYTES].reshape(n, CIFAR_RECORD_BYTES)
    pixels = records[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return pixels.astype(np.float64) / 255.0


def psnr_from_mse(mse: float) -> float:
    """10*log10(1/mse) for unit-peak images, with the MSE floored at 1e-10."""
    return float(10.0 * np.log10(1.0 / max(float(mse), MSE_FLOOR)))


def constant_predictor_psnr(train: np.ndarray, test: np.ndarray) -> float:
    """
    PSNR on test of always predicting the mean training image. Reconstructions
    that carry no information about the source can't beat it on average.
    """
    train, test = check_images(train), check_images(test)
    if train.shape[1:] != test.shape[1:]:
        raise ShapeError(f"Image shapes differ: {train.shape[1:]} and {test.shape[1:]}.")
    mean_image = train.mean(axis=0)
    return psnr_from_mse(np.mean((test - mean_image) ** 2))
