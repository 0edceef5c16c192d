"""
The differentiable SemCom environment: Alice's three encoders, the
superposition precoder, power normalization, both wiretap links with MMSE
receivers, and Bob's and Eve's decoders.

``SemComSystem.forward()`` pushes an image batch to both receivers and keeps
every intermediate in a ``Pass``; ``SemComSystem.backward()`` takes the
gradients of a loss w.r.t. Bob's and Eve's reconstructions and accumulates
parameter gradients in the networks that are being trained.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple, Union
import logging

import numpy as np

from semsec.channel import (
    ChannelConfig, mmse_backward, mmse_equalize, normalize_power, normalize_power_backward,
    sample_channel, svd_precoder, transmit, transmit_backward,
)
from semsec.codec import (
    CodeShape, CodecArchitecture, TextCorpus, build_codec_networks, code_shape, decode,
    gauss_jam_encode, sample_gauss, sample_text_batch, semantic_encode, text_jam_encode,
)
from semsec.errors import ShapeError
from semsec.nn_core import Network
from semsec.superpose import PrecoderSet, superpose, superpose_backward

logger = logging.getLogger(__name__)

CODEC_NETS = ("se", "tje", "gje", "sd1", "sd2")
TRANSMITTER_NETS = ("se", "tje", "gje")
# Streams the environment draws from while running.
ENV_STREAMS = ("channel", "noise_leg", "noise_eve", "text", "gauss")
# Spawn keys of the named random streams derived from one master seed.
STREAM_OFFSETS = {
    "channel": 0, "noise_leg": 1, "noise_eve": 2, "init": 3, "data": 4,
    "ou": 5, "buffer": 6, "text": 7, "gauss": 8, "eval": 9,
}


def make_streams(master_seed: int, offsets: Dict[str, int] = None) -> Dict[str, np.random.Generator]:
    """
    Independent named generators from one master seed. Each stream is seeded
    with SeedSequence(master_seed, spawn_key=(offset,)), so drawing from one
    stream never shifts another's sequence.
    """
    offsets = STREAM_OFFSETS if offsets is None else offsets
    if len(set(offsets.values())) != len(offsets):
        raise ValueError(f"Stream offsets must be distinct, got {offsets}.")
    return {
        name: np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(offset,)))
        for name, offset in offsets.items()
    }


@dataclass
class Pass:
    """Every intermediate of one forward pass, kept for the backward pass."""
    X: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    S3: np.ndarray
    V: PrecoderSet
    Y: np.ndarray
    Y_norm: np.ndarray
    H_leg: np.ndarray
    H_eve: np.ndarray
    Y_hat_leg: np.ndarray
    Y_hat_eve: np.ndarray
    X_leg: np.ndarray
    X_eve: np.ndarray
    jamming: bool


class SemComSystem:
    """
    Alice, Bob and Eve wired together.

    Parameters
    ----------
    channel: ChannelConfig
        Antennas, power and link SNRs.
    image_shape: tuple
        (H, W, C) of the source images.
    cu: int
        The compression knob; sets L_c through ``code_shape()``.
    rngs: dict
        Named np.random.Generator streams. ``ENV_STREAMS`` must be present,
        plus "init" when nets is None.
    corpus: TextCorpus
        A loaded text-jamming corpus.
    arch: CodecArchitecture
        Codec layer widths.
    nets: dict
        Optional prebuilt {"se", "tje", "gje", "sd1", "sd2"} networks.

    Example
    -------
    | import numpy as np
    | import semsec
    |
    | rngs = semsec.make_streams(1)
    | corpus = semsec.TextCorpus()
    | corpus.load()
    | env = semsec.SemComSystem(semsec.ChannelConfig(), (32, 32, 3), 1, rngs, corpus)
    | X = semsec.synthetic_images(4, 32, 32, 3, rngs['data'])
    | p = env.forward(X, semsec.PrecoderSet.identity(4, 4))
    | print(p.X_leg.shape, p.X_eve.shape)
    """
    def __init__(self, channel: ChannelConfig, image_shape: Tuple[int, int, int], cu: int,
                 rngs: Dict[str, np.random.Generator], corpus: TextCorpus,
                 arch: CodecArchitecture = None, nets: Dict[str, Network] = None) -> None:
        self.channel = channel.validate()
        self.image_shape = tuple(image_shape)
        self.code: CodeShape = code_shape(cu, *self.image_shape, channel.n_m)
        self.arch = CodecArchitecture() if arch is None else arch
        self.rngs = rngs
        self.corpus = corpus
        if len(corpus) == 0:
            corpus.load()
        if nets is None:
            nets = build_codec_networks(self.image_shape, channel.n_n, self.code.l_c, self.arch, rngs["init"])
        missing = set(CODEC_NETS) - set(nets)
        if missing:
            raise KeyError(f"Missing codec networks: {sorted(missing)}.")
        self.nets = nets
        self._epoch_channels: Optional[Tuple[np.ndarray, np.ndarray]] = None
        return

    def __getitem__(self, name: str) -> Network:
        return self.nets[name]

    @property
    def n_m(self) -> int:
        return self.channel.n_m

    @property
    def action_dim(self) -> int:
        return 3 * self.channel.n_m * self.channel.n_n

    def new_epoch(self, rngs: Dict[str, np.random.Generator] = None) -> None:
        """Draw the per-epoch channels when channel.redraw == "epoch"."""
        if self.channel.redraw == "epoch":
            rng = (self.rngs if rngs is None else rngs)["channel"]
            self._epoch_channels = (sample_channel(self.channel, rng), sample_channel(self.channel, rng))
        return

    def draw_channels(self, batch: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Independent (H_leg, H_eve) for Bob's and Eve's links."""
        if self.channel.redraw == "epoch":
            if self._epoch_channels is None:
                self.new_epoch({"channel": rng})
            H_leg, H_eve = self._epoch_channels
            return np.broadcast_to(H_leg, (batch,) + H_leg.shape), np.broadcast_to(H_eve, (batch,) + H_eve.shape)
        return sample_channel(self.channel, rng, batch), sample_channel(self.channel, rng, batch)

    def forward(self, X: np.ndarray, precoders: Union[PrecoderSet, str], jamming: bool = True,
                noise: bool = True, rngs: Dict[str, np.random.Generator] = None) -> Pass:
        """
        Transmit an image batch to Bob and Eve.

        Parameters
        ----------
        X: np.ndarray
            (batch, H, W, C) images in [0, 1].
        precoders: PrecoderSet or "svd"
            Fixed (V1, V2, V3), or "svd" for the per-frame SVD baseline
            (V1 from Bob's channel, no jamming).
        jamming: bool
            If False, S2 = S3 = 0 and the jamming encoders are not run.
        noise: bool
            If False, both links are noiseless (receivers still use the
            configured sigma2).
        rngs: dict
            Override the environment streams, e.g. a fixed evaluation seed.

        Returns
        -------
        Pass
        """
        rngs = self.rngs if rngs is None else rngs
        n = X.shape[0]
        H_leg, H_eve = self.draw_channels(n, rngs["channel"])

        if isinstance(precoders, str):
            if precoders != "svd":
                raise ValueError(f'precoders must be a PrecoderSet or "svd", not {precoders!r}.')
            precoders = PrecoderSet.semantic_only(svd_precoder(H_leg))
            jamming = False

        S1 = semantic_encode(X, self.nets["se"])
        if S1.shape[1:] != (self.channel.n_n, self.code.l_c):
            raise ShapeError(f"S1 has shape {S1.shape[1:]}, expected {(self.channel.n_n, self.code.l_c)}.")
        if jamming:
            tokens = sample_text_batch(self.corpus, rngs["text"], self.arch.text_tokens, n)
            S2 = text_jam_encode(tokens, self.nets["tje"])
            S3 = gauss_jam_encode(sample_gauss(*self.image_shape, rngs["gauss"], batch=n), self.nets["gje"])
        else:
            S2 = np.zeros_like(S1)
            S3 = np.zeros_like(S1)

        Y = superpose(S1, S2, S3, precoders)
        P = self.channel.power
        Y_norm = normalize_power(Y, P)
        sigma2_leg, sigma2_eve = self.channel.sigma2_leg, self.channel.sigma2_eve
        R_leg = transmit(Y_norm, H_leg, sigma2_leg if noise else 0.0, rngs["noise_leg"])
        R_eve = transmit(Y_norm, H_eve, sigma2_eve if noise else 0.0, rngs["noise_eve"])
        Y_hat_leg = mmse_equalize(R_leg, H_leg, sigma2_leg, P)
        Y_hat_eve = mmse_equalize(R_eve, H_eve, sigma2_eve, P)
        X_leg = decode(Y_hat_leg, self.nets["sd1"])
        X_eve = decode(Y_hat_eve, self.nets["sd2"])
        return Pass(X, S1, S2, S3, precoders, Y, Y_norm, H_leg, H_eve,
                    Y_hat_leg, Y_hat_eve, X_leg, X_eve, jamming)

    def backward(self, p: Pass, grad_leg: Optional[np.ndarray], grad_eve: Optional[np.ndarray],
                 trainable: Iterable[str]) -> None:
        """
        Accumulate gradients of a loss with dL/dX_leg = grad_leg and
        dL/dX_eve = grad_eve (either may be None) into the trainable networks.

        ``p`` must come from the most recent forward() call. Backpropagation
        stops before the transmitter when no transmitter network is trainable.
        """
        trainable = set(trainable)
        unknown = trainable - set(CODEC_NETS)
        if unknown:
            raise KeyError(f"Unknown networks {sorted(unknown)}; choose from {CODEC_NETS}.")
        through_tx = bool(trainable & set(TRANSMITTER_NETS))
        P = self.channel.power

        g_norm = np.zeros_like(p.Y_norm)
        for grad, dec, H, sigma2 in (
            (grad_leg, "sd1", p.H_leg, self.channel.sigma2_leg),
            (grad_eve, "sd2", p.H_eve, self.channel.sigma2_eve),
        ):
            if grad is None or (dec not in trainable and not through_tx):
                continue
            g_hat = self.nets[dec].backward(grad)
            if through_tx:
                g_norm += transmit_backward(H, mmse_backward(H, sigma2, P, g_hat))

        if not through_tx:
            return
        g_S1, g_S2, g_S3 = superpose_backward(p.V, normalize_power_backward(p.Y, g_norm, P))
        if "se" in trainable:
            self.nets["se"].backward(g_S1)
        if p.jamming and "tje" in trainable:
            self.nets["tje"].backward(g_S2)
        if p.jamming and "gje" in trainable:
            self.nets["gje"].backward(g_S3)
        return

    def zero_grad(self) -> None:
        for net in self.nets.values():
            net.zero_grad()
        return
