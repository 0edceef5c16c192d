import pytest
import numpy as np
import pandas as pd

from semsec.channel import (
    ChannelConfig, dump_channels_csv, mmse_backward, mmse_equalize, normalize_power,
    normalize_power_backward, sample_channel, snr_to_sigma2, svd_precoder, transmit,
    transmit_backward, zf_equalize,
)
from semsec.errors import ConfigError, NumericalError, ShapeError
from semsec.nn_core import check_gradients


def test_snr_to_sigma2():
    assert snr_to_sigma2(10, 1.0) == pytest.approx(0.1)
    assert snr_to_sigma2(0, 2.0) == pytest.approx(2.0)
    assert ChannelConfig(snr_leg_db=20, snr_eve_db=0).sigma2_leg == pytest.approx(0.01)
    with pytest.raises(ConfigError):
        snr_to_sigma2(10, 0.0)
    return


def test_channel_config_validation():
    with pytest.raises(ConfigError):
        ChannelConfig(n_m=4, n_n=2).validate()
    with pytest.raises(ConfigError):
        ChannelConfig(power=-1).validate()
    with pytest.raises(ConfigError):
        ChannelConfig(redraw="slot").validate()
    return


def test_sample_channel_statistics():
    rng = np.random.default_rng(0)
    H = sample_channel(ChannelConfig(), rng, batch=20000)
    assert H.shape == (20000, 4, 4)
    assert abs(H.mean()) < 0.01
    assert H.var() == pytest.approx(1.0, abs=0.02)
    assert sample_channel(ChannelConfig(n_m=2, n_n=2), rng).shape == (2, 2)
    return


def test_normalize_power_is_exact():
    rng = np.random.default_rng(1)
    Y = rng.standard_normal((50, 4, 8)) * rng.uniform(1e-3, 1e3, size=(50, 1, 1))
    for P in (0.5, 1.0, 3.0):
        power = np.sum(normalize_power(Y, P) ** 2, axis=(1, 2)) / 32
        assert np.max(np.abs(power - P)) < 1e-9
    return


def test_normalize_power_degenerate_frame():
    Y = np.ones((3, 4, 2))
    Y[1] = 0.0
    with pytest.raises(NumericalError):
        normalize_power(Y, 1.0)
    with pytest.raises(ShapeError):
        normalize_power(np.ones(4), 1.0)
    return


def test_normalize_power_backward():
    rng = np.random.default_rng(2)
    y = rng.standard_normal(2 * 4 * 3)
    G = rng.standard_normal((2, 4, 3))

    def loss():
        return float(np.sum(G * normalize_power(y.reshape(2, 4, 3), 1.5)))

    analytic = normalize_power_backward(y.reshape(2, 4, 3), G, 1.5).ravel()
    assert check_gradients([y], [analytic], loss) < 1e-5
    return


def test_transmit_noise_variance():
    rng = np.random.default_rng(3)
    Y = np.zeros((1000, 4, 25))
    Y[:, 0, 0] = 1.0
    H = sample_channel(ChannelConfig(), rng, batch=1000)
    R = transmit(Y, H, 0.1, rng)
    noise = R - H @ Y
    assert noise.var() == pytest.approx(0.1, rel=0.02)
    assert np.array_equal(transmit(Y, H, 0.0, rng), H @ Y)
    with pytest.raises(ShapeError):
        transmit(np.ones((3, 2)), np.ones((4, 4)), 0.1, rng)
    return


def test_transmit_backward_is_the_adjoint():
    rng = np.random.default_rng(4)
    H = rng.standard_normal((3, 4, 4))
    Y = rng.standard_normal((3, 4, 5))
    G = rng.standard_normal((3, 4, 5))
    assert np.sum(G * (H @ Y)) == pytest.approx(np.sum(transmit_backward(H, G) * Y))
    return


def test_mmse_matches_explicit_inverse():
    rng = np.random.default_rng(5)
    H = rng.standard_normal((4, 4))
    Y = rng.standard_normal((4, 8))
    explicit = H.T @ np.linalg.inv(H @ H.T + 0.1 * np.eye(4)) @ Y
    assert np.linalg.norm(mmse_equalize(Y, H, 0.1, 1.0) - explicit) < 1e-9
    # Batched input gives the same answer frame by frame.
    Hb = rng.standard_normal((5, 4, 4))
    Yb = rng.standard_normal((5, 4, 8))
    batched = mmse_equalize(Yb, Hb, 0.1, 1.0)
    for i in range(5):
        assert np.allclose(batched[i], mmse_equalize(Yb[i], Hb[i], 0.1, 1.0), atol=1e-12)
    return


def test_mmse_approaches_zf_at_high_snr():
    rng = np.random.default_rng(6)
    H = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    Y = rng.standard_normal((4, 8))
    assert np.allclose(mmse_equalize(Y, H, 1e-12, 1.0), zf_equalize(Y, H), atol=1e-8)
    return


def test_mmse_singular_noiseless_channel():
    H = np.ones((4, 4))
    with pytest.raises(NumericalError):
        mmse_equalize(np.ones((4, 2)), H, 0.0, 1.0)
    # Any positive noise variance regularizes the same channel.
    assert np.all(np.isfinite(mmse_equalize(np.ones((4, 2)), H, 0.1, 1.0)))
    with pytest.raises(ConfigError):
        mmse_equalize(np.ones((4, 2)), H, -0.1, 1.0)
    return


def test_mmse_backward():
    rng = np.random.default_rng(7)
    H = rng.standard_normal((2, 4, 4))
    G = rng.standard_normal((2, 4, 3))
    r = rng.standard_normal(2 * 4 * 3)

    def loss():
        return float(np.sum(G * mmse_equalize(r.reshape(2, 4, 3), H, 0.2, 1.0)))

    analytic = mmse_backward(H, 0.2, 1.0, G).ravel()
    assert check_gradients([r], [analytic], loss) < 1e-5
    return


def test_svd_precoder():
    rng = np.random.default_rng(8)
    H = rng.standard_normal((6, 4, 4))
    V = svd_precoder(H)
    assert V.shape == (6, 4, 4)
    eye = np.broadcast_to(np.eye(4), V.shape)
    assert np.allclose(np.swapaxes(V, 1, 2) @ V, eye, atol=1e-12)
    # H V has orthogonal columns with descending norms.
    HV = H @ V
    gram = np.swapaxes(HV, 1, 2) @ HV
    norms = np.sqrt(np.diagonal(gram, axis1=1, axis2=2))
    assert np.allclose(gram - gram * np.eye(4), 0.0, atol=1e-10)
    assert np.all(np.diff(norms, axis=1) <= 1e-12)
    with pytest.raises(NumericalError):
        svd_precoder(np.full((4, 4), np.nan))
    return


def test_dump_channels_csv(tmp_path):
    rng = np.random.default_rng(9)
    H = sample_channel(ChannelConfig(n_m=2, n_n=2), rng, batch=3)
    path = dump_channels_csv(H, tmp_path / "channels.csv")
    df = pd.read_csv(path)
    assert list(df.columns) == ["frame_id", "row", "col", "value"]
    assert len(df) == 12
    assert df["value"].to_numpy() == pytest.approx(H.ravel(), abs=1e-15)
    assert df.loc[5, ["frame_id", "row", "col"]].tolist() == [1, 0, 1]
    return
