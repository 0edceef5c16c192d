from fractions import Fraction

import matplotlib.image
import pytest
import numpy as np

from semsec.codec import (
    CodecArchitecture, TextCorpus, build_codec_networks, check_images, code_shape,
    constant_predictor_psnr, decode, gauss_jam_encode, load_images, psnr_from_mse, sample_gauss,
    sample_text, sample_text_batch, semantic_encode, synthetic_images, text_jam_encode,
)
from semsec.errors import ConfigError, ShapeError

SMALL = CodecArchitecture(hidden=16, jam_hidden=8, text_tokens=5, embed_dim=3, vocab=64)


def test_code_shape():
    shape = code_shape(1, 32, 32, 3, 4)
    assert shape.l_c == 8
    assert shape.cr == Fraction(1, 96)
    assert code_shape(5, 32, 32, 3, 4).l_c == 40
    # N_m*L_c/(H*W*C) equals the compression ratio.
    for cu in range(1, 6):
        s = code_shape(cu, 32, 32, 3, 4)
        assert Fraction(4 * s.l_c, 32 * 32 * 3) == s.cr
    with pytest.raises(ConfigError):
        code_shape(0, 32, 32, 3, 4)
    with pytest.raises(ConfigError):
        code_shape(1, 30, 30, 3, 4)
    return


def test_encoders_and_decoders():
    rng = np.random.default_rng(0)
    nets = build_codec_networks((8, 8, 3), 2, 1, SMALL, rng)
    assert set(nets) == {"se", "tje", "gje", "sd1", "sd2"}
    X = synthetic_images(4, 8, 8, 3, rng)
    S1 = semantic_encode(X, nets["se"])
    S2 = text_jam_encode(rng.integers(0, SMALL.vocab, size=(4, SMALL.text_tokens)), nets["tje"])
    S3 = gauss_jam_encode(sample_gauss(8, 8, 3, rng, batch=4), nets["gje"])
    assert S1.shape == S2.shape == S3.shape == (4, 2, 1)
    X_hat = decode(S1, nets["sd1"])
    assert X_hat.shape == X.shape
    assert X_hat.min() >= 0.0 and X_hat.max() <= 1.0
    with pytest.raises(ShapeError):
        decode(S1[0], nets["sd1"])
    return


def test_codec_networks_are_seeded():
    a = build_codec_networks((8, 8, 3), 2, 1, SMALL, np.random.default_rng(5))
    b = build_codec_networks((8, 8, 3), 2, 1, SMALL, np.random.default_rng(5))
    for name in a:
        assert np.array_equal(a[name].params[0], b[name].params[0])
    # Eve's decoder mirrors Bob's layout but not his weights.
    assert a["sd1"].layers == a["sd2"].layers
    assert not np.array_equal(a["sd1"].params[0], a["sd2"].params[0])
    return


def test_check_images():
    with pytest.raises(ValueError):
        check_images(np.full((1, 2, 2, 3), 1.5))
    with pytest.raises(ShapeError):
        check_images(np.zeros((2, 2, 3)))
    return


def test_bundled_corpus():
    corpus = TextCorpus(vocab_size=128)
    assert len(corpus) == 0
    ids = corpus.load()
    assert len(ids) > 1000
    assert ids.min() >= 0 and ids.max() < 128
    rng = np.random.default_rng(0)
    batch = sample_text_batch(corpus, rng, 16, 10)
    assert batch.shape == (10, 16)
    sample = sample_text(corpus, np.random.default_rng(0), 16)
    assert np.array_equal(sample.token_ids, sample_text_batch(corpus, np.random.default_rng(0), 16, 1)[0])
    return


def test_corpus_windows_are_consecutive(tmp_path):
    path = tmp_path / "corpus.txt"
    path.write_text("a b c d e f g")
    corpus = TextCorpus(path, vocab_size=10 ** 9)
    ids = corpus.load()
    window = sample_text(corpus, np.random.default_rng(3), 3).token_ids
    start = int(np.flatnonzero(ids == window[0])[0])
    assert np.array_equal(window, ids[start:start + 3])
    with pytest.raises(ValueError):
        sample_text(corpus, np.random.default_rng(0), 8)
    return


def test_corpus_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        TextCorpus(tmp_path / "nope.txt").load()
    return


def test_synthetic_images():
    X = synthetic_images(6, 16, 12, 3, np.random.default_rng(0))
    assert X.shape == (6, 16, 12, 3)
    assert X.min() > 0.0 and X.max() < 1.0
    assert X.std() > 0.05
    assert np.array_equal(X, synthetic_images(6, 16, 12, 3, np.random.default_rng(0)))
    return


def test_load_cifar_binary(tmp_path):
    rng = np.random.default_rng(0)
    records = rng.integers(0, 256, size=(3, 1 + 3072), dtype=np.uint8)
    path = tmp_path / "data_batch_1.bin"
    records.tofile(path)
    X = load_images(path)
    assert X.shape == (3, 32, 32, 3)
    # Channel-major planes: red first, then green, then blue.
    assert X[1, 0, 0, 0] == records[1, 1] / 255
    assert X[1, 0, 0, 1] == records[1, 1 + 1024] / 255
    assert X[2, 0, 1, 2] == records[2, 1 + 2048 + 1] / 255
    assert load_images(tmp_path, limit=2).shape[0] == 2
    return


def test_load_cifar_trailing_bytes(tmp_path):
    path = tmp_path / "partial.bin"
    np.zeros(3073 + 10, dtype=np.uint8).tofile(path)
    with pytest.warns(UserWarning, match="trailing bytes"):
        X = load_images(path)
    assert X.shape[0] == 1
    return


def test_load_png_directory(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(3):
        matplotlib.image.imsave(tmp_path / f"{i}.png", rng.uniform(size=(8, 8, 3)))
    X = load_images(tmp_path)
    assert X.shape == (3, 8, 8, 3)
    assert X.dtype == np.float64
    assert X.min() >= 0.0 and X.max() <= 1.0
    with pytest.raises(FileNotFoundError):
        load_images(tmp_path / "missing")
    return


def test_load_grayscale_png_directory(tmp_path, monkeypatch):
    gray = np.linspace(0, 1, 64).reshape(8, 8)
    pixels = {"0.png": gray, "1.png": np.stack([gray, np.ones((8, 8))], axis=-1),
              "2.png": np.dstack([gray, gray, gray, np.ones((8, 8))])}
    for name in pixels:
        (tmp_path / name).write_bytes(b"")
    monkeypatch.setattr(matplotlib.image, "imread", lambda p: pixels[p.name])
    X = load_images(tmp_path)
    assert X.shape == (3, 8, 8, 3)
    for x in X:
        assert np.array_equal(x, np.repeat(gray[..., np.newaxis], 3, axis=-1))
    pixels["0.png"] = np.zeros((8, 8, 5))
    with pytest.raises(ShapeError):
        load_images(tmp_path)
    return


def test_psnr_from_mse():
    assert psnr_from_mse(0.01) == pytest.approx(20.0)
    assert psnr_from_mse(0.0) == pytest.approx(100.0)
    return


def test_constant_predictor_psnr():
    rng = np.random.default_rng(0)
    train = rng.uniform(size=(50, 4, 4, 3))
    test = rng.uniform(size=(20, 4, 4, 3))
    expected = psnr_from_mse(np.mean((test - train.mean(axis=0)) ** 2))
    assert constant_predictor_psnr(train, test) == pytest.approx(expected)
    # Uniform pixels give an MSE near 1/12.
    assert constant_predictor_psnr(train, test) == pytest.approx(10 * np.log10(12), abs=0.5)
    return
