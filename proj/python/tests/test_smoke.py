import numpy as np
import pytest

import ckmforge as ckm


def smooth_map(n=16):
    r, c = np.mgrid[0:n, 0:n]
    return 0.5 + 0.3 * np.sin(r / 4.0) * np.cos(c / 5.0)


def test_degrade_shapes():
    x = smooth_map()
    inp = ckm.degrade(x, "inpaint", noise_std=0.0, mask_frac=0.25, seed=3)
    assert inp.task == "inpaint"
    assert inp.shape == (16, 16)
    assert inp.observed.sum() == 16 * 16 - 4 * 4
    assert len(inp.values) == 16 * 16 - 16
    sr = ckm.degrade(x, "sr", noise_std=0.0, factor=4)
    assert len(sr.values) == 16
    assert sr.values[0] == pytest.approx(x[:4, :4].mean())
    den = ckm.degrade(x, "denoise", noise_std=0.0)
    np.testing.assert_array_equal(den.zero_filled(), x)


def test_baselines_exact_on_noise_free_denoise():
    x = smooth_map()
    y = ckm.degrade(x, "denoise", noise_std=0.0)
    for m in ["ls", "knn", "idw", "kriging", "bilinear", "bicubic"]:
        np.testing.assert_allclose(ckm.reconstruct(m, y), x, atol=1e-12)


def test_inpaint_baselines_beat_zero_fill():
    x = smooth_map()
    y = ckm.degrade(x, "inpaint", noise_std=0.0, seed=1)
    zero = ckm.evaluate([x], [y.zero_filled()])["mse_pixel"]
    for m in ["knn", "idw", "kriging"]:
        assert ckm.evaluate([x], [ckm.reconstruct(m, y)])["mse_pixel"] < zero


def test_metrics():
    x = smooth_map()
    r = ckm.evaluate([x], [x])
    assert r["mse_pixel"] == 0.0
    assert r["psnr_db"] == 100.0
    assert r["ssim"] == pytest.approx(1.0)
    assert r["fd"] is None
    shifted = np.clip(x + 0.1, 0, 1)
    r = ckm.evaluate([x], [shifted])
    assert r["mse_gain"] == pytest.approx(r["mse_pixel"] * 100.0**2)
    assert ckm.evaluate([x], [shifted], value_map="ckmimagenet")["mse_gain"] == pytest.approx(r["mse_pixel"] * 200.0**2)


def test_errors():
    with pytest.raises(ValueError):
        ckm.degrade(np.zeros((4, 4, 2)), "denoise")
    with pytest.raises(ValueError):
        ckm.reconstruct("nope", ckm.degrade(smooth_map(), "denoise"))
    with pytest.raises(ckm.UnsupportedError):
        ckm.reconstruct("bilinear", ckm.degrade(smooth_map(), "inpaint"))
    with pytest.raises(ValueError):
        ckm.evaluate([smooth_map()], [smooth_map(8)])


def test_corpus_roundtrip(tmp_path):
    h1 = ckm.generate_corpus(tmp_path / "a", n_maps=6, size=32, seed=4, train_fraction=0.5)
    h2 = ckm.generate_corpus(tmp_path / "b", n_maps=6, size=32, seed=4, train_fraction=0.5)
    assert h1 == h2
    test = ckm.load_split(tmp_path / "a" / "manifest.json", "test")
    assert len(test) == 3
    assert all(t.shape == (32, 32) and t.min() >= 0 and t.max() <= 1 for t in test)
    obs = ckm.degrade(test[0], "inpaint", seed=2)
    obs.save(tmp_path / "o.obs")
    back = ckm.Observation.load(tmp_path / "o.obs")
    assert back.values == obs.values
    with pytest.raises(OSError):
        ckm.load_split(tmp_path / "missing.json")


def test_methods_registry():
    assert "ckmdiff" in ckm.methods()
    assert "kriging" in ckm.methods()
