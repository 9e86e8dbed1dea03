import numpy as np
import pytest

from svlab import audiofeat as af
from svlab.errors import DataError, FormatError, UsageError


def write_pcm(path, samples):
    af.write_wav(path, np.asarray(samples, dtype=np.float64))


def test_load_wav_one_second(tmp_path):
    p = tmp_path / "a.wav"
    write_pcm(p, np.zeros(16000))
    u = af.load_wav(p)
    assert u.duration_s == 1.0
    assert (u.samples == 0.0).all()


def test_load_wav_full_scale_negative(tmp_path):
    p = tmp_path / "b.wav"
    write_pcm(p, [-1.0, 0.0, 0.5])
    u = af.load_wav(p)
    assert u.samples[0] == -1.0
    assert u.samples[1] == 0.0
    np.testing.assert_allclose(u.samples[2], 0.5, atol=1 / 32768)


def test_load_wav_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(0)
    pcm = rng.integers(-32768, 32768, size=500)
    p = tmp_path / "c.wav"
    write_pcm(p, pcm / 32768.0)
    u = af.load_wav(p)
    np.testing.assert_array_equal(u.samples * 32768.0, pcm)


def test_load_wav_rejects_wrong_rate(tmp_path):
    import wave
    p = tmp_path / "bad.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\x00\x00" * 100)
    with pytest.raises(FormatError, match="sample rate"):
        af.load_wav(p)


def test_load_wav_rejects_stereo(tmp_path):
    import wave
    p = tmp_path / "st.wav"
    with wave.open(str(p), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00\x00\x00\x00" * 100)
    with pytest.raises(FormatError, match="channels"):
        af.load_wav(p)


def test_load_wav_rejects_garbage(tmp_path):
    p = tmp_path / "junk.wav"
    p.write_bytes(b"not a wave file at all")
    with pytest.raises(FormatError):
        af.load_wav(p)


def utt(samples, uid="u"):
    return af.Utterance(id=uid, speaker_id="s", samples=np.asarray(samples, float))


def test_fbank_frame_count_one_second():
    f = af.fbank(utt(np.random.default_rng(1).standard_normal(16000)))
    assert f.values.shape == (80, 98)


@pytest.mark.parametrize("n", [400, 401, 560, 16000, 44173])
def test_fbank_frame_count_formula(n):
    f = af.fbank(utt(np.random.default_rng(2).standard_normal(n)))
    assert f.values.shape[1] == 1 + (n - 400) // 160


def test_fbank_too_short():
    with pytest.raises(DataError, match="shorter"):
        af.fbank(utt(np.zeros(399)))


def test_fbank_rows_mean_normalized():
    f = af.fbank(utt(np.random.default_rng(3).standard_normal(8000)))
    assert np.abs(f.values.mean(axis=1)).max() <= 1e-9


def test_fbank_sine_hits_nearest_mel_bin():
    t = np.arange(16000) / af.SAMPLE_RATE
    sine = 0.5 * np.sin(2 * np.pi * 1000.0 * t)
    u = utt(sine)
    # recompute the pre-normalization row means
    x = u.samples
    T = af.num_frames(len(x))
    idx = np.arange(400)[None, :] + 160 * np.arange(T)[:, None]
    spec = np.fft.rfft(x[idx] * np.hamming(400), n=512, axis=1)
    mel = (spec.real ** 2 + spec.imag ** 2) @ af._mel_filterbank().T
    row_mean = np.log(np.maximum(mel, 1e-10)).mean(axis=0)
    centers = af.mel_center_frequencies()
    assert row_mean.argmax() == np.abs(centers - 1000.0).argmin()


def test_fbank_deterministic():
    x = np.random.default_rng(4).standard_normal(5000)
    a = af.fbank(utt(x)).values
    b = af.fbank(utt(x)).values
    assert (a == b).all()


def feat(F=80, T=50, fill=1.0):
    return af.FeatureMatrix(utt_id="u", values=np.full((F, T), fill))


def test_spec_augment_identity_when_zero_width():
    class ZeroRng:
        def integers(self, lo, hi):
            return lo
    out = af.spec_augment(feat(), ZeroRng())
    np.testing.assert_array_equal(out.values, feat().values)


def test_spec_augment_max_freq_mask_count():
    class MaxFreq:
        def __init__(self):
            self.calls = 0
        def integers(self, lo, hi):
            self.calls += 1
            return 10 if self.calls == 1 else lo
    out = af.spec_augment(feat(T=50), MaxFreq())
    assert int((out.values == 0.0).sum()) == 10 * 50


def test_spec_augment_idempotent_on_zeros():
    z = af.FeatureMatrix(utt_id="u", values=np.zeros((80, 40)))
    out = af.spec_augment(z, np.random.default_rng(5))
    np.testing.assert_array_equal(out.values, z.values)


def test_spec_augment_masks_within_bounds():
    rng = np.random.default_rng(6)
    base = af.FeatureMatrix(utt_id="u", values=np.ones((80, 30)))
    for _ in range(50):
        out = af.spec_augment(base, rng)
        zero_rows = (out.values == 0.0).all(axis=1).sum()
        zero_cols = (out.values == 0.0).all(axis=0).sum()
        assert zero_rows <= 10 and zero_cols <= 5


def test_crop_two_seconds():
    f = af.FeatureMatrix(utt_id="u", values=np.random.default_rng(7)
                         .standard_normal((80, 300)))
    out = af.crop(f, 2.0, np.random.default_rng(8))
    assert out.values.shape == (80, 200)


def test_crop_full_length_identity():
    vals = np.random.default_rng(9).standard_normal((80, 120))
    f = af.FeatureMatrix(utt_id="u", values=vals)
    out = af.crop(f, 1.2, np.random.default_rng(10))
    np.testing.assert_array_equal(out.values, vals)


def test_crop_wraps_cyclically():
    vals = np.arange(98, dtype=float)[None, :].repeat(80, axis=0)
    f = af.FeatureMatrix(utt_id="u", values=vals)
    out = af.crop(f, 3.0, np.random.default_rng(11))
    assert out.values.shape == (80, 300)
    start = int(out.values[0, 0])
    expect = (start + np.arange(300)) % 98
    np.testing.assert_array_equal(out.values[0], expect)


def test_augment_clean_identity():
    u = utt(np.random.default_rng(12).standard_normal(4000))
    out = af.augment(u, "clean", np.random.default_rng(13))
    np.testing.assert_array_equal(out.samples, u.samples)


@pytest.mark.parametrize("kind", ["noise", "music-like", "babble-like"])
def test_augment_additive_snr_exact(kind):
    rng = np.random.default_rng(14)
    x = rng.standard_normal(16000) * 0.2
    u = utt(x)

    class FixedSnr:
        def __init__(self, inner):
            self.inner = inner
            self.first_uniform = True
        def uniform(self, lo, hi, *a, **k):
            if self.first_uniform and (lo, hi) == (5.0, 20.0):
                self.first_uniform = False
                return 20.0
            return self.inner.uniform(lo, hi, *a, **k)
        def __getattr__(self, name):
            return getattr(self.inner, name)

    out = af.augment(u, kind, FixedSnr(np.random.default_rng(15)))
    noise = out.samples - x
    snr = 10 * np.log10(np.mean(x ** 2) / np.mean(noise ** 2))
    assert abs(snr - 20.0) <= 0.1


def test_augment_reverb_unit_ir_identity():
    x = np.random.default_rng(16).standard_normal(2048)
    ir = np.zeros(64)
    ir[0] = 1.0
    y = af.convolve_ir(x, ir)
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_augment_reverb_keeps_length():
    u = utt(np.random.default_rng(17).standard_normal(8000))
    out = af.augment(u, "reverb", np.random.default_rng(18))
    assert len(out.samples) == 8000
    assert not np.allclose(out.samples, u.samples)


def test_augment_unknown_kind():
    with pytest.raises(UsageError):
        af.augment(utt(np.zeros(100)), "chorus", np.random.default_rng(0))


def test_feature_cache_roundtrip(tmp_path):
    rng = np.random.default_rng(19)
    feats = [("utt-1", rng.standard_normal((80, 13))),
             ("another/utt", rng.standard_normal((80, 7)))]
    p = tmp_path / "cache.svfb"
    af.write_feature_cache(p, feats)
    back = af.read_feature_cache(p)
    assert list(back) == ["utt-1", "another/utt"]
    for uid, vals in feats:
        np.testing.assert_array_equal(back[uid], vals)


def test_feature_cache_bad_magic(tmp_path):
    p = tmp_path / "bad.svfb"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        af.read_feature_cache(p)


def test_feature_cache_truncated(tmp_path):
    rng = np.random.default_rng(20)
    p = tmp_path / "t.svfb"
    af.write_feature_cache(p, [("u", rng.standard_normal((4, 4)))])
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(FormatError, match="truncated"):
        af.read_feature_cache(p)
