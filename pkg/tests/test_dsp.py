import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sslse import dsp
from sslse.errors import InvalidInput, NumericalError, ShapeError

from helpers import make_tone


class TestWaveform:
    def test_rejects_stereo(self):
        with pytest.raises(InvalidInput):
            dsp.Waveform(np.zeros((10, 2)), 16000)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidInput):
            dsp.Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(InvalidInput):
            dsp.Waveform(np.zeros(10), 0)

    def test_duration(self):
        assert dsp.Waveform(np.zeros(16000), 16000).duration == 1.0


class TestWindow:
    def test_periodic_hann_values(self):
        n = 400
        w = dsp.periodic_hann(n)
        k = np.arange(n)
        expected = 0.5 * (1.0 - np.cos(2 * np.pi * k / n))
        assert np.allclose(w, expected, atol=1e-15)
        assert w[0] == 0.0

    def test_periodic_symmetry(self):
        w = dsp.periodic_hann(400)
        assert np.allclose(w[1:], w[1:][::-1], atol=1e-15)


class TestStft:
    def test_frame_geometry(self):
        spec = dsp.stft(dsp.Waveform(np.random.default_rng(0).standard_normal(20480), 16000))
        assert spec.magnitude.shape == (128, 201)
        assert spec.phase.shape == (128, 201)
        assert spec.n_frames == 128
        assert spec.fft_bins == 201

    def test_frame_count_is_floor_len_over_hop(self):
        for n in (160, 161, 20479, 20481):
            spec = dsp.stft(dsp.Waveform(np.zeros(max(n, 400)), 16000))
            assert spec.n_frames == max(n, 400) // 160

    def test_sine_peak_bin(self):
        # 1000 Hz at 16 kHz with a 400-point window lands on bin 1000/16000*400 = 25
        spec = dsp.stft(make_tone(freq=1000.0, modulated=False))
        assert int(np.argmax(spec.magnitude.mean(axis=0))) == 25

    def test_log1p_nonnegative(self):
        spec = dsp.stft(make_tone())
        assert np.all(spec.log1p_mag >= 0.0)
        assert np.allclose(spec.log1p_mag, np.log1p(spec.magnitude))


class TestRoundTrip:
    def test_random_signal_snr(self, rng):
        x = rng.standard_normal(20480)
        spec = dsp.stft(dsp.Waveform(x, 16000))
        y = dsp.istft(spec.magnitude, spec.phase, out_len=len(x))
        assert dsp.measured_snr_db(x, y) > 100.0

    def test_out_len_trim_and_default(self, rng):
        x = rng.standard_normal(4000)
        spec = dsp.stft(dsp.Waveform(x, 16000))
        assert len(dsp.istft(spec.magnitude, spec.phase, out_len=1234)) == 1234

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=10, deadline=None)
    def test_roundtrip_property(self, seed):
        x = np.random.default_rng(seed).standard_normal(3200)
        spec = dsp.stft(dsp.Waveform(x, 16000))
        y = dsp.istft(spec.magnitude, spec.phase, out_len=len(x))
        assert dsp.measured_snr_db(x, y) > 60.0

    def test_istft_rejects_uncovered_output(self):
        mag = np.zeros((2, 201))
        phase = np.zeros((2, 201))
        with pytest.raises(NumericalError):
            dsp.istft(mag, phase, out_len=100000)


class TestMixAtSnr:
    def test_exact_snr(self, rng):
        clean = dsp.Waveform(rng.standard_normal(8000), 16000)
        noise = dsp.Waveform(rng.standard_normal(8000), 16000)
        noisy = dsp.mix_at_snr(clean, noise, 10.0)
        got = dsp.measured_snr_db(clean.samples, clean.samples + (clean.samples - noisy.samples))
        # recover the additive noise and verify the realized SNR
        added = noisy.samples - clean.samples
        snr = 10.0 * np.log10(np.sum(clean.samples**2) / np.sum(added**2))
        assert abs(snr - 10.0) < 1e-9
        assert np.isfinite(got)

    @given(st.floats(-20.0, 30.0))
    @settings(max_examples=20, deadline=None)
    def test_snr_property(self, target):
        r = np.random.default_rng(1)
        clean = dsp.Waveform(r.standard_normal(2000), 16000)
        noise = dsp.Waveform(r.standard_normal(2000), 16000)
        noisy = dsp.mix_at_snr(clean, noise, target)
        added = noisy.samples - clean.samples
        snr = 10.0 * np.log10(np.sum(clean.samples**2) / np.sum(added**2))
        assert abs(snr - target) < 1e-6

    def test_short_noise_rejected(self, rng):
        with pytest.raises(InvalidInput):
            dsp.mix_at_snr(dsp.Waveform(np.ones(11), 16000), dsp.Waveform(np.ones(10), 16000), 0.0)


class TestResample:
    def test_downsample_length(self):
        x = dsp.Waveform(np.random.default_rng(0).standard_normal(20000), 16000)
        y = dsp.resample(x, 8000)
        assert y.sample_rate == 8000
        assert len(y) == 10000

    def test_odd_ratio_length(self):
        x = dsp.Waveform(np.zeros(16000), 16000)
        y = dsp.resample(x, 22050)
        assert len(y) == round(16000 * 22050 / 16000)

    def test_tone_survives(self):
        x = make_tone(duration=1.0, freq=1000.0, modulated=False)
        y = dsp.resample(x, 8000)
        spectrum = np.abs(np.fft.rfft(y.samples))
        peak_hz = np.argmax(spectrum) * 8000 / len(y)
        assert abs(peak_hz - 1000.0) < 2.0

    def test_dc_preserved(self):
        x = dsp.Waveform(np.full(8000, 0.5), 16000)
        y = dsp.resample(x, 10000)
        mid = y.samples[100:-100]
        assert np.max(np.abs(mid - 0.5)) < 1e-12

    def test_identity_rate(self):
        x = make_tone(duration=0.25)
        y = dsp.resample(x, x.sample_rate)
        assert np.array_equal(x.samples, y.samples)
