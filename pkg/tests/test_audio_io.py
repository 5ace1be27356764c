"""Tests for WAV I/O, grid arithmetic and the windowed-sinc resampler."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile
from scipy.signal import welch

from arbsr.audio_io import (
    SINC_HALF_WIDTH,
    AudioError,
    AudioSignal,
    CoordinateGrid,
    nearest_index,
    read_wav,
    sinc_resample,
    write_wav,
)


def _interior(n_out, ratio):
    """Output indices at least one kernel half-width away from either edge."""
    edge = int(np.ceil(SINC_HALF_WIDTH * ratio)) + 1
    return slice(edge, n_out - edge)


def _snr_db(ref, est):
    return 10 * np.log10(np.sum(ref ** 2) / np.sum((ref - est) ** 2))


class TestAudioSignal:
    def test_duration_and_grid(self):
        s = AudioSignal(np.zeros(8000), 16000)
        assert s.duration == 0.5
        assert s.grid.count == 8000 and s.grid.rate == 16000

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(AudioError):
            AudioSignal(np.array([0.0, bad]), 8000)

    @pytest.mark.parametrize("rate", [0, -1.0])
    def test_rejects_bad_rate(self, rate):
        with pytest.raises(AudioError):
            AudioSignal(np.zeros(4), rate)

    def test_rejects_multichannel_array(self):
        with pytest.raises(AudioError):
            AudioSignal(np.zeros((4, 2)), 8000)


class TestCoordinateGrid:
    def test_coords_strictly_increasing(self):
        g = CoordinateGrid(8000, origin=0.25, count=100)
        c = g.coords()
        assert c[0] == 0.25
        assert np.all(np.diff(c) > 0)
        np.testing.assert_allclose(np.diff(c), 1 / 8000)


class TestNearestIndex:
    def test_midpoint_prefers_smaller_index(self):
        assert nearest_index(0.5, CoordinateGrid(1.0, 0.0, 10)) == 0

    def test_exact_hit(self):
        g = CoordinateGrid(8000, 0.0, 10)
        assert nearest_index(g.coord(3), g) == 3

    def test_nearest(self):
        assert nearest_index(1.2, CoordinateGrid(1.0, 0.0, 10)) == 1

    def test_clamps_outside(self):
        g = CoordinateGrid(1.0, 0.0, 5)
        assert nearest_index(-3.0, g) == 0
        assert nearest_index(40.0, g) == 4

    def test_midpoints_at_realistic_rate(self):
        g = CoordinateGrid(8000, 0.0, 1000)
        mids = (np.arange(999) + 0.5) / 8000
        np.testing.assert_array_equal(nearest_index(mids, g), np.arange(999))

    def test_empty_grid(self):
        with pytest.raises(AudioError):
            nearest_index(0.0, CoordinateGrid(1.0, 0.0, 0))

    @given(st.integers(0, 999), st.floats(-0.499, 0.499))
    def test_stays_within_half_period(self, i, frac):
        g = CoordinateGrid(8000, 0.0, 1000)
        assert nearest_index(g.coord(i) + frac / 8000, g) == i


class TestWavRoundTrip:
    def test_int16_scaling(self, tmp_path):
        path = tmp_path / "a.wav"
        wavfile.write(path, 48000, np.array([16384, -32768, 0], dtype=np.int16))
        s = read_wav(path)
        assert s.rate == 48000
        np.testing.assert_array_equal(s.samples, [0.5, -1.0, 0.0])

    def test_float32_exact(self, tmp_path):
        x = np.random.default_rng(0).uniform(-1, 1, 1000).astype(np.float32).astype(np.float64)
        write_wav(AudioSignal(x, 22050), tmp_path / "f.wav", bit_depth=32)
        back = read_wav(tmp_path / "f.wav")
        assert back.rate == 22050
        assert np.max(np.abs(back.samples - x)) == 0

    def test_int16_quantisation_bound(self, tmp_path):
        x = np.random.default_rng(1).uniform(-0.99, 0.99, 1000)
        write_wav(AudioSignal(x, 8000), tmp_path / "q.wav", bit_depth=16)
        assert np.max(np.abs(read_wav(tmp_path / "q.wav").samples - x)) <= 1 / 32768

    def test_multichannel_mixdown(self, tmp_path):
        data = np.array([[0.5, -0.5], [1.0, 0.0]], dtype=np.float32)
        wavfile.write(tmp_path / "st.wav", 8000, data)
        np.testing.assert_allclose(read_wav(tmp_path / "st.wav").samples, [0.0, 0.5])

    def test_zero_length(self, tmp_path):
        wavfile.write(tmp_path / "e.wav", 8000, np.zeros(0, dtype=np.int16))
        with pytest.raises(AudioError, match="zero-length"):
            read_wav(tmp_path / "e.wav")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_wav(tmp_path / "nope.wav")

    def test_not_a_wav(self, tmp_path):
        (tmp_path / "junk.wav").write_bytes(b"hello world, not RIFF")
        with pytest.raises(AudioError):
            read_wav(tmp_path / "junk.wav")

    def test_nan_rejected_before_writing(self, tmp_path):
        s = AudioSignal(np.zeros(4), 8000)
        object.__setattr__(s, "samples", np.array([0.0, np.nan, 0.0, 0.0]))
        with pytest.raises(AudioError):
            write_wav(s, tmp_path / "n.wav")
        assert not (tmp_path / "n.wav").exists()

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_wav(AudioSignal(np.zeros(4), 8000), tmp_path / "missing_dir" / "x.wav")


class TestSincResample:
    def test_length_rule(self):
        s = AudioSignal(np.zeros(1001), 8000)
        assert len(sinc_resample(s, 16000)) == 2002
        assert len(sinc_resample(s, 11025)) == round(1001 * 11025 / 8000)

    def test_constant(self):
        out = sinc_resample(AudioSignal(np.full(2000, 0.3), 8000), 16000)
        np.testing.assert_allclose(out.samples[_interior(len(out), 2)], 0.3, atol=1e-4)

    def test_sine_matches_analytic(self):
        n = 4000
        x = np.sin(2 * np.pi * 440 * np.arange(n) / 8000)
        out = sinc_resample(AudioSignal(x, 8000), 16000)
        ref = np.sin(2 * np.pi * 440 * np.arange(len(out)) / 16000)
        sl = _interior(len(out), 2)
        assert np.max(np.abs(out.samples[sl] - ref[sl])) < 1e-3

    def test_round_trip_removes_upper_band(self):
        x = np.random.default_rng(3).standard_normal(48000)
        back = sinc_resample(sinc_resample(AudioSignal(x, 48000), 8000), 48000).samples
        back = back[_interior(len(back), 6)]
        f, p = welch(back, fs=48000, nperseg=4096)
        above = np.sum(p[f > 4000]) / np.sum(p)
        assert 10 * np.log10(above) <= -60

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x, y = rng.standard_normal(500), rng.standard_normal(500)
        a, b = 0.7, -1.3
        lhs = sinc_resample(AudioSignal(a * x + b * y, 8000), 12345).samples
        rhs = (a * sinc_resample(AudioSignal(x, 8000), 12345).samples
               + b * sinc_resample(AudioSignal(y, 8000), 12345).samples)
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_same_rate_identity(self):
        x = np.random.default_rng(5).standard_normal(300)
        out = sinc_resample(AudioSignal(x, 8000), 8000)
        assert np.max(np.abs(out.samples - x)) <= 1e-6

    def test_down_up_band_limited(self):
        # content well below the 4 kHz Nyquist of the intermediate rate
        t = np.arange(24000) / 48000
        x = np.sin(2 * np.pi * 500 * t) + 0.5 * np.sin(2 * np.pi * 2100 * t + 1.0)
        back = sinc_resample(sinc_resample(AudioSignal(x, 48000), 8000), 48000).samples
        sl = _interior(len(back), 6)
        assert _snr_db(x[sl], back[sl]) >= 60

    @pytest.mark.parametrize("rate", [0, -8000])
    def test_rejects_bad_rate(self, rate):
        with pytest.raises(AudioError):
            sinc_resample(AudioSignal(np.zeros(10), 8000), rate)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(20, 400), st.floats(1000, 96000))
    def test_length_property(self, n, target):
        out = sinc_resample(AudioSignal(np.zeros(n), 8000), target)
        assert len(out) == round(n * target / 8000)
