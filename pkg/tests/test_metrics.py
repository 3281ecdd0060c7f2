import csv
import os
import stat

import numpy as np
import pytest

from sslse import data, dsp, metrics
from sslse.errors import AdapterError, InvalidInput, PesqUnavailable

from helpers import make_tone


@pytest.fixture(scope="module")
def speechlike():
    return make_tone(duration=2.0, freq=300.0)


@pytest.fixture(scope="module")
def degraded(speechlike):
    noise = dsp.Waveform(np.random.default_rng(5).standard_normal(len(speechlike)), 16000)
    return dsp.mix_at_snr(speechlike, noise, 5.0)


class TestIdentityLaws:
    def test_stoi_self(self, speechlike):
        assert metrics.stoi(speechlike, speechlike) == pytest.approx(1.0, abs=1e-6)

    def test_segsnr_self_hits_clamp(self, speechlike):
        assert metrics.segmental_snr(speechlike, speechlike) == 35.0

    def test_llr_self(self, speechlike):
        assert metrics.llr(speechlike, speechlike) <= 1e-8

    def test_wss_self(self, speechlike):
        assert metrics.wss(speechlike, speechlike) <= 1e-8

    def test_segsnr_inverted_signal(self, speechlike):
        flipped = dsp.Waveform(-speechlike.samples, 16000)
        # noise power is 4x signal power in every frame: 10*log10(1/4)
        assert metrics.segmental_snr(speechlike, flipped) == pytest.approx(-6.0206, abs=1e-3)


class TestOrdering:
    def test_stoi_degrades_with_noise(self, speechlike, degraded):
        noise = dsp.Waveform(np.random.default_rng(6).standard_normal(len(speechlike)), 16000)
        worse = dsp.mix_at_snr(speechlike, noise, -10.0)
        s_mid = metrics.stoi(speechlike, degraded)
        s_bad = metrics.stoi(speechlike, worse)
        assert s_bad < s_mid < 1.0

    def test_distortion_metrics_positive_for_noise(self, speechlike, degraded):
        assert metrics.llr(speechlike, degraded) > 0.01
        assert metrics.wss(speechlike, degraded) > 1.0
        assert metrics.segmental_snr(speechlike, degraded) < 35.0

    def test_llr_asymmetric(self, speechlike, degraded):
        assert metrics.llr(speechlike, degraded) != metrics.llr(degraded, speechlike)


class TestComposites:
    def test_csig_clamps_at_five(self):
        # 3.093 + 0.603*4.5 = 5.8065 before the clamp
        csig, _, _ = metrics.composite_scores(4.5, 0.0, 0.0, 0.0)
        assert csig == 5.0

    def test_intercepts(self):
        csig, cbak, covl = metrics.composite_scores(0.0, 0.0, 0.0, 0.0)
        assert csig == pytest.approx(3.093, abs=1e-12)
        assert cbak == pytest.approx(1.634, abs=1e-12)
        assert covl == pytest.approx(1.594, abs=1e-12)

    def test_lower_clamp(self):
        _, cbak, _ = metrics.composite_scores(0.0, 0.0, 500.0, -10.0)
        assert cbak == 1.0


class TestPesqAdapter:
    def _fake_tool(self, tmp_path, body="echo 'MOS-LQO = 3.25'"):
        script = tmp_path / "fakepesq.sh"
        script.write_text(f"#!/bin/sh\n{body}\n")
        script.chmod(script.stat().st_mode | stat.S_IXUSR)
        return script

    def _wavs(self, tmp_path):
        w = make_tone(duration=0.1)
        a, b = tmp_path / "a.wav", tmp_path / "b.wav"
        data.write_wav(w, a)
        data.write_wav(w, b)
        return a, b

    def test_parse_and_cache(self, tmp_path):
        script = self._fake_tool(tmp_path)
        adapter = metrics.PesqAdapter(f"{script} {{clean}} {{degraded}}")
        a, b = self._wavs(tmp_path)
        assert adapter.score(a, b) == 3.25
        assert adapter.score(a, b) == 3.25
        assert adapter.misses == 1
        assert adapter.hits == 1

    def test_command_failure(self, tmp_path):
        script = self._fake_tool(tmp_path, body="exit 3")
        adapter = metrics.PesqAdapter(f"{script} {{clean}} {{degraded}}")
        a, b = self._wavs(tmp_path)
        with pytest.raises(AdapterError):
            adapter.score(a, b)

    def test_unparseable_output(self, tmp_path):
        script = self._fake_tool(tmp_path, body="echo no numbers here")
        adapter = metrics.PesqAdapter(f"{script} {{clean}} {{degraded}}")
        a, b = self._wavs(tmp_path)
        with pytest.raises(AdapterError):
            adapter.score(a, b)

    def test_empty_command_unavailable(self):
        with pytest.raises(PesqUnavailable):
            metrics.PesqAdapter("")

    def test_pesq_external_without_adapter(self, tmp_path):
        a, b = self._wavs(tmp_path)
        with pytest.raises(PesqUnavailable):
            metrics.pesq_external(a, b, None)


class TestEvaluate:
    def test_report_without_pesq(self, speechlike, degraded, tmp_path):
        report = metrics.evaluate([("u0", speechlike, degraded),
                                   ("u1", speechlike, speechlike)])
        assert set(report.per_utterance) == {"u0", "u1"}
        assert report.per_utterance["u1"]["stoi"] == pytest.approx(1.0, abs=1e-6)
        assert "pesq" not in report.means
        report.write_csv(tmp_path / "scores.csv")
        rows = list(csv.reader(open(tmp_path / "scores.csv")))
        assert rows[0][0] == "utterance"
        assert len(rows) == 3

    def test_threaded_matches_serial(self, speechlike, degraded):
        items = [("u0", speechlike, degraded), ("u1", speechlike, speechlike)]
        serial = metrics.evaluate(items)
        os.environ["SSLSE_THREADS"] = "2"
        try:
            threaded = metrics.evaluate(items)
        finally:
            del os.environ["SSLSE_THREADS"]
        assert serial.means == threaded.means

    def test_length_mismatch_rejected(self, speechlike):
        short = dsp.Waveform(speechlike.samples[:-5], 16000)
        with pytest.raises(InvalidInput):
            metrics.stoi(speechlike, short)
