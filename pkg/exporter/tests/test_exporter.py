import numpy as np
import pytest
from scipy.io import wavfile

# the primary package is imported in tests only, to validate that exported
# files conform to the .ssle interface it defines
from sslse.encoder import read_embedding_file

from ssle_exporter import ExportJob, JobError, export_layer_states, truncate_to_shorter
from ssle_exporter.cli import main
from ssle_exporter.exporter import load_model, model_stride, read_wav_mono_16k


@pytest.fixture(scope="module")
def exported(tiny_checkpoint, wav_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("emb")
    job = ExportJob(model_id=tiny_checkpoint,
                    wav_paths=sorted(wav_dir.glob("*.wav")), out_dir=out)
    paths = export_layer_states(job)
    return out, paths


class TestConformance:
    def test_three_wavs_pass_format_validation(self, exported):
        _, paths = exported
        clean_paths = [p for p in paths if "clean" in p.name]
        assert len(clean_paths) == 3
        for path in clean_paths:
            stack = read_embedding_file(path)
            assert stack.num_layers == 3  # 2 encoder layers + extractor
            assert stack.dim == 24
            assert stack.sample_rate == 16000

    def test_stride_from_conv_config(self, exported, tiny_checkpoint):
        _, paths = exported
        stack = read_embedding_file(paths[0])
        assert stack.stride_samples == 5 * 2 * 2

    def test_clean_noisy_frame_equality(self, exported):
        out, _ = exported
        for i in range(3):
            clean = read_embedding_file(out / f"utt{i}_clean.ssle")
            noisy = read_embedding_file(out / f"utt{i}_noisy.ssle")
            assert clean.num_frames == noisy.num_frames

    def test_reexport_is_byte_identical(self, exported, tiny_checkpoint, wav_dir, tmp_path):
        out, paths = exported
        job = ExportJob(model_id=tiny_checkpoint,
                        wav_paths=[wav_dir / "utt0_clean.wav"], out_dir=tmp_path)
        (again,) = export_layer_states(job)
        assert again.read_bytes() == (out / "utt0_clean.ssle").read_bytes()

    def test_no_extractor_drops_layer_zero(self, tiny_checkpoint, wav_dir, tmp_path):
        job = ExportJob(model_id=tiny_checkpoint,
                        wav_paths=[wav_dir / "utt0_clean.wav"], out_dir=tmp_path,
                        include_extractor=False)
        (path,) = export_layer_states(job)
        assert read_embedding_file(path).num_layers == 2


class TestErrors:
    def test_rate_mismatch_refused(self, tmp_path):
        wavfile.write(tmp_path / "bad.wav", 8000, np.zeros(1000, dtype=np.float32))
        with pytest.raises(JobError):
            read_wav_mono_16k(tmp_path / "bad.wav")

    def test_stereo_refused(self, tmp_path):
        wavfile.write(tmp_path / "st.wav", 16000, np.zeros((100, 2), dtype=np.float32))
        with pytest.raises(JobError):
            read_wav_mono_16k(tmp_path / "st.wav")

    def test_missing_checkpoint(self):
        with pytest.raises(JobError):
            load_model("/nonexistent/checkpoint")

    def test_empty_job(self, tiny_checkpoint):
        with pytest.raises(JobError):
            export_layer_states(ExportJob(model_id=tiny_checkpoint))


class TestTruncation:
    def test_truncate_to_shorter(self, caplog):
        a = np.zeros((3, 10, 4), dtype=np.float32)
        b = np.zeros((3, 9, 4), dtype=np.float32)
        with caplog.at_level("WARNING"):
            a2, b2 = truncate_to_shorter(a, b, label="utt0")
        assert a2.shape[1] == b2.shape[1] == 9
        assert "truncating" in caplog.text

    def test_equal_lengths_untouched(self):
        a = np.zeros((3, 10, 4), dtype=np.float32)
        b = np.ones((3, 10, 4), dtype=np.float32)
        a2, b2 = truncate_to_shorter(a, b)
        assert a2 is a and b2 is b


class TestCli:
    def test_end_to_end(self, tiny_checkpoint, wav_dir, tmp_path):
        code = main(["--model", tiny_checkpoint, "--wavs", str(wav_dir / "*_clean.wav"),
                     "--out", str(tmp_path)])
        assert code == 0
        assert len(list(tmp_path.glob("*.ssle"))) == 3

    def test_bad_model_exits_1(self, wav_dir, tmp_path):
        code = main(["--model", "/nonexistent", "--wavs", str(wav_dir / "*_clean.wav"),
                     "--out", str(tmp_path)])
        assert code == 1
