import math

import numpy as np
import pytest
import torch

from litetts import dataio
from litetts.errors import AudioError, ManifestError

from conftest import render_tone_utterance, write_corpus


def test_load_manifest_empty(tmp_path, audio_cfg):
    path = tmp_path / "empty.tsv"
    path.write_text("#phonemes: a\n#speakers: s\n#languages: l\n")
    manifest = dataio.load_manifest(path)
    assert len(manifest) == 0
    assert len(manifest.phoneme_vocab) == 1


def test_load_manifest_missing_headers(tmp_path):
    path = tmp_path / "p.tsv"
    path.write_text("#phonemes: a\n")
    with pytest.raises(ManifestError, match="speakers"):
        dataio.load_manifest(path)


def test_load_manifest_duration_phoneme_mismatch(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text(
        "#phonemes: a,b\n#speakers: s\n#languages: l\n"
        "x.wav\ta,b\t3\t100.0\ts\tl\n"
    )
    with pytest.raises(ManifestError, match="entry 0"):
        dataio.load_manifest(path)


def test_load_manifest_bad_field_count_names_line(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("#phonemes: a\n#speakers: s\n#languages: l\nx.wav\ta\t1\n")
    with pytest.raises(ManifestError, match=":4"):
        dataio.load_manifest(path)


def test_load_manifest_undeclared_symbol(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text(
        "#phonemes: a\n#speakers: s\n#languages: l\n"
        "x.wav\ta,zz\t1,2\t100.0,100.0\ts\tl\n"
    )
    with pytest.raises(ManifestError, match="zz"):
        dataio.load_manifest(path)


def test_load_manifest_three_line_fixture(tmp_path, audio_cfg):
    # hand count: 3 entries, 4 phonemes, 2 speakers, 1 language
    path = write_corpus(tmp_path, audio_cfg,
                        speakers={"s1": 110.0, "s2": 150.0}, language="xx",
                        symbols=["xx:p0", "xx:p1", "xx:p2", "xx:p3"],
                        n_utterances=3, seed=5)
    manifest = dataio.load_manifest(path, audio_cfg)
    assert len(manifest) == 3
    assert len(manifest.phoneme_vocab) == 4
    assert len(manifest.speaker_vocab) == 2
    assert len(manifest.language_vocab) == 1
    # declared order defines ids
    assert manifest.speaker_vocab.id("s1") == 0
    assert manifest.speaker_vocab.id("s2") == 1


def test_manifest_duration_frame_check(tmp_path, audio_cfg):
    wav, _ = render_tone_utterance(["xx:p0"], [10], 120.0, audio_cfg)
    dataio.write_wav(tmp_path / "u.wav", wav, audio_cfg.sample_rate)
    path = tmp_path / "m.tsv"
    path.write_text(
        "#phonemes: xx:p0\n#speakers: s\n#languages: l\n"
        "u.wav\txx:p0\t99\t" + ",".join(["120.0"] * 10) + "\ts\tl\n"
    )
    with pytest.raises(ManifestError, match="frames"):
        dataio.load_manifest(path, audio_cfg)


# ---------------------------------------------------------------------------
# Pitch quantization
# ---------------------------------------------------------------------------


def test_quantize_center_bin():
    stats = dataio.PitchStats(mean=150.0, std=20.0)
    bins = dataio.quantize_pitch(np.array([150.0]), stats)
    assert bins[0] == 128  # z = 0 falls in the middle voiced bin


def test_quantize_unvoiced_reserved_bin():
    stats = dataio.PitchStats(mean=150.0, std=20.0)
    assert dataio.quantize_pitch(np.array([0.0]), stats)[0] == 0


def test_quantize_clip_bounds():
    stats = dataio.PitchStats(mean=150.0, std=20.0)
    # z = -7.45 clips to -3 -> bin 1; z = +100 clips to +3 -> bin 255
    bins = dataio.quantize_pitch(np.array([1.0, 150.0 + 100 * 20]), stats)
    assert bins[0] == 1 and bins[1] == 255


def test_quantize_zero_std_rejected():
    with pytest.raises(ManifestError, match="std"):
        dataio.quantize_pitch(np.array([100.0]), dataio.PitchStats(mean=100.0, std=0.0))


def test_quantize_monotone_and_in_range():
    stats = dataio.PitchStats(mean=140.0, std=30.0)
    rng = np.random.default_rng(3)
    f0 = np.sort(rng.uniform(1.0, 400.0, size=500))
    bins = dataio.quantize_pitch(f0, stats)
    assert np.all(np.diff(bins) >= 0)
    assert bins.min() >= 1 and bins.max() <= 255
    mixed = np.concatenate([f0, np.zeros(5)])
    assert np.all((dataio.quantize_pitch(mixed, stats) >= 0))


def test_dequantize_within_one_bin_width():
    stats = dataio.PitchStats(mean=140.0, std=30.0)
    rng = np.random.default_rng(4)
    f0 = rng.uniform(60.0, 260.0, size=200)
    bins = dataio.quantize_pitch(f0, stats)
    back = dataio.dequantize_pitch(bins, stats)
    z = np.clip((f0 - stats.mean) / stats.std, -3, 3)
    z_back = (back - stats.mean) / stats.std
    bin_width = 6.0 / 255
    assert np.all(np.abs(z - z_back) <= bin_width)


# ---------------------------------------------------------------------------
# Mel spectrogram
# ---------------------------------------------------------------------------


def test_mel_zero_waveform_hits_log_floor(audio_cfg):
    wav = torch.zeros(audio_cfg.hop_length * 8)
    mel = dataio.compute_mel(wav, audio_cfg)
    assert torch.allclose(mel, torch.full_like(mel, math.log(dataio.MEL_LOG_FLOOR)))


def test_mel_frame_count_formula(audio_cfg):
    for n_frames in (4, 7, 33):
        wav = torch.randn(n_frames * audio_cfg.hop_length)
        assert dataio.compute_mel(wav, audio_cfg).shape == (n_frames, audio_cfg.mel_bins)
    # non-multiple lengths round up
    wav = torch.randn(5 * audio_cfg.hop_length + 3)
    assert dataio.compute_mel(wav, audio_cfg).shape[0] == 6


def test_mel_sine_at_bin_center_peaks_there(audio_cfg):
    centers = dataio.mel_center_frequencies(audio_cfg)
    for m in (10, 20, 30):
        t = np.arange(audio_cfg.sample_rate) / audio_cfg.sample_rate
        wav = torch.from_numpy(0.5 * np.sin(2 * np.pi * centers[m] * t)).float()
        mel = dataio.compute_mel(wav, audio_cfg)
        interior = mel[4:-4]
        assert (interior.argmax(dim=1) == m).float().mean() > 0.95


def test_mel_too_short_waveform_rejected(audio_cfg):
    with pytest.raises(AudioError, match="shorter"):
        dataio.compute_mel(torch.zeros(audio_cfg.win_length - 1), audio_cfg)


def test_mel_frames_match_reconciled_durations(dataset_en):
    for utt in dataset_en.utterances:
        assert utt.mel.shape[0] == int(utt.duration_targets.sum())
        assert len(utt.waveform) == utt.mel.shape[0] * dataset_en.config.hop_length
        assert utt.pitch_bins.shape[0] == utt.mel.shape[0]
        assert utt.pitch_bins.min() >= 0 and utt.pitch_bins.max() <= 255


# ---------------------------------------------------------------------------
# WAV and cache round trips
# ---------------------------------------------------------------------------


def test_wav_round_trip(tmp_path, audio_cfg):
    rng = np.random.default_rng(9)
    wav = rng.uniform(-0.8, 0.8, size=4000).astype(np.float32)
    path = tmp_path / "x.wav"
    dataio.write_wav(path, wav, audio_cfg.sample_rate)
    back = dataio.read_wav(path, expected_rate=audio_cfg.sample_rate)
    assert back.shape == wav.shape
    assert np.abs(back - wav).max() < 1.0 / 16384  # 16-bit quantization error


def test_wav_rate_mismatch(tmp_path):
    path = tmp_path / "x.wav"
    dataio.write_wav(path, np.zeros(100, np.float32), 8000)
    with pytest.raises(AudioError, match="sample rate"):
        dataio.read_wav(path, expected_rate=16000)


def test_cache_round_trip(tmp_path):
    arr = np.random.default_rng(1).normal(size=(17, 40)).astype(np.float32)
    path = tmp_path / "cache" / "mel.npy"
    dataio.save_cache(path, arr)
    back = dataio.load_cache(path)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert np.array_equal(back, arr)


def test_batching_deterministic(dataset_en):
    ordering1 = dataio.epoch_order(len(dataset_en), epoch=3, seed=42)
    ordering2 = dataio.epoch_order(len(dataset_en), epoch=3, seed=42)
    assert np.array_equal(ordering1, ordering2)
    assert sorted(ordering1.tolist()) == list(range(len(dataset_en)))
    batches = [b for _, b in dataio.iter_batches(dataset_en, 3, epoch=0, seed=1)]
    assert sum(b.phoneme_ids.shape[0] for b in batches) == len(dataset_en)
    b0 = batches[0]
    assert b0.waveform.shape[1] == b0.mel.shape[1] * dataset_en.config.hop_length
    assert b0.phoneme_mask.any(dim=1).all()
