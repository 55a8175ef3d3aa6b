import math
from pathlib import Path

import numpy as np
import pytest
import torch

from litetts import dataio
from litetts.config import load_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


# ---------------------------------------------------------------------------
# Synthetic tone corpora
#
# Each phoneme symbol maps to a characteristic tone frequency; an utterance is
# the phase-continuous concatenation of those tones plus a voice-specific
# harmonic. The mapping is trivially learnable and trivially decodable, which
# is what the desk-scale training and PSR tests need.
# ---------------------------------------------------------------------------


def symbol_index(symbol):
    """Trailing integer of a phoneme symbol, e.g. 'en:p3' -> 3."""
    digits = ""
    for ch in reversed(symbol):
        if ch.isdigit():
            digits = ch + digits
        else:
            break
    return int(digits)


def phoneme_frequency(symbol, base=300.0, step=150.0):
    index = symbol_index(symbol) if isinstance(symbol, str) else int(symbol)
    return base + step * index


def render_tone_utterance(symbols, durations, voice_f0, config, amplitude=0.45):
    hop, sr = config.hop_length, config.sample_rate
    frames = int(sum(durations))
    n = frames * hop
    durations = np.asarray(durations)
    freq = np.repeat([phoneme_frequency(s) for s in symbols], durations * hop)
    phase = np.cumsum(2 * np.pi * freq / sr)
    t = np.arange(n) / sr
    wav = amplitude * np.sin(phase) + 0.2 * np.sin(2 * np.pi * voice_f0 * t)
    # micro-prosody: f0 deviates per phoneme (constant within a span), so
    # pitch targets are a learnable function of phoneme identity
    deviation = np.array([0.04 * (symbol_index(s) % 5 - 2) for s in symbols])
    f0 = np.repeat(voice_f0 * (1 + deviation), durations)
    return wav.astype(np.float32), f0


def sample_phoneme_sequence(rng, n_symbols, length):
    """Random sequence without adjacent repeats (keeps CTC decoding exact)."""
    seq = [int(rng.integers(0, n_symbols))]
    while len(seq) < length:
        nxt = int(rng.integers(0, n_symbols))
        if nxt != seq[-1]:
            seq.append(nxt)
    return seq


def write_corpus(directory, config, *, speakers, language, symbols, n_utterances,
                 seed, min_phones=4, max_phones=7, min_dur=6, max_dur=12):
    """Generate WAVs plus a manifest; returns the manifest path.

    speakers: {name: voice_f0}; symbols: phoneme symbol list (symbol i maps to
    phoneme_frequency(i)).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = [
        "#phonemes: " + ",".join(symbols),
        "#speakers: " + ",".join(speakers),
        "#languages: " + language,
    ]
    speaker_names = list(speakers)
    for u in range(n_utterances):
        speaker = speaker_names[u % len(speaker_names)]
        length = int(rng.integers(min_phones, max_phones + 1))
        sequence = [symbols[i] for i in sample_phoneme_sequence(rng, len(symbols), length)]
        durations = [int(rng.integers(min_dur, max_dur + 1)) for _ in sequence]
        wav, f0 = render_tone_utterance(sequence, durations, speakers[speaker], config)
        wav_path = directory / f"{language}_{u:03d}.wav"
        dataio.write_wav(wav_path, wav, config.sample_rate)
        lines.append("\t".join([
            wav_path.name,
            ",".join(sequence),
            ",".join(str(d) for d in durations),
            ",".join(f"{v:.3f}" for v in f0),
            speaker,
            language,
        ]))
    manifest_path = directory / "manifest.tsv"
    manifest_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest_path


class ToneRecognizer:
    """DSP test double for the phoneme-recognizer interface: frames are
    classified by which phoneme tone dominates their spectrum."""

    def __init__(self, audio_config, symbols):
        self.audio_config = audio_config
        self.symbols = list(symbols)
        self.blank = len(self.symbols)

    def posteriors(self, waveform):
        config = self.audio_config
        mel = dataio.compute_mel(torch.as_tensor(waveform, dtype=torch.float32), config)
        centers = dataio.mel_center_frequencies(config)
        freqs = np.array([phoneme_frequency(s) for s in self.symbols])
        bins = np.array([int(np.argmin(np.abs(centers - f))) for f in freqs])
        frames = mel.shape[0]
        log_probs = torch.full((frames, len(self.symbols) + 1), -20.0)
        energy = mel[:, bins]  # (frames, P)
        choice = energy.argmax(dim=1)
        for t in range(frames):
            log_probs[t, int(choice[t])] = 0.0
        return torch.log_softmax(log_probs, dim=-1)

    def transcribe(self, waveform):
        from litetts.evaluation import ctc_greedy_decode

        ids = ctc_greedy_decode(self.posteriors(waveform), self.blank)
        return [self.symbols[i] for i in ids]


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def desk_config():
    return load_config(CONFIG_DIR / "desk.yaml")


@pytest.fixture(scope="session")
def audio_cfg(desk_config):
    return desk_config.audio


EN_SYMBOLS = [f"en:p{i}" for i in range(6)]
ES_SYMBOLS = [f"es:q{i}" for i in range(6, 11)]  # disjoint ids AND frequencies


@pytest.fixture(scope="session")
def corpus_en(tmp_path_factory, audio_cfg):
    """Backbone corpus: one en speaker."""
    root = tmp_path_factory.mktemp("corpus_en")
    path = write_corpus(root, audio_cfg, speakers={"en_spk": 120.0}, language="en",
                        symbols=EN_SYMBOLS, n_utterances=10, seed=11)
    return path


@pytest.fixture(scope="session")
def corpus_es(tmp_path_factory, audio_cfg):
    """Fine-tune corpus: a new language with its own phonemes and speaker."""
    root = tmp_path_factory.mktemp("corpus_es")
    path = write_corpus(root, audio_cfg, speakers={"es_spk": 180.0}, language="es",
                        symbols=ES_SYMBOLS, n_utterances=8, seed=22)
    return path


@pytest.fixture(scope="session")
def dataset_en(corpus_en, audio_cfg):
    manifest = dataio.load_manifest(corpus_en, audio_cfg)
    return dataio.UtteranceDataset(manifest, audio_cfg)


@pytest.fixture(scope="session")
def backbone_ckpt(tmp_path_factory, desk_config, dataset_en):
    """A briefly trained desk-scale backbone shared by checkpoint-based tests."""
    import dataclasses

    from litetts.training import train_backbone

    run_dir = tmp_path_factory.mktemp("backbone_run")
    config = dataclasses.replace(desk_config, seed=77)
    return train_backbone(config, dataset_en, run_dir, steps=12)


def central_difference(fn, x, eps):
    """Gradient of scalar fn at x by central differences, elementwise."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    gflat = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = float(fn(x))
        flat[i] = orig - eps
        lo = float(fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def assert_grad_close(fn, x, rel_tol=1e-3, eps=1e-4):
    """Analytic grad of scalar fn w.r.t. x matches central differences."""
    x = x.detach().clone().to(torch.float64).requires_grad_(True)
    value = fn(x)
    (analytic,) = torch.autograd.grad(value, x)
    numeric = central_difference(lambda t: fn(t), x, eps)
    denom = numeric.abs().max().clamp(min=1e-8)
    err = (analytic - numeric).abs().max() / denom
    assert err < rel_tol, f"gradient mismatch: rel err {err:.2e}"
