"""Dataset ingestion: manifests, mel-spectrograms, quantized pitch, batches.

Manifest file format (line-delimited, tab-separated):

    #phonemes: a,b,c
    #speakers: spk1,spk2
    #languages: en
    <audio_path>\t<phonemes>\t<durations>\t<f0>\t<speaker>\t<language>

``phonemes``, ``durations`` and ``f0`` are comma-separated lists; durations
are integer frame counts per phoneme, f0 is one value per frame in Hz with 0
marking unvoiced frames. The three ``#`` header directives declare the id
vocabularies (id = position in the declared list) and are required.

Audio files are mono PCM WAV at the configured sample rate. Mel/pitch caches
are NumPy ``.npy`` files (magic + dtype + shape header, then flat data).
"""

import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import AudioError, ConfigError, ManifestError

MEL_LOG_FLOOR = 1e-5  # additive floor inside log(); log(MEL_LOG_FLOOR) for silence
PITCH_BINS = 256
UNVOICED_BIN = 0  # reserved class for f0 == 0 frames
PITCH_CLIP_SIGMA = 3.0


@dataclass(frozen=True)
class AudioConfig:
    sample_rate: int = 16000
    hop_length: int = 256
    win_length: int = 1024
    n_fft: int = 1024
    mel_bins: int = 80
    fmin: float = 0.0
    fmax: float = 8000.0

    def __post_init__(self):
        problems = []
        if self.win_length % self.hop_length != 0:
            problems.append(
                f"audio.hop_length {self.hop_length} must divide win_length {self.win_length}"
            )
        if self.win_length > self.n_fft:
            problems.append(f"audio.win_length {self.win_length} exceeds n_fft {self.n_fft}")
        if not (self.fmin < self.fmax <= self.sample_rate / 2):
            problems.append(
                f"audio requires fmin < fmax <= sample_rate/2, got fmin={self.fmin} "
                f"fmax={self.fmax} sample_rate={self.sample_rate}"
            )
        if problems:
            raise ConfigError(problems)


# ---------------------------------------------------------------------------
# WAV I/O (mono 16-bit PCM)
# ---------------------------------------------------------------------------


def read_wav(path, expected_rate=None):
    """Read a mono 16-bit PCM WAV into a float32 array in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise AudioError(f"audio file not found: {path}")
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise AudioError(f"{path}: expected mono audio, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise AudioError(f"{path}: expected 16-bit PCM, got {8 * f.getsampwidth()}-bit")
        rate = f.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise AudioError(f"{path}: sample rate {rate} != configured {expected_rate}")
        data = np.frombuffer(f.readframes(f.getnframes()), dtype="<i2")
    return data.astype(np.float32) / 32768.0


def write_wav(path, waveform, sample_rate):
    """Write a float array in [-1, 1] as mono 16-bit PCM WAV."""
    waveform = np.asarray(waveform, dtype=np.float32)
    pcm = np.clip(np.round(waveform * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(sample_rate)
        f.writeframes(pcm.tobytes())


def wav_frame_count(path, config):
    """Number of spectrogram frames the file will produce, from the header only."""
    with wave.open(str(path), "rb") as f:
        n_samples = f.getnframes()
    return math.ceil(n_samples / config.hop_length)


# ---------------------------------------------------------------------------
# Mel spectrogram
# ---------------------------------------------------------------------------


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config):
    """Center frequency (Hz) of each triangular mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(config, dtype=torch.float32):
    """Triangular (peak-1) mel filterbank, shape (mel_bins, n_fft // 2 + 1)."""
    n_freqs = config.n_fft // 2 + 1
    fft_freqs = np.linspace(0.0, config.sample_rate / 2.0, n_freqs)
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.mel_bins + 2))
    fb = np.zeros((config.mel_bins, n_freqs), dtype=np.float64)
    for m in range(config.mel_bins):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / (center - lo)
        down = (hi - fft_freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return torch.as_tensor(fb, dtype=dtype)


def compute_mel(waveform, config):
    """Log-magnitude mel spectrogram, shape (..., frames, mel_bins).

    The waveform is zero-padded at the tail to a hop multiple, then
    reflection-padded by (n_fft - hop)/2 on both sides so that
    frames == ceil(len(waveform) / hop_length).
    """
    x = torch.as_tensor(waveform)
    if x.dtype not in (torch.float32, torch.float64):
        x = x.to(torch.float32)
    squeeze = x.dim() == 1
    if squeeze:
        x = x.unsqueeze(0)
    n = x.shape[-1]
    if n == 0:
        raise AudioError("cannot compute mel of an empty waveform")
    if n < config.win_length:
        raise AudioError(
            f"waveform of {n} samples is shorter than win_length {config.win_length}"
        )
    frames = math.ceil(n / config.hop_length)
    tail = frames * config.hop_length - n
    side = config.n_fft - config.hop_length
    side_l, side_r = side // 2, side - side // 2
    x = torch.nn.functional.pad(x.unsqueeze(1), (0, tail), mode="constant").squeeze(1)
    x = torch.nn.functional.pad(x.unsqueeze(1), (side_l, side_r), mode="reflect").squeeze(1)
    window = torch.hann_window(config.win_length, dtype=x.dtype, device=x.device)
    spec = torch.stft(
        x,
        n_fft=config.n_fft,
        hop_length=config.hop_length,
        win_length=config.win_length,
        window=window,
        center=False,
        return_complex=True,
    )
    mag = spec.abs()  # (B, n_freqs, frames)
    fb = mel_filterbank(config, dtype=x.dtype).to(x.device)
    mel = torch.log(fb @ mag + MEL_LOG_FLOOR).transpose(-1, -2)  # (B, frames, mel_bins)
    return mel.squeeze(0) if squeeze else mel


# ---------------------------------------------------------------------------
# Pitch quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PitchStats:
    """Per-speaker mean/std of f0 over voiced frames."""

    mean: float
    std: float


def quantize_pitch(f0, stats):
    """Map per-frame f0 (Hz) to bin indices in [0, 255].

    Voiced frames are standardised by the speaker stats, clipped to
    +-3 sigma and linearly binned into bins 1..255; unvoiced frames
    (f0 == 0) map to the reserved bin 0.
    """
    if stats.std <= 0:
        raise ManifestError(f"degenerate speaker pitch statistics: std={stats.std}")
    f0 = np.asarray(f0, dtype=np.float64)
    if np.any(f0 < 0):
        raise ManifestError("f0 values must be >= 0 (0 marks unvoiced)")
    z = np.clip((f0 - stats.mean) / stats.std, -PITCH_CLIP_SIGMA, PITCH_CLIP_SIGMA)
    t = (z + PITCH_CLIP_SIGMA) / (2 * PITCH_CLIP_SIGMA)  # in [0, 1]
    bins = 1 + np.minimum((t * (PITCH_BINS - 1)).astype(np.int64), PITCH_BINS - 2)
    bins[f0 == 0] = UNVOICED_BIN
    return bins


def dequantize_pitch(bins, stats):
    """Inverse of quantize_pitch up to one bin width; bin 0 maps to 0 Hz."""
    bins = np.asarray(bins)
    z = ((bins - 1) + 0.5) / (PITCH_BINS - 1) * (2 * PITCH_CLIP_SIGMA) - PITCH_CLIP_SIGMA
    f0 = stats.mean + z * stats.std
    f0[bins == UNVOICED_BIN] = 0.0
    return f0


def compute_pitch_stats(f0_arrays):
    """Mean/std over the voiced frames of all given f0 tracks."""
    voiced = np.concatenate([np.asarray(a, dtype=np.float64) for a in f0_arrays])
    voiced = voiced[voiced > 0]
    if voiced.size == 0:
        raise ManifestError("no voiced frames to derive pitch statistics from")
    std = float(voiced.std())
    if std <= 0:
        raise ManifestError("degenerate speaker pitch statistics: std=0")
    return PitchStats(mean=float(voiced.mean()), std=std)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


class Vocabulary:
    """Ordered symbol list; id == position. Lookup is total for known symbols."""

    def __init__(self, symbols):
        self.symbols = list(symbols)
        self._index = {s: i for i, s in enumerate(self.symbols)}
        if len(self._index) != len(self.symbols):
            raise ManifestError("duplicate symbols in vocabulary declaration")

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    def id(self, symbol):
        try:
            return self._index[symbol]
        except KeyError:
            raise ManifestError(f"symbol {symbol!r} not in declared vocabulary") from None

    def extend(self, new_symbols):
        """Append unseen symbols; returns the list actually added."""
        added = [s for s in new_symbols if s not in self._index]
        for s in added:
            self._index[s] = len(self.symbols)
            self.symbols.append(s)
        return added


@dataclass
class ManifestEntry:
    audio_path: Path
    phonemes: list
    durations: list
    f0: np.ndarray
    speaker: str
    language: str


@dataclass
class Manifest:
    entries: list
    phoneme_vocab: Vocabulary
    speaker_vocab: Vocabulary
    language_vocab: Vocabulary

    def __len__(self):
        return len(self.entries)


_HEADERS = ("#phonemes:", "#speakers:", "#languages:")


def load_manifest(path, config=None):
    """Parse and validate a manifest file.

    When ``config`` is given, sum(durations) is checked against the audio
    frame count (+-1 frame tolerance; reconciled later by truncation).
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    headers = {}
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                for h in _HEADERS:
                    if line.startswith(h):
                        headers[h] = [s.strip() for s in line[len(h):].split(",") if s.strip()]
                        break
                else:
                    raise ManifestError(f"{path}:{lineno}: unknown directive {line.split(':')[0]!r}")
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ManifestError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(fields)}")
            audio, phonemes_s, durations_s, f0_s, speaker, language = fields
            try:
                phonemes = [p.strip() for p in phonemes_s.split(",") if p.strip()]
                durations = [int(d) for d in durations_s.split(",")] if durations_s.strip() else []
                f0 = np.array([float(v) for v in f0_s.split(",")], dtype=np.float32) if f0_s.strip() else np.zeros(0, np.float32)
            except ValueError as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from None
            entries.append(
                ManifestEntry(
                    audio_path=path.parent / audio,
                    phonemes=phonemes,
                    durations=durations,
                    f0=f0,
                    speaker=speaker.strip(),
                    language=language.strip(),
                )
            )
    missing = [h for h in _HEADERS if h not in headers]
    if missing:
        raise ManifestError(f"{path}: missing vocabulary directive(s): {', '.join(missing)}")
    manifest = Manifest(
        entries=entries,
        phoneme_vocab=Vocabulary(headers["#phonemes:"]),
        speaker_vocab=Vocabulary(headers["#speakers:"]),
        language_vocab=Vocabulary(headers["#languages:"]),
    )
    _validate_manifest(manifest, config)
    return manifest


def _validate_manifest(manifest, config):
    for i, e in enumerate(manifest.entries):
        where = f"entry {i} ({e.audio_path.name})"
        if len(e.durations) != len(e.phonemes):
            raise ManifestError(
                f"{where}: len(durations)={len(e.durations)} != len(phonemes)={len(e.phonemes)}"
            )
        if any(d < 0 for d in e.durations):
            raise ManifestError(f"{where}: negative duration")
        for p in e.phonemes:
            if p not in manifest.phoneme_vocab:
                raise ManifestError(f"{where}: phoneme {p!r} not declared")
        if e.speaker not in manifest.speaker_vocab:
            raise ManifestError(f"{where}: speaker {e.speaker!r} not declared")
        if e.language not in manifest.language_vocab:
            raise ManifestError(f"{where}: language {e.language!r} not declared")
        if config is not None:
            if not e.audio_path.exists():
                raise ManifestError(f"{where}: audio file not found: {e.audio_path}")
            frames = wav_frame_count(e.audio_path, config)
            if abs(sum(e.durations) - frames) > 1:
                raise ManifestError(
                    f"{where}: sum(durations)={sum(e.durations)} does not match "
                    f"audio frames={frames} (tolerance 1)"
                )


# ---------------------------------------------------------------------------
# Utterances and batching
# ---------------------------------------------------------------------------


@dataclass
class Utterance:
    utt_id: str
    phoneme_ids: np.ndarray  # (P,) int64
    mel: np.ndarray  # (frames, mel_bins) float32
    waveform: np.ndarray  # (frames * hop_length,) float32
    duration_targets: np.ndarray  # (P,) int64
    pitch_bins: np.ndarray  # (frames,) int64 in [0, 255]
    speaker_id: int
    language_id: int


class UtteranceDataset:
    """Materialised utterances for a manifest; read-only after construction."""

    def __init__(self, manifest, config):
        self.manifest = manifest
        self.config = config
        self.pitch_stats = {}
        by_speaker = {}
        for e in manifest.entries:
            by_speaker.setdefault(e.speaker, []).append(e.f0)
        for speaker, tracks in by_speaker.items():
            self.pitch_stats[speaker] = compute_pitch_stats(tracks)
        self.utterances = [self._build(i, e) for i, e in enumerate(manifest.entries)]

    def _build(self, index, entry):
        wav = read_wav(entry.audio_path, expected_rate=self.config.sample_rate)
        mel = compute_mel(torch.from_numpy(wav), self.config).numpy().astype(np.float32)
        durations = np.asarray(entry.durations, dtype=np.int64)
        # reconcile +-1 frame mismatches by truncating to the shortest view
        frames = min(mel.shape[0], int(durations.sum()), *
                     ([len(entry.f0)] if len(entry.f0) else [mel.shape[0]]))
        if frames <= 0:
            raise ManifestError(f"entry {index}: utterance has no frames after reconciliation")
        deficit = int(durations.sum()) - frames
        d = durations.copy()
        i = len(d) - 1
        while deficit > 0 and i >= 0:  # shave the tail phonemes
            take = min(deficit, int(d[i]))
            d[i] -= take
            deficit -= take
            i -= 1
        mel = mel[:frames]
        f0 = np.asarray(entry.f0, dtype=np.float64)
        if len(f0) < frames:
            f0 = np.pad(f0, (0, frames - len(f0)))
        f0 = f0[:frames]
        pitch = quantize_pitch(f0, self.pitch_stats[entry.speaker])
        n_samples = frames * self.config.hop_length
        if len(wav) < n_samples:
            wav = np.pad(wav, (0, n_samples - len(wav)))
        return Utterance(
            utt_id=f"{index:05d}_{entry.audio_path.stem}",
            phoneme_ids=np.array([self.manifest.phoneme_vocab.id(p) for p in entry.phonemes], dtype=np.int64),
            mel=mel,
            waveform=wav[:n_samples],
            duration_targets=d,
            pitch_bins=pitch.astype(np.int64),
            speaker_id=self.manifest.speaker_vocab.id(entry.speaker),
            language_id=self.manifest.language_vocab.id(entry.language),
        )

    def __len__(self):
        return len(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


@dataclass
class Batch:
    phoneme_ids: torch.Tensor  # (B, P_max) int64, zero-padded
    phoneme_mask: torch.Tensor  # (B, P_max) bool, True on real positions
    durations: torch.Tensor  # (B, P_max) int64
    pitch_bins: torch.Tensor  # (B, F_max) int64
    frame_mask: torch.Tensor  # (B, F_max) bool
    waveform: torch.Tensor  # (B, F_max * hop) float32
    mel: torch.Tensor  # (B, F_max, mel_bins) float32
    speaker_ids: torch.Tensor  # (B,) int64
    language_ids: torch.Tensor  # (B,) int64
    frame_lengths: torch.Tensor  # (B,) int64
    utt_ids: list = field(default_factory=list)


def collate(utterances, hop_length):
    b = len(utterances)
    p_max = max(len(u.phoneme_ids) for u in utterances)
    f_max = max(u.mel.shape[0] for u in utterances)
    mel_bins = utterances[0].mel.shape[1]
    phoneme_ids = torch.zeros(b, p_max, dtype=torch.int64)
    phoneme_mask = torch.zeros(b, p_max, dtype=torch.bool)
    durations = torch.zeros(b, p_max, dtype=torch.int64)
    pitch = torch.zeros(b, f_max, dtype=torch.int64)
    frame_mask = torch.zeros(b, f_max, dtype=torch.bool)
    waveform = torch.zeros(b, f_max * hop_length, dtype=torch.float32)
    mel = torch.zeros(b, f_max, mel_bins, dtype=torch.float32)
    lengths = torch.zeros(b, dtype=torch.int64)
    for i, u in enumerate(utterances):
        p, f = len(u.phoneme_ids), u.mel.shape[0]
        phoneme_ids[i, :p] = torch.from_numpy(u.phoneme_ids)
        phoneme_mask[i, :p] = True
        durations[i, :p] = torch.from_numpy(u.duration_targets)
        pitch[i, :f] = torch.from_numpy(u.pitch_bins)
        frame_mask[i, :f] = True
        waveform[i, : f * hop_length] = torch.from_numpy(u.waveform)
        mel[i, :f] = torch.from_numpy(u.mel)
        lengths[i] = f
    return Batch(
        phoneme_ids=phoneme_ids,
        phoneme_mask=phoneme_mask,
        durations=durations,
        pitch_bins=pitch,
        frame_mask=frame_mask,
        waveform=waveform,
        mel=mel,
        speaker_ids=torch.tensor([u.speaker_id for u in utterances], dtype=torch.int64),
        language_ids=torch.tensor([u.language_id for u in utterances], dtype=torch.int64),
        frame_lengths=lengths,
        utt_ids=[u.utt_id for u in utterances],
    )


def epoch_order(n, epoch, seed):
    """Deterministic shuffle for one epoch; reproducible from (seed, epoch) alone."""
    rng = np.random.default_rng([seed, epoch])
    return rng.permutation(n)


def iter_batches(dataset, batch_size, epoch, seed, start_batch=0):
    """Yield collated batches in the deterministic order of the given epoch."""
    order = epoch_order(len(dataset), epoch, seed)
    n_batches = math.ceil(len(order) / batch_size)
    for b in range(start_batch, n_batches):
        idx = order[b * batch_size : (b + 1) * batch_size]
        yield b, collate([dataset[int(i)] for i in idx], dataset.config.hop_length)


# ---------------------------------------------------------------------------
# Feature caches
# ---------------------------------------------------------------------------


def save_cache(path, array):
    """Persist a feature array as .npy (documented header: magic, dtype, shape)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.ascontiguousarray(array))


def load_cache(path):
    return np.load(path)
