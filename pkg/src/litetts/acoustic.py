"""Non-autoregressive acoustic model: text encoder, variance adaptor
(duration + pitch predictors, length regulator) and acoustic decoder.

The decoder emits frame-level latents that the vocoder turns into audio.
All convolutions are depthwise-separable to stay inside the lightweight
parameter budget; speaker and language conditioning is a broadcast sum of
look-up-table embeddings at the encoder input.
"""

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


@dataclass(frozen=True)
class AcousticConfig:
    phoneme_vocab_size: int = 64
    n_speakers: int = 16
    n_languages: int = 4
    hidden_dim: int = 320
    embed_dim: int = 0  # 0 = same as hidden_dim (residual compatibility)
    encoder_kernel_sizes: tuple = (5, 25, 13, 9, 17)
    decoder_kernel_sizes: tuple = (17, 21, 9, 13, 5)
    predictor_kernel_sizes: tuple = (3, 3)
    dropout: float = 0.1
    pitch_bins: int = 256

    def __post_init__(self):
        if self.embed_dim == 0:
            object.__setattr__(self, "embed_dim", self.hidden_dim)
        if self.embed_dim != self.hidden_dim:
            raise ConfigError(
                f"acoustic.embed_dim {self.embed_dim} must equal hidden_dim {self.hidden_dim}"
            )

    @property
    def encoder_layers(self):
        return len(self.encoder_kernel_sizes)

    @property
    def decoder_layers(self):
        return len(self.decoder_kernel_sizes)


def sinusoidal_positions(length, dim, dtype=torch.float32, device=None):
    """Standard fixed sin/cos positional embeddings, shape (length, dim)."""
    position = torch.arange(length, dtype=dtype, device=device).unsqueeze(1)
    div = torch.exp(
        torch.arange(0, dim, 2, dtype=dtype, device=device) * (-math.log(10000.0) / dim)
    )
    pe = torch.zeros(length, dim, dtype=dtype, device=device)
    pe[:, 0::2] = torch.sin(position * div)
    pe[:, 1::2] = torch.cos(position * div[: pe[:, 1::2].shape[1]])
    return pe


class SeparableConv1d(nn.Module):
    """Depthwise + pointwise convolution over (B, C, T)."""

    def __init__(self, channels, kernel_size):
        super().__init__()
        self.depthwise = nn.Conv1d(
            channels, channels, kernel_size, padding=(kernel_size - 1) // 2, groups=channels
        )
        self.pointwise = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


class ConvBlock(nn.Module):
    """Residual separable-conv block; ``conv`` is the adapter attachment point."""

    def __init__(self, dim, kernel_size, dropout):
        super().__init__()
        self.conv = SeparableConv1d(dim, kernel_size)
        self.norm = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        # x: (B, T, H); mask: (B, T) True on real positions
        y = self.conv(x.transpose(1, 2)).transpose(1, 2)
        y = self.dropout(self.norm(F.relu(y)))
        y = x + y
        if mask is not None:
            y = y * mask.unsqueeze(-1)
        return y


class VariancePredictor(nn.Module):
    """Conv stack with a linear head; out_dim=1 for duration, 256 for pitch."""

    def __init__(self, dim, kernel_sizes, out_dim, dropout):
        super().__init__()
        self.blocks = nn.ModuleList(ConvBlock(dim, k, dropout) for k in kernel_sizes)
        self.proj = nn.Linear(dim, out_dim)

    def forward(self, x, mask=None):
        for block in self.blocks:
            x = block(x, mask)
        return self.proj(x)


class ConditioningTables(nn.Module):
    """Phoneme embedding matrix plus speaker/language look-up tables."""

    def __init__(self, config):
        super().__init__()
        self.phoneme = nn.Embedding(config.phoneme_vocab_size, config.embed_dim)
        self.speaker = nn.Embedding(config.n_speakers, config.embed_dim)
        self.language = nn.Embedding(config.n_languages, config.embed_dim)


def round_half_up(x):
    """Round with .5 going up, elementwise (torch.round rounds half to even)."""
    return torch.floor(x + 0.5)


def length_regulate(hidden, durations):
    """Repeat hidden vector i ``durations[i]`` times along the time axis.

    hidden: (P, H) or (B, P, H); durations: matching (P,) / (B, P) of
    nonnegative integers. Batched input returns (B, F_max, H) plus a frame
    mask; unbatched returns just (F, H).
    """
    if hidden.dim() == 2:
        total = int(durations.sum())
        if total == 0:
            raise ValueError("all-zero durations produce an empty utterance")
        return torch.repeat_interleave(hidden, durations.to(torch.int64), dim=0)
    lengths = durations.sum(dim=1)
    if (lengths == 0).any():
        raise ValueError("all-zero durations produce an empty utterance")
    f_max = int(lengths.max())
    out = hidden.new_zeros(hidden.shape[0], f_max, hidden.shape[2])
    mask = torch.zeros(hidden.shape[0], f_max, dtype=torch.bool, device=hidden.device)
    for b in range(hidden.shape[0]):
        expanded = torch.repeat_interleave(hidden[b], durations[b].to(torch.int64), dim=0)
        out[b, : expanded.shape[0]] = expanded
        mask[b, : expanded.shape[0]] = True
    return out, mask


@dataclass
class AcousticOutput:
    latents: torch.Tensor  # (B, F, H)
    log_durations: torch.Tensor  # (B, P) predicted durations in log-frame domain
    pitch_logits: torch.Tensor  # (B, F, 256)
    frame_mask: torch.Tensor = None
    rounded_durations: torch.Tensor = None  # set on the inference path


class AcousticModel(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.tables = ConditioningTables(config)
        self.encoder = nn.ModuleList(
            ConvBlock(config.hidden_dim, k, config.dropout) for k in config.encoder_kernel_sizes
        )
        self.duration_predictor = VariancePredictor(
            config.hidden_dim, config.predictor_kernel_sizes, 1, config.dropout
        )
        self.pitch_predictor = VariancePredictor(
            config.hidden_dim, config.predictor_kernel_sizes, config.pitch_bins, config.dropout
        )
        self.pitch_embedding = nn.Embedding(config.pitch_bins, config.hidden_dim)
        self.decoder = nn.ModuleList(
            ConvBlock(config.hidden_dim, k, config.dropout) for k in config.decoder_kernel_sizes
        )

    def _check_ids(self, phoneme_ids, speaker_ids, language_ids):
        if phoneme_ids.numel() and (
            phoneme_ids.min() < 0 or phoneme_ids.max() >= self.tables.phoneme.num_embeddings
        ):
            raise IndexError(f"phoneme id out of range [0, {self.tables.phoneme.num_embeddings})")
        if (speaker_ids.min() < 0 or speaker_ids.max() >= self.tables.speaker.num_embeddings):
            raise IndexError(f"speaker id out of range [0, {self.tables.speaker.num_embeddings})")
        if (language_ids.min() < 0 or language_ids.max() >= self.tables.language.num_embeddings):
            raise IndexError(f"language id out of range [0, {self.tables.language.num_embeddings})")

    def encode(self, phoneme_ids, speaker_ids, language_ids, mask=None):
        """Per-phoneme hidden states, conditioned and position-embedded.

        phoneme_ids: (B, P) int64; speaker/language_ids: (B,) int64.
        Returns (B, P, H); output length equals input length.
        """
        self._check_ids(phoneme_ids, speaker_ids, language_ids)
        x = self.tables.phoneme(phoneme_ids)
        x = x + sinusoidal_positions(x.shape[1], x.shape[2], dtype=x.dtype, device=x.device)
        cond = self.tables.speaker(speaker_ids) + self.tables.language(language_ids)
        x = x + cond.unsqueeze(1)
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        for block in self.encoder:
            x = block(x, mask)
        return x

    def predict_duration(self, hidden, mask=None):
        """Per-phoneme durations in the log-frame domain, shape (B, P)."""
        out = self.duration_predictor(hidden, mask).squeeze(-1)
        if mask is not None:
            out = out * mask
        return out

    def predict_pitch(self, frame_hidden, mask=None):
        """Frame-level pitch bin logits, shape (B, F, pitch_bins)."""
        if frame_hidden.shape[1] == 0:
            return frame_hidden.new_zeros(
                frame_hidden.shape[0], 0, self.config.pitch_bins
            )
        return self.pitch_predictor(frame_hidden, mask)

    def decode(self, frame_hidden, mask=None):
        """Frame-count-preserving all-conv decoder producing vocoder latents.

        Purely convolutional (no positional terms), so it is translation
        equivariant away from sequence edges.
        """
        x = frame_hidden
        if mask is not None:
            x = x * mask.unsqueeze(-1)
        for block in self.decoder:
            x = block(x, mask)
        return x

    def forward_teacher(self, batch):
        """Teacher-forced pass with ground-truth durations and pitch bins."""
        hidden = self.encode(batch.phoneme_ids, batch.speaker_ids, batch.language_ids,
                             batch.phoneme_mask)
        log_dur = self.predict_duration(hidden, batch.phoneme_mask)
        frame_hidden, frame_mask = length_regulate(hidden, batch.durations)
        pitch_logits = self.predict_pitch(frame_hidden, frame_mask)
        pitch_bins = batch.pitch_bins[:, : frame_hidden.shape[1]]
        frame_hidden = frame_hidden + self.pitch_embedding(pitch_bins) * frame_mask.unsqueeze(-1)
        latents = self.decode(frame_hidden, frame_mask)
        return AcousticOutput(
            latents=latents, log_durations=log_dur, pitch_logits=pitch_logits,
            frame_mask=frame_mask,
        )

    @torch.no_grad()
    def forward_infer(self, phoneme_ids, speaker_id, language_id):
        """Inference pass for a single utterance; returns frame latents.

        Durations come from the predictor (exp, round-half-up, floor of one
        frame); pitch bins are the argmax of the pitch logits.
        """
        if phoneme_ids.dim() == 1:
            phoneme_ids = phoneme_ids.unsqueeze(0)
        speaker = torch.as_tensor([speaker_id], dtype=torch.int64)
        language = torch.as_tensor([language_id], dtype=torch.int64)
        hidden = self.encode(phoneme_ids, speaker, language)
        log_dur = self.predict_duration(hidden)
        durations = round_half_up(torch.exp(log_dur)).clamp(min=1).to(torch.int64)
        frame_hidden, frame_mask = length_regulate(hidden, durations)
        pitch_logits = self.predict_pitch(frame_hidden)
        pitch_bins = pitch_logits.argmax(dim=-1)
        frame_hidden = frame_hidden + self.pitch_embedding(pitch_bins)
        latents = self.decode(frame_hidden)
        return AcousticOutput(
            latents=latents, log_durations=log_dur, pitch_logits=pitch_logits,
            frame_mask=frame_mask, rounded_durations=durations,
        )


def duration_targets_log(durations):
    """Duration targets in log-frame domain; zero-frame phonemes clamp to 1."""
    return torch.log(durations.clamp(min=1).to(torch.get_default_dtype()))
