"""Waveform generation: multi-band MelGAN-style generator plus the
multi-period and multi-resolution discriminator sets used for GAN training.

The generator is fully convolutional: an input conv, three upsampling stages
(transposed conv followed by four residual blocks each), an output conv to
``sub_bands`` channels and a PQMF synthesis filterbank. product(upsample
factors) * sub_bands must equal the audio hop length.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.signal import firwin

from .errors import AudioError, ConfigError

LRELU_SLOPE = 0.1


@dataclass(frozen=True)
class VocoderConfig:
    input_channels: int = 96
    upsample_factors: tuple = (4, 4, 4)
    stage_channels: tuple = (32, 16, 8)
    residual_blocks_per_stage: int = 4
    residual_dilations: tuple = (1, 3, 9, 27)
    sub_bands: int = 4
    pqmf_taps: int = 62
    pqmf_cutoff: float = 0.0  # 0 = derive from sub_bands
    pqmf_beta: float = 9.0

    def __post_init__(self):
        problems = []
        if len(self.upsample_factors) != 3:
            problems.append("vocoder.upsample_factors must list exactly 3 stages")
        if len(self.stage_channels) != len(self.upsample_factors):
            problems.append("vocoder.stage_channels must match upsample_factors in length")
        if len(self.residual_dilations) != self.residual_blocks_per_stage:
            problems.append("vocoder.residual_dilations must match residual_blocks_per_stage")
        if self.sub_bands < 1:
            problems.append("vocoder.sub_bands must be >= 1")
        if problems:
            raise ConfigError(problems)
        if self.pqmf_cutoff == 0.0:
            # numerically optimized for taps=62, beta=9; others fall back to a
            # 1/sub_bands scaling of the canonical 4-band value
            tuned = {2: 0.267, 4: 0.142, 8: 0.08}
            fallback = min(0.45, 0.142 * 4 / max(self.sub_bands, 1))
            object.__setattr__(self, "pqmf_cutoff", tuned.get(self.sub_bands, fallback))

    @property
    def hop_length(self):
        return int(np.prod(self.upsample_factors)) * self.sub_bands


@dataclass(frozen=True)
class DiscriminatorConfig:
    mpd_periods: tuple = (2, 3, 5, 7, 11)
    mrd_resolutions: tuple = ((1024, 120, 600), (2048, 240, 1200), (512, 50, 240))
    mpd_channels: int = 32
    mrd_channels: int = 32
    max_channels: int = 256

    def __post_init__(self):
        problems = []
        for i, a in enumerate(self.mpd_periods):
            for b in self.mpd_periods[i + 1:]:
                if math.gcd(a, b) != 1:
                    problems.append(f"discriminator.mpd_periods {a} and {b} are not coprime")
        if len(self.mrd_resolutions) < 2:
            problems.append("discriminator.mrd_resolutions needs at least 2 entries")
        if problems:
            raise ConfigError(problems)

    @property
    def min_waveform_length(self):
        return max(win for _, _, win in self.mrd_resolutions)


class PQMF(nn.Module):
    """Near-perfect-reconstruction pseudo-QMF analysis/synthesis filterbank."""

    def __init__(self, sub_bands, taps=62, cutoff=0.142, beta=9.0):
        super().__init__()
        self.sub_bands = sub_bands
        self.taps = taps
        proto = firwin(taps + 1, cutoff, window=("kaiser", beta))
        n = np.arange(taps + 1)
        analysis = np.zeros((sub_bands, taps + 1))
        synthesis = np.zeros((sub_bands, taps + 1))
        for k in range(sub_bands):
            phase = (2 * k + 1) * (np.pi / (2 * sub_bands)) * (n - taps / 2)
            analysis[k] = 2 * proto * np.cos(phase + (-1) ** k * np.pi / 4)
            synthesis[k] = 2 * proto * np.cos(phase - (-1) ** k * np.pi / 4)
        self.register_buffer("analysis_filter", torch.from_numpy(analysis).float().unsqueeze(1))
        self.register_buffer("synthesis_filter", torch.from_numpy(synthesis).float().unsqueeze(0))
        updown = torch.zeros(sub_bands, sub_bands, sub_bands)
        for k in range(sub_bands):
            updown[k, k, 0] = 1.0
        self.register_buffer("updown_filter", updown)

    def analysis(self, x):
        """(B, 1, T) -> (B, sub_bands, T / sub_bands)."""
        x = F.conv1d(F.pad(x, (self.taps // 2, self.taps // 2)), self.analysis_filter)
        return F.conv1d(x, self.updown_filter, stride=self.sub_bands)

    def synthesis(self, x):
        """(B, sub_bands, T) -> (B, 1, T * sub_bands)."""
        x = F.conv_transpose1d(x, self.updown_filter * self.sub_bands, stride=self.sub_bands)
        return F.conv1d(F.pad(x, (self.taps // 2, self.taps // 2)), self.synthesis_filter)


class ResidualBlock(nn.Module):
    def __init__(self, channels, dilation):
        super().__init__()
        self.stack = nn.Sequential(
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv1d(channels, channels, 3, dilation=dilation, padding=dilation),
            nn.LeakyReLU(LRELU_SLOPE),
            nn.Conv1d(channels, channels, 1),
        )
        self.skip = nn.Conv1d(channels, channels, 1)

    def forward(self, x):
        return self.stack(x) + self.skip(x)


def _transposed_conv(c_in, c_out, factor):
    # kernel 2f with stride f gives exact f-times upsampling
    padding = (factor + 1) // 2
    output_padding = factor % 2
    return nn.ConvTranspose1d(
        c_in, c_out, factor * 2, stride=factor, padding=padding, output_padding=output_padding
    )


class UpsampleStage(nn.Module):
    """One upsampling block: transposed conv then residual blocks.

    ``upsample`` and each entry of ``blocks`` are adapter attachment points.
    """

    def __init__(self, c_in, c_out, factor, n_blocks, dilations):
        super().__init__()
        self.upsample = _transposed_conv(c_in, c_out, factor)
        self.blocks = nn.ModuleList(ResidualBlock(c_out, d) for d in dilations[:n_blocks])

    def forward(self, x):
        x = self.upsample(F.leaky_relu(x, LRELU_SLOPE))
        for block in self.blocks:
            x = block(x)
        return x


class VocoderGenerator(nn.Module):
    def __init__(self, config, latent_dim):
        super().__init__()
        self.config = config
        self.input_conv = nn.Conv1d(latent_dim, config.input_channels, 7, padding=3)
        stages = []
        c_in = config.input_channels
        for factor, c_out in zip(config.upsample_factors, config.stage_channels):
            stages.append(
                UpsampleStage(c_in, c_out, factor, config.residual_blocks_per_stage,
                              config.residual_dilations)
            )
            c_in = c_out
        self.stages = nn.ModuleList(stages)
        self.output_conv = nn.Conv1d(c_in, config.sub_bands, 7, padding=3)
        self.pqmf = PQMF(config.sub_bands, config.pqmf_taps, config.pqmf_cutoff,
                         config.pqmf_beta) if config.sub_bands > 1 else None

    def forward(self, latents):
        """(B, frames, latent_dim) -> (B, frames * hop_length) waveform."""
        if latents.shape[1] == 0:
            raise ValueError("cannot vocode zero frames")
        x = self.input_conv(latents.transpose(1, 2))
        for stage in self.stages:
            x = stage(x)
        x = torch.tanh(self.output_conv(F.leaky_relu(x, LRELU_SLOPE)))
        if self.pqmf is not None:
            x = self.pqmf.synthesis(x)
        return x.squeeze(1)

    def vocode(self, latents):
        """(frames, latent_dim) -> (frames * hop_length,) convenience wrapper."""
        return self.forward(latents.unsqueeze(0)).squeeze(0)

    def receptive_field_samples(self):
        """Conservative half-width (in output samples) of the edge region."""
        rf = 3.0  # input conv k=7
        for factor in self.config.upsample_factors:
            rf = rf * factor + factor  # transposed conv k=2f
            rf += sum(self.config.residual_dilations[: self.config.residual_blocks_per_stage])
        rf += 3  # output conv
        if self.config.sub_bands > 1:
            rf = rf * self.config.sub_bands + self.config.pqmf_taps
        return int(math.ceil(rf))


def fold_periods(x, period):
    """(B, T) -> (B, 1, ceil(T/p), p) grid, zero-padded on the right."""
    b, t = x.shape
    if t % period:
        x = F.pad(x, (0, period - t % period))
    return x.view(b, 1, -1, period)


class PeriodDiscriminator(nn.Module):
    def __init__(self, period, channels, max_channels):
        super().__init__()
        self.period = period
        convs = []
        c_in, c_out = 1, channels
        for _ in range(4):
            convs.append(nn.Conv2d(c_in, c_out, (5, 1), stride=(3, 1), padding=(2, 0)))
            c_in, c_out = c_out, min(c_out * 4, max_channels)
        convs.append(nn.Conv2d(c_in, c_in, (5, 1), padding=(2, 0)))
        self.convs = nn.ModuleList(convs)
        self.output_conv = nn.Conv2d(c_in, 1, (3, 1), padding=(1, 0))

    def forward(self, x):
        x = fold_periods(x, self.period)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        scores = self.output_conv(x)
        return scores, features


class ResolutionDiscriminator(nn.Module):
    def __init__(self, resolution, channels):
        super().__init__()
        self.n_fft, self.hop, self.win = resolution
        kernel_strides = [((3, 9), (1, 1)), ((3, 9), (1, 2)), ((3, 9), (1, 2)), ((3, 3), (1, 1))]
        convs = []
        c_in = 1
        for kernel, stride in kernel_strides:
            convs.append(nn.Conv2d(c_in, channels, kernel, stride=stride,
                                   padding=(kernel[0] // 2, kernel[1] // 2)))
            c_in = channels
        self.convs = nn.ModuleList(convs)
        self.output_conv = nn.Conv2d(c_in, 1, (3, 3), padding=(1, 1))

    def forward(self, x):
        window = torch.hann_window(self.win, dtype=x.dtype, device=x.device)
        spec = torch.stft(x, n_fft=self.n_fft, hop_length=self.hop, win_length=self.win,
                          window=window, center=True, return_complex=True)
        x = spec.abs().unsqueeze(1)  # (B, 1, freq, frames)
        features = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            features.append(x)
        scores = self.output_conv(x)
        return scores, features


class DiscriminatorEnsemble(nn.Module):
    """All periods plus all resolutions; one (scores, features) pair each."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.mpd = nn.ModuleList(
            PeriodDiscriminator(p, config.mpd_channels, config.max_channels)
            for p in config.mpd_periods
        )
        self.mrd = nn.ModuleList(
            ResolutionDiscriminator(r, config.mrd_channels) for r in config.mrd_resolutions
        )

    def forward(self, waveform):
        """(B, T) -> list of (score map, feature list), MPDs then MRDs.

        Features are ordered shallow to deep for feature-matching pairing.
        """
        minimum = self.config.min_waveform_length
        if waveform.shape[-1] < minimum:
            raise AudioError(
                f"waveform of {waveform.shape[-1]} samples is shorter than the "
                f"largest analysis window ({minimum} samples)"
            )
        return [d(waveform) for d in self.mpd] + [d(waveform) for d in self.mrd]
