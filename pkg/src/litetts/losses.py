"""Training objectives: duration MSE, pitch cross-entropy, least-squares
adversarial losses, feature matching, multi-resolution STFT and mel losses,
and the weighted total. All functions are pure in their tensor inputs.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from . import dataio
from .errors import AudioError, ConfigError

STFT_MAG_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    fm: float = 2.0
    mel: float = 45.0
    stft: float = 1.0

    def __post_init__(self):
        bad = [n for n, v in (("fm", self.fm), ("mel", self.mel), ("stft", self.stft)) if v < 0]
        if bad:
            raise ConfigError([f"losses.lambda_{n} must be nonnegative" for n in bad])


def _masked_mean(values, mask):
    if mask is None:
        return values.mean()
    mask = mask.to(values.dtype)
    return (values * mask).sum() / mask.sum().clamp(min=1)


def duration_loss(pred_log, target_log, mask=None):
    """MSE between predicted and target per-phoneme log-durations."""
    if pred_log.shape != target_log.shape:
        raise ValueError(f"duration shapes differ: {tuple(pred_log.shape)} vs {tuple(target_log.shape)}")
    return _masked_mean((pred_log - target_log) ** 2, mask)


def pitch_loss(logits, target_bins, mask=None):
    """Mean per-frame cross-entropy between pitch logits and target bins."""
    n_bins = logits.shape[-1]
    if target_bins.numel() and (target_bins.min() < 0 or target_bins.max() >= n_bins):
        raise ValueError(f"pitch bins out of range [0, {n_bins})")
    ce = F.cross_entropy(logits.reshape(-1, n_bins), target_bins.reshape(-1), reduction="none")
    return _masked_mean(ce, None if mask is None else mask.reshape(-1))


def adversarial_losses(real_scores, fake_scores):
    """Least-squares GAN objectives, averaged over discriminators and elements.

    Returns (generator loss, discriminator loss); either input may be the
    detached scores appropriate for the phase being trained.
    """
    if not real_scores or not fake_scores:
        raise ValueError("empty discriminator score list")
    g_terms = [((f - 1.0) ** 2).mean() for f in fake_scores]
    d_terms = [((r - 1.0) ** 2).mean() + (f ** 2).mean() for r, f in zip(real_scores, fake_scores)]
    return torch.stack(g_terms).mean(), torch.stack(d_terms).mean()


def feature_matching_loss(real_features, fake_features):
    """Mean absolute difference, averaged over layers then discriminators."""
    if len(real_features) != len(fake_features):
        raise ValueError("feature lists from different discriminator sets")
    per_disc = []
    for reals, fakes in zip(real_features, fake_features):
        if len(reals) != len(fakes):
            raise ValueError("feature-matching layer count mismatch")
        layers = []
        for r, f in zip(reals, fakes):
            if r.shape != f.shape:
                raise ValueError(f"feature shape mismatch: {tuple(r.shape)} vs {tuple(f.shape)}")
            layers.append((r - f).abs().mean())
        per_disc.append(torch.stack(layers).mean())
    return torch.stack(per_disc).mean()


def _stft_magnitude(x, n_fft, hop, win):
    if x.shape[-1] < win:
        raise AudioError(f"signal of {x.shape[-1]} samples shorter than window {win}")
    window = torch.hann_window(win, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, n_fft=n_fft, hop_length=hop, win_length=win, window=window,
                      center=True, return_complex=True)
    return spec.abs()


def stft_loss_terms(x, x_hat, resolution):
    """(spectral convergence, log-magnitude L1) for one (n_fft, hop, win)."""
    n_fft, hop, win = resolution
    mag_x = _stft_magnitude(x, n_fft, hop, win)
    mag_h = _stft_magnitude(x_hat, n_fft, hop, win)
    sc = torch.norm(mag_x - mag_h, p="fro") / torch.norm(mag_x, p="fro").clamp(min=STFT_MAG_FLOOR)
    mag = F.l1_loss(torch.log(mag_h + STFT_MAG_FLOOR), torch.log(mag_x + STFT_MAG_FLOOR))
    return sc, mag


def stft_loss(x, x_hat, resolutions):
    """Mean over resolutions of spectral convergence + log-magnitude L1."""
    if x.shape != x_hat.shape:
        raise ValueError("stft_loss inputs must have equal length")
    terms = []
    for resolution in resolutions:
        sc, mag = stft_loss_terms(x, x_hat, resolution)
        terms.append(sc + mag)
    return torch.stack(terms).mean()


def mel_loss(x, x_hat, audio_config):
    """L1 distance between log-mel spectrograms of the two signals."""
    if x.shape != x_hat.shape:
        raise ValueError("mel_loss inputs must have equal length")
    return F.l1_loss(dataio.compute_mel(x_hat, audio_config), dataio.compute_mel(x, audio_config))


@dataclass
class LossReport:
    """Named scalars for every generator loss term plus the discriminator's."""

    duration: float
    pitch: float
    generator_adv: float
    feature_matching: float
    mel: float
    stft: float
    total: float
    discriminator: float = 0.0

    GENERATOR_TERMS = ("duration", "pitch", "generator_adv", "feature_matching", "mel", "stft")

    def recompute_total(self, weights):
        return (
            self.duration + self.pitch + self.generator_adv
            + weights.fm * self.feature_matching
            + weights.mel * self.mel
            + weights.stft * self.stft
        )

    def as_dict(self):
        return {
            "duration": self.duration,
            "pitch": self.pitch,
            "generator_adv": self.generator_adv,
            "feature_matching": self.feature_matching,
            "mel": self.mel,
            "stft": self.stft,
            "total": self.total,
            "discriminator": self.discriminator,
        }


def total_loss(duration, pitch, generator_adv, feature_matching, mel, stft, weights):
    """Weighted sum of all generator terms; rejects non-finite parts by name."""
    parts = {
        "duration": duration,
        "pitch": pitch,
        "generator_adv": generator_adv,
        "feature_matching": feature_matching,
        "mel": mel,
        "stft": stft,
    }
    for name, value in parts.items():
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise FloatingPointError(f"non-finite loss term: {name}")
    return (
        duration + pitch + generator_adv
        + weights.fm * feature_matching + weights.mel * mel + weights.stft * stft
    )


def write_metrics(stream, step, values):
    """Append one (step, name, value) line per scalar to a metrics log."""
    for name, value in values.items():
        stream.write(f"{step}\t{name}\t{float(value)!r}\n")
