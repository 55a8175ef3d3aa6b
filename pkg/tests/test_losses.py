import io
import math

import numpy as np
import pytest
import torch

from litetts import dataio, losses
from litetts.errors import AudioError, ConfigError

from conftest import assert_grad_close

DESK_RESOLUTIONS = ((256, 64, 128), (128, 32, 64))


# ---------------------------------------------------------------------------
# Duration loss
# ---------------------------------------------------------------------------


def test_duration_loss_identity():
    d = torch.tensor([0.3, 1.2, -0.5])
    assert float(losses.duration_loss(d, d)) == 0.0


def test_duration_loss_constant_offset():
    d = torch.tensor([0.3, 1.2, -0.5, 2.0])
    assert float(losses.duration_loss(d + 1.0, d)) == pytest.approx(1.0, abs=1e-7)


def test_duration_loss_matches_hand_mse():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=7), rng.normal(size=7)
    expected = float(np.mean((a - b) ** 2))
    got = float(losses.duration_loss(torch.tensor(a), torch.tensor(b)))
    assert got == pytest.approx(expected, abs=1e-6)


def test_duration_loss_shape_mismatch():
    with pytest.raises(ValueError):
        losses.duration_loss(torch.zeros(3), torch.zeros(4))


def test_duration_loss_mask():
    pred = torch.tensor([[1.0, 5.0], [2.0, 7.0]])
    target = torch.tensor([[0.0, 0.0], [0.0, 0.0]])
    mask = torch.tensor([[True, False], [True, False]])
    assert float(losses.duration_loss(pred, target, mask)) == pytest.approx(2.5)


# ---------------------------------------------------------------------------
# Pitch loss
# ---------------------------------------------------------------------------


def test_pitch_loss_uniform_logits_is_ln256():
    logits = torch.zeros(5, 256)
    bins = torch.tensor([0, 10, 128, 200, 255])
    assert float(losses.pitch_loss(logits, bins)) == pytest.approx(math.log(256), abs=1e-6)


def test_pitch_loss_one_hot_margin_limit():
    bins = torch.tensor([7])
    last = None
    for margin in (5.0, 20.0, 60.0):
        logits = torch.zeros(1, 256)
        logits[0, 7] = margin
        value = float(losses.pitch_loss(logits, bins))
        if last is not None:
            assert value < last
        last = value
    assert last < 1e-12


def test_pitch_loss_two_frame_hand_computed():
    logits = torch.tensor([[0.5, -0.3, 1.1, 0.0], [2.0, 0.1, -1.0, 0.4]])
    bins = torch.tensor([2, 0])
    expected = float(np.mean([
        -(logits[0, 2] - torch.logsumexp(logits[0], 0)).item(),
        -(logits[1, 0] - torch.logsumexp(logits[1], 0)).item(),
    ]))
    assert float(losses.pitch_loss(logits, bins)) == pytest.approx(expected, abs=1e-6)


def test_pitch_loss_out_of_range_bin():
    with pytest.raises(ValueError, match="range"):
        losses.pitch_loss(torch.zeros(1, 256), torch.tensor([256]))


# ---------------------------------------------------------------------------
# Adversarial losses (least-squares GAN)
# ---------------------------------------------------------------------------


def test_lsgan_generator_optimum():
    fake = [torch.ones(2, 5), torch.ones(3)]
    real = [torch.zeros(2, 5), torch.zeros(3)]
    l_g, _ = losses.adversarial_losses(real, fake)
    assert float(l_g) == 0.0


def test_lsgan_discriminator_optimum():
    real = [torch.ones(4), torch.ones(2, 2)]
    fake = [torch.zeros(4), torch.zeros(2, 2)]
    _, l_d = losses.adversarial_losses(real, fake)
    assert float(l_d) == 0.0


def test_lsgan_worst_case_discriminator():
    real = [torch.zeros(4)]
    fake = [torch.ones(4)]
    _, l_d = losses.adversarial_losses(real, fake)
    assert float(l_d) == pytest.approx(2.0)


def test_lsgan_nonnegative_random():
    rng = torch.Generator().manual_seed(1)
    for _ in range(20):
        real = [torch.randn(3, 4, generator=rng)]
        fake = [torch.randn(3, 4, generator=rng)]
        l_g, l_d = losses.adversarial_losses(real, fake)
        assert float(l_g) >= 0 and float(l_d) >= 0


def test_lsgan_empty_scores_rejected():
    with pytest.raises(ValueError, match="empty"):
        losses.adversarial_losses([], [])


# ---------------------------------------------------------------------------
# Feature matching
# ---------------------------------------------------------------------------


def test_feature_matching_identity():
    feats = [[torch.randn(2, 3), torch.randn(4)], [torch.randn(5)]]
    assert float(losses.feature_matching_loss(feats, feats)) == 0.0


def test_feature_matching_constant_offset():
    real = [[torch.randn(2, 3), torch.randn(4)]]
    fake = [[r + 0.7 for r in real[0]]]
    assert float(losses.feature_matching_loss(real, fake)) == pytest.approx(0.7, abs=1e-6)


def test_feature_matching_two_layer_hand_sum():
    r1, r2 = torch.tensor([1.0, 2.0]), torch.tensor([[0.0, 4.0]])
    f1, f2 = torch.tensor([1.5, 1.0]), torch.tensor([[2.0, 3.0]])
    expected = ((0.5 + 1.0) / 2 + (2.0 + 1.0) / 2) / 2
    got = float(losses.feature_matching_loss([[r1, r2]], [[f1, f2]]))
    assert got == pytest.approx(expected, abs=1e-6)


def test_feature_matching_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        losses.feature_matching_loss([[torch.zeros(2)]], [[torch.zeros(3)]])


# ---------------------------------------------------------------------------
# Multi-resolution STFT loss
# ---------------------------------------------------------------------------


def _stft_mag_oracle(x, n_fft, hop, win):
    """Independent numpy reimplementation of centered STFT magnitudes."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    x = np.pad(x, (pad, pad), mode="reflect")
    w = 0.5 * (1 - np.cos(2 * np.pi * np.arange(win) / win))  # periodic hann
    wfull = np.zeros(n_fft)
    left = (n_fft - win) // 2
    wfull[left:left + win] = w
    frames = (len(x) - n_fft) // hop + 1
    mags = np.empty((n_fft // 2 + 1, frames))
    for t in range(frames):
        mags[:, t] = np.abs(np.fft.rfft(x[t * hop:t * hop + n_fft] * wfull))
    return mags


def _stft_loss_oracle(x, x_hat, resolutions):
    total = 0.0
    for n_fft, hop, win in resolutions:
        mx = _stft_mag_oracle(x, n_fft, hop, win)
        mh = _stft_mag_oracle(x_hat, n_fft, hop, win)
        sc = np.linalg.norm(mx - mh) / np.linalg.norm(mx)
        mag = np.mean(np.abs(np.log(mh + losses.STFT_MAG_FLOOR)
                             - np.log(mx + losses.STFT_MAG_FLOOR)))
        total += sc + mag
    return total / len(resolutions)


def test_stft_loss_identity():
    x = torch.randn(512, generator=torch.Generator().manual_seed(0))
    assert float(losses.stft_loss(x, x.clone(), DESK_RESOLUTIONS)) == 0.0


def test_stft_loss_doubled_signal_log_term():
    x = torch.randn(1024, generator=torch.Generator().manual_seed(1)).double()
    for resolution in DESK_RESOLUTIONS:
        sc, mag = losses.stft_loss_terms(x, 2 * x, resolution)
        assert float(mag) == pytest.approx(math.log(2), abs=1e-4)
        assert float(sc) == pytest.approx(1.0, abs=1e-4)


def test_stft_loss_matches_independent_oracle():
    gen = torch.Generator().manual_seed(2)
    x = torch.randn(1000, generator=gen).double()
    x_hat = torch.randn(1000, generator=gen).double()
    got = float(losses.stft_loss(x, x_hat, DESK_RESOLUTIONS))
    expected = _stft_loss_oracle(x.numpy(), x_hat.numpy(), DESK_RESOLUTIONS)
    assert got == pytest.approx(expected, abs=1e-5)


def test_stft_loss_too_short_signal():
    with pytest.raises(AudioError, match="shorter"):
        losses.stft_loss(torch.zeros(64), torch.zeros(64), ((256, 64, 128),))


# ---------------------------------------------------------------------------
# Mel loss
# ---------------------------------------------------------------------------


def test_mel_loss_identity(audio_cfg):
    x = torch.randn(audio_cfg.hop_length * 8, generator=torch.Generator().manual_seed(3))
    assert float(losses.mel_loss(x, x.clone(), audio_cfg)) == 0.0


def test_mel_loss_silence_vs_impulse_train(audio_cfg):
    n = audio_cfg.hop_length * 8
    silence = torch.zeros(n)
    impulses = torch.zeros(n)
    impulses[:: audio_cfg.hop_length // 2] = 1.0
    assert float(losses.mel_loss(silence, impulses, audio_cfg)) > 0


def test_mel_loss_matches_cached_mels(tmp_path, audio_cfg):
    gen = torch.Generator().manual_seed(4)
    x = torch.randn(audio_cfg.hop_length * 6, generator=gen)
    x_hat = torch.randn(audio_cfg.hop_length * 6, generator=gen)
    dataio.save_cache(tmp_path / "a.npy", dataio.compute_mel(x, audio_cfg).numpy())
    dataio.save_cache(tmp_path / "b.npy", dataio.compute_mel(x_hat, audio_cfg).numpy())
    a, b = dataio.load_cache(tmp_path / "a.npy"), dataio.load_cache(tmp_path / "b.npy")
    expected = float(np.abs(a - b).mean())
    assert float(losses.mel_loss(x, x_hat, audio_cfg)) == pytest.approx(expected, abs=1e-6)


# ---------------------------------------------------------------------------
# Total loss
# ---------------------------------------------------------------------------


def test_total_loss_all_zero():
    w = losses.LossWeights(fm=1.0, mel=1.0, stft=1.0)
    assert float(losses.total_loss(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, w)) == 0.0


def test_total_loss_unit_parts_counts_terms():
    w = losses.LossWeights(fm=1.0, mel=1.0, stft=1.0)
    assert float(losses.total_loss(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, w)) == 6.0


def test_total_loss_matches_hand_sum():
    rng = np.random.default_rng(5)
    parts = rng.uniform(0, 3, size=6)
    lam = rng.uniform(0, 3, size=3)
    w = losses.LossWeights(fm=lam[0], mel=lam[1], stft=lam[2])
    expected = parts[0] + parts[1] + parts[2] + lam[0] * parts[3] + lam[1] * parts[4] + lam[2] * parts[5]
    got = float(losses.total_loss(*[float(p) for p in parts], w))
    assert got == pytest.approx(expected, abs=1e-9)


def test_total_loss_rejects_non_finite():
    w = losses.LossWeights()
    with pytest.raises(FloatingPointError, match="mel"):
        losses.total_loss(0.0, 0.0, 0.0, 0.0, float("nan"), 0.0, w)


def test_total_loss_linear_in_each_lambda():
    parts = dict(duration=0.2, pitch=0.4, generator_adv=0.1,
                 feature_matching=0.7, mel=1.3, stft=0.9)
    for lam_name, part_name in (("fm", "feature_matching"), ("mel", "mel"), ("stft", "stft")):
        values = []
        for lam in (0.0, 1.0, 2.0):
            w = losses.LossWeights(**{lam_name: lam})
            base = dict(fm=w.fm, mel=w.mel, stft=w.stft)
            base[lam_name] = lam
            total = losses.total_loss(parts["duration"], parts["pitch"],
                                      parts["generator_adv"], parts["feature_matching"],
                                      parts["mel"], parts["stft"],
                                      losses.LossWeights(**base))
            values.append(float(total))
        slope1 = values[1] - values[0]
        slope2 = values[2] - values[1]
        assert slope1 == pytest.approx(parts[part_name], abs=1e-9)
        assert slope2 == pytest.approx(slope1, abs=1e-9)


def test_loss_weights_reject_negative():
    with pytest.raises(ConfigError):
        losses.LossWeights(fm=-1.0)


def test_loss_report_total_recomputes():
    w = losses.LossWeights(fm=2.0, mel=45.0, stft=1.0)
    report = losses.LossReport(duration=0.1, pitch=0.2, generator_adv=0.3,
                               feature_matching=0.4, mel=0.5, stft=0.6,
                               total=0.0, discriminator=1.0)
    report.total = report.recompute_total(w)
    assert report.total == pytest.approx(0.1 + 0.2 + 0.3 + 2 * 0.4 + 45 * 0.5 + 0.6)


def test_write_metrics_line_format():
    buf = io.StringIO()
    losses.write_metrics(buf, 3, {"mel": 1.25, "total": 2.5})
    assert buf.getvalue() == "3\tmel\t1.25\n3\ttotal\t2.5\n"


# ---------------------------------------------------------------------------
# Finite-difference gradient checks (rel. tol 1e-3)
# ---------------------------------------------------------------------------


def test_grad_duration_loss():
    target = torch.randn(6, generator=torch.Generator().manual_seed(6)).double()
    x0 = torch.randn(6, generator=torch.Generator().manual_seed(7))
    assert_grad_close(lambda x: losses.duration_loss(x, target), x0)


def test_grad_pitch_loss():
    bins = torch.tensor([1, 3, 0])
    x0 = 0.1 * torch.randn(3, 5, generator=torch.Generator().manual_seed(8))
    assert_grad_close(lambda x: losses.pitch_loss(x, bins), x0)


def test_grad_adversarial_generator():
    x0 = torch.randn(2, 3, generator=torch.Generator().manual_seed(9))
    assert_grad_close(lambda x: losses.adversarial_losses([x.detach()], [x])[0], x0)


def test_grad_adversarial_discriminator():
    real = torch.randn(2, 3, generator=torch.Generator().manual_seed(10)).double()
    x0 = torch.randn(2, 3, generator=torch.Generator().manual_seed(11))
    assert_grad_close(lambda x: losses.adversarial_losses([real], [x])[1], x0)


def test_grad_feature_matching():
    real = torch.randn(2, 4, generator=torch.Generator().manual_seed(12)).double()
    x0 = torch.randn(2, 4, generator=torch.Generator().manual_seed(13))
    assert_grad_close(lambda x: losses.feature_matching_loss([[real]], [[x]]), x0)


def test_grad_stft_loss():
    gen = torch.Generator().manual_seed(14)
    x_ref = torch.randn(160, generator=gen).double()
    x0 = torch.randn(160, generator=gen)
    assert_grad_close(lambda x: losses.stft_loss(x_ref, x, ((128, 32, 64),)), x0, eps=1e-5)


def test_grad_mel_loss(audio_cfg):
    gen = torch.Generator().manual_seed(15)
    n = audio_cfg.win_length
    x_ref = torch.randn(n, generator=gen).double()
    x0 = torch.randn(n, generator=gen)
    assert_grad_close(lambda x: losses.mel_loss(x_ref, x, audio_cfg), x0, eps=1e-5)
