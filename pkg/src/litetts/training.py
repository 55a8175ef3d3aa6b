"""Backbone pre-training, adapter/full fine-tuning and synthesis.

Training alternates one discriminator step and one generator step per batch.
Checkpoints are single-file torch containers (see CHECKPOINT_KEYS) holding
named parameter arrays, optimizer/scheduler/RNG state, the resolved config,
id vocabularies and the injected adapter plan; they round-trip bit-exactly
and training is resumable with identical results.
"""

import dataclasses
import hashlib
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import adapters as adapters_mod
from . import dataio, losses
from .acoustic import AcousticModel, duration_targets_log
from .config import Config, config_from_dict, config_to_dict
from .errors import (CheckpointError, ConfigError, LitettsError, TrainingError,
                     VocabularyCollisionError)
from .vocoder import DiscriminatorEnsemble, VocoderGenerator

CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_KEYS = (
    "format_version", "kind", "config", "vocab", "adapter_plan", "generator",
    "discriminator", "optimizer_g", "optimizer_d", "scheduler_g", "scheduler_d",
    "progress", "rng",
)


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


class TTSGenerator(nn.Module):
    """Acoustic model plus vocoder; the full generator G."""

    def __init__(self, config):
        super().__init__()
        self.acoustic = AcousticModel(config.acoustic)
        self.vocoder = VocoderGenerator(config.vocoder, latent_dim=config.acoustic.hidden_dim)

    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    @torch.no_grad()
    def synthesize(self, phoneme_ids, speaker_id, language_id):
        """Deterministic inference; returns a 1-D waveform tensor whose length
        is sum(rounded predicted durations) * hop_length."""
        was_training = self.training
        self.eval()
        try:
            out = self.acoustic.forward_infer(
                torch.as_tensor(phoneme_ids, dtype=torch.int64), speaker_id, language_id
            )
            waveform = self.vocoder(out.latents).squeeze(0)
        finally:
            self.train(was_training)
        return waveform


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _rng_states():
    return {
        "torch": torch.get_rng_state(),
        "numpy": np.random.get_state(),
        "python": random.getstate(),
    }


def _restore_rng(states):
    torch.set_rng_state(states["torch"])
    np.random.set_state(states["numpy"])
    random.setstate(states["python"])


def save_checkpoint(path, *, kind, config, vocab, generator, discriminator=None,
                    adapter_plan=None, optimizer_g=None, optimizer_d=None,
                    scheduler_g=None, scheduler_d=None, progress=None):
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": kind,
        "config": config_to_dict(config) if isinstance(config, Config) else config,
        "vocab": vocab,
        "adapter_plan": adapter_plan.to_config() if adapter_plan is not None else None,
        "generator": generator.state_dict(),
        "discriminator": discriminator.state_dict() if discriminator is not None else None,
        "optimizer_g": optimizer_g.state_dict() if optimizer_g is not None else None,
        "optimizer_d": optimizer_d.state_dict() if optimizer_d is not None else None,
        "scheduler_g": scheduler_g.state_dict() if scheduler_g is not None else None,
        "scheduler_d": scheduler_d.state_dict() if scheduler_d is not None else None,
        "progress": progress or {"global_step": 0, "epoch": 0, "next_batch_idx": 0},
        "rng": _rng_states(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return path


@dataclass
class LoadedCheckpoint:
    path: Path
    kind: str
    config: Config
    vocab: dict
    plan: object  # AdapterPlacementPlan or None
    generator: TTSGenerator
    discriminator: DiscriminatorEnsemble
    raw: dict

    @property
    def progress(self):
        return self.raw["progress"]


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from None
    if not isinstance(raw, dict) or raw.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format "
            f"(expected version {CHECKPOINT_FORMAT_VERSION})"
        )
    config = config_from_dict(raw["config"])
    generator = TTSGenerator(config)
    plan = None
    if raw["adapter_plan"] is not None:
        plan = adapters_mod.AdapterPlacementPlan.from_config(raw["adapter_plan"])
        adapters_mod.inject(generator, plan)
    generator.load_state_dict(raw["generator"])
    discriminator = DiscriminatorEnsemble(config.discriminator)
    if raw["discriminator"] is not None:
        discriminator.load_state_dict(raw["discriminator"])
    return LoadedCheckpoint(
        path=path, kind=raw["kind"], config=config, vocab=raw["vocab"], plan=plan,
        generator=generator, discriminator=discriminator, raw=raw,
    )


def _hash_update(h, obj):
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes() if t.dtype != torch.bfloat16 else t.float().numpy().tobytes())
    elif isinstance(obj, np.ndarray):
        h.update(str(obj.dtype).encode())
        h.update(obj.tobytes())
    elif isinstance(obj, dict):
        for k in sorted(obj, key=str):
            h.update(str(k).encode())
            _hash_update(h, obj[k])
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _hash_update(h, v)
    else:
        h.update(repr(obj).encode())


def state_checksum(obj):
    """sha256 over names, dtypes, shapes and raw bytes of a state structure."""
    h = hashlib.sha256()
    _hash_update(h, obj)
    return h.hexdigest()


def checkpoint_checksum(path):
    """Content hash of a saved checkpoint (parameters, optimizers, progress)."""
    raw = torch.load(path, map_location="cpu", weights_only=False)
    h = hashlib.sha256()
    for key in ("generator", "discriminator", "optimizer_g", "optimizer_d",
                "scheduler_g", "scheduler_d", "progress", "config", "vocab",
                "adapter_plan"):
        _hash_update(h, raw.get(key))
    return h.hexdigest()


def frozen_checksums(model):
    """Per-parameter checksums of every frozen (requires_grad=False) tensor."""
    return {
        name: state_checksum(p) for name, p in model.named_parameters() if not p.requires_grad
    }


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


def make_optimizer(model, opt_cfg, lr):
    """AdamW over trainable parameters; look-up tables get no weight decay so
    rows that receive exactly-zero gradients stay bit-identical."""
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        is_table = name.startswith("tables.") or ".tables." in name
        (no_decay if is_table else decay).append(p)
    groups = [g for g in (
        {"params": decay, "weight_decay": opt_cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ) if g["params"]]
    if not groups:
        raise TrainingError("no trainable parameters to optimize")
    return torch.optim.AdamW(groups, lr=lr, betas=(opt_cfg.beta1, opt_cfg.beta2))


def make_scheduler(optimizer, opt_cfg):
    return torch.optim.lr_scheduler.ExponentialLR(optimizer, gamma=opt_cfg.lr_decay_gamma)


# ---------------------------------------------------------------------------
# GAN trainer
# ---------------------------------------------------------------------------


class GanTrainer:
    """Owns one generator/discriminator pair and the alternating update loop."""

    def __init__(self, config, generator, discriminator, dataset, run_dir, *, lr,
                 debug_dump=False):
        self.config = config
        self.generator = generator
        self.discriminator = discriminator
        self.dataset = dataset
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.optimizer_g = make_optimizer(generator, config.optimizer, lr)
        self.optimizer_d = make_optimizer(discriminator, config.optimizer, lr)
        self.scheduler_g = make_scheduler(self.optimizer_g, config.optimizer)
        self.scheduler_d = make_scheduler(self.optimizer_d, config.optimizer)
        self.global_step = 0
        self.epoch = 0
        self.next_batch_idx = 0
        self.debug_dump = debug_dump
        self._metrics = open(self.run_dir / "metrics.tsv", "a", encoding="utf-8")

    def close(self):
        self._metrics.close()

    # -- state ------------------------------------------------------------

    def progress(self):
        return {
            "global_step": self.global_step,
            "epoch": self.epoch,
            "next_batch_idx": self.next_batch_idx,
        }

    def restore(self, raw):
        if raw.get("optimizer_g"):
            self.optimizer_g.load_state_dict(raw["optimizer_g"])
        if raw.get("optimizer_d"):
            self.optimizer_d.load_state_dict(raw["optimizer_d"])
        if raw.get("scheduler_g"):
            self.scheduler_g.load_state_dict(raw["scheduler_g"])
        if raw.get("scheduler_d"):
            self.scheduler_d.load_state_dict(raw["scheduler_d"])
        progress = raw["progress"]
        self.global_step = progress["global_step"]
        self.epoch = progress["epoch"]
        self.next_batch_idx = progress["next_batch_idx"]
        _restore_rng(raw["rng"])

    # -- data -------------------------------------------------------------

    def _epoch_batches(self):
        return dataio.iter_batches(
            self.dataset, self.config.training.batch_size, self.epoch,
            self.config.seed, start_batch=self.next_batch_idx,
        )

    def _segment(self, batch, latents):
        """Deterministic per-step random crop, reproducible from (seed, step)."""
        seg = min(self.config.training.segment_frames, int(batch.frame_lengths.min()))
        hop = self.config.audio.hop_length
        rng = np.random.default_rng([self.config.seed, 104729, self.global_step])
        lat_segs, wav_segs = [], []
        for i in range(latents.shape[0]):
            start = int(rng.integers(0, int(batch.frame_lengths[i]) - seg + 1))
            lat_segs.append(latents[i, start:start + seg])
            wav_segs.append(batch.waveform[i, start * hop:(start + seg) * hop])
        return torch.stack(lat_segs), torch.stack(wav_segs)

    # -- one optimization step ---------------------------------------------

    def _forward(self, batch):
        out = self.generator.acoustic.forward_teacher(batch)
        latents, wav_real = self._segment(batch, out.latents)
        wav_fake = self.generator.vocoder(latents)
        if self.debug_dump and self.global_step == 0:
            dump = self.run_dir / "debug"
            dump.mkdir(exist_ok=True)
            np.save(dump / "step0_log_dur_pred.npy", out.log_durations.detach().numpy())
            np.save(dump / "step0_log_dur_target.npy",
                    duration_targets_log(batch.durations).numpy())
            np.save(dump / "step0_phoneme_mask.npy", batch.phoneme_mask.numpy())
        return out, wav_real, wav_fake

    def step(self, micro_batches):
        """One D update then one G update, averaged over the micro batches."""
        accum = len(micro_batches)
        forwards = [self._forward(b) for b in micro_batches]

        self.optimizer_d.zero_grad(set_to_none=True)
        d_total = 0.0
        for _, wav_real, wav_fake in forwards:
            real_pairs = self.discriminator(wav_real)
            fake_pairs = self.discriminator(wav_fake.detach())
            _, l_d = losses.adversarial_losses(
                [s for s, _ in real_pairs], [s for s, _ in fake_pairs]
            )
            (l_d / accum).backward()
            d_total += float(l_d.detach()) / accum
        self.optimizer_d.step()

        self.optimizer_g.zero_grad(set_to_none=True)
        report_sums = dict.fromkeys(losses.LossReport.GENERATOR_TERMS + ("total",), 0.0)
        for (out, wav_real, wav_fake), batch in zip(forwards, micro_batches):
            l_dur = losses.duration_loss(
                out.log_durations, duration_targets_log(batch.durations), batch.phoneme_mask
            )
            frames = out.pitch_logits.shape[1]
            l_f0 = losses.pitch_loss(
                out.pitch_logits, batch.pitch_bins[:, :frames], out.frame_mask
            )
            with torch.no_grad():
                real_pairs = self.discriminator(wav_real)
            fake_pairs = self.discriminator(wav_fake)
            l_adv, _ = losses.adversarial_losses(
                [s for s, _ in real_pairs], [s for s, _ in fake_pairs]
            )
            l_fm = losses.feature_matching_loss(
                [f for _, f in real_pairs], [f for _, f in fake_pairs]
            )
            l_mel = losses.mel_loss(wav_real, wav_fake, self.config.audio)
            l_stft = losses.stft_loss(wav_real, wav_fake, self.config.training.stft_resolutions)
            try:
                total = losses.total_loss(l_dur, l_f0, l_adv, l_fm, l_mel, l_stft,
                                          self.config.losses)
            except FloatingPointError as e:
                raise TrainingError(f"step {self.global_step}: {e}") from None
            (total / accum).backward()
            for name, value in (("duration", l_dur), ("pitch", l_f0), ("generator_adv", l_adv),
                                ("feature_matching", l_fm), ("mel", l_mel), ("stft", l_stft),
                                ("total", total)):
                report_sums[name] += float(value.detach()) / accum
        self.optimizer_g.step()

        report = losses.LossReport(
            duration=report_sums["duration"], pitch=report_sums["pitch"],
            generator_adv=report_sums["generator_adv"],
            feature_matching=report_sums["feature_matching"], mel=report_sums["mel"],
            stft=report_sums["stft"], total=report_sums["total"], discriminator=d_total,
        )
        losses.write_metrics(self._metrics, self.global_step, report.as_dict())
        self._metrics.flush()
        if not np.isfinite(report.total):
            raise TrainingError(f"step {self.global_step}: non-finite total loss")
        self.global_step += 1
        return report

    # -- loops --------------------------------------------------------------

    def _chunks(self, iterator, size):
        chunk = []
        for _, batch in iterator:
            chunk.append(batch)
            if len(chunk) == size:
                yield chunk
                chunk = []
        if chunk:
            yield chunk

    def run_steps(self, target_steps, checkpoint_fn=None):
        """Step-bounded training (backbone); epochs roll over as needed."""
        accum = self.config.training.grad_accumulation
        every = self.config.training.checkpoint_every
        while self.global_step < target_steps:
            for chunk in self._chunks(self._tracking(self._epoch_batches()), accum):
                self.step(chunk)
                if checkpoint_fn and (self.global_step % every == 0
                                      or self.global_step >= target_steps):
                    checkpoint_fn(self)
                if self.global_step >= target_steps:
                    return
            self.epoch += 1
            self.next_batch_idx = 0
            self.scheduler_g.step()
            self.scheduler_d.step()

    def run_epochs(self, target_epochs, checkpoint_fn=None):
        """Epoch-bounded training (fine-tuning); returns per-epoch mean totals."""
        accum = self.config.training.grad_accumulation
        epoch_means = []
        while self.epoch < target_epochs:
            totals = []
            for chunk in self._chunks(self._tracking(self._epoch_batches()), accum):
                totals.append(self.step(chunk).total)
            self.epoch += 1
            self.next_batch_idx = 0
            self.scheduler_g.step()
            self.scheduler_d.step()
            if totals:
                epoch_means.append(float(np.mean(totals)))
            if checkpoint_fn:
                checkpoint_fn(self)
        return epoch_means

    def _tracking(self, iterator):
        for b, batch in iterator:
            self.next_batch_idx = b + 1
            yield b, batch


# ---------------------------------------------------------------------------
# Workflows
# ---------------------------------------------------------------------------


def _manifest_vocab(manifest):
    return {
        "phonemes": list(manifest.phoneme_vocab.symbols),
        "speakers": list(manifest.speaker_vocab.symbols),
        "languages": list(manifest.language_vocab.symbols),
    }


def _check_vocab_capacity(config, vocab):
    problems = []
    if len(vocab["phonemes"]) > config.acoustic.phoneme_vocab_size:
        problems.append(
            f"{len(vocab['phonemes'])} phonemes exceed acoustic.phoneme_vocab_size "
            f"{config.acoustic.phoneme_vocab_size}"
        )
    if len(vocab["speakers"]) > config.acoustic.n_speakers:
        problems.append(f"{len(vocab['speakers'])} speakers exceed acoustic.n_speakers")
    if len(vocab["languages"]) > config.acoustic.n_languages:
        problems.append(f"{len(vocab['languages'])} languages exceed acoustic.n_languages")
    if problems:
        raise ConfigError(problems)


def train_backbone(config, dataset, run_dir, steps=None, resume=None, debug_dump=False):
    """Pre-train generator and discriminators; returns the checkpoint path."""
    run_dir = Path(run_dir)
    vocab = _manifest_vocab(dataset.manifest)
    _check_vocab_capacity(config, vocab)
    if resume is None:
        seed_everything(config.seed)
    generator = TTSGenerator(config)
    discriminator = DiscriminatorEnsemble(config.discriminator)
    trainer = GanTrainer(config, generator, discriminator, dataset, run_dir,
                         lr=config.optimizer.lr_backbone, debug_dump=debug_dump)
    if resume is not None:
        loaded = load_checkpoint(resume)
        generator.load_state_dict(loaded.raw["generator"])
        discriminator.load_state_dict(loaded.raw["discriminator"])
        trainer.restore(loaded.raw)
    target = steps if steps is not None else config.training.backbone_steps
    out_path = run_dir / "backbone.pt"

    def save(t):
        save_checkpoint(
            out_path, kind="backbone", config=config, vocab=vocab,
            generator=generator, discriminator=discriminator,
            optimizer_g=t.optimizer_g, optimizer_d=t.optimizer_d,
            scheduler_g=t.scheduler_g, scheduler_d=t.scheduler_d, progress=t.progress(),
        )

    try:
        trainer.run_steps(target, checkpoint_fn=save)
        save(trainer)
    finally:
        trainer.close()
    return out_path


@dataclass(frozen=True)
class FinetuneSettings:
    task: str = "language"  # "language" (new L2) or "speaker" (new unseen voice)
    mode: str = "adapters"  # "adapters" or "full"
    plan_variant: str = "paper_default"
    epochs: int = 0  # 0 = config.training.finetune_epochs
    seed: int = 0  # 0 = config seed

    def __post_init__(self):
        problems = []
        if self.task not in ("language", "speaker"):
            problems.append(f"finetune task must be language or speaker, got {self.task!r}")
        if self.mode not in ("adapters", "full"):
            problems.append(f"finetune mode must be adapters or full, got {self.mode!r}")
        if self.plan_variant not in adapters_mod.PLAN_VARIANTS:
            problems.append(f"unknown plan variant {self.plan_variant!r}")
        if problems:
            raise ConfigError(problems)


def init_fresh_table_rows(tables, base_counts, added_counts):
    """Initialise the rows newly assigned ids will occupy to the mean of the
    rows the backbone actually used; tables are pre-allocated at capacity."""
    with torch.no_grad():
        for table, key in ((tables.phoneme, "phonemes"), (tables.speaker, "speakers"),
                           (tables.language, "languages")):
            start, extra = base_counts[key], added_counts[key]
            if extra:
                table.weight[start:start + extra] = table.weight[:start].mean(dim=0)


def merge_vocabularies(base_vocab, manifest):
    """Append the manifest's unseen symbols to the checkpoint vocabularies.

    Unseen-speaker/-language adaptation targets symbols the backbone has never
    seen; re-declaring an existing speaker or language is a collision. Phoneme
    overlap is allowed (shared phonemes train during fine-tuning, which forgoes
    bit-exact recovery for utterances using them).
    """
    for kind in ("speakers", "languages"):
        manifest_symbols = {
            "speakers": manifest.speaker_vocab.symbols,
            "languages": manifest.language_vocab.symbols,
        }[kind]
        clash = sorted(set(base_vocab[kind]) & set(manifest_symbols))
        if clash:
            raise VocabularyCollisionError(
                f"fine-tune manifest re-declares existing {kind}: {clash}"
            )
    merged = {k: list(v) for k, v in base_vocab.items()}
    added = {}
    for kind, symbols in (("phonemes", manifest.phoneme_vocab.symbols),
                          ("speakers", manifest.speaker_vocab.symbols),
                          ("languages", manifest.language_vocab.symbols)):
        fresh = [s for s in symbols if s not in merged[kind]]
        merged[kind].extend(fresh)
        added[kind] = fresh
    return merged, added


def finetune(checkpoint_path, manifest, settings, run_dir):
    """Fine-tune a backbone to a new language or speaker; returns a path.

    In adapters mode the placement plan is injected before freezing and the
    frozen partition is bit-identical end to end; in full mode every
    parameter may change.
    """
    run_dir = Path(run_dir)
    loaded = load_checkpoint(checkpoint_path)
    config = loaded.config
    if settings.seed:
        config = dataclasses.replace(config, seed=settings.seed)
    seed_everything(config.seed)
    merged_vocab, added = merge_vocabularies(loaded.vocab, manifest)
    _check_vocab_capacity(config, merged_vocab)

    generator = loaded.generator
    if loaded.plan is not None:
        raise CheckpointError("checkpoint already contains adapters; fine-tune from a backbone")
    base_counts = {k: len(v) for k, v in loaded.vocab.items()}
    added_counts = {k: len(v) for k, v in added.items()}
    init_fresh_table_rows(generator.acoustic.tables, base_counts, added_counts)

    plan = None
    if settings.mode == "adapters":
        plan = adapters_mod.build_placement_plan(
            generator, "both", settings.plan_variant, config.adapters
        )
        adapters_mod.inject(generator, plan)
        adapters_mod.apply_freeze(generator, adapters_mod.FreezeSpec())
        lr = config.optimizer.lr_finetune_adapters
    else:
        for p in generator.parameters():
            p.requires_grad_(True)
        lr = config.optimizer.lr_finetune_full

    # rebuild the dataset against the merged id space (manifest left untouched)
    merged_manifest = dataio.Manifest(
        entries=manifest.entries,
        phoneme_vocab=dataio.Vocabulary(merged_vocab["phonemes"]),
        speaker_vocab=dataio.Vocabulary(merged_vocab["speakers"]),
        language_vocab=dataio.Vocabulary(merged_vocab["languages"]),
    )
    dataset = dataio.UtteranceDataset(merged_manifest, config.audio)

    discriminator = loaded.discriminator
    trainer = GanTrainer(config, generator, discriminator, dataset, run_dir, lr=lr)
    epochs = settings.epochs or config.training.finetune_epochs
    out_path = run_dir / "finetuned.pt"

    def save(t):
        save_checkpoint(
            out_path, kind="finetuned", config=config, vocab=merged_vocab,
            generator=generator, discriminator=discriminator, adapter_plan=plan,
            optimizer_g=t.optimizer_g, optimizer_d=t.optimizer_d,
            scheduler_g=t.scheduler_g, scheduler_d=t.scheduler_d, progress=t.progress(),
        )

    try:
        epoch_means = trainer.run_epochs(epochs, checkpoint_fn=save)
        save(trainer)
    finally:
        trainer.close()
    np.save(run_dir / "epoch_mean_total.npy", np.array(epoch_means))
    return out_path


def synthesize(checkpoint, phonemes, speaker, language, seed=None):
    """Synthesize a waveform for phoneme symbols with a saved checkpoint."""
    loaded = checkpoint if isinstance(checkpoint, LoadedCheckpoint) else load_checkpoint(checkpoint)
    seed_everything(seed if seed is not None else loaded.config.seed)
    vocab = loaded.vocab
    unknown = [p for p in phonemes if p not in vocab["phonemes"]]
    if unknown:
        raise LitettsError(f"unknown phoneme symbol(s): {unknown}", category="unknown-id")
    ids = [vocab["phonemes"].index(p) for p in phonemes]
    if speaker not in vocab["speakers"]:
        raise LitettsError(f"unknown speaker {speaker!r}", category="unknown-id")
    if language not in vocab["languages"]:
        raise LitettsError(f"unknown language {language!r}", category="unknown-id")
    waveform = loaded.generator.synthesize(
        ids, vocab["speakers"].index(speaker), vocab["languages"].index(language)
    )
    return waveform.numpy()


def make_run_dir(base_dir, seed, prefix="run"):
    """runs/<prefix>-<timestamp>-seed<seed>; unique per invocation."""
    base = Path(base_dir)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    path = base / f"{prefix}-{stamp}-seed{seed}"
    counter = 0
    while path.exists():
        counter += 1
        path = base / f"{prefix}-{stamp}-{counter}-seed{seed}"
    path.mkdir(parents=True)
    return path
