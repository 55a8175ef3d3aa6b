"""Objective evaluation: speaker-embedding cosine similarity (SECS), the
phoneme-substitution-rate (PSR) accent-nativeness metric backed by a CTC
phoneme recognizer, MUSHRA-pair ranking validation, and a pluggable
external-scorer interface for third-party quality metrics.
"""

import dataclasses
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dataio
from .errors import CheckpointError, EvaluationError

REPORT_FORMAT_VERSION = 1
NOT_EVALUATED = "not evaluated"


# ---------------------------------------------------------------------------
# Speaker similarity
# ---------------------------------------------------------------------------


class MelStatsEmbedder:
    """Deterministic stand-in for a d-vector speaker encoder.

    Embeds an utterance as the per-bin mean and standard deviation of its
    log-mel spectrogram, optionally standardised by statistics fitted on a
    reference corpus, then L2-normalised. Any embedder with a unit-norm
    ``embed(waveform)`` can replace it.
    """

    def __init__(self, audio_config):
        self.audio_config = audio_config
        self._mean = None
        self._std = None

    def _features(self, waveform):
        mel = dataio.compute_mel(torch.as_tensor(waveform, dtype=torch.float32),
                                 self.audio_config)
        return torch.cat([mel.mean(dim=0), mel.std(dim=0)]).numpy()

    def fit(self, waveforms):
        feats = np.stack([self._features(w) for w in waveforms])
        self._mean = feats.mean(axis=0)
        self._std = np.maximum(feats.std(axis=0), 1e-8)
        return self

    def embed(self, waveform):
        f = self._features(waveform)
        if self._mean is not None:
            f = (f - self._mean) / self._std
        norm = np.linalg.norm(f)
        if norm == 0:
            raise EvaluationError("degenerate embedding (zero norm)")
        return f / norm


def secs(ref_waveform, syn_waveform, embedder):
    """Cosine similarity of the two speaker embeddings, in [-1, 1]."""
    a = np.asarray(embedder.embed(ref_waveform), dtype=np.float64)
    b = np.asarray(embedder.embed(syn_waveform), dtype=np.float64)
    value = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
    return max(-1.0, min(1.0, value))


# ---------------------------------------------------------------------------
# CTC phoneme recognition
# ---------------------------------------------------------------------------


def ctc_loss(log_probs, labels, blank):
    """Negative log-likelihood of ``labels`` by the CTC forward algorithm.

    log_probs: (T, C) log-simplex rows; labels: id sequence without blanks.
    Computed in log space over the blank-augmented label lattice; the result
    is differentiable w.r.t. log_probs.
    """
    T = log_probs.shape[0]
    labels = list(labels)
    extended = [blank]
    for l in labels:
        extended += [int(l), blank]
    S = len(extended)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    if T < len(labels) + repeats:
        raise EvaluationError(
            f"label of length {len(labels)} (+{repeats} repeats) cannot align to {T} frames"
        )
    neg_inf = torch.finfo(log_probs.dtype).min
    alpha = log_probs.new_full((S,), neg_inf)
    alpha[0] = log_probs[0, blank]
    if S > 1:
        alpha[1] = log_probs[0, extended[1]]
    for t in range(1, T):
        stay = alpha
        step = torch.cat([alpha.new_full((1,), neg_inf), alpha])[:S]
        skip = torch.cat([alpha.new_full((2,), neg_inf), alpha])[:S]
        allow_skip = torch.tensor(
            [s >= 2 and extended[s] != blank and extended[s] != extended[s - 2]
             for s in range(S)],
            device=log_probs.device,
        )
        skip = torch.where(allow_skip, skip, skip.new_full((S,), neg_inf))
        alpha = torch.logsumexp(torch.stack([stay, step, skip]), dim=0)
        alpha = alpha + log_probs[t, extended]
    tail = alpha[-1] if S == 1 else torch.logsumexp(torch.stack([alpha[-1], alpha[-2]]), dim=0)
    return -tail


def ctc_greedy_decode(log_probs, blank):
    """Best-path decoding: frame argmax, collapse repeats, drop blanks."""
    path = torch.as_tensor(log_probs).argmax(dim=-1).tolist()
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(int(p))
        prev = p
    return out


class ConvCtcRecognizer(nn.Module):
    """Small trainable conv recognizer standing in for a foundation-model MDD
    system; ``posteriors`` satisfies the pluggable recognizer interface."""

    def __init__(self, audio_config, symbols, hidden=64):
        super().__init__()
        self.audio_config = audio_config
        self.symbols = list(symbols)
        self.blank = len(self.symbols)
        self.convs = nn.Sequential(
            nn.Conv1d(audio_config.mel_bins, hidden, 5, padding=2),
            nn.ReLU(),
            nn.Conv1d(hidden, hidden, 5, padding=2),
            nn.ReLU(),
        )
        self.head = nn.Linear(hidden, len(self.symbols) + 1)

    def forward(self, mel):
        # mel: (T, mel_bins) -> (T, P + 1) log-probabilities
        x = self.convs(mel.t().unsqueeze(0))
        return F.log_softmax(self.head(x.squeeze(0).t()), dim=-1)

    @torch.no_grad()
    def posteriors(self, waveform):
        """Frame-level log-probabilities over P phonemes followed by blank."""
        was_training = self.training
        self.eval()
        try:
            mel = dataio.compute_mel(torch.as_tensor(waveform, dtype=torch.float32),
                                     self.audio_config)
            return self.forward(mel)
        finally:
            self.train(was_training)

    def transcribe(self, waveform):
        ids = ctc_greedy_decode(self.posteriors(waveform), self.blank)
        return [self.symbols[i] for i in ids]


def ctc_train(recognizer, corpus, epochs=10, lr=1e-3, seed=0):
    """Train a recognizer on (waveform, phoneme symbol list) pairs.

    Per-sample failures (e.g. labels longer than the frame count) abort with
    the offending sample index.
    """
    index = {s: i for i, s in enumerate(recognizer.symbols)}
    prepared = []
    for i, (waveform, symbols) in enumerate(corpus):
        unknown = [s for s in symbols if s not in index]
        if unknown:
            raise EvaluationError(f"sample {i}: phonemes outside recognizer vocabulary: {unknown}")
        mel = dataio.compute_mel(torch.as_tensor(waveform, dtype=torch.float32),
                                 recognizer.audio_config)
        prepared.append((mel, [index[s] for s in symbols], i))
    optimizer = torch.optim.Adam(recognizer.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    recognizer.train()
    for _ in range(epochs):
        order = torch.randperm(len(prepared), generator=generator).tolist()
        for j in order:
            mel, labels, i = prepared[j]
            log_probs = recognizer(mel)
            try:
                loss = ctc_loss(log_probs, labels, recognizer.blank)
            except EvaluationError as e:
                raise EvaluationError(f"sample {i}: {e}") from None
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    recognizer.eval()
    return recognizer


def ctc_corpus_loss(recognizer, corpus):
    """Mean CTC loss over a corpus, for monitoring training progress."""
    index = {s: i for i, s in enumerate(recognizer.symbols)}
    total = 0.0
    with torch.no_grad():
        for waveform, symbols in corpus:
            mel = dataio.compute_mel(torch.as_tensor(waveform, dtype=torch.float32),
                                     recognizer.audio_config)
            total += float(ctc_loss(recognizer(mel), [index[s] for s in symbols],
                                    recognizer.blank))
    return total / len(corpus)


RECOGNIZER_FORMAT_VERSION = 1


def save_recognizer(path, recognizer):
    payload = {
        "format_version": RECOGNIZER_FORMAT_VERSION,
        "kind": "recognizer",
        "audio": dataclass_to_dict(recognizer.audio_config),
        "symbols": recognizer.symbols,
        "hidden": recognizer.convs[0].out_channels,
        "state": recognizer.state_dict(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)
    return Path(path)


def load_recognizer(path):
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"recognizer checkpoint not found: {path}")
    raw = torch.load(path, map_location="cpu", weights_only=False)
    if raw.get("kind") != "recognizer" or raw.get("format_version") != RECOGNIZER_FORMAT_VERSION:
        raise CheckpointError(f"{path}: not a recognizer checkpoint")
    audio = dataio.AudioConfig(**raw["audio"])
    recognizer = ConvCtcRecognizer(audio, raw["symbols"], hidden=raw["hidden"])
    recognizer.load_state_dict(raw["state"])
    recognizer.eval()
    return recognizer


def dataclass_to_dict(obj):
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


# ---------------------------------------------------------------------------
# Alignment and PSR
# ---------------------------------------------------------------------------


@dataclass
class AlignmentResult:
    matches: int
    substitutions: int
    insertions: int
    deletions: int
    pairs: list = field(default_factory=list)  # (ref symbol or None, hyp symbol or None)

    @property
    def distance(self):
        return self.substitutions + self.insertions + self.deletions


def align(reference, hypothesis):
    """Minimum-edit-distance alignment with unit costs.

    The backtrace tie-break prefers match > substitution > deletion >
    insertion, making the per-class counts deterministic.
    """
    ref, hyp = list(reference), list(hypothesis)
    R, H = len(ref), len(hyp)
    dp = [list(range(H + 1))] + [[i] + [0] * H for i in range(1, R + 1)]
    for i in range(1, R + 1):
        row, prev = dp[i], dp[i - 1]
        ri = ref[i - 1]
        for j in range(1, H + 1):
            best = prev[j - 1] + (ri != hyp[j - 1])
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if row[j - 1] + 1 < best:
                best = row[j - 1] + 1
            row[j] = best
    i, j = R, H
    pairs = []
    matches = subs = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i][j] == dp[i - 1][j - 1]:
            pairs.append((ref[i - 1], hyp[j - 1]))
            matches += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            pairs.append((ref[i - 1], hyp[j - 1]))
            subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            pairs.append((ref[i - 1], None))
            dels += 1
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            ins += 1
            j -= 1
    pairs.reverse()
    return AlignmentResult(matches=matches, substitutions=subs, insertions=ins,
                           deletions=dels, pairs=pairs)


def psr(reference, hypothesis):
    """Percentage of reference phonemes substituted by a different phoneme."""
    reference = list(reference)
    if not reference:
        raise EvaluationError("PSR is undefined for an empty reference")
    return 100.0 * align(reference, hypothesis).substitutions / len(reference)


def error_rates(reference, hypothesis):
    """Substitution/insertion/deletion percentages relative to the reference,
    reported alongside PSR for transparency."""
    reference = list(reference)
    if not reference:
        raise EvaluationError("error rates are undefined for an empty reference")
    result = align(reference, hypothesis)
    scale = 100.0 / len(reference)
    return {
        "psr": result.substitutions * scale,
        "insertion_rate": result.insertions * scale,
        "deletion_rate": result.deletions * scale,
    }


def psr_corpus(items, recognizer):
    """(mean, std) of per-utterance PSR; items are (utt_id, reference symbols,
    waveform) triples. std is the population standard deviation."""
    if not items:
        raise EvaluationError("psr_corpus needs at least one utterance")
    values = []
    for utt_id, reference, waveform in items:
        try:
            values.append(psr(reference, recognizer.transcribe(waveform)))
        except Exception as e:
            raise EvaluationError(f"utterance {utt_id}: {e}") from e
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std())


# ---------------------------------------------------------------------------
# MUSHRA-pair validation
# ---------------------------------------------------------------------------


@dataclass
class MushraPair:
    system_a: str
    system_b: str
    mushra_a: float
    mushra_b: float
    items_a: list  # (utt_id, reference symbols, waveform)
    items_b: list

    def __post_init__(self):
        for name, score in (("a", self.mushra_a), ("b", self.mushra_b)):
            if not 0 <= score <= 100:
                raise EvaluationError(
                    f"MUSHRA score for system_{name} must be in [0, 100], got {score}"
                )


@dataclass
class MushraValidation:
    accuracy: float
    evaluated: int
    successes: int
    skipped: list  # (system_a, system_b, reason)
    per_pair: list  # dict rows


def validate_against_mushra(pairs, recognizer):
    """Fraction of pairs where the higher-MUSHRA system has strictly lower
    corpus PSR. A PSR tie counts as failure; a MUSHRA tie skips the pair."""
    if not pairs:
        raise EvaluationError("no MUSHRA pairs to validate")
    successes = 0
    evaluated = 0
    skipped = []
    rows = []
    for pair in pairs:
        if pair.mushra_a == pair.mushra_b:
            skipped.append((pair.system_a, pair.system_b, "MUSHRA tie"))
            continue
        psr_a, _ = psr_corpus(pair.items_a, recognizer)
        psr_b, _ = psr_corpus(pair.items_b, recognizer)
        winner_psr, loser_psr = (psr_a, psr_b) if pair.mushra_a > pair.mushra_b else (psr_b, psr_a)
        success = winner_psr < loser_psr
        evaluated += 1
        successes += int(success)
        rows.append({
            "system_a": pair.system_a, "system_b": pair.system_b,
            "mushra_a": pair.mushra_a, "mushra_b": pair.mushra_b,
            "psr_a": psr_a, "psr_b": psr_b, "success": success,
        })
    if evaluated == 0:
        raise EvaluationError("every MUSHRA pair was tied; nothing to validate")
    return MushraValidation(accuracy=successes / evaluated, evaluated=evaluated,
                            successes=successes, skipped=skipped, per_pair=rows)


def load_mushra_pairs(path, audio_config):
    """Tabular pair file: system_a, system_b, mushra_a, mushra_b, manifest_a,
    manifest_b (tab-separated; manifests provide audio + reference phonemes)."""
    path = Path(path)
    if not path.exists():
        raise EvaluationError(f"MUSHRA pair file not found: {path}")
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise EvaluationError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
            sys_a, sys_b, score_a, score_b, man_a, man_b = fields
            items = []
            for manifest_path in (man_a, man_b):
                manifest = dataio.load_manifest(path.parent / manifest_path, audio_config)
                items.append([
                    (f"{manifest_path}:{i}", e.phonemes,
                     dataio.read_wav(e.audio_path, expected_rate=audio_config.sample_rate))
                    for i, e in enumerate(manifest.entries)
                ])
            pairs.append(MushraPair(sys_a, sys_b, float(score_a), float(score_b),
                                    items[0], items[1]))
    return pairs


# ---------------------------------------------------------------------------
# External quality scorers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExternalScorer:
    """Shell command scoring a (reference, synthesized) WAV pair.

    The command template receives {ref} and {syn} placeholders and must print
    a single float on stdout. Unconfigured metrics are reported as
    "not evaluated", never fabricated.
    """

    name: str
    command: str

    def score(self, ref_path, syn_path):
        argv = [a.format(ref=str(ref_path), syn=str(syn_path))
                for a in shlex.split(self.command)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=300)
        except FileNotFoundError:
            raise EvaluationError(f"scorer {self.name!r}: command not found: {argv[0]}") from None
        if proc.returncode != 0:
            raise EvaluationError(
                f"scorer {self.name!r} failed ({proc.returncode}): {proc.stderr.strip()}"
            )
        try:
            return float(proc.stdout.strip().splitlines()[-1])
        except (ValueError, IndexError):
            raise EvaluationError(
                f"scorer {self.name!r} printed no parseable float: {proc.stdout!r}"
            ) from None


BUILTIN_METRICS = ("secs", "psr")


def evaluate_checkpoint(loaded, manifest, metrics, out_dir, *, recognizer=None,
                        embedder=None, external_scorers=None):
    """Synthesize every manifest entry and score it against the reference.

    Returns the report document (also suitable for JSON serialisation):
    per-utterance rows plus corpus aggregates (mean, std) per metric.
    """
    from . import training as training_mod

    external_scorers = external_scorers or {}
    out_dir = Path(out_dir)
    syn_dir = out_dir / "synthesized"
    syn_dir.mkdir(parents=True, exist_ok=True)
    audio_config = loaded.config.audio
    if "secs" in metrics and embedder is None:
        embedder = MelStatsEmbedder(audio_config)
    if "psr" in metrics and recognizer is None:
        raise EvaluationError("psr requested but no recognizer given")

    rows = []
    per_metric = {m: [] for m in metrics}
    for i, entry in enumerate(manifest.entries):
        utt_id = f"{i:05d}_{entry.audio_path.stem}"
        ref_wav = dataio.read_wav(entry.audio_path, expected_rate=audio_config.sample_rate)
        syn_wav = training_mod.synthesize(loaded, entry.phonemes, entry.speaker, entry.language)
        syn_path = syn_dir / f"{utt_id}.wav"
        dataio.write_wav(syn_path, syn_wav, audio_config.sample_rate)
        row = {"utt_id": utt_id, "speaker": entry.speaker, "language": entry.language}
        for metric in metrics:
            if metric == "secs":
                value = secs(ref_wav, syn_wav, embedder)
            elif metric == "psr":
                rates = error_rates(entry.phonemes, recognizer.transcribe(syn_wav))
                row["insertion_rate"] = rates["insertion_rate"]
                row["deletion_rate"] = rates["deletion_rate"]
                value = rates["psr"]
            elif metric in external_scorers:
                value = external_scorers[metric].score(entry.audio_path, syn_path)
            else:
                row[metric] = NOT_EVALUATED
                continue
            row[metric] = value
            per_metric[metric].append(value)
        rows.append(row)

    aggregates = {}
    for metric in metrics:
        values = per_metric[metric]
        if values:
            arr = np.asarray(values, dtype=np.float64)
            aggregates[metric] = {"mean": float(arr.mean()), "std": float(arr.std())}
        else:
            aggregates[metric] = NOT_EVALUATED
    return {
        "format_version": REPORT_FORMAT_VERSION,
        "metrics": list(metrics),
        "utterances": rows,
        "aggregates": aggregates,
    }
