"""Vocabulary files, WAV files, manifests and audio pools."""
from __future__ import annotations

import os
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, InvalidArgumentError, UnknownTokenError
from .synth import SAMPLE_RATE, Utterance, Waveform

BLANK_SYMBOL = "<blank>"


class Vocabulary:
    """Word list; id 0 is reserved for blank, word ``k`` (1-based line) has id ``k``."""

    def __init__(self, words: Sequence[str]):
        words = list(words)
        if len(set(words)) != len(words):
            raise ConfigurationError("vocabulary words must be unique")
        if BLANK_SYMBOL in words:
            raise ConfigurationError(f"{BLANK_SYMBOL} is reserved")
        self.words = words
        self._ids = {w: i + 1 for i, w in enumerate(words)}

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")])

    def save(self, path) -> None:
        atomic_write_text(path, "".join(w + "\n" for w in self.words))

    def __len__(self) -> int:
        """Output vocabulary size including blank."""
        return len(self.words) + 1

    def id(self, word: str) -> int:
        try:
            return self._ids[word]
        except KeyError:
            raise UnknownTokenError(word) from None

    def word(self, token_id: int) -> str:
        if not 1 <= token_id <= len(self.words):
            raise UnknownTokenError(token_id)
        return self.words[token_id - 1]

    def encode(self, transcript: str) -> tuple[int, ...]:
        return tuple(self.id(w) for w in transcript.split())

    def decode(self, tokens: Iterable[int]) -> str:
        return " ".join(self.word(t) for t in tokens)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_wav(path, x: Waveform) -> None:
    """16-bit signed PCM, mono, 16 kHz."""
    pcm = np.clip(np.round(x.samples * 32767.0), -32768, 32767).astype("<i2")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with wave.open(str(tmp), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(x.sample_rate)
        w.writeframes(pcm.tobytes())
    os.replace(tmp, path)


def read_wav(path) -> Waveform:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise InvalidArgumentError(f"{path}: expected mono 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise InvalidArgumentError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
    return Waveform(data.astype(np.float64) / 32768.0)


def load_pool(directory) -> list[Waveform]:
    """All ``*.wav`` files of a directory in lexicographic filename order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"audio pool directory {directory} does not exist")
    return [read_wav(p) for p in sorted(directory.glob("*.wav"), key=lambda p: p.name)]


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    audio_path: str
    transcript: str
    source: str


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    lines = []
    seen = set()
    for r in records:
        if r.id in seen:
            raise InvalidArgumentError(f"duplicate manifest id {r.id!r}")
        seen.add(r.id)
        for value in (r.id, r.audio_path, r.transcript, r.source):
            if "\t" in value or "\n" in value:
                raise InvalidArgumentError(f"manifest field contains a tab or newline: {value!r}")
        lines.append(f"{r.id}\t{r.audio_path}\t{r.transcript}\t{r.source}\n")
    atomic_write_text(path, "".join(lines))


def read_manifest(path) -> list[ManifestRecord]:
    records = []
    seen = set()
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise InvalidArgumentError(f"{path}:{n}: expected 4 tab-separated fields, got {len(fields)}")
        rec = ManifestRecord(*fields)
        if rec.source not in ("real", "synthetic"):
            raise InvalidArgumentError(f"{path}:{n}: invalid source {rec.source!r}")
        if rec.id in seen:
            raise InvalidArgumentError(f"{path}:{n}: duplicate id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def load_utterances(manifest_path, vocab: Vocabulary) -> list[Utterance]:
    base = Path(manifest_path).parent
    return [Utterance(r.id, vocab.encode(r.transcript), r.transcript, r.source,
                      read_wav(base / r.audio_path))
            for r in read_manifest(manifest_path)]


def save_utterances(directory, utterances: Sequence[Utterance], manifest_name: str = "manifest.tsv") -> Path:
    """Write each utterance as ``wav/<id>.wav`` plus a manifest; returns the manifest path."""
    directory = Path(directory)
    (directory / "wav").mkdir(parents=True, exist_ok=True)
    records = []
    for u in utterances:
        rel = f"wav/{u.id}.wav"
        write_wav(directory / rel, u.waveform)
        records.append(ManifestRecord(u.id, rel, u.transcript, u.source))
    path = directory / manifest_name
    write_manifest(path, records)
    return path
