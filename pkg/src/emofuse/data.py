"""Dataset ingestion, synthesis, and splitting.

The on-disk format is JSON Lines, one dialogue per line. Every
utterance carries four feature streams (text, video_face, video_back,
audio) as row-major matrices, a speaker id, and a class label; stream
widths must be constant across a file. Floats are written with Python's
shortest round-trip repr, so save followed by load is bit-exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, DataError
from .rng import Rng

STREAMS = ("text", "video_face", "video_back", "audio")
_FEAT_KEYS = {"text": "text_feat", "video_face": "video_face_feat",
              "video_back": "video_back_feat", "audio": "audio_feat"}


@dataclass
class Utterance:
    utterance_id: str
    speaker_id: str
    label: int
    features: dict  # stream name -> float64 matrix

    def tensor_features(self) -> dict:
        return {s: T.Tensor(m) for s, m in self.features.items()}


@dataclass
class Dialogue:
    dialogue_id: str
    utterances: list

    def __post_init__(self):
        if not self.utterances:
            raise ContractError(f"dialogue {self.dialogue_id}: needs at least 1 utterance")
        ids = [u.utterance_id for u in self.utterances]
        if len(set(ids)) != len(ids):
            raise ContractError(f"dialogue {self.dialogue_id}: duplicate utterance ids")


def _as_matrix(obj, stream, record, utt_id):
    where = f"record {record}, utterance {utt_id!r}, {_FEAT_KEYS[stream]}"
    if not isinstance(obj, list) or not obj:
        raise DataError(f"{where}: expected a nonempty list of rows")
    width = None
    for row in obj:
        if not isinstance(row, list) or not row:
            raise DataError(f"{where}: rows must be nonempty lists")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{where}: ragged rows ({len(row)} vs {width})")
        for v in row:
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise DataError(f"{where}: non-numeric entry {v!r}")
    mat = np.array(obj, dtype=np.float64)
    if not np.all(np.isfinite(mat)):
        raise DataError(f"{where}: non-finite entry")
    return mat


def load_dataset(path) -> list:
    """Parse and validate a JSONL dialogue file.

    Raises DataError with the offending line for malformed JSON, and
    with the record number and utterance id for schema violations.
    Stream widths are pinned by the first utterance seen.
    """
    dialogues = []
    widths = {}
    record = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"line {line_no}: malformed JSON ({e.msg})") from None
            if not isinstance(raw, dict) or "dialogue_id" not in raw or "utterances" not in raw:
                raise DataError(f"line {line_no}: expected dialogue_id and utterances keys")
            utts = []
            for u in raw["utterances"]:
                record += 1
                try:
                    utt_id = u["utterance_id"]
                    speaker = u["speaker_id"]
                    label = u["label"]
                except (KeyError, TypeError) as e:
                    raise DataError(f"line {line_no}, record {record}: missing field {e}") from None
                if not isinstance(label, int) or isinstance(label, bool) or label < 0:
                    raise DataError(
                        f"record {record}, utterance {utt_id!r}: label must be a "
                        f"nonnegative integer, got {label!r}")
                feats = {}
                for stream in STREAMS:
                    key = _FEAT_KEYS[stream]
                    if key not in u:
                        raise DataError(f"record {record}, utterance {utt_id!r}: missing {key}")
                    mat = _as_matrix(u[key], stream, record, utt_id)
                    if stream in widths and mat.shape[1] != widths[stream]:
                        raise DataError(
                            f"record {record}, utterance {utt_id!r}: {key} width "
                            f"{mat.shape[1]} does not match dataset width {widths[stream]}")
                    widths.setdefault(stream, mat.shape[1])
                    feats[stream] = mat
                if feats["video_face"].shape[0] != feats["video_back"].shape[0]:
                    raise DataError(
                        f"record {record}, utterance {utt_id!r}: video streams disagree "
                        f"on length ({feats['video_face'].shape[0]} vs "
                        f"{feats['video_back'].shape[0]})")
                utts.append(Utterance(utterance_id=str(utt_id), speaker_id=str(speaker),
                                      label=label, features=feats))
            try:
                dialogues.append(Dialogue(dialogue_id=str(raw["dialogue_id"]), utterances=utts))
            except ContractError as e:
                raise DataError(f"line {line_no}: {e}") from None
    return dialogues


def save_dataset(dialogues, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps({
                "dialogue_id": d.dialogue_id,
                "utterances": [{
                    "utterance_id": u.utterance_id,
                    "speaker_id": u.speaker_id,
                    "label": u.label,
                    "text_feat": u.features["text"].tolist(),
                    "video_face_feat": u.features["video_face"].tolist(),
                    "video_back_feat": u.features["video_back"].tolist(),
                    "audio_feat": u.features["audio"].tolist(),
                } for u in d.utterances],
            }, separators=(",", ":")))
            fh.write("\n")


@dataclass
class SynthSpec:
    """Knobs for the synthetic conversation generator.

    Class signal lives in per-(class, stream) centroid directions of
    norm `separation` (in units of the noise scale). Each utterance
    draws one shared latent vector; every stream row adds
    noise_scale * (correlation * projected latent + (1-correlation) * own noise),
    so `correlation` couples the modes. `informativeness` scales the
    class signal per mode (text, video, audio) to make some modes
    weaker evidence than others.
    """
    num_classes: int = 4
    text_dim: int = 6
    video_dim: int = 5
    audio_dim: int = 4
    separation: float = 4.0
    correlation: float = 0.6
    noise_scale: float = 1.0
    text_len: tuple = (3, 6)
    video_len: tuple = (2, 4)
    audio_len: tuple = (2, 5)
    class_weights: list = None
    num_dialogues: int = 50
    utterances_per_dialogue: tuple = (2, 8)
    num_speakers: int = 2
    informativeness: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.separation <= 0.0:
            raise ContractError("SynthSpec.separation must be positive")
        if not 0.0 <= self.correlation <= 1.0:
            raise ContractError("SynthSpec.correlation must lie in [0, 1]")
        if self.noise_scale < 0.0:
            raise ContractError("SynthSpec.noise_scale must be >= 0")
        if self.num_classes < 2:
            raise ContractError("SynthSpec.num_classes must be at least 2")
        if self.class_weights is None:
            self.class_weights = [1.0 / self.num_classes] * self.num_classes
        if len(self.class_weights) != self.num_classes:
            raise ContractError("SynthSpec.class_weights must have one entry per class")
        if abs(sum(self.class_weights) - 1.0) > 1e-9:
            raise ContractError("SynthSpec.class_weights must sum to 1")
        if self.num_speakers < 1 or self.num_dialogues < 1:
            raise ContractError("SynthSpec: speaker pool and dialogue count must be positive")

    def stream_dim(self, stream: str) -> int:
        return {"text": self.text_dim, "video_face": self.video_dim,
                "video_back": self.video_dim, "audio": self.audio_dim}[stream]

    def stream_len_range(self, stream: str) -> tuple:
        return {"text": self.text_len, "video_face": self.video_len,
                "video_back": self.video_len, "audio": self.audio_len}[stream]

    def stream_signal(self, stream: str) -> float:
        scales = {"text": self.informativeness[0], "video_face": self.informativeness[1],
                  "video_back": self.informativeness[1], "audio": self.informativeness[2]}
        return scales[stream]


_LATENT_DIM = 6


def synth_generate(spec: SynthSpec) -> list:
    """Deterministically sample a dialogue corpus from the spec."""
    rng = Rng(spec.seed)
    centroids = {}
    mixers = {}
    for stream in STREAMS:
        dim = spec.stream_dim(stream)
        mixers[stream] = rng.normal_array((_LATENT_DIM, dim)) / np.sqrt(_LATENT_DIM)
        for c in range(spec.num_classes):
            direction = rng.normal_array((dim,))
            norm = float(np.linalg.norm(direction))
            if norm == 0.0:
                direction[0] = 1.0
                norm = 1.0
            centroids[(c, stream)] = (direction / norm) * spec.separation * \
                spec.stream_signal(stream)

    def rand_len(rng, lo_hi):
        lo, hi = lo_hi
        return lo + rng.randint(hi - lo + 1) if hi > lo else lo

    dialogues = []
    for di in range(spec.num_dialogues):
        n_utts = rand_len(rng, spec.utterances_per_dialogue)
        utts = []
        for uj in range(n_utts):
            label = rng.categorical(spec.class_weights)
            latent = rng.normal_array((_LATENT_DIM,))
            feats = {}
            video_rows = rand_len(rng, spec.video_len)
            for stream in STREAMS:
                dim = spec.stream_dim(stream)
                rows = video_rows if stream.startswith("video") else \
                    rand_len(rng, spec.stream_len_range(stream))
                shared = latent @ mixers[stream]
                noise = rng.normal_array((rows, dim))
                mat = (centroids[(label, stream)] +
                       spec.noise_scale * (spec.correlation * shared +
                                           (1.0 - spec.correlation) * noise))
                feats[stream] = mat
            utts.append(Utterance(
                utterance_id=f"d{di:04d}_u{uj:02d}",
                speaker_id=f"s{uj % spec.num_speakers}",
                label=label,
                features=feats,
            ))
        dialogues.append(Dialogue(dialogue_id=f"d{di:04d}", utterances=utts))
    return dialogues


def split(dialogues, fractions, seed: int):
    """Shuffle dialogues and partition them by the three fractions."""
    if len(fractions) != 3:
        raise ContractError("split: need exactly 3 fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ContractError(f"split: fractions sum to {sum(fractions)}, not 1")
    order = list(dialogues)
    Rng(seed).shuffle(order)
    n = len(order)
    cut1 = int(n * fractions[0] + 1e-9)
    cut2 = int(n * (fractions[0] + fractions[1]) + 1e-9)
    return order[:cut1], order[cut1:cut2], order[cut2:]


def all_utterances(dialogues) -> list:
    out = []
    for d in dialogues:
        out.extend(d.utterances)
    return out
