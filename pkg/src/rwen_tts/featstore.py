"""Interchange formats, deterministic pseudo-embeddings, synthetic datasets.

A dataset is a JSON-lines manifest (one record per sentence, metadata only)
plus sidecar binary tensor files next to it; see docs/formats.md for the
exact schemas. Loading validates every record and freezes the arrays, after
which sentences are immutable and safe to share.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import SegmentationError, SubwordSegmentation, word_average_pool
from .deptree import DependencyTree, TreeError, UNIVERSAL_RELATIONS
from .errors import ValidationError

TENSOR_MAGIC = b"RWT1"
DATA_DIR_ENV = "RWEN_TTS_DATA_DIR"
MANIFEST_NAME = "manifest.jsonl"

_RECORD_KEYS = {
    "id", "words", "head", "rel", "spans", "phonemes", "embeddings",
    "targets", "notes",
}
_TARGET_KEYS = {"durations", "pitch", "energy", "mel"}
_MASK64 = (1 << 64) - 1


class TensorFileError(ValidationError):
    """Corrupt or inconsistent binary tensor file."""


class ManifestError(ValidationError):
    """Invalid manifest record; message names the sentence and field."""


def resolve_data_path(path) -> Path:
    """Resolve a path, anchoring relative ones at $RWEN_TTS_DATA_DIR if set."""
    p = Path(path)
    if p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    return Path(base) / p if base else p


# ---------------------------------------------------------------------------
# Binary tensor files: magic, u32 ndim, u32 dims[ndim], float32 payload,
# everything little-endian, payload row-major.

def write_tensor(path, values) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim > 8:
        raise TensorFileError(f"{path}: refusing to write ndim={arr.ndim}")
    header = TENSOR_MAGIC + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + arr.tobytes())
    os.replace(tmp, path)
    return path


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != TENSOR_MAGIC:
        raise TensorFileError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 8:
        raise TensorFileError(f"{path}: truncated header")
    (ndim,) = struct.unpack_from("<I", blob, 4)
    if ndim > 8:
        raise TensorFileError(f"{path}: implausible ndim {ndim}")
    if len(blob) < 8 + 4 * ndim:
        raise TensorFileError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", blob, 8)
    payload = blob[8 + 4 * ndim:]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    if len(payload) != 4 * count:
        raise TensorFileError(
            f"{path}: payload is {len(payload)} bytes, dims {dims} need "
            f"{4 * count}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32, copy=True)


# ---------------------------------------------------------------------------
# Counter-based pseudo-randomness: split-mix over 64-bit keys feeding a
# Box-Muller transform. No generator state, so any (seed, id, position)
# triple can be produced independently and reproduced bit-exactly.

def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def _mix64_int(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def _key(*parts: int) -> int:
    k = 0
    for p in parts:
        k = _mix64_int(k ^ _mix64_int(p & _MASK64))
    return k


_GAMMA = np.uint64(0x9E3779B97F4A7C15)


def _normal_stream(key: int, count: int) -> np.ndarray:
    """`count` independent ~N(0,1) float64 draws for a 64-bit stream key."""
    if count <= 0:
        return np.empty(0, dtype=np.float64)
    pairs = (count + 1) // 2
    ctr = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    raw = _mix64(np.uint64(key & _MASK64) + ctr * _GAMMA)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53  # (0, 1]
    radius = np.sqrt(-2.0 * np.log(u[0::2]))
    theta = (2.0 * math.pi) * u[1::2]
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:count]


def pseudo_embeddings(
    sentence_id: str,
    words: Sequence[str],
    seg: SubwordSegmentation,
    d_h: int,
    seed: int,
) -> np.ndarray:
    """Deterministic stand-in for a contextual encoder's subword outputs.

    Returns a (d_h, m + 2) float32 matrix whose columns depend only on
    (seed, sentence_id, position); identical inputs give bit-identical
    output on any platform.
    """
    if d_h < 1:
        raise ValidationError(f"d_h must be >= 1, got {d_h}")
    if len(words) != seg.n:
        raise ValidationError(
            f"{len(words)} words but segmentation has {seg.n} spans"
        )
    sent_key = _key(seed, _fnv1a64(sentence_id))
    cols = seg.m + 2
    out = np.empty((cols, d_h), dtype=np.float64)
    for p in range(cols):
        out[p] = _normal_stream(_key(sent_key, p), d_h)
    return np.ascontiguousarray(out.T, dtype=np.float32)


# ---------------------------------------------------------------------------
# Prepared sentences and the manifest.

@dataclass(frozen=True)
class Targets:
    """Per-phoneme acoustic supervision: frames, pitch, energy, mel."""

    durations: np.ndarray  # int64 (P,)
    pitch: np.ndarray      # float32 (P,)
    energy: np.ndarray     # float32 (P,)
    mel: np.ndarray        # float32 (n_mels, T), T == durations.sum()


@dataclass(frozen=True)
class PreparedSentence:
    """One sentence with everything the encoders and the trainer consume.

    ``embeddings_spec`` keeps the manifest's provider directive (if any) so
    that save -> load round-trips exactly. Skeleton records produced by the
    CoNLL-U importer leave seg/phonemes/embeddings as None.
    """

    id: str
    words: tuple[str, ...]
    tree: DependencyTree
    seg: SubwordSegmentation | None = None
    phonemes: tuple[tuple[int, ...], ...] | None = None
    embeddings: np.ndarray | None = None
    embeddings_spec: dict | None = None
    targets: Targets | None = None
    notes: tuple[str, ...] = field(default=())

    @property
    def phoneme_counts(self) -> tuple[int, ...]:
        if self.phonemes is None:
            raise ValidationError(f"sentence {self.id}: no phonemes")
        return tuple(len(p) for p in self.phonemes)

    @property
    def total_phonemes(self) -> int:
        return sum(self.phoneme_counts)

    def word_matrix(self) -> np.ndarray:
        """Word-level (d_h, n + 2) matrix pooled from the subword columns."""
        if self.embeddings is None or self.seg is None:
            raise ValidationError(
                f"sentence {self.id}: embeddings/segmentation missing"
            )
        return word_average_pool(self.embeddings, self.seg)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def validate_sentence(s: PreparedSentence, *, allow_skeleton: bool = False) -> None:
    """Check every cross-field invariant; raises ManifestError on failure."""
    sid = s.id
    if not sid:
        raise ManifestError("sentence with empty id")
    if len(s.words) != s.tree.n:
        raise ManifestError(
            f"sentence {sid}: {len(s.words)} words but tree has {s.tree.n}"
        )
    if s.seg is not None and s.seg.n != s.tree.n:
        raise ManifestError(
            f"sentence {sid}: spans cover {s.seg.n} words, tree has {s.tree.n}"
        )
    if s.phonemes is not None and len(s.phonemes) != s.tree.n:
        raise ManifestError(
            f"sentence {sid}: phonemes listed for {len(s.phonemes)} words, "
            f"tree has {s.tree.n}"
        )
    if s.phonemes is not None:
        for w, ids in enumerate(s.phonemes, start=1):
            if any((not isinstance(p, int)) or p < 0 for p in ids):
                raise ManifestError(
                    f"sentence {sid}: phonemes of word {w} must be ints >= 0"
                )
    if s.embeddings is not None:
        if s.seg is None:
            raise ManifestError(
                f"sentence {sid}: embeddings present but spans missing"
            )
        if s.embeddings.ndim != 2 or s.embeddings.shape[1] != s.seg.m + 2:
            raise ManifestError(
                f"sentence {sid}: embeddings shaped {s.embeddings.shape}, "
                f"expected (d_h, {s.seg.m + 2})"
            )
        if not np.isfinite(s.embeddings).all():
            raise ManifestError(f"sentence {sid}: non-finite embeddings")
    if s.targets is not None:
        if s.phonemes is None:
            raise ManifestError(
                f"sentence {sid}: targets present but phonemes missing"
            )
        t = s.targets
        p_total = s.total_phonemes
        for name, arr, nd in (
            ("durations", t.durations, 1), ("pitch", t.pitch, 1),
            ("energy", t.energy, 1), ("mel", t.mel, 2),
        ):
            if arr.ndim != nd:
                raise ManifestError(
                    f"sentence {sid}: target {name} must be {nd}-D"
                )
        for name, arr in (
            ("durations", t.durations), ("pitch", t.pitch), ("energy", t.energy),
        ):
            if arr.shape[0] != p_total:
                raise ManifestError(
                    f"sentence {sid}: target {name} has {arr.shape[0]} entries "
                    f"for {p_total} phonemes"
                )
        if (t.durations < 0).any():
            raise ManifestError(f"sentence {sid}: negative durations")
        frames = int(t.durations.sum())
        if t.mel.shape[1] != frames:
            raise ManifestError(
                f"sentence {sid}: durations sum to {frames} frames but mel "
                f"has {t.mel.shape[1]}"
            )
        for name, arr in (("pitch", t.pitch), ("energy", t.energy), ("mel", t.mel)):
            if not np.isfinite(arr).all():
                raise ManifestError(f"sentence {sid}: non-finite target {name}")
    if not allow_skeleton:
        for name, value in (
            ("spans", s.seg), ("phonemes", s.phonemes), ("embeddings", s.embeddings),
        ):
            if value is None:
                raise ManifestError(
                    f"sentence {sid}: skeleton record (missing {name}); full "
                    "data required here"
                )


_SAFE_ID = re.compile(r"[^A-Za-z0-9._-]")


def _file_stem(sid: str) -> str:
    return _SAFE_ID.sub("_", sid)


def save_manifest(sentences: Sequence[PreparedSentence], out_dir) -> Path:
    """Write manifest.jsonl plus tensor sidecars under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tensor_dir = out_dir / "tensors"
    seen: set[str] = set()
    lines: list[str] = []
    for s in sentences:
        validate_sentence(s, allow_skeleton=True)
        if s.id in seen:
            raise ManifestError(f"duplicate sentence id {s.id!r}")
        seen.add(s.id)
        stem = _file_stem(s.id)
        rec: dict = {
            "id": s.id,
            "words": list(s.words),
            "head": list(s.tree.heads),
            "rel": list(s.tree.rels),
        }
        if s.seg is not None:
            rec["spans"] = [[a, b] for a, b in s.seg.spans]
        if s.phonemes is not None:
            rec["phonemes"] = [list(p) for p in s.phonemes]
        if s.embeddings_spec is not None:
            rec["embeddings"] = dict(s.embeddings_spec)
        elif s.embeddings is not None:
            tensor_dir.mkdir(exist_ok=True)
            rel = f"tensors/{stem}.emb.rwt"
            write_tensor(out_dir / rel, s.embeddings)
            rec["embeddings"] = {"file": rel}
        if s.targets is not None:
            tensor_dir.mkdir(exist_ok=True)
            refs = {}
            for name, arr in (
                ("pitch", s.targets.pitch), ("energy", s.targets.energy),
                ("mel", s.targets.mel),
            ):
                rel = f"tensors/{stem}.{name}.rwt"
                write_tensor(out_dir / rel, arr)
                refs[name] = {"file": rel}
            rec["targets"] = {
                "durations": [int(d) for d in s.targets.durations],
                **refs,
            }
        if s.notes:
            rec["notes"] = list(s.notes)
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":"),
                                ensure_ascii=False))
    path = out_dir / MANIFEST_NAME
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    os.replace(tmp, path)
    return path


def _load_ref(base: Path, sid: str, fieldname: str, ref) -> np.ndarray:
    if not isinstance(ref, dict) or "file" not in ref:
        raise ManifestError(
            f"sentence {sid}: field {fieldname} must be a file reference"
        )
    target = base / ref["file"]
    if not target.is_file():
        raise ManifestError(
            f"sentence {sid}: field {fieldname} references missing file "
            f"{ref['file']!r}"
        )
    try:
        return read_tensor(target)
    except TensorFileError as exc:
        raise ManifestError(f"sentence {sid}: field {fieldname}: {exc}") from exc


def load_manifest(path, *, allow_skeleton: bool = False) -> list[PreparedSentence]:
    """Load and fully validate a manifest; see docs/formats.md."""
    path = resolve_data_path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    sentences: list[PreparedSentence] = []
    seen: set[str] = set()
    for line_no, line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path.name} line {line_no}: bad JSON: {exc}")
        if not isinstance(rec, dict):
            raise ManifestError(f"{path.name} line {line_no}: record not an object")
        unknown = set(rec) - _RECORD_KEYS
        if unknown:
            raise ManifestError(
                f"{path.name} line {line_no}: unknown fields {sorted(unknown)}"
            )
        for req in ("id", "words", "head", "rel"):
            if req not in rec:
                raise ManifestError(
                    f"{path.name} line {line_no}: missing field {req!r}"
                )
        sid = str(rec["id"])
        if sid in seen:
            raise ManifestError(f"{path.name} line {line_no}: duplicate id {sid!r}")
        seen.add(sid)
        try:
            tree = DependencyTree(tuple(rec["head"]), tuple(rec["rel"]))
        except (TreeError, TypeError, ValueError) as exc:
            raise ManifestError(f"sentence {sid}: invalid tree: {exc}") from exc
        seg = None
        if "spans" in rec:
            try:
                spans = tuple((int(a), int(b)) for a, b in rec["spans"])
                seg = SubwordSegmentation(spans, spans[-1][1] - 1 if spans else 0)
            except (SegmentationError, TypeError, ValueError) as exc:
                raise ManifestError(
                    f"sentence {sid}: invalid spans: {exc}"
                ) from exc
        phonemes = None
        if "phonemes" in rec:
            try:
                phonemes = tuple(tuple(int(p) for p in w) for w in rec["phonemes"])
            except (TypeError, ValueError) as exc:
                raise ManifestError(
                    f"sentence {sid}: invalid phonemes: {exc}"
                ) from exc
        embeddings = None
        embeddings_spec = None
        if "embeddings" in rec:
            emb = rec["embeddings"]
            if isinstance(emb, dict) and emb.get("provider") == "pseudo":
                if seg is None:
                    raise ManifestError(
                        f"sentence {sid}: pseudo embeddings need spans"
                    )
                try:
                    embeddings_spec = {
                        "provider": "pseudo",
                        "seed": int(emb["seed"]),
                        "d_h": int(emb["d_h"]),
                    }
                except (KeyError, TypeError, ValueError) as exc:
                    raise ManifestError(
                        f"sentence {sid}: bad pseudo-provider directive: "
                        f"{exc!r}"
                    ) from exc
                try:
                    embeddings = pseudo_embeddings(
                        sid, tuple(str(w) for w in rec["words"]), seg,
                        embeddings_spec["d_h"], embeddings_spec["seed"],
                    )
                except ValidationError as exc:
                    raise ManifestError(
                        f"sentence {sid}: embeddings: {exc}"
                    ) from exc
            elif isinstance(emb, dict) and "file" in emb:
                embeddings = _load_ref(base, sid, "embeddings", emb)
            else:
                raise ManifestError(
                    f"sentence {sid}: embeddings must be a file reference or "
                    "a pseudo-provider directive"
                )
        targets = None
        if "targets" in rec:
            t = rec["targets"]
            if not isinstance(t, dict) or set(t) != _TARGET_KEYS:
                raise ManifestError(
                    f"sentence {sid}: targets must contain exactly "
                    f"{sorted(_TARGET_KEYS)}"
                )
            try:
                durations = np.asarray([int(d) for d in t["durations"]],
                                       dtype=np.int64)
            except (TypeError, ValueError) as exc:
                raise ManifestError(
                    f"sentence {sid}: invalid durations: {exc}"
                ) from exc
            targets = Targets(
                durations=_freeze(durations),
                pitch=_freeze(_load_ref(base, sid, "targets.pitch", t["pitch"])),
                energy=_freeze(_load_ref(base, sid, "targets.energy", t["energy"])),
                mel=_freeze(_load_ref(base, sid, "targets.mel", t["mel"])),
            )
        sentence = PreparedSentence(
            id=sid,
            words=tuple(str(w) for w in rec["words"]),
            tree=tree,
            seg=seg,
            phonemes=phonemes,
            embeddings=_freeze(embeddings) if embeddings is not None else None,
            embeddings_spec=embeddings_spec,
            targets=targets,
            notes=tuple(rec.get("notes", ())),
        )
        validate_sentence(sentence, allow_skeleton=allow_skeleton)
        sentences.append(sentence)
    return sentences


# ---------------------------------------------------------------------------
# Synthetic datasets: random valid trees plus targets from a fixed random
# linear teacher over the pseudo-embeddings, so a desk-scale model can
# overfit them.

@dataclass(frozen=True)
class SynthConfig:
    n_sentences: int
    max_words: int = 8
    phoneme_vocab: int = 40
    word_vocab: int = 60
    d_h: int = 16
    n_mels: int = 10
    max_subwords: int = 3
    max_phonemes: int = 6
    max_duration: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_words < 1:
            raise ValidationError("max_words must be >= 1")
        if self.n_sentences < 0:
            raise ValidationError("n_sentences must be >= 0")


def random_tree(rng: random.Random, n: int) -> DependencyTree:
    """Uniform random attachment of each word to an earlier-placed one."""
    order = list(range(1, n + 1))
    rng.shuffle(order)
    heads = [0] * n
    for pos in range(1, n):
        heads[order[pos] - 1] = order[rng.randrange(pos)]
    rels = []
    for i in range(1, n + 1):
        if heads[i - 1] == 0:
            rels.append("root")
        else:
            tag = rng.choice(UNIVERSAL_RELATIONS)
            if rng.random() < 0.1:
                tag += ":sub"
            rels.append(tag)
    return DependencyTree(tuple(heads), tuple(rels))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class _Teacher:
    w_dur: np.ndarray
    w_pitch: np.ndarray
    w_energy: np.ndarray
    w_mel: np.ndarray
    b_mel: np.ndarray


def _make_teacher(cfg: SynthConfig) -> _Teacher:
    key = _key(cfg.seed, _fnv1a64("teacher"))
    scale = 1.0 / math.sqrt(cfg.d_h)
    return _Teacher(
        w_dur=_normal_stream(_key(key, 1), cfg.d_h) * scale,
        w_pitch=_normal_stream(_key(key, 2), cfg.d_h) * scale,
        w_energy=_normal_stream(_key(key, 3), cfg.d_h) * scale,
        w_mel=_normal_stream(_key(key, 4), cfg.n_mels * cfg.d_h)
        .reshape(cfg.n_mels, cfg.d_h) * scale,
        b_mel=_normal_stream(_key(key, 5), cfg.n_mels) * 0.1,
    )


def synth_dataset(cfg: SynthConfig) -> list[PreparedSentence]:
    """Generate fully-validated sentences with overfittable targets."""
    rng = random.Random(_key(cfg.seed, _fnv1a64("synth")))
    teacher = _make_teacher(cfg)
    sentences = []
    for k in range(cfg.n_sentences):
        sid = f"synth-{cfg.seed:04d}-{k:04d}"
        n = rng.randint(1, cfg.max_words)
        words = tuple(f"tok{rng.randrange(cfg.word_vocab)}" for _ in range(n))
        tree = random_tree(rng, n)
        seg = SubwordSegmentation.from_widths(
            [rng.randint(1, cfg.max_subwords) for _ in range(n)]
        )
        counts = [rng.randint(0, cfg.max_phonemes) for _ in range(n)]
        if sum(counts) == 0:
            # zero-phoneme sentences carry no acoustic supervision at all;
            # keep at least one phoneme so every sample can train
            counts[rng.randrange(n)] = rng.randint(1, cfg.max_phonemes)
        phonemes = tuple(
            tuple(rng.randrange(cfg.phoneme_vocab) for _ in range(c))
            for c in counts
        )
        spec = {"provider": "pseudo", "seed": cfg.seed, "d_h": cfg.d_h}
        emb = pseudo_embeddings(sid, words, seg, cfg.d_h, cfg.seed)
        hw = word_average_pool(emb, seg).astype(np.float64)

        durations: list[int] = []
        pitch: list[float] = []
        energy: list[float] = []
        mel_cols: list[np.ndarray] = []
        for w in range(1, n + 1):
            h = hw[:, w]
            base_mel = teacher.w_mel @ h + teacher.b_mel
            for t, _pid in enumerate(phonemes[w - 1]):
                frames = 1 + int(
                    (cfg.max_duration - 1)
                    * _sigmoid(2.0 * float(teacher.w_dur @ h) + 0.4 * t)
                    + 0.5
                )
                frames = min(frames, cfg.max_duration)
                durations.append(frames)
                pitch.append(float(teacher.w_pitch @ h) + 0.1 * t)
                energy.append(float(teacher.w_energy @ h) + 0.1 * t)
                col = base_mel + 0.05 * t
                mel_cols.extend([col] * frames)
        mel = (
            np.stack(mel_cols, axis=1)
            if mel_cols else np.zeros((cfg.n_mels, 0))
        ).astype(np.float32)
        targets = Targets(
            durations=_freeze(np.asarray(durations, dtype=np.int64)),
            pitch=_freeze(np.asarray(pitch, dtype=np.float32)),
            energy=_freeze(np.asarray(energy, dtype=np.float32)),
            mel=_freeze(mel),
        )
        sentence = PreparedSentence(
            id=sid, words=words, tree=tree, seg=seg, phonemes=phonemes,
            embeddings=_freeze(emb), embeddings_spec=spec, targets=targets,
        )
        validate_sentence(sentence)
        sentences.append(sentence)
    return sentences
