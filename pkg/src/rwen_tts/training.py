"""Joint training of the word-relation encoders and the acoustic stack.

One process owns the parameters for the whole run; forward passes over a
batch loop sentence by sentence, which keeps results independent of batch
composition. Metrics go to an append-only CSV, checkpoints to a directory
of named tensor files plus a JSON metadata record.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import featstore
from .deptree import NEXT_KIND, PREV_KIND, ROOT_KIND, sentence_paths
from .errors import ValidationError
from .featstore import PreparedSentence
from .nncore import Adam, Param
from .rwen import (
    PackedPaths, RwenConfig, RwenParams, init_rwen_params, pack_paths,
    relation_ids, rwen_forward, upsample_to_phonemes,
)
from .tts import (
    AcousticBatch, SentenceInputs, TtsConfig, TtsParams, batch_losses,
    init_tts_params, sentence_forward, training_step,
)

CHECKPOINT_META = "meta.json"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    rwen: RwenConfig
    tts: TtsConfig

    def to_dict(self) -> dict:
        return {"rwen": vars(self.rwen).copy(), "tts": vars(self.tts).copy()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(rwen=RwenConfig(**d["rwen"]), tts=TtsConfig(**d["tts"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad model config: {exc}") from exc


def desk_model_config(
    d_h: int = 16, *, enable_sre: bool = True, enable_awre: bool = True,
    n_mels: int = 10, phoneme_vocab: int = 40, dropout: float = 0.1,
) -> ModelConfig:
    """Small sizes for tests and CPU experiments."""
    return ModelConfig(
        rwen=RwenConfig(d_h=d_h, d_et=4, d_de=3, d_out=16,
                        enable_sre=enable_sre, enable_awre=enable_awre),
        tts=TtsConfig(d_enc=16, d_dec=32, n_fft_blocks=1, n_heads=2,
                      fft_filter=32, predictor_channels=16, n_mels=n_mels,
                      phoneme_vocab=phoneme_vocab, dropout=dropout),
    )


@dataclass
class ModelParams:
    rwen: RwenParams
    tts: TtsParams

    def params(self) -> list[Param]:
        return self.rwen.params() + self.tts.params()


def init_model_params(config: ModelConfig, *, seed: int,
                      dtype=torch.float32) -> ModelParams:
    return ModelParams(
        rwen=init_rwen_params(config.rwen, seed=seed, dtype=dtype),
        tts=init_tts_params(config.tts, config.rwen.d_out, seed=seed + 1,
                            dtype=dtype),
    )


# ---------------------------------------------------------------------------
# Per-sentence precomputation: paths, pooled word matrix, target tensors.
# All of this is static across training steps, so it is done once.

@dataclass
class PreparedExample:
    sentence_id: str
    n_words: int
    hw: torch.Tensor                 # (d_h, n + 2)
    rel_ids: torch.Tensor            # (n + 2,) long
    root_paths: PackedPaths
    prev_paths: PackedPaths
    next_paths: PackedPaths
    phoneme_counts: torch.Tensor     # (n,) long
    phoneme_ids: torch.Tensor        # (P,) long
    dur_frames: torch.Tensor | None = None
    log_dur: torch.Tensor | None = None
    pitch: torch.Tensor | None = None
    energy: torch.Tensor | None = None
    mel: torch.Tensor | None = None


def prepare_example(sentence: PreparedSentence, *, dtype=torch.float32,
                    require_targets: bool = False) -> PreparedExample:
    if sentence.seg is None or sentence.embeddings is None:
        raise ValidationError(
            f"sentence {sentence.id}: embeddings required for encoding"
        )
    if sentence.phonemes is None:
        raise ValidationError(f"sentence {sentence.id}: phonemes missing")
    if require_targets and sentence.targets is None:
        raise ValidationError(
            f"sentence {sentence.id}: acoustic targets required for training"
        )
    hw = torch.tensor(sentence.word_matrix(), dtype=dtype)
    tree = sentence.tree
    flat = [p for word in sentence.phonemes for p in word]
    ex = PreparedExample(
        sentence_id=sentence.id,
        n_words=tree.n,
        hw=hw,
        rel_ids=relation_ids(tree.rels),
        root_paths=pack_paths(sentence_paths(tree, ROOT_KIND)),
        prev_paths=pack_paths(sentence_paths(tree, PREV_KIND)),
        next_paths=pack_paths(sentence_paths(tree, NEXT_KIND)),
        phoneme_counts=torch.tensor(sentence.phoneme_counts, dtype=torch.long),
        phoneme_ids=torch.tensor(flat, dtype=torch.long),
    )
    if sentence.targets is not None:
        t = sentence.targets
        ex.dur_frames = torch.tensor(t.durations, dtype=torch.long)
        ex.log_dur = torch.log1p(ex.dur_frames.to(dtype))
        ex.pitch = torch.tensor(t.pitch, dtype=dtype)
        ex.energy = torch.tensor(t.energy, dtype=dtype)
        ex.mel = torch.tensor(t.mel, dtype=dtype)
    return ex


def word_features_for(example: PreparedExample,
                      mparams: ModelParams, config: ModelConfig) -> torch.Tensor:
    """Word-level feature matrix (d_out, n + 2) for one sentence."""
    return rwen_forward(
        example.hw, example.rel_ids, example.root_paths, example.prev_paths,
        example.next_paths, mparams.rwen, config.rwen,
    )


def build_acoustic_batch(examples: Sequence[PreparedExample],
                         mparams: ModelParams,
                         config: ModelConfig) -> AcousticBatch:
    """Assemble phoneme-level inputs, running the word encoders per sentence."""
    batch = AcousticBatch()
    for ex in examples:
        feats = word_features_for(ex, mparams, config)
        batch.sentences.append(
            SentenceInputs(
                sentence_id=ex.sentence_id,
                phoneme_ids=ex.phoneme_ids,
                word_features=upsample_to_phonemes(feats, ex.phoneme_counts),
                dur_frames=ex.dur_frames,
                log_dur=ex.log_dur,
                pitch=ex.pitch,
                energy=ex.energy,
                mel=ex.mel,
            )
        )
    return batch


def evaluate(examples: Sequence[PreparedExample], mparams: ModelParams,
             config: ModelConfig) -> dict[str, float]:
    """Teacher-forced losses in eval mode (dropout off), no grads kept."""
    with torch.no_grad():
        batch = build_acoustic_batch(examples, mparams, config)
        losses = batch_losses(batch, mparams.tts, config.tts, training=False)
    return {k: float(v) for k, v in losses.items()}


def infer_mel(example: PreparedExample, mparams: ModelParams,
              config: ModelConfig) -> torch.Tensor:
    """Inference path: predicted durations, pitch and energy."""
    with torch.no_grad():
        feats = word_features_for(example, mparams, config)
        item = SentenceInputs(
            sentence_id=example.sentence_id,
            phoneme_ids=example.phoneme_ids,
            word_features=upsample_to_phonemes(feats, example.phoneme_counts),
        )
        out = sentence_forward(item, mparams.tts, config.tts, training=False,
                               use_target_variances=False)
    return out["mel"]


# ---------------------------------------------------------------------------
# Checkpoints: params/<name>.rwt plus meta.json with shapes and config.

def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(out_dir, mparams: ModelParams, config: ModelConfig, *,
                    step: int, extra: dict | None = None) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "params").mkdir(parents=True, exist_ok=True)
    shapes = {}
    for p in sorted(mparams.params(), key=lambda p: p.name):
        shapes[p.name] = list(p.shape)
        featstore.write_tensor(out_dir / "params" / f"{p.name}.rwt", p.numpy())
    meta = {
        "format": CHECKPOINT_FORMAT,
        "step": step,
        "model": config.to_dict(),
        "config_hash": config_hash(config.to_dict()),
        "params": shapes,
        "extra": extra or {},
    }
    (out_dir / CHECKPOINT_META).write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    return out_dir


def load_checkpoint(ckpt_dir, *, dtype=torch.float32):
    """Returns (ModelConfig, ModelParams, meta dict); shapes are verified."""
    ckpt_dir = Path(ckpt_dir)
    meta_path = ckpt_dir / CHECKPOINT_META
    if not meta_path.is_file():
        raise ValidationError(f"checkpoint metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(
            f"unsupported checkpoint format {meta.get('format')!r}"
        )
    config = ModelConfig.from_dict(meta["model"])
    mparams = init_model_params(config, seed=0, dtype=dtype)
    stored = dict(meta.get("params", {}))
    for p in mparams.params():
        if p.name not in stored:
            raise ValidationError(
                f"checkpoint missing parameter '{p.name}'"
            )
        if tuple(stored.pop(p.name)) != p.shape:
            raise ValidationError(
                f"parameter '{p.name}': checkpoint shape "
                f"{tuple(meta['params'][p.name])} does not match model shape "
                f"{p.shape}"
            )
        values = featstore.read_tensor(ckpt_dir / "params" / f"{p.name}.rwt")
        p.load(values)
    if stored:
        raise ValidationError(
            f"checkpoint has unknown parameters {sorted(stored)}"
        )
    return config, mparams, meta


def encode_features(sentences: Sequence[PreparedSentence],
                    mparams: ModelParams, config: ModelConfig):
    """Yield (sentence_id, word-feature matrix as float32 numpy)."""
    for sentence in sentences:
        ex = prepare_example(sentence)
        with torch.no_grad():
            feats = word_features_for(ex, mparams, config)
        yield sentence.id, feats.detach().cpu().numpy().astype(np.float32)


# ---------------------------------------------------------------------------
# The training loop.

@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    steps: int = 2000
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8
    seed: int = 0
    log_every: int = 50

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValidationError("lr must be > 0")

    def to_dict(self) -> dict:
        d = {k: v for k, v in vars(self).items() if k != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        try:
            model = ModelConfig.from_dict(d.pop("model"))
            return cls(model=model, **d)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad train config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: bad JSON: {exc}") from exc
        return cls.from_dict(payload)

    def hash(self) -> str:
        return config_hash(self.to_dict())


@dataclass
class TrainResult:
    checkpoint_dir: Path
    metrics_path: Path
    initial_losses: dict[str, float]
    final_losses: dict[str, float]

    @property
    def loss_ratio(self) -> float:
        initial = self.initial_losses["total"]
        return self.final_losses["total"] / initial if initial > 0 else 0.0


def train(sentences: Sequence[PreparedSentence], config: TrainConfig,
          out_dir, *, log: Callable[[str], None] | None = None) -> TrainResult:
    """Train on a fixed sentence list and write checkpoint + metrics CSV."""
    if not sentences:
        raise ValidationError("training needs at least one sentence")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    examples = [prepare_example(s, require_targets=True) for s in sentences]
    mparams = init_model_params(config.model, seed=config.seed)
    optimizer = Adam(mparams.params(), lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps)
    rng = random.Random(config.seed)
    gen = torch.Generator().manual_seed(config.seed)

    initial = evaluate(examples, mparams, config.model)
    metrics_path = out_dir / "metrics.csv"
    with metrics_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "mel", "pitch", "energy", "duration"])
        for step in range(1, config.steps + 1):
            if len(examples) <= config.batch_size:
                picked = examples
            else:
                picked = rng.sample(examples, config.batch_size)
            batch = build_acoustic_batch(picked, mparams, config.model)
            losses = training_step(batch, mparams.tts, config.model.tts,
                                   optimizer, gen=gen)
            writer.writerow(
                [step] + [f"{losses[k]:.6g}" for k in
                          ("total", "mel", "pitch", "energy", "duration")]
            )
            if log and (step % config.log_every == 0 or step == 1):
                log(f"step {step}: total={losses['total']:.4f}")

    final = evaluate(examples, mparams, config.model)
    ckpt = save_checkpoint(
        out_dir / "checkpoint", mparams, config.model, step=config.steps,
        extra={
            "train_config_hash": config.hash(),
            "initial_total": initial["total"],
            "final_total": final["total"],
        },
    )
    return TrainResult(
        checkpoint_dir=ckpt,
        metrics_path=metrics_path,
        initial_losses=initial,
        final_losses=final,
    )


def ablation_label(config: ModelConfig) -> str:
    sre, awre = config.rwen.enable_sre, config.rwen.enable_awre
    if sre and awre:
        return "full"
    if sre:
        return "no-awre"
    if awre:
        return "no-sre"
    return "no-sre-no-awre"
