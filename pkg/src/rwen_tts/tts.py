"""Desk-scale non-autoregressive acoustic model.

Five-module stack: phoneme encoder, duration/pitch/energy predictors, and a
mel decoder. Word features from the relation encoders are upsampled to
phoneme level, concatenated onto the phoneme representation, and projected
back to the encoder width so the predictors keep their stated channel
sizes. Training teacher-forces target durations (length regulation) and
target pitch/energy (variance embeddings); inference uses predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import NumericalError, ValidationError
from .nncore import (
    Param, conv1d, dropout, layer_norm, linear, normal_param, relu,
    softmax_attention, uniform_param, zeros_param,
)


@dataclass(frozen=True)
class TtsConfig:
    d_enc: int = 256
    d_dec: int = 1024
    n_fft_blocks: int = 4
    n_heads: int = 2
    fft_filter: int = 1024
    predictor_channels: int = 256
    predictor_kernel: int = 3
    n_mels: int = 80
    phoneme_vocab: int = 64
    dropout: float = 0.1
    lambda_mel: float = 1.0
    lambda_pitch: float = 0.1
    lambda_energy: float = 0.1
    lambda_dur: float = 0.1

    def __post_init__(self) -> None:
        for name in ("d_enc", "d_dec", "n_fft_blocks", "n_heads", "fft_filter",
                     "predictor_channels", "predictor_kernel", "n_mels",
                     "phoneme_vocab"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        for name in ("lambda_mel", "lambda_pitch", "lambda_energy",
                     "lambda_dur"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.d_enc % self.n_heads != 0:
            raise ValidationError("d_enc must be divisible by n_heads")
        if self.d_dec % self.n_heads != 0:
            raise ValidationError("d_dec must be divisible by n_heads")


@dataclass
class FftBlockParams:
    wq: Param
    bq: Param
    wk: Param
    bk: Param
    wv: Param
    bv: Param
    wo: Param
    bo: Param
    ln1_g: Param
    ln1_b: Param
    conv1_w: Param
    conv1_b: Param
    conv2_w: Param
    conv2_b: Param
    ln2_g: Param
    ln2_b: Param

    def params(self) -> list[Param]:
        return [self.wq, self.bq, self.wk, self.bk, self.wv, self.bv,
                self.wo, self.bo, self.ln1_g, self.ln1_b, self.conv1_w,
                self.conv1_b, self.conv2_w, self.conv2_b, self.ln2_g,
                self.ln2_b]


@dataclass
class PredictorParams:
    conv1_w: Param
    conv1_b: Param
    ln1_g: Param
    ln1_b: Param
    conv2_w: Param
    conv2_b: Param
    ln2_g: Param
    ln2_b: Param
    out_w: Param
    out_b: Param

    def params(self) -> list[Param]:
        return [self.conv1_w, self.conv1_b, self.ln1_g, self.ln1_b,
                self.conv2_w, self.conv2_b, self.ln2_g, self.ln2_b,
                self.out_w, self.out_b]


@dataclass
class TtsParams:
    phoneme_table: Param
    enc_blocks: list[FftBlockParams]
    w_fuse: Param
    b_fuse: Param
    duration: PredictorParams
    pitch: PredictorParams
    energy: PredictorParams
    pitch_emb_w: Param
    pitch_emb_b: Param
    energy_emb_w: Param
    energy_emb_b: Param
    dec_in_w: Param
    dec_in_b: Param
    dec_blocks: list[FftBlockParams]
    mel_w: Param
    mel_b: Param

    def params(self) -> list[Param]:
        out = [self.phoneme_table]
        for blk in self.enc_blocks:
            out += blk.params()
        out += [self.w_fuse, self.b_fuse]
        out += self.duration.params() + self.pitch.params() + self.energy.params()
        out += [self.pitch_emb_w, self.pitch_emb_b,
                self.energy_emb_w, self.energy_emb_b,
                self.dec_in_w, self.dec_in_b]
        for blk in self.dec_blocks:
            out += blk.params()
        out += [self.mel_w, self.mel_b]
        return out


def _init_fft_block(name, d, filt, kernel, gen, dtype) -> FftBlockParams:
    return FftBlockParams(
        wq=uniform_param(f"{name}.wq", (d, d), d, gen, dtype),
        bq=zeros_param(f"{name}.bq", (d,), dtype),
        wk=uniform_param(f"{name}.wk", (d, d), d, gen, dtype),
        bk=zeros_param(f"{name}.bk", (d,), dtype),
        wv=uniform_param(f"{name}.wv", (d, d), d, gen, dtype),
        bv=zeros_param(f"{name}.bv", (d,), dtype),
        wo=uniform_param(f"{name}.wo", (d, d), d, gen, dtype),
        bo=zeros_param(f"{name}.bo", (d,), dtype),
        ln1_g=Param(f"{name}.ln1_g", torch.ones(d, dtype=dtype)),
        ln1_b=zeros_param(f"{name}.ln1_b", (d,), dtype),
        conv1_w=uniform_param(f"{name}.conv1_w", (filt, d, kernel), d * kernel,
                              gen, dtype),
        conv1_b=zeros_param(f"{name}.conv1_b", (filt,), dtype),
        conv2_w=uniform_param(f"{name}.conv2_w", (d, filt, kernel),
                              filt * kernel, gen, dtype),
        conv2_b=zeros_param(f"{name}.conv2_b", (d,), dtype),
        ln2_g=Param(f"{name}.ln2_g", torch.ones(d, dtype=dtype)),
        ln2_b=zeros_param(f"{name}.ln2_b", (d,), dtype),
    )


def _init_predictor(name, d_in, ch, kernel, gen, dtype) -> PredictorParams:
    return PredictorParams(
        conv1_w=uniform_param(f"{name}.conv1_w", (ch, d_in, kernel),
                              d_in * kernel, gen, dtype),
        conv1_b=zeros_param(f"{name}.conv1_b", (ch,), dtype),
        ln1_g=Param(f"{name}.ln1_g", torch.ones(ch, dtype=dtype)),
        ln1_b=zeros_param(f"{name}.ln1_b", (ch,), dtype),
        conv2_w=uniform_param(f"{name}.conv2_w", (ch, ch, kernel), ch * kernel,
                              gen, dtype),
        conv2_b=zeros_param(f"{name}.conv2_b", (ch,), dtype),
        ln2_g=Param(f"{name}.ln2_g", torch.ones(ch, dtype=dtype)),
        ln2_b=zeros_param(f"{name}.ln2_b", (ch,), dtype),
        out_w=uniform_param(f"{name}.out_w", (1, ch), ch, gen, dtype),
        out_b=zeros_param(f"{name}.out_b", (1,), dtype),
    )


def init_tts_params(config: TtsConfig, d_word_features: int, *, seed: int,
                    dtype=torch.float32) -> TtsParams:
    gen = torch.Generator().manual_seed(seed)
    d, k = config.d_enc, config.predictor_kernel
    return TtsParams(
        phoneme_table=normal_param("tts.phoneme_table",
                                   (d, config.phoneme_vocab), 0.02, gen, dtype),
        enc_blocks=[
            _init_fft_block(f"tts.enc{b}", d, config.fft_filter, 3, gen, dtype)
            for b in range(config.n_fft_blocks)
        ],
        w_fuse=uniform_param("tts.w_fuse", (d, d + d_word_features),
                             d + d_word_features, gen, dtype),
        b_fuse=zeros_param("tts.b_fuse", (d,), dtype),
        duration=_init_predictor("tts.duration", d, config.predictor_channels,
                                 k, gen, dtype),
        pitch=_init_predictor("tts.pitch", d, config.predictor_channels, k,
                              gen, dtype),
        energy=_init_predictor("tts.energy", d, config.predictor_channels, k,
                               gen, dtype),
        pitch_emb_w=uniform_param("tts.pitch_emb_w", (d, 1, k), k, gen, dtype),
        pitch_emb_b=zeros_param("tts.pitch_emb_b", (d,), dtype),
        energy_emb_w=uniform_param("tts.energy_emb_w", (d, 1, k), k, gen, dtype),
        energy_emb_b=zeros_param("tts.energy_emb_b", (d,), dtype),
        dec_in_w=uniform_param("tts.dec_in_w", (config.d_dec, d), d, gen, dtype),
        dec_in_b=zeros_param("tts.dec_in_b", (config.d_dec,), dtype),
        dec_blocks=[
            _init_fft_block(f"tts.dec{b}", config.d_dec, config.fft_filter, 3,
                            gen, dtype)
            for b in range(config.n_fft_blocks)
        ],
        mel_w=uniform_param("tts.mel_w", (config.n_mels, config.d_dec),
                            config.d_dec, gen, dtype),
        mel_b=zeros_param("tts.mel_b", (config.n_mels,), dtype),
    )


_POSENC_CACHE: dict[tuple, torch.Tensor] = {}


def sinusoidal_positions(d: int, length: int, dtype=torch.float32) -> torch.Tensor:
    """(d, length) sine/cosine position encoding. Cached; do not mutate."""
    key = (d, length, dtype)
    pe = _POSENC_CACHE.get(key)
    if pe is None:
        pos = torch.arange(length, dtype=dtype)
        even = torch.arange(0, d, 2, dtype=dtype)
        angles = pos.unsqueeze(0) / torch.pow(
            torch.tensor(10000.0, dtype=dtype), even / d
        ).unsqueeze(1)
        pe = torch.zeros((d, length), dtype=dtype)
        pe[0::2] = torch.sin(angles)
        pe[1::2] = torch.cos(angles[: d // 2])
        _POSENC_CACHE[key] = pe
    return pe


def fft_block(x, blk: FftBlockParams, n_heads, *, training, gen, p_drop):
    """Self-attention then conv feed-forward, each with residual + norm."""
    attn = softmax_attention(x, n_heads, blk.wq, blk.bq, blk.wk, blk.bk,
                             blk.wv, blk.bv, blk.wo, blk.bo)
    x = layer_norm(x + dropout(attn, p_drop, training=training, generator=gen),
                   blk.ln1_g, blk.ln1_b)
    ff = conv1d(relu(conv1d(x, blk.conv1_w, blk.conv1_b)), blk.conv2_w,
                blk.conv2_b)
    return layer_norm(x + dropout(ff, p_drop, training=training, generator=gen),
                      blk.ln2_g, blk.ln2_b)


def phoneme_encode(ids: torch.Tensor, params: TtsParams, config: TtsConfig, *,
                   training=False, gen=None) -> torch.Tensor:
    """Embed phoneme ids and run the encoder stack; returns (d_enc, L)."""
    if ids.numel() and int(ids.max()) >= config.phoneme_vocab:
        raise ValidationError(
            f"phoneme id {int(ids.max())} out of range "
            f"0..{config.phoneme_vocab - 1}"
        )
    x = params.phoneme_table.data[:, ids]
    x = x + sinusoidal_positions(config.d_enc, x.shape[1], x.dtype)
    for blk in params.enc_blocks:
        x = fft_block(x, blk, config.n_heads, training=training, gen=gen,
                      p_drop=config.dropout)
    return x


def fuse_rwen(phoneme_repr: torch.Tensor, word_features: torch.Tensor,
              params: TtsParams) -> torch.Tensor:
    """Concatenate phoneme-aligned word features and project back to d_enc."""
    if phoneme_repr.shape[1] != word_features.shape[1]:
        raise ValidationError(
            f"phoneme representation has {phoneme_repr.shape[1]} positions, "
            f"word features {word_features.shape[1]}"
        )
    return linear(params.w_fuse, params.b_fuse,
                  torch.cat([phoneme_repr, word_features], dim=0))


def _predictor(x, pp: PredictorParams, *, training, gen, p_drop):
    h = relu(conv1d(x, pp.conv1_w, pp.conv1_b))
    h = dropout(layer_norm(h, pp.ln1_g, pp.ln1_b), p_drop, training=training,
                generator=gen)
    h = relu(conv1d(h, pp.conv2_w, pp.conv2_b))
    h = dropout(layer_norm(h, pp.ln2_g, pp.ln2_b), p_drop, training=training,
                generator=gen)
    return linear(pp.out_w, pp.out_b, h).squeeze(0)


def predict_variances(fused: torch.Tensor, params: TtsParams,
                      config: TtsConfig, *, training=False, gen=None):
    """Per-phoneme (log-duration, pitch, energy) scalars, each shaped (L,)."""
    kw = dict(training=training, gen=gen, p_drop=config.dropout)
    return (
        _predictor(fused, params.duration, **kw),
        _predictor(fused, params.pitch, **kw),
        _predictor(fused, params.energy, **kw),
    )


def add_variance_embeddings(fused: torch.Tensor, pitch: torch.Tensor,
                            energy: torch.Tensor,
                            params: TtsParams) -> torch.Tensor:
    """Embed pitch/energy scalar tracks through convs and add element-wise."""
    p_emb = conv1d(pitch.unsqueeze(0), params.pitch_emb_w, params.pitch_emb_b)
    e_emb = conv1d(energy.unsqueeze(0), params.energy_emb_w,
                   params.energy_emb_b)
    return fused + p_emb + e_emb


def length_regulate(x: torch.Tensor, durations) -> torch.Tensor:
    """Repeat each phoneme column for its duration in frames; (d, sum)."""
    durations = torch.as_tensor(durations, dtype=torch.long)
    if durations.numel() != x.shape[1]:
        raise ValidationError(
            f"{durations.numel()} durations for {x.shape[1]} positions"
        )
    if (durations < 0).any():
        raise ValidationError("negative duration")
    return torch.repeat_interleave(x, durations, dim=1)


def durations_from_log(log_dur: torch.Tensor) -> torch.Tensor:
    """Invert the log(1 + frames) training target, clamped at zero."""
    return torch.clamp(torch.round(torch.exp(log_dur.detach()) - 1.0),
                       min=0).to(torch.long)


def mel_decode(frames: torch.Tensor, params: TtsParams, config: TtsConfig, *,
               training=False, gen=None) -> torch.Tensor:
    """Decode frame-level representation to (n_mels, T)."""
    if frames.shape[1] == 0:
        return frames.new_zeros((config.n_mels, 0))
    x = linear(params.dec_in_w, params.dec_in_b, frames)
    x = x + sinusoidal_positions(config.d_dec, x.shape[1], x.dtype)
    for blk in params.dec_blocks:
        x = fft_block(x, blk, config.n_heads, training=training, gen=gen,
                      p_drop=config.dropout)
    return linear(params.mel_w, params.mel_b, x)


# ---------------------------------------------------------------------------
# Batches and losses.

@dataclass
class SentenceInputs:
    """Phoneme-level inputs and targets for one sentence."""

    sentence_id: str
    phoneme_ids: torch.Tensor       # (L,) long
    word_features: torch.Tensor     # (d_out, L), already phoneme-aligned
    dur_frames: torch.Tensor | None = None   # (L,) long
    log_dur: torch.Tensor | None = None      # (L,) float, log(1 + frames)
    pitch: torch.Tensor | None = None        # (L,) float
    energy: torch.Tensor | None = None       # (L,) float
    mel: torch.Tensor | None = None          # (n_mels, T)


@dataclass
class AcousticBatch:
    sentences: list[SentenceInputs] = field(default_factory=list)


def sentence_forward(item: SentenceInputs, params: TtsParams,
                     config: TtsConfig, *, training=False, gen=None,
                     use_target_variances=True):
    """Run the acoustic stack for one sentence.

    With ``use_target_variances`` the target pitch/energy feed the variance
    embeddings and target durations drive length regulation (the training
    path); otherwise predictions do (the inference path).
    """
    phon = phoneme_encode(item.phoneme_ids, params, config, training=training,
                          gen=gen)
    fused = fuse_rwen(phon, item.word_features, params)
    log_dur, pitch, energy = predict_variances(fused, params, config,
                                               training=training, gen=gen)
    if use_target_variances:
        if item.dur_frames is None:
            raise ValidationError(
                f"sentence {item.sentence_id}: targets required for the "
                "teacher-forced path"
            )
        used_pitch, used_energy = item.pitch, item.energy
        used_durations = item.dur_frames
    else:
        used_pitch, used_energy = pitch, energy
        used_durations = durations_from_log(log_dur)
    x = add_variance_embeddings(fused, used_pitch, used_energy, params)
    frames = length_regulate(x, used_durations)
    mel = mel_decode(frames, params, config, training=training, gen=gen)
    return {"mel": mel, "log_dur": log_dur, "pitch": pitch, "energy": energy}


_LOSS_TERMS = ("mel", "pitch", "energy", "duration")


def batch_losses(batch: AcousticBatch, params: TtsParams, config: TtsConfig, *,
                 training=False, gen=None) -> dict[str, torch.Tensor]:
    """Element-mean MSE losses over the batch plus their weighted total."""
    sq_sums = {term: None for term in _LOSS_TERMS}
    counts = {term: 0 for term in _LOSS_TERMS}

    def add(term, pred, target):
        if pred.numel() == 0:
            return
        sq = ((pred - target) ** 2).sum()
        sq_sums[term] = sq if sq_sums[term] is None else sq_sums[term] + sq
        counts[term] += pred.numel()

    for item in batch.sentences:
        if item.phoneme_ids.numel() == 0:
            continue
        out = sentence_forward(item, params, config, training=training,
                               gen=gen, use_target_variances=True)
        add("mel", out["mel"], item.mel)
        add("pitch", out["pitch"], item.pitch)
        add("energy", out["energy"], item.energy)
        add("duration", out["log_dur"], item.log_dur)

    losses: dict[str, torch.Tensor] = {}
    for term in _LOSS_TERMS:
        losses[term] = (
            sq_sums[term] / counts[term]
            if sq_sums[term] is not None else torch.zeros(())
        )
    losses["total"] = (
        config.lambda_mel * losses["mel"]
        + config.lambda_pitch * losses["pitch"]
        + config.lambda_energy * losses["energy"]
        + config.lambda_dur * losses["duration"]
    )
    return losses


def training_step(batch: AcousticBatch, params: TtsParams, config: TtsConfig,
                  optimizer, *, gen=None) -> dict[str, float]:
    """One optimizer update on a teacher-forced batch; returns loss floats."""
    optimizer.zero_grad()
    losses = batch_losses(batch, params, config, training=True, gen=gen)
    total = losses["total"]
    if not torch.isfinite(total):
        detail = ", ".join(
            f"{k}={float(v.detach()):.4g}" for k, v in losses.items()
            if k != "total"
        )
        raise NumericalError(f"non-finite training loss ({detail})")
    total.backward()
    optimizer.step()
    return {k: float(v.detach()) for k, v in losses.items()}
