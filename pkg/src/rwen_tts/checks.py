"""Finite-difference gradient suites for the CLI and the test harness.

Every closure is built in float64 at tiny sizes; inputs are fixed per seed
so repeated closure calls see identical data.
"""

from __future__ import annotations

from typing import Callable

import torch

from . import featstore
from .align import word_average_pool
from .errors import ValidationError
from .nncore import (
    GradcheckReport, Param, conv1d, dropout, gradcheck, gru_forward, init_gru,
    layer_norm, linear, mse, relu, softmax_attention,
)
from .rwen import RwenConfig, awre_forward, init_rwen_params, rte_lookup, sre_forward
from .training import (
    ModelConfig, build_acoustic_batch, init_model_params, prepare_example,
)
from .tts import TtsConfig, batch_losses

F64 = torch.float64

Check = tuple[str, Callable[[], torch.Tensor], list[Param]]


def _weights(gen, *shape):
    return torch.randn(*shape, generator=gen, dtype=F64)


def nncore_checks(seed: int = 0) -> list[Check]:
    gen = torch.Generator().manual_seed(seed)
    checks: list[Check] = []

    w = Param("linear.w", _weights(gen, 5, 4))
    b = Param("linear.b", _weights(gen, 5))
    x = _weights(gen, 4, 6)
    checks.append(("linear", lambda: linear(w, b, x).pow(2).sum(), [w, b]))

    cw = Param("conv.w", _weights(gen, 3, 2, 3) * 0.5)
    cb = Param("conv.b", _weights(gen, 3) * 0.5)
    cx = _weights(gen, 2, 7)
    checks.append(("conv1d", lambda: conv1d(cx, cw, cb).pow(2).sum(), [cw, cb]))

    rw = Param("relu.w", _weights(gen, 4, 4))
    rx = _weights(gen, 4, 5)
    checks.append(("relu", lambda: relu(rw.data @ rx).sum(), [rw]))

    lg = Param("ln.gain", torch.ones(6, dtype=F64))
    lb = Param("ln.bias", torch.zeros(6, dtype=F64))
    lw = Param("ln.w", _weights(gen, 6, 6))
    lx = _weights(gen, 6, 4)
    checks.append(
        ("layer_norm",
         lambda: layer_norm(lw.data @ lx, lg, lb).pow(2).sum(), [lw, lg, lb])
    )

    dw = Param("dropout.w", _weights(gen, 4, 4))
    dx = _weights(gen, 4, 5)

    def dropout_loss():
        # reseed per call so every evaluation sees the same mask
        g = torch.Generator().manual_seed(seed + 7)
        return dropout(dw.data @ dx, 0.4, training=True, generator=g).sum()

    checks.append(("dropout", dropout_loss, [dw]))

    d = 6
    attn_params = {
        name: Param(f"attn.{name}", _weights(gen, d, d) * 0.5)
        for name in ("wq", "wk", "wv", "wo")
    }
    attn_biases = {
        name: Param(f"attn.{name}", _weights(gen, d) * 0.1)
        for name in ("bq", "bk", "bv", "bo")
    }
    ax = _weights(gen, d, 5)
    checks.append(
        ("softmax_attention",
         lambda: softmax_attention(
             ax, 2, attn_params["wq"], attn_biases["bq"], attn_params["wk"],
             attn_biases["bk"], attn_params["wv"], attn_biases["bv"],
             attn_params["wo"], attn_biases["bo"],
         ).pow(2).sum(),
         list(attn_params.values()) + list(attn_biases.values()))
    )

    mw = Param("mse.w", _weights(gen, 3, 3))
    mx = _weights(gen, 3, 4)
    mt = _weights(gen, 3, 4)
    checks.append(("mse", lambda: mse(mw.data @ mx, mt), [mw]))

    cell = init_gru("gru", 3, 4, gen, F64)
    gx = _weights(gen, 3, 5)
    gw = _weights(gen, 4, 5)

    def gru_loss():
        states, _last = gru_forward(cell, gx)
        return (states * gw).sum()

    checks.append(("gru_forward", gru_loss, cell.params()))

    pool_src = Param("pool.hs", _weights(gen, 4, 7))
    pool_seg = featstore.SubwordSegmentation(((1, 3), (3, 4), (4, 6)), 5)
    pool_w = _weights(gen, 4, 5)
    checks.append(
        ("word_average_pool",
         lambda: (word_average_pool(pool_src.data, pool_seg) * pool_w).sum(),
         [pool_src])
    )
    return checks


def _tiny_sentences(seed: int, count: int = 2):
    cfg = featstore.SynthConfig(
        n_sentences=count, max_words=5, phoneme_vocab=12, d_h=8, n_mels=4,
        seed=seed,
    )
    return featstore.synth_dataset(cfg)


def _tiny_model_config(*, enable_sre: bool = True,
                       enable_awre: bool = True) -> ModelConfig:
    return ModelConfig(
        rwen=RwenConfig(d_h=8, d_et=4, d_de=3, d_out=8,
                        enable_sre=enable_sre, enable_awre=enable_awre),
        tts=TtsConfig(
            d_enc=16, d_dec=16, n_fft_blocks=1, n_heads=2, fft_filter=16,
            predictor_channels=8, n_mels=4, phoneme_vocab=12, dropout=0.0,
        ),
    )


def rwen_checks(seed: int = 0) -> list[Check]:
    sentence = _tiny_sentences(seed, count=1)[0]
    example = prepare_example(sentence, dtype=F64)
    config = RwenConfig(d_h=8, d_et=4, d_de=3, d_out=6)
    params = init_rwen_params(config, seed=seed, dtype=F64)
    gen = torch.Generator().manual_seed(seed + 3)
    w_sre = torch.randn(8, example.hw.shape[1], generator=gen, dtype=F64)
    w_awre = torch.randn(8, example.hw.shape[1], generator=gen, dtype=F64)

    def sre_loss():
        et = rte_lookup(sentence.tree.rels, params)
        return (sre_forward(example.hw, et, example.root_paths, params)
                * w_sre).sum()

    def awre_loss():
        et = rte_lookup(sentence.tree.rels, params)
        out = awre_forward(example.hw, et, example.prev_paths,
                           example.next_paths, params)
        return (out * w_awre).sum()

    sre_ps = params.sre_branch_params() + [params.rte]
    awre_ps = params.awre_branch_params() + [params.rte]
    return [
        ("sre_forward", sre_loss, sre_ps),
        ("awre_forward", awre_loss, awre_ps),
    ]


def tts_checks(seed: int = 0) -> list[Check]:
    sentences = _tiny_sentences(seed)
    config = _tiny_model_config()
    mparams = init_model_params(config, seed=seed, dtype=F64)
    examples = [prepare_example(s, dtype=F64, require_targets=True)
                for s in sentences]

    def loss():
        batch = build_acoustic_batch(examples, mparams, config)
        return batch_losses(batch, mparams.tts, config.tts)["total"]

    return [("rwen_tts_full", loss, mparams.params())]


_MODULES = {
    "nncore": nncore_checks,
    "rwen": rwen_checks,
    "tts": tts_checks,
}


def run_gradcheck(module: str = "all", *, seed: int = 0, tolerance: float = 1e-4,
                  max_entries: int = 12,
                  log: Callable[[str], None] | None = None
                  ) -> dict[str, GradcheckReport]:
    """Run the named module's suite (or all); returns report per check."""
    if module != "all" and module not in _MODULES:
        raise ValidationError(
            f"unknown module {module!r}; choose from "
            f"{sorted(_MODULES)} or 'all'"
        )
    names = list(_MODULES) if module == "all" else [module]
    reports: dict[str, GradcheckReport] = {}
    for name in names:
        for check_name, closure, params in _MODULES[name](seed):
            report = gradcheck(closure, params, tolerance=tolerance,
                               max_entries=max_entries, seed=seed)
            reports[f"{name}.{check_name}"] = report
            if log:
                status = "ok" if report.ok else "FAIL"
                log(f"{name}.{check_name}: max_rel_err="
                    f"{report.max_rel_err:.3e} [{status}]")
    return reports
