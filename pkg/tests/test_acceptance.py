"""Acceptance suite: one test per release criterion, each printing a
PASS line with its measured numbers (run with ``pytest -s`` to see them
inline)."""

import json
import random
import statistics
import time

import numpy as np
import pytest
import torch

from rwen_tts import featstore
from rwen_tts.cli import main as cli_main
from rwen_tts.deptree import (
    DependencyTree, adjacent_path, root_path, sentence_paths,
)
from rwen_tts.featstore import SynthConfig, synth_dataset
from rwen_tts.rwen import rte_lookup, sre_forward
from rwen_tts.checks import run_gradcheck
from rwen_tts.training import (
    TrainConfig, build_acoustic_batch, desk_model_config, evaluate,
    init_model_params, load_checkpoint, prepare_example, train,
)
from rwen_tts.tts import batch_losses, sentence_forward

from test_deptree import bfs_oracle, head_iteration_oracle


def _ok(name: str, detail: str) -> None:
    print(f"[acceptance] {name}: PASS ({detail})", flush=True)


# -------------------------------------------------------------------------

def test_path_oracle_equivalence():
    rng = random.Random(42)
    start = time.monotonic()
    trees = 0
    for _ in range(1000):
        n = rng.randint(1, 60)
        tree = featstore.random_tree(rng, n)
        trees += 1
        for i in range(1, n + 1):
            assert list(root_path(tree, i).indexes) == \
                head_iteration_oracle(tree, i)
            if i >= 2:
                assert list(adjacent_path(tree, i, "prev").indexes) == \
                    bfs_oracle(tree, i, i - 1)
            if i <= n - 1:
                assert list(adjacent_path(tree, i, "next").indexes) == \
                    bfs_oracle(tree, i, i + 1)
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"path oracle sweep took {elapsed:.1f}s"
    _ok("path-oracle-equivalence", f"{trees} trees in {elapsed:.2f}s")


def test_worked_example_fidelity(shark_tree):
    up = root_path(shark_tree, 2)
    assert up.indexes == (2, 3, 8)
    prev = adjacent_path(shark_tree, 2, "prev")
    assert prev.indexes == (2, 3, 1)
    assert prev.directions == ("self", "parent", "child")
    _ok("worked-example-fidelity",
        "root path (2,3,8); adjacent path (2,3,1) self/parent/child")


def test_gradient_suite():
    start = time.monotonic()
    reports = run_gradcheck("all", seed=0, tolerance=1e-4)
    elapsed = time.monotonic() - start
    failed = {name: rep.max_rel_err for name, rep in reports.items()
              if not rep.ok}
    assert not failed, f"gradient checks failed: {failed}"
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"
    worst = max(rep.max_rel_err for rep in reports.values())
    _ok("gradient-suite",
        f"{len(reports)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_shape_laws():
    sentences = synth_dataset(
        SynthConfig(n_sentences=200, max_words=10, phoneme_vocab=11, d_h=8,
                    n_mels=5, seed=17)
    )
    config = desk_model_config(d_h=8, n_mels=5, phoneme_vocab=11, dropout=0.0)
    mparams = init_model_params(config, seed=0)
    d_h, d_out = config.rwen.d_h, config.rwen.d_out
    from rwen_tts.rwen import awre_forward, combine, upsample_to_phonemes

    violations = 0
    with torch.no_grad():
        for s in sentences:
            ex = prepare_example(s, require_targets=True)
            cols = s.tree.n + 2
            et = rte_lookup(s.tree.rels, mparams.rwen)
            o_sre = sre_forward(ex.hw, et, ex.root_paths, mparams.rwen)
            o_awre = awre_forward(ex.hw, et, ex.prev_paths, ex.next_paths,
                                  mparams.rwen)
            feats = combine(o_sre, o_awre, mparams.rwen, config.rwen)
            up = upsample_to_phonemes(feats, ex.phoneme_counts)
            batch = build_acoustic_batch([ex], mparams, config)
            out = sentence_forward(batch.sentences[0], mparams.tts, config.tts)
            expected_frames = int(ex.dur_frames.sum())
            if o_sre.shape != (d_h, cols) or o_awre.shape != (d_h, cols):
                violations += 1
            elif feats.shape != (d_out, cols):
                violations += 1
            elif up.shape != (d_out, s.total_phonemes):
                violations += 1
            elif out["mel"].shape != (config.tts.n_mels, expected_frames):
                violations += 1
    assert violations == 0
    _ok("shape-laws", "200 sentences, 0 violations")


def test_locality():
    rng = random.Random(123)
    sentences = synth_dataset(
        SynthConfig(n_sentences=40, max_words=10, phoneme_vocab=11, d_h=8,
                    n_mels=5, seed=23)
    )
    config = desk_model_config(d_h=8, n_mels=5, phoneme_vocab=11)
    mparams = init_model_params(config, seed=1)
    probes = 0
    with torch.no_grad():
        while probes < 100:
            s = rng.choice(sentences)
            if s.tree.n < 2:
                continue
            ex = prepare_example(s)
            et = rte_lookup(s.tree.rels, mparams.rwen)
            paths = sentence_paths(s.tree, "root")
            i = rng.randrange(0, s.tree.n + 2)
            inside = set(paths[i].indexes)
            outside = [j for j in range(1, s.tree.n + 1) if j not in inside]
            if not outside:
                continue
            j = rng.choice(outside)
            base = sre_forward(ex.hw, et, ex.root_paths, mparams.rwen)
            hw2 = ex.hw.clone()
            hw2[:, j] += torch.randn(hw2.shape[0],
                                     generator=torch.Generator().manual_seed(
                                         probes)) * 3.0
            out = sre_forward(hw2, et, ex.root_paths, mparams.rwen)
            assert torch.equal(out[:, i], base[:, i]), \
                f"column {i} changed after perturbing word {j} outside its path"
            probes += 1
    _ok("locality", "100 probes, perturbations outside the path left "
        "columns bit-identical")


@pytest.mark.slow
def test_overfit_check(tmp_path):
    sentences = synth_dataset(
        SynthConfig(n_sentences=32, max_words=6, max_phonemes=4, d_h=16,
                    seed=5)
    )
    start = time.monotonic()
    ratios = []
    for seed in (0, 1, 2):
        config = TrainConfig(model=desk_model_config(d_h=16), steps=2000,
                             lr=3e-3, batch_size=4, seed=seed)
        result = train(sentences, config, tmp_path / f"seed{seed}")
        ratios.append(result.loss_ratio)
    elapsed = time.monotonic() - start
    med = statistics.median(ratios)
    assert med < 0.1, f"median loss ratio {med:.3f} over seeds {ratios}"
    assert elapsed < 600.0, f"overfit check took {elapsed:.0f}s"
    _ok("overfit-check",
        f"median final/initial loss {med:.4f} over 3 seeds in {elapsed:.0f}s")


@pytest.mark.slow
def test_ablation_structural_parity(tmp_path, capsys):
    sentences = synth_dataset(
        SynthConfig(n_sentences=8, max_words=5, phoneme_vocab=11, d_h=8,
                    n_mels=5, seed=31)
    )
    data_dir = tmp_path / "data"
    featstore.save_manifest(sentences, data_dir)
    flag_sets = ((True, True), (True, False), (False, True), (False, False))

    ckpts = []
    for sre, awre in flag_sets:
        config = TrainConfig(
            model=desk_model_config(d_h=8, n_mels=5, phoneme_vocab=11,
                                    enable_sre=sre, enable_awre=awre),
            steps=30, lr=3e-3, batch_size=4, seed=0,
        )
        result = train(sentences, config, tmp_path / f"sre{sre}-awre{awre}")
        ckpts.append(str(result.checkpoint_dir))

    capsys.readouterr()
    code = cli_main(["eval", "--manifest", str(data_dir), "--ckpt"] + ckpts)
    table = capsys.readouterr().out
    assert code == 0
    for label in ("full", "no-awre", "no-sre", "no-sre-no-awre"):
        assert label in table, f"missing eval row for {label}"

    # disabled branches must receive exactly zero gradient
    examples = [prepare_example(s, require_targets=True) for s in sentences]
    for sre, awre in flag_sets[1:]:
        config = desk_model_config(d_h=8, n_mels=5, phoneme_vocab=11,
                                   enable_sre=sre, enable_awre=awre)
        mparams = init_model_params(config, seed=0)
        batch = build_acoustic_batch(examples[:4], mparams, config)
        losses = batch_losses(batch, mparams.tts, config.tts, training=True,
                              gen=torch.Generator().manual_seed(0))
        losses["total"].backward()
        disabled = []
        if not sre:
            disabled += mparams.rwen.sre_branch_params()
        if not awre:
            disabled += mparams.rwen.awre_branch_params()
        if not sre and not awre:
            disabled = mparams.rwen.params()
        for p in disabled:
            assert p.grad is None or p.grad.abs().sum().item() == 0.0, \
                f"disabled parameter {p.name} received gradient"
    _ok("ablation-structural-parity",
        "4 configurations trained; eval table emitted; disabled branches "
        "had zero gradient")


def test_determinism(tmp_path, capsys):
    data = tmp_path / "data"
    code = cli_main(["synth-data", "--n", "5", "--max-words", "5",
                     "--phoneme-vocab", "11", "--d-h", "8", "--n-mels", "5",
                     "--seed", "3", "--out", str(data)])
    assert code == 0
    cfg = TrainConfig(model=desk_model_config(d_h=8, n_mels=5,
                                              phoneme_vocab=11),
                      steps=3, batch_size=4, seed=0)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg.to_dict()))
    assert cli_main(["train", "--manifest", str(data), "--config",
                     str(tmp_path / "cfg.json"), "--out",
                     str(tmp_path / "run")]) == 0
    ckpt = tmp_path / "run" / "checkpoint"

    for name in ("e1", "e2"):
        assert cli_main(["encode", "--manifest", str(data), "--ckpt",
                         str(ckpt), "--out", str(tmp_path / name)]) == 0
    files = sorted((tmp_path / "e1").iterdir())
    assert files, "encode produced no files"
    for f in files:
        assert f.read_bytes() == (tmp_path / "e2" / f.name).read_bytes()

    capsys.readouterr()
    assert cli_main(["eval", "--manifest", str(data), "--ckpt",
                     str(ckpt), "--machine"]) == 0
    eval1 = capsys.readouterr().out
    assert cli_main(["eval", "--manifest", str(data), "--ckpt",
                     str(ckpt), "--machine"]) == 0
    eval2 = capsys.readouterr().out
    assert eval1 == eval2 and eval1.strip()

    # format round trips are bit-exact
    arr = np.random.default_rng(0).normal(size=(7, 3)).astype(np.float32)
    featstore.write_tensor(tmp_path / "t.rwt", arr)
    assert featstore.read_tensor(tmp_path / "t.rwt").tobytes() == arr.tobytes()
    second = tmp_path / "second"
    featstore.save_manifest(featstore.load_manifest(data), second)
    assert (data / "manifest.jsonl").read_bytes() == \
        (second / "manifest.jsonl").read_bytes()
    _ok("determinism", "encode, eval and format round-trips bit-exact")
