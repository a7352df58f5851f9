import json
from dataclasses import replace

import numpy as np
import pytest

from lionxa import config as C
from lionxa.errors import MissingTargetDomain, NoValidation
from lionxa.pipeline import (Preprocessor, collate, join, read_split, split_mapping, synth_split, write_split)
from lionxa.trainer import Context, Trainer, forward, load_data, select_checkpoint, slice_outputs, train_step


@pytest.fixture(scope="module")
def tiny():
    cfg = C.preset("synthetic-64-32")
    return replace(cfg, train=replace(cfg.train, max_iter=4, val_every=2, stages=(4, 8, 8), features=8),
                   data=C.DataConfig(2, 2, 1, 1))


@pytest.fixture(scope="module")
def tiny_data(tiny):
    return load_data(tiny)


def batches(cfg, data, seed=0):
    prep = Preprocessor(cfg, data["source_stats"], data["target_stats"])
    rng = np.random.default_rng(seed)
    mk = lambda split, kind: collate([prep.train_sample(s, kind, rng) for s in data[split]])
    return mk("source", "source"), mk("source", "targetlike"), mk("target", "target")


def test_split_files_roundtrip(tiny, tmp_path):
    scans = synth_split(tiny, "target", 2)
    write_split(tmp_path, scans)
    back = read_split(tmp_path, split_mapping(tiny, "target"))
    assert [b.cloud.points.astype(np.float32).tobytes() for b in back] == \
           [s.cloud.points.astype(np.float32).tobytes() for s in scans]
    assert all(b.labels == s.labels for b, s in zip(back, scans))


def test_sample_streams_agree(tiny, tiny_data):
    bs, btl, bt = batches(tiny, tiny_data)
    for b in (bs, btl, bt):
        h, w = b.images.shape[1:3]
        assert w == tiny.train.cutout_width and h == tiny.target.beams
        assert b.pixel.max() < b.size * h * w and len(b.points) == len(b.labels) == len(b.neighbors)
        assert np.array_equal(np.unique(b.segment), np.arange(b.size))


def test_targetlike_rows(tiny, tiny_data):
    prep = Preprocessor(tiny, tiny_data["source_stats"], tiny_data["target_stats"])
    img, _, _, _ = prep.image(tiny_data["source"][0].cloud, tiny_data["source"][0].labels, "targetlike")
    assert img.height == tiny.target.beams and img.width == tiny.target.width


def test_joint_forward_matches_separate(tiny, tiny_data):
    ctx = Context(tiny)
    streams = batches(tiny, tiny_data)
    joint, parts = join(streams)
    out = forward(ctx, joint)
    for b, part in zip(streams, parts):
        sep = forward(ctx, b)
        sl = slice_outputs(out, part)
        assert np.allclose(sl.main2d.data, sep.main2d.data)
        assert np.allclose(sl.main3d.data, sep.main3d.data)
        assert np.allclose(sl.lifted_main.data, sep.lifted_main.data)


def test_step_phases(tiny, tiny_data):
    ctx = Context(tiny)
    before = [p.data.copy() for p in ctx.disc.parameters()]
    rec = train_step(ctx, *batches(tiny, tiny_data)).record()
    assert all(rec[k] is not None for k in ("sup", "xm_s", "xm_t", "adv", "disc"))
    assert any(not np.array_equal(a, p.data) for a, p in zip(before, ctx.disc.parameters()))
    base = C.baseline_variant(tiny)
    ctx = Context(base)
    before = [p.data.copy() for p in ctx.disc.parameters()]
    bs, _, _ = batches(base, tiny_data)
    rec = train_step(ctx, bs, None, None).record()
    assert rec["disc"] is None and rec["xm_s"] is None
    assert all(np.array_equal(a, p.data) for a, p in zip(before, ctx.disc.parameters()))


def test_missing_target_batch(tiny, tiny_data):
    bs, btl, _ = batches(tiny, tiny_data)
    with pytest.raises(MissingTargetDomain):
        train_step(Context(tiny), bs, btl, None)


def test_select_checkpoint():
    hist = [{"iter": 2, "miou_2d": 5.0, "miou_3d": 1.0}, {"iter": 4, "miou_2d": 5.0, "miou_3d": 3.0}]
    assert select_checkpoint(hist) == (2, 4)
    with pytest.raises(NoValidation):
        select_checkpoint([])


def test_run_outputs_and_determinism(tiny, tiny_data, tmp_path):
    res = Trainer(tiny, tmp_path, tiny_data).run()
    lines = (tmp_path / "runlog.jsonl").read_text().splitlines()
    assert len(lines) == tiny.train.max_iter
    assert [json.loads(x)["iter"] for x in lines] == list(range(tiny.train.max_iter))
    assert len((tmp_path / "validation.jsonl").read_text().splitlines()) == 2
    for f in ("model_2d.ckpt", "model_3d.ckpt", "discriminators.ckpt", "stats.json"):
        assert (tmp_path / f).is_file()
    again = Trainer(tiny, None, tiny_data).run()
    assert again.log == res.log and again.test_miou == res.test_miou
    assert set(res.test_miou) == {"2d", "3d", "2d+3d"}


def test_oracle_trains_on_target(tiny, tiny_data):
    tr = Trainer(C.oracle_variant(tiny), None, tiny_data)
    assert tr.labelled is tiny_data["target"]
