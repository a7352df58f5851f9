"""Three-phase adaptation loop, validation-based checkpoint choice, evaluation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .config import ScenarioConfig
from .errors import MissingTargetDomain, NoValidation
from .metrics import ConfusionMatrix, accumulate, ensemble, iou
from .networks import DiscriminatorSet, Seg2DNet, Seg3DNet, save_checkpoint
from .optim import SGD, Adam, set_lr
from .pipeline import (SPLITS, Preprocessor, collate, domain_stats_images, join, read_split, split_mapping,
                       synth_split)

LOG_FIELDS = ("seg3d_s", "seg2d_s", "seg3d_tl", "seg2d_tl", "sup", "xm_s", "xm_tl", "xm_t", "total",
              "g_feat", "g_s3d_t2d", "g_s2d_t3d", "adv", "d_feat", "d_s3d_t2d", "d_s2d_t3d", "disc")


@dataclass
class StepStats:
    iteration: int
    lr_2d: float
    lr_3d: float
    lr_disc: float
    losses: dict = field(default_factory=dict)

    def record(self):
        return {"iter": self.iteration, "lr_2d": self.lr_2d, "lr_3d": self.lr_3d, "lr_disc": self.lr_disc,
                **{k: self.losses.get(k) for k in LOG_FIELDS}}


class Context:
    """Networks, optimizers and discriminators for one run."""

    def __init__(self, cfg: ScenarioConfig, class_weights=None):
        self.cfg = cfg
        c = cfg.num_classes
        f = cfg.train.features
        seeds = np.random.SeedSequence([cfg.seed, 99]).generate_state(3)
        self.net2d = Seg2DNet(c, features=f, seed=int(seeds[0]), stages=cfg.train.stages)
        self.net3d = Seg3DNet(c, features=f, seed=int(seeds[1]))
        self.disc = DiscriminatorSet(c, features=f, seed=int(seeds[2]))
        o = cfg.optim
        sched = cfg.schedules()
        self.opt2d = SGD(self.net2d.parameters(), o.lr_2d, o.momentum_2d, sched["2d"])
        self.opt3d = Adam(self.net3d.parameters(), o.lr_3d, (o.beta1_3d, o.beta2_3d), o.eps, sched["3d"])
        self.optd = Adam(self.disc.parameters(), o.lr_disc, (o.beta1_disc, o.beta2_disc), o.eps, sched["disc"])
        self.class_weights = class_weights
        self.iteration = 0

    def generators(self):
        return self.net2d.parameters() + self.net3d.parameters()


# ---------------------------------------------------------------- forward helpers


@dataclass
class Outputs:
    feats2d: ad.Tensor  # (B, H, W, F)
    main2d: ad.Tensor  # (B, H, W, C)
    mimic2d: ad.Tensor
    main3d: ad.Tensor  # (P, C)
    mimic3d: ad.Tensor
    lifted_main: ad.Tensor  # (P, C) 2D logits at the 3D points
    lifted_mimic: ad.Tensor


def forward(ctx: Context, batch) -> Outputs:
    feats, main2d, mimic2d = ctx.net2d(batch.images)
    c = main2d.shape[-1]
    _, main3d, mimic3d = ctx.net3d(batch.points, batch.neighbors)
    lm = ad.gather_rows(ad.reshape(main2d, (-1, c)), batch.pixel)
    lmm = ad.gather_rows(ad.reshape(mimic2d, (-1, c)), batch.pixel)
    return Outputs(feats, main2d, mimic2d, main3d, mimic3d, lm, lmm)


def slice_outputs(out: Outputs, part) -> Outputs:
    (i0, i1), (p0, p1) = part
    return Outputs(out.feats2d[i0:i1], out.main2d[i0:i1], out.mimic2d[i0:i1], out.main3d[p0:p1],
                   out.mimic3d[p0:p1], out.lifted_main[p0:p1], out.lifted_mimic[p0:p1])


def xm_loss(out: Outputs):
    return L.cross_modal_loss(ad.softmax(out.lifted_main), ad.softmax(out.lifted_mimic),
                              ad.softmax(out.main3d), ad.softmax(out.mimic3d))


def seg_batch(out: Outputs, batch):
    return L.SegBatch(out.main3d, batch.labels, out.main2d, batch.label_images)


# ---------------------------------------------------------------- the step


def train_step(ctx: Context, batch_s, batch_tl, batch_t) -> StepStats:
    """One iteration: (1) segmentation + cross-modal, (2) adversarial generator, (3) discriminators."""
    cfg = ctx.cfg
    w = cfg.weights
    it = ctx.iteration
    stats = StepStats(it, set_lr(ctx.opt2d, it), set_lr(ctx.opt3d, it), set_lr(ctx.optd, it))
    use_tl = cfg.use_targetlike and batch_tl is not None
    use_t = not cfg.oracle and (w.lambda_t > 0 or cfg.use_discriminators)
    if use_t and batch_t is None:
        raise MissingTargetDomain("this configuration needs a target batch")
    lg = stats.losses

    # (1) supervised + cross-modal over S, T_l, T; one backward accumulates all streams
    streams = [batch_s] + ([batch_tl] if use_tl else []) + ([batch_t] if use_t else [])
    joint, parts = join(streams)
    out = forward(ctx, joint)
    o_s = slice_outputs(out, parts[0])
    o_tl = slice_outputs(out, parts[1]) if use_tl else None
    o_t = slice_outputs(out, parts[-1]) if use_t else None
    wts = ctx.class_weights
    l3s = L.seg_loss_3d(o_s.main3d, batch_s.labels, wts)
    l2s = L.seg_loss_2d(o_s.main2d, batch_s.label_images, wts)
    sup = l3s + w.lambda_p * l2s
    lg["seg3d_s"], lg["seg2d_s"] = float(l3s.data), float(l2s.data)
    if use_tl:
        l3t = L.seg_loss_3d(o_tl.main3d, batch_tl.labels, wts)
        l2t = L.seg_loss_2d(o_tl.main2d, batch_tl.label_images, wts)
        sup = sup + l3t + w.lambda_p * l2t
        lg["seg3d_tl"], lg["seg2d_tl"] = float(l3t.data), float(l2t.data)
    lg["sup"] = float(sup.data)
    xm_s = xm_loss(o_s) if w.lambda_s > 0 else None
    xm_tl = xm_loss(o_tl) if use_tl and w.lambda_tl > 0 else None
    xm_t = xm_loss(o_t) if use_t and w.lambda_t > 0 else None
    for k, v in (("xm_s", xm_s), ("xm_tl", xm_tl), ("xm_t", xm_t)):
        if v is not None:
            lg[k] = float(v.data)
    total = L.total_loss(sup, xm_s, xm_tl, xm_t, w)
    lg["total"] = float(total.data)
    with ad.frozen(ctx.disc.parameters()):
        _zero(ctx.generators())
        ad.backward(total)
        ctx.opt2d.step()
        ctx.opt3d.step()

    if cfg.use_discriminators:
        # (2) generators try to make target inputs look like source (label 0)
        with ad.frozen(ctx.disc.parameters()):
            o2 = forward(ctx, batch_t)
            g_feat = ctx.disc.feat(o2.feats2d)
            g_a = ctx.disc.s3d_t2d(ad.softmax(o2.lifted_main), batch_t.segment, batch_t.size)
            g_b = ctx.disc.s2d_t3d(ad.softmax(o2.main3d), batch_t.segment, batch_t.size)
            terms = (("g_feat", L.generator_adv_loss(g_feat, w.g2d_tf)),
                     ("g_s3d_t2d", L.generator_adv_loss(g_a, w.g2d_tp)),
                     ("g_s2d_t3d", L.generator_adv_loss(g_b, w.g3d_tp)))
            adv = terms[0][1] + terms[1][1] + terms[2][1]
            for k, v in terms:
                lg[k] = float(v.data)
            lg["adv"] = float(adv.data)
            _zero(ctx.generators())
            ad.backward(adv)
            ctx.opt2d.step()
            ctx.opt3d.step()

        # (3) discriminators on detached source (phase 1) and target (phase 2) outputs
        ns, nt = batch_s.size, batch_t.size
        seg = np.concatenate([batch_s.segment, batch_t.segment + ns])

        def split(d):
            return d[:ns], d[ns:]

        d_feat = L.discriminator_loss(
            *split(ctx.disc.feat(ad.Tensor(np.concatenate([o_s.feats2d.data, o2.feats2d.data])))),
            w.d2d_sf, w.d2d_tf)
        d_a = L.discriminator_loss(
            *split(ctx.disc.s3d_t2d(_probs(o_s.main3d, o2.lifted_main), seg, ns + nt)), w.d3d_sp, w.d2d_tp)
        d_b = L.discriminator_loss(
            *split(ctx.disc.s2d_t3d(_probs(o_s.lifted_main, o2.main3d), seg, ns + nt)), w.d2d_sp, w.d3d_tp)
        disc = d_feat + d_a + d_b
        lg["d_feat"], lg["d_s3d_t2d"], lg["d_s2d_t3d"] = float(d_feat.data), float(d_a.data), float(d_b.data)
        lg["disc"] = float(disc.data)
        with ad.frozen(ctx.generators()):
            _zero(ctx.disc.parameters())
            ad.backward(disc)
            ctx.optd.step()

    ctx.iteration += 1
    return stats


def _probs(*logits):
    """Detached class probabilities of several logit tensors, stacked row-wise."""
    return ad.softmax(ad.Tensor(np.concatenate([x.data for x in logits])))


def _zero(params):
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- evaluation


def select_checkpoint(history):
    """Iteration of the best 2D and best 3D validation mIoU (earliest on ties)."""
    if not history:
        raise NoValidation("no validation records")
    b2 = max(history, key=lambda r: (r["miou_2d"], -r["iter"]))
    b3 = max(history, key=lambda r: (r["miou_3d"], -r["iter"]))
    return b2["iter"], b3["iter"]


def predict(net2d, net3d, sample):
    """Per-point (2D, 3D) class probabilities for an evaluation sample."""
    _, main2d, _ = net2d(sample.image[None])
    c = main2d.shape[-1]
    p2d_pix = _softmax_np(main2d.data.reshape(-1, c))
    _, main3d, _ = net3d(sample.points, sample.neighbors)
    p3d_vox = _softmax_np(main3d.data)
    return p2d_pix[sample.point_pixel], p3d_vox[sample.point_voxel]


def _softmax_np(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def evaluate(net2d, net3d, samples, num_classes):
    cms = {m: ConfusionMatrix.zeros(num_classes) for m in ("2d", "3d", "2d+3d")}
    for s in samples:
        p2, p3 = predict(net2d, net3d, s)
        for mod, p in (("2d", p2), ("3d", p3), ("2d+3d", ensemble(p2, p3))):
            cms[mod] = accumulate(cms[mod], p.argmax(axis=1), s.point_labels)
    return cms


def miou_of(cms):
    return {m: 100.0 * iou(cm)[1] for m, cm in cms.items()}


# ---------------------------------------------------------------- full run


@dataclass
class RunResult:
    history: list
    best_iters: tuple
    test_cms: dict
    test_miou: dict
    log: list


class Trainer:
    def __init__(self, cfg: ScenarioConfig, out_dir=None, data=None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir else None
        self.data = data if data is not None else load_data(cfg)
        d = self.data
        labelled = d["target"] if cfg.oracle else d["source"]
        hist = np.sum([s.labels.histogram() for s in labelled], axis=0)
        self.ctx = Context(cfg, L.class_weights(hist))
        train_stats = d["target_stats"] if cfg.oracle else d["source_stats"]
        self.prep = Preprocessor(cfg, train_stats, d["target_stats"])
        self.labelled = labelled
        self.val_samples = [self.prep.eval_sample(s) for s in d["val"]]
        self.rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7]))

    def batch(self, scans, kind):
        idx = self.rng.integers(0, len(scans), size=self.cfg.train.batch_size)
        return collate([self.prep.train_sample(scans[i], kind, self.rng) for i in idx])

    def run(self, progress=None) -> RunResult:
        cfg, ctx, d = self.cfg, self.ctx, self.data
        log, history = [], []
        best = {"2d": (-1.0, None), "3d": (-1.0, None)}
        logf = self._open("runlog.jsonl")
        valf = self._open("validation.jsonl")
        for it in range(cfg.train.max_iter):
            bs = self.batch(self.labelled, "source")
            btl = self.batch(d["source"], "targetlike") if cfg.use_targetlike else None
            need_t = not cfg.oracle and (cfg.weights.lambda_t > 0 or cfg.use_discriminators)
            bt = self.batch(d["target"], "target") if need_t else None
            rec = train_step(ctx, bs, btl, bt).record()
            log.append(rec)
            if logf:
                logf.write(json.dumps(rec) + "\n")
            if (it + 1) % cfg.train.val_every == 0 or it + 1 == cfg.train.max_iter:
                m = miou_of(evaluate(ctx.net2d, ctx.net3d, self.val_samples, cfg.num_classes))
                vrec = {"iter": it + 1, "miou_2d": m["2d"], "miou_3d": m["3d"], "miou_ens": m["2d+3d"]}
                history.append(vrec)
                if valf:
                    valf.write(json.dumps(vrec) + "\n")
                for mod, net in (("2d", ctx.net2d), ("3d", ctx.net3d)):
                    if m[mod] > best[mod][0]:
                        best[mod] = (m[mod], net.state_dict())
                if progress:
                    progress(vrec)
        for f in (logf, valf):
            if f:
                f.close()
        best_iters = select_checkpoint(history)
        net2d = Seg2DNet(cfg.num_classes, features=cfg.train.features, stages=cfg.train.stages)
        net3d = Seg3DNet(cfg.num_classes, features=cfg.train.features)
        net2d.load_state_dict(best["2d"][1])
        net3d.load_state_dict(best["3d"][1])
        test_samples = [self.prep.eval_sample(s) for s in d["test"]]
        cms = evaluate(net2d, net3d, test_samples, cfg.num_classes)
        result = RunResult(history, best_iters, cms, miou_of(cms), log)
        if self.out_dir:
            save_checkpoint(self.out_dir / "model_2d.ckpt", net2d)
            save_checkpoint(self.out_dir / "model_3d.ckpt", net3d)
            save_checkpoint(self.out_dir / "discriminators.ckpt", ctx.disc)
            save_stats(self.out_dir / "stats.json", self.prep)
        return result

    def _open(self, name):
        if not self.out_dir:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return open(self.out_dir / name, "w", encoding="utf-8")


def load_data(cfg: ScenarioConfig, data_dir=None):
    """All four splits, synthesised or read from ``data_dir/<split>/``, plus channel stats."""
    if data_dir is None:
        d = {split: synth_split(cfg, split) for split in SPLITS}
    else:
        d = {split: read_split(Path(data_dir) / split, split_mapping(cfg, split)) for split in SPLITS}
    d["source_stats"] = domain_stats_images(cfg, d["source"])
    d["target_stats"] = domain_stats_images(cfg, d["target"])
    return d


def save_stats(path, prep: Preprocessor):
    body = {"train": [list(map(float, a)) for a in prep.train_stats],
            "target": [list(map(float, a)) for a in prep.target_stats]}
    Path(path).write_text(json.dumps(body, indent=2), encoding="utf-8")


def load_stats(path):
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    return tuple(np.array(a) for a in body["train"]), tuple(np.array(a) for a in body["target"])
