"""Multi-task objective, training loop, evaluation and the ablation grid."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .accent import inverse_frequency_weights
from .ctc import collapse, greedy_frames
from .decoding import greedy_batch
from .errors import ConfigError, NumericsError, TrainingDiverged
from .metrics import accent_accuracy, corpus_error_rate
from .model import UNITS_MODES, DIMNet, ModelConfig, make_batch
from .nnet import (SCHEDULES, configure_threads, load_checkpoint, make_optimizer,
                   save_checkpoint)
from .synthgen import Corpus, Utterance, accent_counts
from .vocab import Lexicon, coarse_as_fine

log = logging.getLogger(__name__)

CLASS_WEIGHTINGS = ("inverse", "none")


@dataclass
class TrainConfig:
    # objective
    w_att: float = 0.3
    w_ctc: float = 0.3
    w_ar: float = 0.4
    smoothing: float = 0.1
    class_weights: str = "inverse"
    ar_masked_accents: Tuple[int, ...] = ()
    # architecture switches
    scheme: str = "AF_ied"
    emb_kind: str = "dnn"
    ar_level: str = "frame"
    units: str = "two-granularity"
    triple_encoder: bool = True
    detach: bool = True
    # sizes
    d_model: int = 64
    d_ff: int = 128
    n_heads: int = 2
    n_shared: int = 3
    n_ctc: int = 2
    n_att: int = 2
    n_dec: int = 2
    kernel_size: int = 7
    subsample: int = 2
    block_kind: str = "conv-augmented"
    n_spaces: int = 8
    bimodal_width: int = 64
    d_k: int = 16
    ar_blocks: int = 2
    dropout: float = 0.0
    # optimisation
    seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    warmup_steps: int = 150
    schedule: str = "cosine"
    grad_clip: float = 5.0
    eval_batch_size: int = 100

    def validate(self):
        w = (self.w_att, self.w_ctc, self.w_ar)
        if min(w) < 0 or max(w) <= 0:
            raise ConfigError("loss weights must be nonnegative with at least one positive")
        if self.units not in UNITS_MODES:
            raise ConfigError(f"units must be one of {UNITS_MODES}")
        if self.class_weights not in CLASS_WEIGHTINGS:
            raise ConfigError(f"class_weights must be one of {CLASS_WEIGHTINGS}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


MODEL_KEYS = {f.name for f in fields(ModelConfig)} & {f.name for f in fields(TrainConfig)}


def combine_losses(l_att, l_ctc, l_ar, w_att: float, w_ctc: float, w_ar: float):
    """w_att * l_att + w_ctc * l_ctc + w_ar * l_ar; zero-weight terms are left out."""
    total = 0.0
    for name, loss, w in (("attention", l_att, w_att), ("ctc", l_ctc, w_ctc),
                          ("accent", l_ar, w_ar)):
        if not w:
            continue
        value = float(loss.detach()) if isinstance(loss, torch.Tensor) else float(loss)
        if not math.isfinite(value):
            raise NumericsError(f"non-finite {name} loss: {value}")
        total = total + w * loss
    return total


def ctc_lexicon(lex: Lexicon, units: str) -> Lexicon:
    return lex if units == "two-granularity" else coarse_as_fine(lex)


def build_model(cfg: TrainConfig, lex: Lexicon, feat_dim: int, n_accents: int) -> DIMNet:
    clex = ctc_lexicon(lex, cfg.units)
    inv = lex.inventory
    mcfg = ModelConfig(feat_dim=feat_dim, ctc_vocab=len(clex.inventory.fine),
                       coarse_vocab=len(inv.coarse), n_accents=n_accents,
                       blank_id=inv.blank_id, sil_id=inv.sil_id, unk_id=inv.unk_id,
                       bos_id=inv.bos_id, eos_id=inv.eos_id,
                       **{k: getattr(cfg, k) for k in MODEL_KEYS})
    return DIMNet(mcfg)


def batches(utts: Sequence[Utterance], batch_size: int, rng: Optional[np.random.Generator]
            ) -> List[List[Utterance]]:
    """Length-bucketed batches; shuffled when ``rng`` is given, else in corpus order."""
    if rng is None:
        return [list(utts[i:i + batch_size]) for i in range(0, len(utts), batch_size)]
    order = rng.permutation(len(utts))
    pool = 8 * batch_size
    out = []
    for start in range(0, len(order), pool):
        chunk = sorted(order[start:start + pool], key=lambda k: (utts[k].num_frames, k))
        out.extend([utts[k] for k in chunk[i:i + batch_size]]
                   for i in range(0, len(chunk), batch_size))
    return [out[k] for k in rng.permutation(len(out))]


@dataclass
class EvalResult:
    wer: float
    ar_acc: float
    per: float
    hyps_c: List[Tuple[int, ...]] = field(default_factory=list)
    hyps_f: List[List[int]] = field(default_factory=list)
    accent_pred: List[int] = field(default_factory=list)
    posteriors: List[List[float]] = field(default_factory=list)


@torch.no_grad()
def evaluate(model: DIMNet, utts: Sequence[Utterance], lex: Lexicon,
             batch_size: int = 100) -> EvalResult:
    """Greedy attention WER, greedy CTC unit error rate and utterance-level AR accuracy."""
    model.eval()
    cfg = model.cfg
    clex = ctc_lexicon(lex, cfg.units)
    dtype = next(model.parameters()).dtype
    res = EvalResult(0.0, 0.0, 0.0)
    for chunk in batches(utts, batch_size, None):
        b = make_batch(chunk, clex, cfg.bos_id, cfg.eos_id, dtype=dtype)
        out = model.encode(b.x, b.lengths)
        res.hyps_c.extend(seq for seq, _ in greedy_batch(model, out))
        lp = out.ctc_log_probs.double().numpy()
        for k, n in enumerate(out.enc.lengths.tolist()):
            res.hyps_f.append(collapse(greedy_frames(lp[k, :n]), cfg.blank_id))
        post = out.accent.utterance_posteriors()
        res.posteriors.extend(post.double().tolist())
        res.accent_pred.extend(post.argmax(-1).tolist())
    res.wer = corpus_error_rate([u.y_c for u in utts], res.hyps_c)
    res.per = corpus_error_rate([clex.expand_ids(u.y_c) for u in utts], res.hyps_f)
    res.ar_acc = accent_accuracy(res.accent_pred, [u.accent for u in utts]).accuracy
    return res


@dataclass
class TrainResult:
    model: DIMNet
    history: List[dict]
    checkpoint: Optional[Path] = None


def _write_jsonl_line(fh, rec: dict):
    fh.write(json.dumps(rec, separators=(",", ":"), sort_keys=False) + "\n")
    fh.flush()


def train(corpus: Corpus, cfg: TrainConfig, out_dir=None, eval_dev: bool = True) -> TrainResult:
    """Train one model; writes ``metrics.jsonl`` and ``checkpoint.pt`` under ``out_dir``.

    A non-finite loss aborts with ``TrainingDiverged``; the checkpoint from the
    last completed epoch stays on disk.
    """
    cfg.validate()
    configure_threads()
    torch.manual_seed(cfg.seed)
    lex = corpus.lexicon
    train_utts = corpus["train"]
    feat_dim = train_utts[0].frames.shape[1] if train_utts else corpus.spec.feat_dim
    model = build_model(cfg, lex, feat_dim, corpus.n_accents)
    clex = ctc_lexicon(lex, cfg.units)
    weights = None
    if cfg.class_weights == "inverse" and train_utts:
        weights = inverse_frequency_weights(accent_counts(train_utts, corpus.n_accents))
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = math.ceil(len(train_utts) / cfg.batch_size)
    opt, sched = make_optimizer(model.parameters(), cfg.lr, cfg.warmup_steps,
                                schedule=cfg.schedule, total_steps=cfg.epochs * steps_per_epoch)
    masked = set(cfg.ar_masked_accents)

    ckpt = metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt = out_dir / "checkpoint.pt"
        metrics_path = out_dir / "metrics.jsonl"
        metrics_path.write_text("")
        save_checkpoint(ckpt, model, cfg.to_dict(), {"epoch": 0})

    history: List[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        sums = {"att": 0.0, "ctc": 0.0, "ar": 0.0}
        n_batches = 0
        for chunk in batches(train_utts, cfg.batch_size, rng):
            b = make_batch(chunk, clex, model.cfg.bos_id, model.cfg.eos_id,
                           ar_mask=[u.accent not in masked for u in chunk])
            out = model(b, weights, cfg.smoothing)
            try:
                loss = combine_losses(out.losses["att"], out.losses["ctc"], out.losses["ar"],
                                      cfg.w_att, cfg.w_ctc, cfg.w_ar)
            except NumericsError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            sched.step()
            for k in sums:
                sums[k] += float(out.losses[k].detach())
            n_batches += 1
        rec = {"epoch": epoch}
        rec.update({f"l_{k}": round(v / max(n_batches, 1), 6) for k, v in sums.items()})
        if eval_dev and corpus.splits.get("dev"):
            ev = evaluate(model, corpus["dev"], lex, cfg.eval_batch_size)
            rec.update(dev_wer=round(ev.wer, 6), dev_ar_acc=round(ev.ar_acc, 6),
                       dev_per=round(ev.per, 6))
        history.append(rec)
        log.info("epoch %s", rec)
        if out_dir is not None:
            with open(metrics_path, "a", encoding="utf-8", newline="\n") as fh:
                _write_jsonl_line(fh, rec)
            save_checkpoint(ckpt, model, cfg.to_dict(), {"epoch": epoch})
    model.eval()
    return TrainResult(model, history, ckpt)


def load_model(path, corpus_lexicon: Lexicon, feat_dim: int, n_accents: int,
               cfg: Optional[TrainConfig] = None) -> Tuple[DIMNet, TrainConfig]:
    """Rebuild a model from a checkpoint written by ``train``."""
    payload = load_checkpoint(path)
    stored = payload["config"]
    base = cfg or TrainConfig()
    known = {f.name for f in fields(TrainConfig)}
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in stored.items() if k in known}
    cfg = replace(base, **vals)
    model = build_model(cfg, corpus_lexicon, feat_dim, n_accents)
    load_checkpoint(path, model, cfg.to_dict())
    model.eval()
    return model, cfg


# ablation -----------------------------------------------------------------

ABLATION_METRICS = ("dev_ar_acc", "dev_wer", "test_ar_acc", "test_wer")


@dataclass
class AblationRow:
    axes: Dict[str, object]
    per_seed: List[Dict[str, float]]

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.per_seed]))


def run_ablation(corpus: Corpus, base: TrainConfig, axes: Dict[str, Sequence],
                 seeds: Sequence[int] = (0, 1, 2), out_csv=None, runner=None) -> List[AblationRow]:
    """Train every grid point for every seed; one aggregated row per grid point.

    ``runner(corpus, cfg)`` returns a metrics dict; the default trains and
    evaluates on dev and test.
    """
    for name in axes:
        if not hasattr(base, name):
            raise ConfigError(f"unknown ablation axis {name!r}")
    runner = runner or _train_and_score
    names = list(axes)
    rows = []
    for values in itertools.product(*(axes[n] for n in names)):
        point = dict(zip(names, values))
        per_seed = [runner(corpus, replace(base, seed=s, **point)) for s in seeds]
        rows.append(AblationRow(point, per_seed))
    if out_csv is not None:
        write_ablation_csv(out_csv, rows, names)
    return rows


def _train_and_score(corpus: Corpus, cfg: TrainConfig) -> Dict[str, float]:
    model = train(corpus, cfg, eval_dev=False).model
    dev = evaluate(model, corpus["dev"], corpus.lexicon, cfg.eval_batch_size)
    test = evaluate(model, corpus["test"], corpus.lexicon, cfg.eval_batch_size)
    return {"dev_ar_acc": dev.ar_acc, "dev_wer": dev.wer,
            "test_ar_acc": test.ar_acc, "test_wer": test.wer}


def write_ablation_csv(path, rows: Iterable[AblationRow], axis_names: Sequence[str]):
    """Columns: the axis names, n_seeds, then the seed-mean of each metric."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(axis_names) + ["n_seeds"] + list(ABLATION_METRICS))
        for row in rows:
            w.writerow([row.axes[n] for n in axis_names] + [len(row.per_seed)]
                       + [f"{row.mean(m):.6f}" for m in ABLATION_METRICS])
