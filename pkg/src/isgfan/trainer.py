"""Training loop, loss graph wiring and experiment runner.

Gradient routing follows from the graph rather than from manual masking:
the fault-relevant features reach the global and subdomain classifiers
through a gradient reversal layer, the fault-irrelevant features reach the
label discriminator through another, and pseudo-labels are computed on
detached logits. The per-module update rules then fall out of a single
backward pass on the weighted total loss.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import config as config_mod
from .attention import AttentionState, compute_weights, compute_weights_and_update
from .balancer import BalancerConfig, assemble_total_loss
from .config import ExperimentConfig
from .evaluator import (ExperimentReport, accuracy, confusion_matrix, export_embeddings, predict,
                        write_confusion)
from .network import ISGFAN, ExtractorConfig, build_variant, pool, save_checkpoint
from .objectives import (LossBundle, cross_entropy, domain_bce, feature_matrix, focal_domain_loss,
                         orthogonality_loss, reconstruction_loss)
from .pseudo_labels import PseudoLabelConfig, assign_pseudo_labels
from .signal_ingest import (NoiseSpec, SegmentedDataset, TransferTask, build_transfer_task, read_archive,
                            read_manifest, synthetic_domain)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 3500
    batch_size: int = 32
    base_lr: float = 1e-4
    min_lr: float = 1e-6
    weight_decay: float = 5e-4
    seed: int = 0
    eval_every: int = 10
    lr_scale: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.min_lr > self.base_lr:
            raise ValueError("min_lr must not exceed base_lr")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def lr_at(epoch: int, cfg: TrainingConfig) -> float:
    """Cosine annealing from ``base_lr`` (epoch 0) to ``min_lr`` (epoch == epochs)."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    if cfg.epochs == 0:
        return cfg.base_lr
    return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) * (1 + math.cos(math.pi * epoch / cfg.epochs))


# ------------------------------------------------------------------ losses

@dataclass
class StepOutput:
    losses: dict[str, torch.Tensor]
    per_class_loss: np.ndarray | None = None
    per_class_count: np.ndarray | None = None
    attention_weights: np.ndarray | None = None
    num_accepted: int = 0


def _probs(logits):
    return F.softmax(logits, dim=1)


def compute_losses(model: ISGFAN, xs: torch.Tensor, ys: torch.Tensor, xt: torch.Tensor,
                   attention: AttentionState | None = None,
                   pl_cfg: PseudoLabelConfig = PseudoLabelConfig(),
                   update_attention: bool = True) -> StepOutput:
    """Forward graph for one source/target batch pair.

    ``xs``/``xt`` are (B, 1, L); ``ys`` holds source labels. Only the
    fault-relevant extractor and the domain classifiers see target data.
    """
    if len(xs) == 0:
        raise ValueError("empty source batch")
    C = model.num_classes
    ns = len(xs)
    names = model.losses
    onehot = F.one_hot(ys, C).to(xs.dtype)

    uses_target = "gd" in names
    x_fr = torch.cat([xs, xt]) if uses_target else xs
    fr_map = model.FRFE(x_fr)
    fr = pool(fr_map)
    fr_s, fr_t = fr[:ns], fr[ns:]
    out = StepOutput(losses={})

    out.losses["lc"] = cross_entropy(_probs(model.LC(fr_s)), onehot)

    if uses_target:
        reversed_fr = model.grl(fr)
        d = torch.sigmoid(model.GDC(reversed_fr)).squeeze(1)
        out.losses["gd"] = domain_bce(d[:ns], d[ns:])

    if "fd" in names:
        with torch.no_grad():
            pl = assign_pseudo_labels(model.LC(fr_t.detach()).double().numpy(), pl_cfg)
        tgt_labels = torch.from_numpy(pl.labels)
        per_class = []
        counts = np.zeros(C, dtype=np.int64)
        zero = fr.sum() * 0.0
        for c in range(C):
            t_idx = torch.nonzero(tgt_labels == c).squeeze(1)
            counts[c] = len(t_idx)
            if counts[c] == 0:
                per_class.append(zero)
                continue
            s_idx = torch.nonzero(ys == c).squeeze(1)
            feats = torch.cat([reversed_fr[:ns][s_idx], reversed_fr[ns:][t_idx]])
            dc = torch.sigmoid(model.SDC(feats, c)).squeeze(1)
            per_class.append(domain_bce(dc[:len(s_idx)], dc[len(s_idx):]))
        out.num_accepted = pl.num_accepted
        out.per_class_count = counts
        if pl.num_accepted == 0 or attention is None:
            out.losses["fd"] = zero
        else:
            per_class_t = torch.stack(per_class)
            out.per_class_loss = per_class_t.detach().double().numpy()
            if update_attention:
                w = compute_weights_and_update(attention, out.per_class_loss, counts)
            else:
                w = compute_weights(attention, out.per_class_loss, counts)
            out.attention_weights = w
            out.losses["fd"] = focal_domain_loss(per_class_t, torch.as_tensor(w, dtype=per_class_t.dtype))

    if model.FIFE is not None:
        fi_map = model.FIFE(xs)
        fi_s = pool(fi_map)
        _, _, l_orth = orthogonality_loss(feature_matrix(fr_s), feature_matrix(fi_s))
        out.losses["orth"] = l_orth
        x_hat = model.decoder(torch.cat([fr_map[:ns], fi_map], dim=1))
        out.losses["recon"] = reconstruction_loss(xs, x_hat)
        if model.LD is not None:
            out.losses["ld"] = cross_entropy(_probs(model.LD(model.grl(fi_s))), onehot)
    return out


def weighted_total(losses: dict[str, torch.Tensor], balancer: BalancerConfig):
    bundle = LossBundle(**{k: float(v.detach()) for k, v in losses.items()})
    _, weights = assemble_total_loss(bundle, balancer)
    total = sum(weights[k] * losses[k] for k in weights)
    return total, weights, bundle


# ------------------------------------------------------------------ trainer

class Trainer:
    def __init__(self, model: ISGFAN, train_cfg: TrainingConfig = TrainingConfig(),
                 pl_cfg: PseudoLabelConfig = PseudoLabelConfig(),
                 balancer: BalancerConfig = BalancerConfig(),
                 attention: AttentionState | None = None):
        self.model = model
        self.cfg = train_cfg
        self.pl_cfg = pl_cfg
        self.balancer = balancer
        if attention is None and model.SDC is not None:
            attention = AttentionState(model.num_classes)
        self.attention = attention
        unknown = set(train_cfg.lr_scale) - set(model.groups)
        if unknown:
            raise ValueError(f"lr_scale names unknown parameter groups: {sorted(unknown)}")
        self.optimizer = torch.optim.AdamW(
            [{"params": list(m.parameters()), "name": name, "scale": train_cfg.lr_scale.get(name, 1.0)}
             for name, m in model.groups.items()],
            lr=train_cfg.base_lr, weight_decay=train_cfg.weight_decay)
        self.epoch = 0
        self.step_count = 0

    def set_epoch(self, epoch: int) -> float:
        self.epoch = epoch
        lr = lr_at(epoch, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr * group["scale"]
        return lr

    def training_step(self, xs, ys, xt) -> dict:
        self.model.train()
        out = compute_losses(self.model, xs, ys, xt, self.attention, self.pl_cfg)
        total, weights, bundle = weighted_total(out.losses, self.balancer)
        if not torch.isfinite(total):
            raise FloatingPointError(f"non-finite loss at epoch {self.epoch} step {self.step_count}: "
                                     f"{bundle.present()}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.step_count += 1
        return {
            "epoch": self.epoch,
            "step": self.step_count,
            "lr": self.optimizer.param_groups[0]["lr"],
            "losses": bundle.present(),
            "weights": weights,
            "total": float(total.detach()),
            "attention": None if out.attention_weights is None else [float(w) for w in out.attention_weights],
            "accepted": out.num_accepted,
        }


def batch_schedule(n_source: int, n_target: int, batch_size: int, rng: np.random.Generator):
    """Source batches cover the source set once; target batches are drawn
    independently from a reshuffled stream of the same batch size."""
    order = rng.permutation(n_source)
    starts = range(0, n_source, batch_size)
    src = [order[s:s + batch_size] for s in starts]
    if len(src) > 1 and len(src[-1]) < 2:
        src = src[:-1]
    tgt, pool_ = [], np.empty(0, dtype=np.int64)
    for b in src:
        while len(pool_) < len(b):
            pool_ = np.concatenate([pool_, rng.permutation(n_target)])
        tgt.append(pool_[:len(b)])
        pool_ = pool_[len(b):]
    return src, tgt


# ------------------------------------------------------------------ experiments

def training_config(cfg: ExperimentConfig, seed: int | None = None) -> TrainingConfig:
    t = cfg.training
    return TrainingConfig(epochs=t.epochs, batch_size=t.batch_size, base_lr=t.base_lr, min_lr=t.min_lr,
                          weight_decay=t.weight_decay, seed=t.seed if seed is None else seed,
                          eval_every=t.eval_every, lr_scale=config_mod.parse_lr_scale(t.lr_scale))


def load_task(cfg: ExperimentConfig, snr_db: float | None = None):
    """Resolve the task in ``cfg`` into (source_train, target_unlabeled, target_test)."""
    snr = cfg.noise.snr_db[0] if snr_db is None else snr_db
    noise = NoiseSpec(cfg.noise.type, snr, cfg.noise.seed)
    t = cfg.task
    if t.dataset == "synthetic":
        src_id, tgt_id = t.source or "A", t.target or "B"
        kw = dict(num_classes=t.num_classes, samples_per_class=t.samples_per_class, length=t.length,
                  class_ratio=t.class_ratio, seed=t.data_seed)
        datasets = {
            src_id: synthetic_domain(src_id, **kw),
            tgt_id: synthetic_domain(tgt_id, freq_shift=t.freq_shift, amp_shift=t.amp_shift, **kw),
        }
        return build_transfer_task(datasets, TransferTask(src_id, tgt_id, noise))
    # prepared archives already carry their noise
    manifest = Path(t.data_dir) / noise.tag / "manifest.txt"
    entries = {e.condition_id: e for e in read_manifest(manifest)}
    datasets = {}
    for cond in (t.source, t.target):
        if cond not in entries:
            raise KeyError(f"condition {cond!r} missing from {manifest}")
        e = entries[cond]
        datasets[cond] = read_archive(e.path, cond)
    return build_transfer_task(datasets, TransferTask(t.source, t.target, None))


def run_dir(cfg: ExperimentConfig, snr_db: float, seed: int) -> Path:
    return cfg.output_root() / cfg.task_name / cfg.model.variant / f"{cfg.noise.type}_{snr_db:g}dB" / str(seed)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, snr_db: float | None = None,
                   out_dir: Path | None = None, data=None) -> ExperimentReport:
    """Train one variant on one task and write the run directory.

    Files written: ``config.ini`` (resolved echo), ``metrics.jsonl`` (one
    record per step), ``attention.csv``, ``evals.csv``, ``confusion.csv``,
    ``embeddings.csv``, ``checkpoint.bin``, ``best.bin`` and ``report.json``.
    """
    cfg.validate()
    seed = cfg.training.seed if seed is None else seed
    snr = cfg.noise.snr_db[0] if snr_db is None else snr_db
    out_dir = Path(out_dir) if out_dir is not None else run_dir(cfg, snr, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_cfg = config_mod.replace(cfg, training={"seed": seed}, noise={"snr_db": [snr]})
    (out_dir / "config.ini").write_text(config_mod.dumps(run_cfg))

    source, target_u, target_test = data if data is not None else load_task(cfg, snr)
    C = source.num_classes or int(source.labels.max()) + 1
    tcfg = training_config(cfg, seed)
    started = time.perf_counter()

    torch.manual_seed(seed)
    extractor = ExtractorConfig.scaled(cfg.model.width, blocks_per_stage=cfg.model.blocks_per_stage)
    model = build_variant(cfg.model.variant, C, extractor, seed=seed, init_std=cfg.model.init_std)
    attention = AttentionState(C, alpha=cfg.attention.alpha, tau=cfg.attention.tau,
                               m_momentum=cfg.attention.momentum, beta=cfg.attention.beta)
    b = cfg.balancer
    trainer = Trainer(model, tcfg, PseudoLabelConfig(cfg.pseudo_labels.xi, cfg.pseudo_labels.kappa),
                      BalancerConfig(b.delta, b.zeta, b.gamma, b.mu, b.omega, b.rho), attention)

    xs_all = torch.tensor(source.samples, dtype=torch.float32).unsqueeze(1)
    ys_all = torch.tensor(source.labels)
    xt_all = torch.tensor(target_u.samples, dtype=torch.float32).unsqueeze(1)
    rng = np.random.default_rng(seed)

    report = ExperimentReport(cfg.model.variant, cfg.task_name, seed, config=config_mod.to_dict(run_cfg))

    def evaluate(epoch: int):
        preds, _ = predict(model, target_test.samples)
        acc = accuracy(preds, target_test.labels)
        report.accuracies.append((epoch, acc))
        evals.write(f"{epoch},{acc!r}\n")
        if acc > report.best_accuracy or report.best_epoch < 0:
            report.best_accuracy, report.best_epoch = acc, epoch
            save_checkpoint(model, out_dir / "best.bin", {"epoch": epoch, "seed": seed})
        return acc

    with open(out_dir / "metrics.jsonl", "w") as metrics, open(out_dir / "attention.csv", "w") as att, \
            open(out_dir / "evals.csv", "w") as evals:
        att.write("epoch,batch," + ",".join(f"w_{c + 1}" for c in range(C)) + "\n")
        evals.write("epoch,accuracy\n")
        for epoch in range(tcfg.epochs):
            trainer.set_epoch(epoch)
            src_batches, tgt_batches = batch_schedule(len(source), len(target_u), tcfg.batch_size, rng)
            for i, (si, ti) in enumerate(zip(src_batches, tgt_batches)):
                rec = trainer.training_step(xs_all[si], ys_all[si], xt_all[ti])
                metrics.write(json.dumps(rec, sort_keys=True) + "\n")
                if rec["attention"] is not None:
                    att.write(f"{epoch},{i}," + ",".join(repr(w) for w in rec["attention"]) + "\n")
            if (epoch + 1) % tcfg.eval_every == 0 and epoch + 1 < tcfg.epochs:
                evaluate(epoch + 1)
        final = evaluate(tcfg.epochs)

    preds, feats = predict(model, target_test.samples)
    cm = confusion_matrix(preds, target_test.labels, C)
    write_confusion(cm, out_dir / "confusion.csv")
    src_preds, src_feats = predict(model, source.samples)
    if cfg.output.write_embeddings:
        export_embeddings(np.concatenate([src_feats, feats]),
                          np.concatenate([source.labels, target_test.labels]),
                          ["source"] * len(source) + ["target"] * len(target_test),
                          out_dir / "embeddings.csv")
    save_checkpoint(model, out_dir / "checkpoint.bin", {"epoch": tcfg.epochs, "seed": seed})

    report.final_accuracy = final
    report.source_accuracy = accuracy(src_preds, source.labels)
    report.confusion = cm.tolist()
    report.wall_clock_s = time.perf_counter() - started
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    log.info("%s %s seed=%d snr=%g: final target accuracy %.4f", cfg.task_name, cfg.model.variant,
             seed, snr, final)
    return report
