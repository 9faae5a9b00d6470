"""Adam training with gradient clipping, cross-validation, and WA/UA metrics.

Training follows a fixed per-step order: backward, clip the global gradient
norm to ``clip_norm``, Adam update.  Minibatches are per-sample forward
passes accumulated into one mean loss (no padded batch tensors), so masking
semantics stay unambiguous.  Each (fold, run) pair is seeded independently
from (global seed, fold id, run id), which makes folds reproducible and
embarrassingly parallel.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import FoldSplit, MultimodalSample
from .network import ModelConfig, ModelParams, batch_loss, predict_probs, save_checkpoint


class TrainingDivergedError(RuntimeError):
    """Raised when the loss becomes non-finite during training."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    clip_norm: float = 1.0
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    runs_per_fold: int = 1
    seed: int = 0
    parallel: int = 1


@dataclass
class EvalReport:
    """Metrics over one evaluation set.

    ``confusion`` is row-normalized: row c is the distribution of predicted
    classes among true-class-c samples (all-zero when the class has no
    support).  ``support`` counts true samples per class.
    """

    wa: float
    ua: float
    confusion: np.ndarray
    support: np.ndarray
    counts: np.ndarray
    fold: int = -1
    run: int = 0

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "run": self.run,
            "wa": self.wa,
            "ua": self.ua,
            "support": [int(s) for s in self.support],
            "confusion": [[float(v) for v in row] for row in self.confusion],
        }


def clip_gradients(params: Iterable[Tensor], max_norm: float = 1.0) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the factor applied (1.0 when no clipping was needed).
    """
    params = [p for p in params if p.grad is not None]
    total_sq = sum(float(np.sum(p.grad * p.grad)) for p in params)
    total = math.sqrt(total_sq)
    if total <= max_norm or total == 0.0:
        return 1.0
    factor = max_norm / total
    for p in params:
        p.grad *= factor
    return factor


class AdamState:
    """Standard bias-corrected Adam over a named parameter dict.

    beta1=0.9, beta2=0.999, eps=1e-8; the update divides by (sqrt(v_hat) +
    eps).  Gradients are zeroed after each step.
    """

    def __init__(
        self,
        named_params: Dict[str, Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


def evaluate(params: ModelParams, samples: Sequence[MultimodalSample]) -> EvalReport:
    """WA, UA and confusion matrix of ``params`` on ``samples`` (pure)."""
    if not samples:
        raise ValueError("evaluate: empty sample list")
    n_classes = params.config.n_classes
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    for sample in samples:
        pred = int(np.argmax(predict_probs(sample, params)))
        counts[sample.label, pred] += 1
    support = counts.sum(axis=1)
    correct = np.trace(counts)
    wa = float(correct / len(samples))
    with_support = support > 0
    recalls = np.diag(counts)[with_support] / support[with_support]
    ua = float(np.mean(recalls))
    confusion = np.zeros_like(counts, dtype=np.float64)
    confusion[with_support] = counts[with_support] / support[with_support, None]
    return EvalReport(wa=wa, ua=ua, confusion=confusion, support=support, counts=counts)


def run_seed(global_seed: int, fold: int, run: int) -> np.random.SeedSequence:
    """Independent, reproducible seed material per (fold, run)."""
    return np.random.SeedSequence([global_seed, fold, run])


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    dev_wa: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_dev_wa: float = float("nan")


def train_single(
    train_samples: Sequence[MultimodalSample],
    dev_samples: Sequence[MultimodalSample],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: np.random.SeedSequence,
    diagnostics: str = "",
) -> Tuple[ModelParams, TrainHistory]:
    """One training run: minibatch Adam with dev-WA early stopping.

    Returns the parameters of the best dev epoch (final epoch when no dev
    set is supplied) and the per-epoch history.
    """
    if not train_samples:
        raise ValueError("train_single: empty training set")
    rng = np.random.default_rng(seed)
    params = ModelParams.init(model_config, rng)
    adam = AdamState(params.named_parameters(), lr=train_config.lr)
    history = TrainHistory()
    best_snapshot = params.copy_values()
    best_dev = -float("inf")
    epochs_since_best = 0
    for epoch in range(train_config.max_epochs):
        order = rng.permutation(len(train_samples))
        loss_sum = 0.0
        for start in range(0, len(order), train_config.batch_size):
            batch = [train_samples[i] for i in order[start : start + train_config.batch_size]]
            loss = batch_loss(batch, params)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value!r} at epoch {epoch} {diagnostics}".strip()
                )
            loss_sum += value * len(batch)
            ad.backward(loss)
            clip_gradients(params.parameters(), train_config.clip_norm)
            adam.step()
        history.train_loss.append(loss_sum / len(train_samples))
        if dev_samples:
            dev_wa = evaluate(params, dev_samples).wa
            history.dev_wa.append(dev_wa)
            if dev_wa > best_dev:
                best_dev = dev_wa
                best_snapshot = params.copy_values()
                history.best_epoch = epoch
                history.best_dev_wa = dev_wa
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= train_config.patience:
                    break
    if dev_samples:
        params.load_values(best_snapshot)
    return params, history


def _run_one_job(args) -> dict:
    (fold_id, run_id, train_s, dev_s, test_s, model_config, train_config, save_path) = args
    params, history = train_single(
        train_s,
        dev_s,
        model_config,
        train_config,
        run_seed(train_config.seed, fold_id, run_id),
        diagnostics=f"(fold {fold_id}, run {run_id})",
    )
    report = evaluate(params, test_s)
    report.fold = fold_id
    report.run = run_id
    if save_path is not None:
        save_checkpoint(save_path, params)
    return {"report": report, "history": history}


def train(
    corpus: Sequence[MultimodalSample],
    folds: Sequence[FoldSplit],
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_dir: Optional[str] = None,
    save_models: str = "none",
) -> Tuple[List[EvalReport], dict]:
    """Cross-validated training: runs_per_fold runs on every fold.

    Returns all per-(fold, run) test reports plus a summary with mean WA/UA
    and three labeled standard deviations (across all runs, across fold
    means, and the mean of within-fold stds).  ``save_models`` controls
    checkpointing into ``checkpoint_dir``: "first" writes model.ckpt for
    (fold 0, run 0) only, "all" writes model_fold{f}_run{r}.ckpt for every
    job, "none" writes nothing.
    """
    by_id = {s.id: s for s in corpus}
    jobs = []
    for fold in folds:
        train_s = [by_id[i] for i in fold.train_ids]
        dev_s = [by_id[i] for i in fold.dev_ids]
        test_s = [by_id[i] for i in fold.test_ids]
        for run in range(train_config.runs_per_fold):
            save_path = None
            if checkpoint_dir is not None and save_models == "all":
                save_path = os.path.join(checkpoint_dir, f"model_fold{fold.fold}_run{run}.ckpt")
            elif checkpoint_dir is not None and save_models == "first" and fold.fold == 0 and run == 0:
                save_path = os.path.join(checkpoint_dir, "model.ckpt")
            jobs.append(
                (fold.fold, run, train_s, dev_s, test_s, model_config, train_config, save_path)
            )
    if train_config.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=train_config.parallel) as pool:
            results = list(pool.map(_run_one_job, jobs))
    else:
        results = [_run_one_job(job) for job in jobs]
    reports = [r["report"] for r in results]
    return reports, summarize(reports)


def summarize(reports: Sequence[EvalReport]) -> dict:
    def stats(values: List[float]) -> Tuple[float, float]:
        mean = float(np.mean(values))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return mean, std

    wa_values = [r.wa for r in reports]
    ua_values = [r.ua for r in reports]
    folds = sorted({r.fold for r in reports})
    fold_means_wa = [float(np.mean([r.wa for r in reports if r.fold == f])) for f in folds]
    fold_means_ua = [float(np.mean([r.ua for r in reports if r.fold == f])) for f in folds]
    within_wa = []
    within_ua = []
    for f in folds:
        wa_f = [r.wa for r in reports if r.fold == f]
        ua_f = [r.ua for r in reports if r.fold == f]
        within_wa.append(float(np.std(wa_f, ddof=1)) if len(wa_f) > 1 else 0.0)
        within_ua.append(float(np.std(ua_f, ddof=1)) if len(ua_f) > 1 else 0.0)
    wa_mean, wa_std_all = stats(wa_values)
    ua_mean, ua_std_all = stats(ua_values)
    _, wa_std_folds = stats(fold_means_wa)
    _, ua_std_folds = stats(fold_means_ua)
    total_counts = sum((r.counts for r in reports), np.zeros_like(reports[0].counts))
    support = total_counts.sum(axis=1)
    pooled_confusion = np.zeros(total_counts.shape, dtype=np.float64)
    mask = support > 0
    pooled_confusion[mask] = total_counts[mask] / support[mask, None]
    return {
        "n_runs": len(reports),
        "wa_mean": wa_mean,
        "ua_mean": ua_mean,
        "wa_std_across_runs": wa_std_all,
        "ua_std_across_runs": ua_std_all,
        "wa_std_across_fold_means": wa_std_folds,
        "ua_std_across_fold_means": ua_std_folds,
        "wa_mean_within_fold_std": float(np.mean(within_wa)),
        "ua_mean_within_fold_std": float(np.mean(within_ua)),
        "pooled_confusion": [[float(v) for v in row] for row in pooled_confusion],
        "pooled_support": [int(s) for s in support],
    }


def hop_sweep(
    corpus: Sequence[MultimodalSample],
    folds: Sequence[FoldSplit],
    hop_counts: Sequence[int],
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> List[dict]:
    """Full cross-validated training per hop count; one summary row each."""
    rows = []
    for n_hops in hop_counts:
        cfg = ModelConfig(**{**model_config.to_dict(), "kind": "amh", "n_hops": int(n_hops)})
        _, summary = train(corpus, folds, cfg, train_config)
        rows.append(
            {
                "n_hops": int(n_hops),
                "wa_mean": summary["wa_mean"],
                "wa_std": summary["wa_std_across_runs"],
                "ua_mean": summary["ua_mean"],
                "ua_std": summary["ua_std_across_runs"],
            }
        )
    return rows


# --- report output ----------------------------------------------------------


def atomic_write_text(path: str, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json_report(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def format_text_report(reports: Sequence[EvalReport], summary: dict, labels: Sequence[str]) -> str:
    lines = []
    lines.append(f"{'fold':>4} {'run':>4} {'WA':>8} {'UA':>8}")
    for r in reports:
        lines.append(f"{r.fold:>4} {r.run:>4} {r.wa:>8.4f} {r.ua:>8.4f}")
    lines.append("")
    lines.append(
        f"WA {summary['wa_mean']:.4f} ± {summary['wa_std_across_runs']:.4f}   "
        f"UA {summary['ua_mean']:.4f} ± {summary['ua_std_across_runs']:.4f}   "
        f"({summary['n_runs']} runs)"
    )
    lines.append(
        "std across fold means: "
        f"WA {summary['wa_std_across_fold_means']:.4f}, UA {summary['ua_std_across_fold_means']:.4f}; "
        "mean within-fold std: "
        f"WA {summary['wa_mean_within_fold_std']:.4f}, UA {summary['ua_mean_within_fold_std']:.4f}"
    )
    lines.append("")
    lines.append("pooled confusion (rows = true class):")
    width = max(len(name) for name in labels)
    header = " " * (width + 1) + " ".join(f"{name[:7]:>7}" for name in labels)
    lines.append(header)
    for i, name in enumerate(labels):
        row = summary["pooled_confusion"][i]
        lines.append(f"{name:>{width}} " + " ".join(f"{v:7.3f}" for v in row))
    return "\n".join(lines) + "\n"


def confusion_csv(confusion: Sequence[Sequence[float]], labels: Sequence[str]) -> str:
    lines = ["true\\pred," + ",".join(labels)]
    for name, row in zip(labels, confusion):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
