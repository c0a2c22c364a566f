"""Training, calibration, evaluation and per-page prediction."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .bundle import ModelBundle
from .classifier import calibrate_threshold, prob_threshold
from .config import TrainConfig
from .dom import RawPage
from .embeddings import build_vocabulary, train_embeddings
from .errors import DataError, EmptyDataset, NonFiniteLoss
from .model import Output, Sample, SpecularNet, page_tree
from .nn import SGD, Adam, CosineWarmRestarts

log = logging.getLogger(__name__)

EVAL_BATCH = 64


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    macro_f1: float
    macro_precision: float
    macro_recall: float
    confusion: list[list[int]]          # confusion[true][pred], external labels (0 benign, 1 phishing)
    per_class: dict[str, dict[str, float]]
    diagnostic: dict = field(default_factory=dict)
    latency_ms_mean: float | None = None
    latency_ms_p90: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def classification_metrics(y_true: Sequence[int], y_pred: Sequence[int]) -> MetricsReport:
    """Accuracy and macro-averaged precision/recall/F1 over the two external classes."""
    t = np.asarray(y_true, dtype=np.int64)
    p = np.asarray(y_pred, dtype=np.int64)
    if t.size == 0:
        raise EmptyDataset("no labelled pages to score")
    conf = np.zeros((2, 2), dtype=np.int64)
    np.add.at(conf, (t, p), 1)
    per_class = {}
    for c, name in ((0, "benign"), (1, "phishing")):
        tp = conf[c, c]
        fp = conf[1 - c, c]
        fn = conf[c, 1 - c]
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class[name] = {"precision": float(prec), "recall": float(rec), "f1": float(f1), "support": int(conf[c].sum())}
    mean = lambda key: float(np.mean([per_class[k][key] for k in per_class]))  # noqa: E731
    return MetricsReport(
        n=int(t.size), accuracy=float(np.trace(conf) / t.size), macro_f1=mean("f1"),
        macro_precision=mean("precision"), macro_recall=mean("recall"),
        confusion=conf.tolist(), per_class=per_class,
    )


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    return classification_metrics(y_true, y_pred).macro_f1


def prob2_diagnostic(prob2: np.ndarray, thr_correct: np.ndarray, mlp_correct: np.ndarray, bins: int = 10) -> dict:
    """prob2 histograms for (both rules right) and (MLP wrong while the threshold rule is right)."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    both = prob2[thr_correct & mlp_correct]
    mlp_only_wrong = prob2[thr_correct & ~mlp_correct]
    return {
        "bin_edges": edges.tolist(),
        "both_correct": np.histogram(both, edges)[0].tolist(),
        "mlp_wrong_threshold_right": np.histogram(mlp_only_wrong, edges)[0].tolist(),
    }


# ---------------------------------------------------------------------------
# inference


@dataclass
class Scores:
    eps: np.ndarray
    prob1: np.ndarray
    prob2: np.ndarray
    internal: np.ndarray
    external: np.ndarray


@torch.no_grad()
def score_samples(model: SpecularNet, samples: Sequence[Sample], batch_size: int = EVAL_BATCH) -> Scores:
    eps, p1, p2, internal = [], [], [], []
    for i in range(0, len(samples), batch_size):
        out = model(samples[i:i + batch_size])
        eps.append(out.eps.double().numpy())
        p1.append(out.prob1.double().numpy())
        p2.append(out.prob2.double().numpy())
        internal.append(model.decide(out))
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0)  # noqa: E731
    internal_arr = cat(internal).astype(np.int64)
    return Scores(cat(eps), cat(p1), cat(p2), internal_arr, 1 - internal_arr)


def _rescore(model: SpecularNet, scores: Scores) -> Scores:
    """Recompute prob1 and decisions after a change of tau (no new forward pass)."""
    dtype = model.tau.dtype
    eps = torch.as_tensor(scores.eps, dtype=dtype)
    prob1 = prob_threshold(eps, model.tau, model.beta).double().numpy()
    p2 = torch.as_tensor(scores.prob2, dtype=dtype)
    out = Output(eps, torch.zeros(0), torch.as_tensor(prob1, dtype=dtype), p2, [])
    internal = model.decide(out)
    return Scores(scores.eps, prob1, scores.prob2, internal, 1 - internal)


def calibrate_model(model: SpecularNet, samples: Sequence[Sample]) -> tuple[Scores, float | None]:
    """Set ``model.tau`` from ``samples`` (when the variant uses it); returns the rescored set."""
    scores = score_samples(model, samples)
    if not model.uses_threshold:
        return scores, None
    y_internal = 1 - np.array([s.label for s in samples], dtype=np.int64)
    tau, f1 = calibrate_threshold(scores.eps, y_internal)
    model.tau.fill_(tau)
    return _rescore(model, scores), f1


def prepare_samples(model: SpecularNet, pages: Sequence[RawPage], need_labels: bool = True) -> list[Sample]:
    out = []
    for page in pages:
        if need_labels and page.label is None:
            raise DataError(f"page {page.source or '?'} has no label")
        out.append(model.prepare(page))
    return out


# ---------------------------------------------------------------------------
# training


def _check_split(pages: Sequence[RawPage], name: str) -> None:
    if not pages:
        raise EmptyDataset(f"{name} set is empty")
    if any(p.label is None for p in pages):
        raise DataError(f"{name} set contains unlabelled pages")


def train(config: TrainConfig, train_pages: Sequence[RawPage], val_pages: Sequence[RawPage],
          progress: Callable[[dict], None] | None = None) -> ModelBundle:
    """Fit a model; deterministic given the config (seed included) and the page order."""
    threads = torch.get_num_threads()
    torch.set_num_threads(1)  # tiny per-level tensors: one thread is faster and order-stable
    try:
        return _train(config, train_pages, val_pages, progress)
    finally:
        torch.set_num_threads(threads)


def _train(config, train_pages, val_pages, progress) -> ModelBundle:
    _check_split(train_pages, "training")
    _check_split(val_pages, "validation")
    use_domain = config.domain_enabled
    train_trees = [page_tree(p, use_domain, config.max_nodes) for p in train_pages]
    plain = [t.without_domain() if t.has_domain else t for t in train_trees]
    vocab = build_vocabulary(plain)
    table = train_embeddings(plain, vocab, dim=config.feature_dim, negatives=config.w2v_negatives,
                             epochs=config.w2v_epochs, lr=config.w2v_lr, seed=config.seed)
    model = SpecularNet(config, table)
    train_set = [model.prepare_tree(t, p.label, p.source) for t, p in zip(train_trees, train_pages)]
    val_set = prepare_samples(model, val_pages)
    y_train = torch.as_tensor([1 - s.label for s in train_set], dtype=torch.float32)
    y_val = np.array([s.label for s in val_set], dtype=np.int64)

    params = model.trainable()
    opt = Adam(params) if config.optimizer == "adam" else SGD(params)
    sched = CosineWarmRestarts(config.lr, config.lr_min, config.t0, config.t_mult)
    rng = np.random.default_rng(config.seed)
    n, bs = len(train_set), config.batch_size
    n_batches = math.ceil(n / bs)

    best_f1, best_state, best_epoch, stale = -1.0, None, -1, 0
    history = []
    epochs_run = 0
    for epoch in range(config.epochs):
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for b in range(n_batches):
            idx = order[b * bs:(b + 1) * bs]
            out = model([train_set[i] for i in idx])
            loss = model.loss(out, y_train[torch.as_tensor(idx)])
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step(sched(epoch + b / n_batches))
            total += float(loss.detach())
        epochs_run = epoch + 1
        model.eval()
        scores, _ = calibrate_model(model, val_set)
        f1 = macro_f1(y_val, scores.external)
        history.append(round(f1, 6))
        if progress is not None:
            progress({"epoch": epoch, "loss": total / n_batches, "val_f1": f1, "tau": float(model.tau)})
        if f1 > best_f1:
            best_f1, best_epoch, stale = f1, epoch, 0
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        else:
            stale += 1
            if stale >= config.patience:
                break

    model.load_state_dict(best_state)
    # final tau is fitted on the float64 inference network that eval and predict use
    model = ModelBundle.from_model(model).model()
    scores, _ = calibrate_model(model, val_set)
    val_metrics = classification_metrics(y_val, scores.external)
    metadata = {
        "seed": config.seed,
        "epochs_run": epochs_run,
        "best_epoch": best_epoch,
        "val_macro_f1": val_metrics.macro_f1,
        "val_accuracy": val_metrics.accuracy,
        "val_f1_history": history,
        "n_train": n,
        "n_val": len(val_set),
    }
    return ModelBundle.from_model(model, metadata)


def calibrate(bundle: ModelBundle, val_pages: Sequence[RawPage]) -> ModelBundle:
    """Recompute tau on ``val_pages`` leaving every other parameter untouched."""
    _check_split(val_pages, "validation")
    model = bundle.model()
    samples = prepare_samples(model, val_pages)
    _, f1 = calibrate_model(model, samples)
    if f1 is None:
        log.warning("variant %s does not use the threshold; tau left unchanged", model.variant)
        return bundle
    out = bundle.with_tau(float(model.tau))
    out.metadata["calibration_f1"] = f1
    return out


# ---------------------------------------------------------------------------
# prediction and evaluation


@dataclass
class Report:
    epsilon: float
    prob1: float
    prob2: float
    verdict: int
    latency_ms: float
    n_nodes: int = 0

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "prob1": self.prob1, "prob2": self.prob2,
                "verdict": self.verdict, "latency_ms": self.latency_ms}


@torch.no_grad()
def predict_page(model: SpecularNet, page: RawPage) -> Report:
    """End-to-end (parse to verdict) prediction of one page, timed."""
    start = time.perf_counter()
    sample = model.prepare(page)
    out = model([sample])
    internal = int(model.decide(out)[0])
    latency = (time.perf_counter() - start) * 1000.0
    return Report(float(out.eps[0]), float(out.prob1[0]), float(out.prob2[0]), 1 - internal, latency, sample.n)


def predict_pages(model: SpecularNet, pages: Sequence[RawPage], threads: int = 1) -> list[Report | Exception]:
    """One result per page in input order; per-page data errors are returned, not raised."""

    def one(page):
        try:
            return predict_page(model, page)
        except DataError as exc:
            return exc

    if threads <= 1:
        return [one(p) for p in pages]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, pages))


def evaluate(bundle: ModelBundle | SpecularNet, pages: Sequence[RawPage], threads: int = 1) -> MetricsReport:
    if not pages:
        raise EmptyDataset("evaluation set is empty")
    model = bundle.model() if isinstance(bundle, ModelBundle) else bundle
    model.eval()
    results = predict_pages(model, pages, threads)
    for r in results:
        if isinstance(r, Exception):
            raise r
    y = np.array([p.label for p in pages], dtype=np.int64)
    pred = np.array([r.verdict for r in results], dtype=np.int64)
    report = classification_metrics(y, pred)
    lat = np.array([r.latency_ms for r in results])
    report.latency_ms_mean = float(lat.mean())
    report.latency_ms_p90 = float(np.percentile(lat, 90))
    y_int = 1 - y
    prob1 = np.array([r.prob1 for r in results])
    prob2 = np.array([r.prob2 for r in results])
    thr_correct = (prob1 > 0.5).astype(np.int64) == y_int
    mlp_correct = (prob2 > 0.5).astype(np.int64) == y_int
    report.diagnostic = prob2_diagnostic(prob2, thr_correct, mlp_correct)
    return report


def evaluate_fast(bundle: ModelBundle | SpecularNet, pages: Sequence[RawPage]) -> MetricsReport:
    """Batched scoring without latency measurement (for experiments)."""
    if not pages:
        raise EmptyDataset("evaluation set is empty")
    model = bundle.model() if isinstance(bundle, ModelBundle) else bundle
    model.eval()
    scores = score_samples(model, prepare_samples(model, pages))
    return classification_metrics([p.label for p in pages], scores.external)
