"""Training loop: Adam, fixed hyperparameters, dev-accuracy early stopping,
multi-run averaging, and a tiny-corpus overfit probe."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import evaluate as evaluation
from .data import Batch, DatasetBundle, Vocab, batchify, build_graph, build_vocab, \
    load_pretrained_embeddings
from .model import LossWeights, ModelConfig, VARIANTS, init_params, objective

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainResult",
    "ProbeResult",
    "TrainingDivergedError",
    "Adam",
    "train_one_run",
    "multi_run",
    "overfit_probe",
]


class TrainingDivergedError(RuntimeError):
    """The loss stopped being finite."""


@dataclass
class TrainConfig:
    """Hyperparameters; the defaults are the reference protocol
    (Adam at 0.001, batch 32, 4 heads, unit loss weights, L2 1e-5,
    patience 10, 5 runs, 300-d embeddings)."""

    learning_rate: float = 0.001
    batch_size: int = 32
    embed_dim: int = 300
    num_heads: int = 4
    acd_weight: float = 1.0
    interactive_weight: float = 1.0
    acsa_weight: float = 1.0
    l2_coeff: float = 1e-5
    patience: int = 10
    runs: int = 5
    max_epochs: int = 100
    seed: int = 1
    variant: str = "full"
    dataset: str = ""
    keep_preterminals: bool = False
    min_count: int = 1
    glove_path: str | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.acd_weight, self.interactive_weight, self.acsa_weight, self.l2_coeff) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def loss_weights(self) -> LossWeights:
        # the no_iloss ablation only zeroes the interactive term
        interactive = 0.0 if self.variant == "no_iloss" else self.interactive_weight
        return LossWeights(acd=self.acd_weight, interactive=interactive,
                           acsa=self.acsa_weight, l2=self.l2_coeff)


class Adam:
    """Standard Adam with bias correction; updates parameters in place."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    vocab: Vocab
    history: list[dict]
    best_epoch: int
    best_dev_accuracy: float
    stopped_epoch: int


def _epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 1_000_003 + epoch) % (2 ** 31)


def train_one_run(
    config: TrainConfig,
    bundle: DatasetBundle,
    params_init: dict | None = None,
    vocab: Vocab | None = None,
    embedding: np.ndarray | None = None,
) -> TrainResult:
    """Train once with early stopping on dev sentiment accuracy.

    The best-dev parameters are retained.  A bundle without a dev split
    falls back to train accuracy for model selection (logged).  Raises
    TrainingDivergedError when the loss stops being finite.
    """
    rng = np.random.default_rng(config.seed)
    if vocab is None:
        vocab = build_vocab(bundle.train, min_count=config.min_count)
    if embedding is None and config.glove_path:
        embedding, _, _ = load_pretrained_embeddings(
            vocab, config.glove_path, dim=config.embed_dim, seed=config.seed
        )
    model_config = ModelConfig(
        vocab_size=vocab.size,
        num_categories=len(bundle.categories),
        embed_dim=config.embed_dim,
        num_heads=config.num_heads,
    )
    params = params_init if params_init is not None else init_params(
        model_config, rng, config.variant, embedding
    )
    weights = config.loss_weights()
    optimizer = Adam(params, config.learning_rate, config.adam_beta1,
                     config.adam_beta2, config.adam_eps)

    dev_split = bundle.dev
    if not dev_split:
        logger.warning("no dev split; selecting on train accuracy")
        dev_split = bundle.train

    graphs = {e.id: build_graph(e, config.keep_preterminals)
              for split in (bundle.train, bundle.dev, bundle.test) for e in split}
    batch_kwargs = dict(vocab=vocab, categories=bundle.categories,
                        keep_preterminals=config.keep_preterminals, graphs=graphs)

    best_params = None
    best_epoch = 0
    best_dev = -np.inf
    bad_epochs = 0
    history: list[dict] = []
    stopped_epoch = 0

    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        batches = batchify(bundle.train, config.batch_size,
                           seed=_epoch_seed(config.seed, epoch), **batch_kwargs)
        totals, part_sums = [], {"acd": 0.0, "interactive": 0.0, "acsa": 0.0}
        for batch in batches:
            total, parts, grads, _ = objective(batch, params, model_config,
                                               weights, config.variant)
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (parts: {parts})"
                )
            optimizer.step(params, grads)
            totals.append(total)
            for key in part_sums:
                part_sums[key] += parts[key]

        dev_acc = evaluation.dataset_accuracy(
            params, model_config, dev_split, batch_size=config.batch_size,
            variant=config.variant, **batch_kwargs
        )
        improved = dev_acc > best_dev
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(totals)),
            "loss_acd": part_sums["acd"] / len(batches),
            "loss_interactive": part_sums["interactive"] / len(batches),
            "loss_acsa": part_sums["acsa"] / len(batches),
            "dev_accuracy": dev_acc,
            "improved": improved,
            "seconds": time.perf_counter() - started,
        }
        history.append(record)
        logger.info("epoch %d: loss %.4f dev %.4f%s", epoch, record["train_loss"],
                    dev_acc, " *" if improved else "")
        stopped_epoch = epoch
        if improved:
            best_dev = dev_acc
            best_epoch = epoch
            best_params = copy.deepcopy(params)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    return TrainResult(
        params=best_params if best_params is not None else params,
        model_config=model_config,
        vocab=vocab,
        history=history,
        best_epoch=best_epoch,
        best_dev_accuracy=float(best_dev),
        stopped_epoch=stopped_epoch,
    )


def multi_run(config: TrainConfig, bundle: DatasetBundle, on_run=None) -> dict:
    """Repeat training ``config.runs`` times with seeds base, base+1, ...

    Per-run test accuracy plus mean and standard deviation; diverged runs
    are recorded and flagged rather than aborting the aggregate.  ``on_run``
    (run_index, TrainResult) is called after each successful run, e.g. to
    save checkpoints.
    """
    runs = []
    accuracies = []
    for r in range(config.runs):
        run_config = replace(config, seed=config.seed + r)
        try:
            result = train_one_run(run_config, bundle)
        except TrainingDivergedError as err:
            logger.error("run %d failed: %s", r, err)
            runs.append({"run": r, "seed": run_config.seed, "error": str(err)})
            continue
        test_acc = evaluation.dataset_accuracy(
            result.params, result.model_config, bundle.test,
            vocab=result.vocab, categories=bundle.categories,
            batch_size=config.batch_size, variant=config.variant,
            keep_preterminals=config.keep_preterminals,
        ) if bundle.test else float("nan")
        runs.append({
            "run": r,
            "seed": run_config.seed,
            "test_accuracy": test_acc,
            "best_dev_accuracy": result.best_dev_accuracy,
            "best_epoch": result.best_epoch,
            "stopped_epoch": result.stopped_epoch,
        })
        accuracies.append(test_acc)
        if on_run is not None:
            on_run(r, result)
    return {
        "runs": runs,
        "mean_test_accuracy": float(np.mean(accuracies)) if accuracies else float("nan"),
        "std_test_accuracy": float(np.std(accuracies)) if accuracies else float("nan"),
        "completed": len(accuracies),
        "partial": len(accuracies) < config.runs,
    }


@dataclass
class ProbeResult:
    passed: bool
    epochs_used: int
    seconds: float
    final_train_accuracy: float
    history: list[dict] = field(default_factory=list)


PROBE_EPOCH_CAP = 300


def overfit_probe(config: TrainConfig, tiny_corpus, categories=None) -> ProbeResult:
    """Sanity harness: can the model drive train sentiment accuracy to 100%
    on a corpus of at most 10 examples within 300 epochs?

    Failure is a result, not an exception.
    """
    if len(tiny_corpus) > 10:
        raise ValueError("the overfit probe takes at most 10 examples")
    if categories is None:
        categories = tuple(sorted({c for e in tiny_corpus for c in e.labels}))
    bundle = DatasetBundle.from_splits(tiny_corpus, [], [], categories)

    rng = np.random.default_rng(config.seed)
    vocab = build_vocab(bundle.train, min_count=1)
    model_config = ModelConfig(
        vocab_size=vocab.size, num_categories=len(categories),
        embed_dim=config.embed_dim, num_heads=config.num_heads,
    )
    params = init_params(model_config, rng, config.variant)
    weights = config.loss_weights()
    optimizer = Adam(params, config.learning_rate, config.adam_beta1,
                     config.adam_beta2, config.adam_eps)
    graphs = {e.id: build_graph(e, config.keep_preterminals) for e in tiny_corpus}
    batch_kwargs = dict(vocab=vocab, categories=categories,
                        keep_preterminals=config.keep_preterminals, graphs=graphs)

    started = time.perf_counter()
    history = []
    accuracy = 0.0
    epochs_used = 0
    for epoch in range(1, PROBE_EPOCH_CAP + 1):
        epochs_used = epoch
        batches = batchify(tiny_corpus, config.batch_size,
                           seed=_epoch_seed(config.seed, epoch), **batch_kwargs)
        losses = []
        for batch in batches:
            total, _, grads, _ = objective(batch, params, model_config,
                                           weights, config.variant)
            if not np.isfinite(total):
                return ProbeResult(False, epoch, time.perf_counter() - started,
                                   accuracy, history)
            optimizer.step(params, grads)
            losses.append(total)
        accuracy = evaluation.dataset_accuracy(
            params, model_config, tiny_corpus, batch_size=config.batch_size,
            variant=config.variant, **batch_kwargs
        )
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "train_accuracy": accuracy})
        if accuracy >= 1.0:
            break
    return ProbeResult(
        passed=accuracy >= 1.0,
        epochs_used=epochs_used,
        seconds=time.perf_counter() - started,
        final_train_accuracy=accuracy,
        history=history,
    )


def write_history(path, history: list[dict]):
    """Metrics history as JSON Lines, one record per epoch."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")
