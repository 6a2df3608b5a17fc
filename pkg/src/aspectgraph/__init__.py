"""Aspect-category sentiment analysis with graph attention over
constituency parse trees: tree reading, graph construction, the network
and its training objective, the data pipeline, and evaluation tools."""

from .data import (
    Batch,
    DataError,
    DatasetBundle,
    Example,
    POLARITIES,
    Vocab,
    batchify,
    build_hard_test,
    build_vocab,
    load_pretrained_embeddings,
    load_semeval,
    make_toy_corpus,
    read_examples,
    write_examples,
)
from .evaluate import accuracy, acd_metrics, dump_attention, run_ablation_suite
from .model import (
    LossWeights,
    ModelConfig,
    ModelOutput,
    acd_loss,
    acd_predict,
    acsa_loss,
    acsa_predict,
    aspect_attention,
    embed,
    encode,
    forward,
    gat_coefficients,
    gat_layer,
    init_params,
    interactive_loss,
    load_checkpoint,
    objective,
    save_checkpoint,
    total_loss,
)
from .train import Adam, TrainConfig, multi_run, overfit_probe, train_one_run
from .treebank import (
    ConstituencyGraph,
    MalformedTreeError,
    ParseTree,
    collapse_preterminals,
    graph_validate,
    parse_bracketed,
    serialize_tree,
    tree_to_graph,
)

__version__ = "0.1.0"
