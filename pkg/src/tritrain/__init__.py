"""Semi-supervised bootstrapping baselines for unsupervised domain adaptation.

Self-training (thresholded and throttled), tri-training, tri-training with
disagreement, asymmetric tri-training and multi-task tri-training over a
small numpy MLP, plus tf-idf features, seeded data splits and a paired
bootstrap significance test.
"""

from .data import (
    Dataset,
    Example,
    SparseVector,
    SplitSpec,
    bootstrap_sample,
    load_blitzer_processed,
    make_splits,
    synth_domain_shift,
)
from .eval import RunReport, accuracy, aggregate, paired_bootstrap_test
from .features import Vocabulary, build_vocab, tokenize, vectorize
from .model import (
    MlpNet,
    MultiHeadNet,
    Prediction,
    TrainConfig,
    Vote,
    forward,
    forward_head,
    gradients,
    init_mlp,
    init_multihead,
    loss,
    orth_loss,
    train,
)
from .ssl import (
    STRATEGIES,
    Fixed,
    LinearGrowth,
    PseudoLabelBatch,
    SslConfig,
    SslResult,
    agree_pseudo_labels,
    asym_tri_train,
    majority_vote,
    mt_tri_train,
    run_strategy,
    sample_candidates,
    self_train_threshold,
    self_train_throttled,
    tri_train,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Example",
    "SparseVector",
    "SplitSpec",
    "bootstrap_sample",
    "load_blitzer_processed",
    "make_splits",
    "synth_domain_shift",
    "MlpNet",
    "MultiHeadNet",
    "Prediction",
    "TrainConfig",
    "Vote",
    "forward",
    "forward_head",
    "gradients",
    "init_mlp",
    "init_multihead",
    "loss",
    "orth_loss",
    "train",
    "STRATEGIES",
    "Fixed",
    "LinearGrowth",
    "PseudoLabelBatch",
    "SslConfig",
    "SslResult",
    "agree_pseudo_labels",
    "asym_tri_train",
    "majority_vote",
    "mt_tri_train",
    "run_strategy",
    "sample_candidates",
    "self_train_threshold",
    "self_train_throttled",
    "tri_train",
    "RunReport",
    "accuracy",
    "aggregate",
    "paired_bootstrap_test",
    "Vocabulary",
    "build_vocab",
    "tokenize",
    "vectorize",
    "__version__",
]
