"""Source-free continual unsupervised domain adaptation on small MLPs."""
from ._kernels import BACKEND
from .adaptation import (
    ContinualConfig,
    ContinualRun,
    SourceConfig,
    adapt_on_batch,
    fit_source,
    run_continual,
    train_source,
)
from .buffer import Buffer, merged_set, relabel_buffer, update_buffer
from .clustering import pseudo_labels
from .data import DomainPairConfig, make_domain_pair, preset, stream_batches
from .losses import HyperParams
from .metrics import MetricsRecord, evaluate
from .netcore import Model, softmax

__version__ = "0.1.0"
