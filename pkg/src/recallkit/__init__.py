"""recallkit: representation-aligned layer-wise model merging at desk scale.

The pipeline mirrors how the merge weights are derived: extract per-layer
pooled representations of a task's data under each model, pick typical samples
by k-means, score per-layer inter-model similarity (RBF kernel by default),
softmax the anchor's similarities into layer weights, and interpolate the
checkpoints group by group.  A continual-learning bench and the standard
merging baselines (uniform averaging, task vectors, DARE, validation-loss
weighting) round out the toolkit.
"""

from .bench import (
    BenchReport,
    TaskDataset,
    TaskSample,
    evaluate,
    gen_solver_expert,
    gen_synthetic_expert,
    gen_tasks,
    observation_curves,
    run_sequential,
)
from .checkpoint import Checkpoint, LayerGroupIndex, build_layer_index, load, save
from .clustering import KMeansResult, TypicalDataset, kmeans, select_typical
from .errors import RecallError
from .extraction import RepresentationSet, extract, load_representations, pool, save_representations
from .merging import (
    MergePlan,
    dare_sparsify,
    loss_weighted_merge,
    merge,
    recall_weights,
    task_vector_merge,
    uniform_merge,
)
from .model import ModelConfig, forward, greedy_decode, init_checkpoint, tokenize, zero_checkpoint
from .similarity import (
    SimilarityTable,
    build_table,
    cka_similarity,
    cosine_similarity,
    euclidean_similarity,
    mmd_similarity,
    rbf_similarity,
)

__version__ = "0.1.0"
