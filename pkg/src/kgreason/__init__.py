"""Neural-symbolic link prediction over sparse commonsense knowledge graphs.

Backward-chaining rule construction with embedding-based weak unification:
given a query r(h, ?), the engine retrieves candidate triples around the
frontier via k-NN over node embeddings, scores them under the min t-norm,
steers the search with a learned relation predictor, and returns ranked
answer entities with human-readable proof paths.
"""

from .config import ReasonerConfig, build_config
from .embeddings import (
    EmbeddingTable,
    KnnIndex,
    build_knn_index,
    cosine,
    hash_embed,
    knn,
    load_embeddings,
    measure_recall,
    save_embeddings,
)
from .errors import DataError, EngineError, NumericalAbort, ParseError, UsageError
from .evaluation import (
    DatasetStats,
    EvalRecord,
    EvalReport,
    carve_unseen_split,
    compute_stats,
    evaluate,
    filtered_rank,
    hits_at,
    mrr,
    render_report,
)
from .kg import (
    Ckg,
    NodeTable,
    RelationTable,
    Triple,
    add_inverse_relations,
    forward_triples,
    load_triples,
    triples_with_head,
)
from .predictor import (
    RelationPredictorParams,
    extract_training_sequences,
    init_params,
    load_checkpoint,
    predictor_forward,
    predictor_loss_and_grad,
    predictor_topm,
    save_checkpoint,
    sgd_step,
)
from .reasoner import (
    Engine,
    ProofState,
    Query,
    RankedAnswer,
    answer_query,
    build_queries,
    explain,
    render_rule,
    score_query_answer,
    squash,
)
from .training import TrainDiagnostics, bidirectional_queries, train_reasoner
from .unify import (
    Atom,
    CandidateSet,
    Const,
    ScoredCandidate,
    UnificationMatrix,
    Var,
    build_hypotheses,
    gather_candidates,
    score_matrix,
    select_candidates,
)

__version__ = "0.1.0"
