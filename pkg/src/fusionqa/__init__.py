"""Table-and-text open-domain retrieval: BM25 and dense retrievers, entity
linking, fused blocks, inverse-cloze data, a global-local sparse attention
kernel and the EM/F1/HITS evaluation harness."""

__version__ = "0.1.0"

from .corpus import (  # noqa: E402
    Corpus,
    CorpusPaths,
    FusedBlock,
    Passage,
    Table,
    TableSegment,
    load_corpus,
    segment_table,
)
from .dense import DenseRetriever, EmbeddingStore, HashedBowEncoder, in_batch_loss  # noqa: E402
from .fusion import IctGenerator, build_fused_pool  # noqa: E402
from .index import Bm25Index, Bm25Params, ScoredBlock  # noqa: E402
from .linker import EntityLinker  # noqa: E402
from .retrieve import (  # noqa: E402
    FusionRetriever,
    IterativeDenseRetriever,
    IterativeSparseRetriever,
    RetrievalResult,
    SparseRetriever,
)
