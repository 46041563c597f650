"""Worker/server aggregation protocols, sharding and transports."""

from .aggregation import (
    compress_ef_push_pull,
    compress_push_pull,
    intra_node_reduce,
    push_pull,
    shard_reduce,
    worker_push,
)
from .config import (
    DEFAULT_SIZE_THRESHOLD,
    AggregationConfig,
    BiasedKindWithoutEF,
    Mode,
    UnbiasedKindWithEF,
)
from .rounds import Cluster, run_round
from .sharding import assign_shard, weighted_assignment
from .state import ServerShardState, WorkerState
from .transport import InProcessTransport, TcpTransport, recv_message, send_message, shard_map

__all__ = [
    "DEFAULT_SIZE_THRESHOLD",
    "AggregationConfig",
    "BiasedKindWithoutEF",
    "Cluster",
    "InProcessTransport",
    "Mode",
    "ServerShardState",
    "TcpTransport",
    "UnbiasedKindWithEF",
    "WorkerState",
    "assign_shard",
    "compress_ef_push_pull",
    "compress_push_pull",
    "intra_node_reduce",
    "push_pull",
    "recv_message",
    "run_round",
    "send_message",
    "shard_map",
    "shard_reduce",
    "weighted_assignment",
    "worker_push",
]
