"""Dataset construction, partitioning, batching and serialization."""
from .batches import BatchSampler, fresh_batch
from .container import dataset_hash, read_dataset, write_dataset
from .dataset import ClientDataset, FederatedDataset, placeholder_clients
from .idx import IdxParseError, IdxTensor, load_mnist, parse_idx, read_idx, serialize_idx
from .partition import PartitionError, partition_mnist
from .synthetic import SyntheticParams, generate_synthetic

__all__ = [
    "BatchSampler", "ClientDataset", "FederatedDataset", "IdxParseError", "IdxTensor",
    "PartitionError", "SyntheticParams", "dataset_hash", "fresh_batch", "generate_synthetic",
    "load_mnist", "parse_idx", "partition_mnist", "placeholder_clients", "read_dataset",
    "read_idx", "serialize_idx", "write_dataset",
]
