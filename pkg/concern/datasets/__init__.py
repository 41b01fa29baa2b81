from .dumps import DumpFormatError, PredictionDump, dump_paths, read_dump, write_dump
from .synthetic import SyntheticSpec, generate_synthetic
from .tabular import (
    DatasetFormatError,
    LabelSchema,
    TabularDataset,
    load_csv_dataset,
    load_idx,
    zscore,
)

__all__ = [
    "DatasetFormatError",
    "DumpFormatError",
    "LabelSchema",
    "PredictionDump",
    "SyntheticSpec",
    "TabularDataset",
    "dump_paths",
    "generate_synthetic",
    "load_csv_dataset",
    "load_idx",
    "read_dump",
    "write_dump",
    "zscore",
]
