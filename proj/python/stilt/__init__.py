"""Python bindings for the stilt experiment harness."""

from ._stilt import (
    Dataset,
    Example,
    StiltError,
    ablate_premises,
    accuracy,
    cli,
    majority_label_frequency,
    mcc,
    standard_grid,
    read_jsonl,
    run_sweep,
    shuffle_fake_endings,
    split_train_dev,
    subsample,
    summarize,
    synthesize,
    validate,
    write_jsonl,
)

__all__ = [
    "Dataset",
    "Example",
    "StiltError",
    "ablate_premises",
    "accuracy",
    "cli",
    "majority_label_frequency",
    "mcc",
    "standard_grid",
    "read_jsonl",
    "run_sweep",
    "shuffle_fake_endings",
    "split_train_dev",
    "subsample",
    "summarize",
    "synthesize",
    "validate",
    "write_jsonl",
]
