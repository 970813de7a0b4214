import json
import os
import random
import subprocess

import pytest

import stilt


def toy(n=20, seed=0):
    rng = random.Random(seed)
    ds = stilt.Dataset()
    ds.name = "toy"
    ds.num_options = 4
    words = ["alpha", "beta", "gamma", "delta", "eps"]
    ds.examples = [
        stilt.Example(
            f"e{i}",
            " ".join(rng.choice(words) for _ in range(5)),
            [" ".join(rng.choice(words) for _ in range(4)) for _ in range(4)],
            rng.randrange(4),
        )
        for i in range(n)
    ]
    return ds


def write_corpus(path):
    rng = random.Random(3)
    words = ["river", "stone", "green", "falls", "under", "bridge", "old", "city", "walks", "near"]
    lines = []
    for _ in range(40):
        sents = []
        for _ in range(5):
            toks = [rng.choice(words) for _ in range(rng.randint(10, 16))]
            sents.append(" ".join(toks).capitalize() + ".")
        lines.append(" ".join(sents))
    path.write_text("\n".join(lines) + "\n")


def test_grid():
    grid = stilt.standard_grid()
    assert len(grid) == 36
    assert grid[0] == {"learning_rate": 5e-6, "effective_batch": 8, "warmup_ratio": 0.0, "seed": 12}


def test_metrics():
    assert stilt.accuracy([0, 1, 2, 0], [0, 1, 2, 3]) == 0.75
    assert stilt.mcc([1] * 60 + [0] * 40, [1] * 50 + [0] * 50) == pytest.approx(0.8165, abs=1e-4)


def test_transforms_and_roundtrip(tmp_path):
    ds = toy()
    stilt.validate(ds)
    ab = stilt.ablate_premises(ds)
    assert all(e.premise == "" for e in ab.examples)
    assert ab.provenance[-1] == "ablate_premises"
    sh = stilt.shuffle_fake_endings(ds, 5)
    for a, b in zip(ds.examples, sh.examples):
        assert a.options[a.label] == b.options[b.label]
        assert [sorted(o.split()) for o in a.options] == [sorted(o.split()) for o in b.options]
    assert len(stilt.subsample(ds, 7, 1)) == 7
    train, dev = stilt.split_train_dev(ds, 0.25, 2)
    assert (len(train), len(dev)) == (15, 5)
    stilt.write_jsonl(ds, tmp_path / "toy.jsonl")
    assert stilt.read_jsonl(tmp_path / "toy.jsonl") == ds
    with pytest.raises(stilt.StiltError):
        stilt.subsample(ds, 21, 0)


def test_synthesize(tmp_path):
    corpus = tmp_path / "corpus.txt"
    write_corpus(corpus)
    ds = stilt.synthesize([corpus], 30, seed=4)
    assert len(ds) == 30
    assert ds.num_options == 4
    for e in ds.examples:
        assert len(set(e.options)) == 4
    assert stilt.synthesize([corpus], 30, seed=4) == ds


def test_sweep_and_summary(tmp_path):
    stilt.write_jsonl(toy(16, 1), tmp_path / "train.jsonl")
    stilt.write_jsonl(toy(12, 2), tmp_path / "dev.jsonl")
    spec = {
        "target": {"dataset_train": "train.jsonl", "dataset_dev": "dev.jsonl", "name": "toy"},
        "grid": {"learning_rate": [1e-5], "effective_batch": [8], "seed": [1, 2]},
        "max_epochs": 1,
        "reference": {"feature_dim": 1024, "hidden_dim": 8},
        "ledger": "ledger.jsonl",
    }
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert stilt.run_sweep(tmp_path / "spec.json") == 4
    assert stilt.run_sweep(tmp_path / "spec.json") == 0
    (summary,) = stilt.summarize(tmp_path / "ledger.jsonl")
    assert summary["n"] == 4
    assert summary["min"] <= summary["mean"] <= summary["best"]


def test_cli_in_process_and_binary(tmp_path):
    stilt.write_jsonl(toy(), tmp_path / "in.jsonl")
    args = ["transform", "--op", "subsample", "-n", "5", "--seed", "3",
            "--in", str(tmp_path / "in.jsonl"), "--out", str(tmp_path / "a.jsonl")]
    assert stilt.cli(args) == 0
    assert stilt.read_jsonl(tmp_path / "a.jsonl") == stilt.subsample(toy(), 5, 3)
    assert stilt.cli(["transform", "--nope"]) == 2
    tool = os.environ.get("STILT_TOOL")
    if tool:
        args[-1] = str(tmp_path / "b.jsonl")
        subprocess.run([tool, *args], check=True)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
