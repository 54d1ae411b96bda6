"""Training and evaluation for one (regime, length, seed) grid cell.

Per epoch the validation answer accuracy is logged to a CSV; the checkpoint
with the best validation accuracy is kept and used for the final test-set
evaluation.  Dataset contents and batch order are exact functions of the
seed; backend nondeterminism is confined to the optimizer arithmetic, and
library versions are recorded next to the metrics.
"""

from __future__ import annotations

import csv
import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .data import answer_position, build_batch, make_dataset
from .model import ParityTransformer, masked_loss


@dataclass
class CellResult:
    regime: str
    length: int
    seed: int
    best_val_accuracy: float
    test_accuracy: float
    epochs: int
    metrics_path: str
    checkpoint_path: str


def _dataset_seed(seed: int, length: int, split: str) -> int:
    # process-independent derivation (builtin hash() is salted per run)
    digest = hashlib.sha256(f"{seed}:{length}:{split}".encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _batches(data: dict, batch_size: int, generator: np.random.Generator | None):
    count = data["tokens"].shape[0]
    order = (
        generator.permutation(count) if generator is not None else np.arange(count)
    )
    for start in range(0, count, batch_size):
        idx = order[start : start + batch_size]
        yield (
            torch.from_numpy(data["tokens"][idx]),
            torch.from_numpy(data["labels"][idx]),
        )


@torch.no_grad()
def evaluate(model: ParityTransformer, data: dict, length: int, regime: str,
             batch_size: int = 1024) -> float:
    """Accuracy of the final answer (the END position) over a dataset."""
    model.eval()
    pos = answer_position(length, regime)
    hits = total = 0
    for tokens, labels in _batches(data, batch_size, None):
        logits = model(tokens)
        pred = logits[:, pos, :].argmax(dim=-1)
        hits += (pred == labels[:, pos]).sum().item()
        total += tokens.shape[0]
    return hits / total


def train_cell(
    cfg: ExperimentConfig,
    regime: str,
    length: int,
    seed: int,
    out_dir: str | Path,
    quiet: bool = False,
) -> CellResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(seed)

    train_bits, _ = make_dataset(length, cfg.train_size, _dataset_seed(seed, length, "train"))
    val_bits, _ = make_dataset(length, cfg.val_size, _dataset_seed(seed, length, "val"))
    test_bits, _ = make_dataset(length, cfg.test_size, _dataset_seed(seed, length, "test"))
    train_data = build_batch(train_bits, regime)
    val_data = build_batch(val_bits, regime)
    test_data = build_batch(test_bits, regime)

    max_len = train_data["tokens"].shape[1]
    model = ParityTransformer(cfg, max_len, causal=regime != "noncausal_instant")
    opt = torch.optim.Adam(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        weight_decay=cfg.weight_decay,
    )

    tag = f"{regime}_L{length}_s{seed}"
    metrics_path = out / f"metrics_{tag}.csv"
    ckpt_path = out / f"best_{tag}.pt"
    (out / "versions.txt").write_text(
        f"torch {torch.__version__}\nnumpy {np.__version__}\n"
    )
    (out / f"config_{tag}.txt").write_text(
        f"regime = {regime}\nlength = {length}\nseed = {seed}\n" + cfg.dump()
    )

    shuffler = np.random.default_rng(_dataset_seed(seed, length, "order"))
    best_val = -1.0
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_accuracy", "seconds"])
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            t0 = time.time()
            losses = []
            for tokens, labels in _batches(train_data, cfg.batch_size, shuffler):
                opt.zero_grad()
                loss = masked_loss(model(tokens), labels)
                loss.backward()
                opt.step()
                losses.append(loss.item())
            val_acc = evaluate(model, val_data, length, regime)
            writer.writerow(
                [epoch, f"{np.mean(losses):.6f}", f"{val_acc:.6f}",
                 f"{time.time() - t0:.1f}"]
            )
            fh.flush()
            if val_acc > best_val:
                best_val = val_acc
                torch.save(model.state_dict(), ckpt_path)
            if not quiet:
                print(
                    f"[{tag}] epoch {epoch}/{cfg.epochs} "
                    f"loss {np.mean(losses):.4f} val {val_acc:.4f}"
                )

    model.load_state_dict(torch.load(ckpt_path, weights_only=True))
    test_acc = evaluate(model, test_data, length, regime)
    return CellResult(
        regime, length, seed, best_val, test_acc, cfg.epochs,
        str(metrics_path), str(ckpt_path),
    )


def run_grid(
    cfg: ExperimentConfig, out_dir: str | Path, quiet: bool = False
) -> list[CellResult]:
    """All (regime, length, seed) cells; appends rows to results.csv as each
    cell finishes so interrupted grids keep their completed work."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results_path = out / "results.csv"
    fresh = not results_path.exists()
    results = []
    with open(results_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["regime", "length", "seed", "best_val", "test_accuracy"])
        for regime in cfg.regimes:
            for length in cfg.lengths:
                for seed in cfg.seeds:
                    res = train_cell(cfg, regime, length, seed, out, quiet=quiet)
                    writer.writerow(
                        [res.regime, res.length, res.seed,
                         f"{res.best_val_accuracy:.6f}", f"{res.test_accuracy:.6f}"]
                    )
                    fh.flush()
                    results.append(res)
    return results
