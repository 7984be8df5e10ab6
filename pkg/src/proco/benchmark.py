"""Reference synthetic benchmark and the ablation / baseline grids built on it.

Each seed is an independent replicate: it draws its own long-tailed dataset,
its own stratified 7:3 split and its own training randomness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .dataset import Dataset, generate_long_tailed, split
from .trainer import fit

# desk-scale network and queue; loss and optimizer hyperparameters keep their defaults
REFERENCE_CONFIG = TrainConfig(
    hidden=64,
    g_hidden=128,
    k=32,
    M=512,
    m=0.9,
    tau=0.2,
    epochs=200,
)


@dataclass(frozen=True)
class ReferenceData:
    num_classes: int = 5
    dim: int = 32
    n_max: int = 800
    imbalance_ratio: float = 50.0
    separation: float = 3.0

    def generate(self, seed: int) -> Dataset:
        return generate_long_tailed(
            self.num_classes, self.n_max, self.imbalance_ratio, self.dim, self.separation, seed=seed
        )


ABLATIONS = {
    "loss-only": dict(method="proco", proto_instances=False, recalibration=False),
    "+proto-instance": dict(method="proco", proto_instances=True, recalibration=False),
    "+recalibration": dict(method="proco", proto_instances=False, recalibration=True),
    "full": dict(method="proco", proto_instances=True, recalibration=True),
}

BASELINES = {
    "ce": dict(method="ce"),
    "ce_resample": dict(method="ce_resample"),
    "info_nce": dict(method="info_nce"),
    "info_nce_resample": dict(method="info_nce_resample"),
    "proco": dict(method="proco"),
}


def replicate(config: TrainConfig, seed: int, data: ReferenceData | Dataset | None = None) -> dict:
    """Final test metrics of one seeded run."""
    if isinstance(data, Dataset):
        ds = data
    else:
        ds = (data or ReferenceData()).generate(seed)
    cfg = config.with_overrides(seed=seed, split_seed=seed)
    tr, te = split(ds, cfg.train_fraction, cfg.split_seed, cfg.split_mode)
    _, report = fit(cfg, tr, te)
    return report.final


def run_grid(variants: dict, seeds, base: TrainConfig = REFERENCE_CONFIG, data=None) -> dict:
    """Per-variant lists of final metrics over ``seeds``."""
    out = {}
    for name, overrides in variants.items():
        cfg = base.with_overrides(**overrides)
        out[name] = [replicate(cfg, s, data) for s in seeds]
    return out


def summarize_grid(results: dict) -> list[dict]:
    rows = []
    for name, finals in results.items():
        acc = np.array([r["accuracy"] for r in finals])
        f1 = np.array([r["macro_f1"] for r in finals])
        rows.append(
            {
                "config": name,
                "n_seeds": len(finals),
                "accuracy_mean": float(acc.mean()),
                "accuracy_sd": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                "macro_f1_mean": float(f1.mean()),
                "macro_f1_sd": float(f1.std(ddof=1)) if len(f1) > 1 else 0.0,
            }
        )
    return rows
