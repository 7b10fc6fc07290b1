"""End-to-end gradient verification across every model configuration.

Builds a miniature instance of each (representation, head, fusion)
combination, runs the full forward/criterion/backward path, and compares
every analytic gradient against central finite differences. Small widths
keep the exhaustive sweep under a couple of minutes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import HEAD_KINDS
from .model import ClassifierConfig, DifficultyModel, criterion_sum_grad
from .nn.gradcheck import GradCheckReport, grad_check

CHECK_HIDDEN = 4
CHECK_K = 3
CHECK_EMBED = 3

_FLOAT_DIMS = {"rh": 3, "lh": 3, "virtuoso": 4, "virtuoso_enc": 4, "sync": 5}
_STREAM_LENGTHS = {"pitch": 7, "rh": 5, "lh": 4, "virtuoso": 6, "virtuoso_enc": 6, "sync": 6}


def all_configurations() -> list[tuple[str, str, str]]:
    combos = []
    for rep in ("pitch", "argnn", "virtuoso", "virtuoso_enc"):
        for head in HEAD_KINDS:
            combos.append((rep, head, "none"))
    for fusion in ("sync", "concat", "sum", "att", "int"):
        for head in HEAD_KINDS:
            combos.append(("fused", head, fusion))
    return combos


def build_check_instance(
    rep: str, head: str, fusion: str, seed: int = 7, bidirectional: bool = False
):
    config = ClassifierConfig(
        rep_name=rep,
        k=CHECK_K,
        head=head,
        fusion=fusion,
        hidden_dim=CHECK_HIDDEN,
        num_layers=2,
        dropout=0.0,
        bidirectional=bidirectional,
        pitch_embed_dim=CHECK_EMBED,
        fusion_heads=2,
        input_dims=dict(_FLOAT_DIMS),
        seed=seed,
    )
    model = DifficultyModel(config)
    rng = np.random.default_rng(seed + 1)
    items = []
    for _ in range(2):
        item = {}
        for spec in model.streams:
            t = _STREAM_LENGTHS[spec.name]
            if spec.kind == "tokens":
                item[spec.name] = rng.integers(0, 88, size=(t, 1))
            else:
                item[spec.name] = rng.normal(size=(t, spec.input_dim))
        items.append(item)
    labels = np.array([2, 1])
    return model, items, labels


@dataclass
class ConfigCheck:
    rep: str
    head: str
    fusion: str
    report: GradCheckReport

    def line(self) -> str:
        tag = f"{self.rep}/{self.head}/{self.fusion}"
        return f"{tag:<28} {self.report.summary()}"


def check_configuration(
    rep: str,
    head: str,
    fusion: str,
    tolerance: float = 1e-4,
    eps: float = 1e-4,
    max_entries: int = 1000,
    seed: int = 7,
    bidirectional: bool = False,
) -> ConfigCheck:
    model, items, labels = build_check_instance(
        rep, head, fusion, seed=seed, bidirectional=bidirectional
    )

    def loss_fn() -> float:
        raw, _ = model.forward_group(items, train=False)
        per_sample, _ = criterion_sum_grad(
            head, raw, labels, CHECK_K, weights=None, alpha=1.0
        )
        return float(per_sample.mean())

    def grad_fn() -> float:
        raw, cache = model.forward_group(items, train=False)
        per_sample, draws = criterion_sum_grad(
            head, raw, labels, CHECK_K, weights=None, alpha=1.0
        )
        scale = 1.0 / len(items)
        model.backward_group({k: g * scale for k, g in draws.items()}, cache)
        return float(per_sample.mean())

    report = grad_check(
        loss_fn,
        grad_fn,
        model.store,
        tolerance=tolerance,
        eps=eps,
        max_entries=max_entries,
        seed=seed,
    )
    return ConfigCheck(rep=rep, head=head, fusion=fusion, report=report)


def run_all_checks(
    tolerance: float = 1e-4,
    eps: float = 1e-4,
    max_entries: int = 1000,
    seed: int = 7,
) -> list[ConfigCheck]:
    return [
        check_configuration(
            rep, head, fusion,
            tolerance=tolerance, eps=eps, max_entries=max_entries, seed=seed,
        )
        for rep, head, fusion in all_configurations()
    ]
