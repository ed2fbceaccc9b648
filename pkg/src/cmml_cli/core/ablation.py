"""Multi-seed encoder/generator ablation on synthetic tasks."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from cmml_cli.core.config import Settings, split_variant
from cmml_cli.core.evaluation import evaluate_tasks
from cmml_cli.core.metalearn import fit
from cmml_cli.core.pipeline import build_bundle, prepare_synthetic, sampler_for
from cmml_cli.utils.exceptions import ValidationError
from cmml_cli.utils.logger import log


@dataclass
class SignTest:
    reference: str
    challenger: str
    wins: int
    losses: int
    ties: int
    p_value: float


@dataclass
class AblationResult:
    """Query MSE per variant and seed."""

    mse: Dict[str, Dict[int, float]] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (variant, seed, value)
            for variant, by_seed in self.mse.items()
            for seed, value in sorted(by_seed.items())
        ]
        return pd.DataFrame(rows, columns=["variant", "seed", "query_mse"])

    def save(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path


def sign_test(wins: int, losses: int) -> float:
    """One-sided exact binomial p-value of ``wins`` or more in ``wins + losses`` fair trials."""
    n = wins + losses
    if n == 0:
        return 1.0
    return sum(math.comb(n, i) for i in range(wins, n + 1)) / 2**n


def paired_sign_test(result: AblationResult, reference: str, challenger: str) -> SignTest:
    """Reference wins a seed when its query MSE is strictly lower."""
    for name in (reference, challenger):
        if name not in result.mse:
            raise ValidationError(f"Variant '{name}' was not run")
    seeds = sorted(set(result.mse[reference]) & set(result.mse[challenger]))
    wins = sum(result.mse[reference][s] < result.mse[challenger][s] for s in seeds)
    losses = sum(result.mse[reference][s] > result.mse[challenger][s] for s in seeds)
    ties = len(seeds) - wins - losses
    return SignTest(reference, challenger, wins, losses, ties, sign_test(wins, losses))


def variant_settings(settings: Settings, variant: str, seed: int) -> Settings:
    encoder, generator = split_variant(variant)
    return settings.model_copy(
        update={
            "seed": seed,
            "encoder": settings.encoder.model_copy(update={"variant": encoder}),
            "generator": settings.generator.model_copy(update={"variant": generator}),
        }
    )


def query_mse(settings: Settings) -> float:
    """Train on synthetic meta-train tasks, return mean query MSE on meta-test tasks."""
    task_set = prepare_synthetic(settings)
    bundle = build_bundle(settings, task_set)
    sampler = sampler_for(settings)
    train_tasks, test_tasks = task_set.split("meta-train"), task_set.split("meta-test")
    trained = fit(bundle, train_tasks, settings.training, "mse", settings.seed, sampler).best
    report = evaluate_tasks(
        trained, test_tasks, "mse", settings.evaluation, sampler, settings.seed
    )
    return report.aggregate()["mse"]


def run_ablation(
    settings: Settings,
    variants: Sequence[str],
    seeds: Sequence[int],
    on_result: Optional[Callable[[str, int, float], None]] = None,
) -> AblationResult:
    if not variants or not seeds:
        raise ValidationError("Ablation needs at least one variant and one seed")
    result = AblationResult()
    for variant in variants:
        result.mse[variant] = {}
        for seed in seeds:
            value = query_mse(variant_settings(settings, variant, seed))
            result.mse[variant][seed] = value
            log.info(f"Ablation {variant} seed {seed}: query mse {value:.5f}")
            if on_result is not None:
                on_result(variant, seed, value)
    return result
