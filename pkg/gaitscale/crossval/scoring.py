from __future__ import annotations

import logging
from collections.abc import Mapping

import numpy as np
from pydantic import BaseModel
from pydantic import Field

from gaitscale.const import PHASE_GRID

logger = logging.getLogger(__name__)

# (lower bound, band name), checked top-down
SCORE_BANDS = (
    (0.98, "dark_green"),
    (0.95, "light_green"),
    (0.90, "orange"),
)


def color_band(score: float) -> str:
    for lower, name in SCORE_BANDS:
        if score >= lower:
            return name
    return "red"


class ModelScore(BaseModel):
    """Relative RMSE score of competing architectures over the phases up to ``critical_phase``."""

    context: str = Field(default="", description="Context label")
    modality: str = Field(default="", description="Input modality")
    critical_phase: float = Field(default=1.0, description="Last phase of the scoring window")
    psi: list[float] = Field(default=[], description="Phases entering the score")
    archs: list[str] = Field(default=[], description="Scored architectures")
    scores: list[float] = Field(default=[], description="Mean RMSE ratio to the best model")
    normalized: list[float] = Field(default=[], description="Scores divided by the largest score")
    zero_rmse: list[str] = Field(default=[], description="arch@phase entries with zero RMSE")

    def is_empty(self) -> bool:
        return not self.archs

    def score_of(self, arch: str) -> float:
        return self.normalized[self.archs.index(arch)]

    @property
    def best_arch(self) -> str:
        return self.archs[int(np.argmax(self.normalized))]

    def bands(self) -> dict[str, str]:
        return {arch: color_band(value) for arch, value in zip(self.archs, self.normalized, strict=True)}


def model_score(
    rmse_curves: Mapping[str, np.ndarray],
    critical_phase: float,
    phases: np.ndarray | None = None,
    context: str = "",
    modality: str = "",
) -> ModelScore:
    """Average over phases up to ``critical_phase`` of min-RMSE / model-RMSE.

    A zero RMSE at some phase gives that model ratio 1 and every other
    model ratio 0 there; the occurrence is logged and kept in ``zero_rmse``.
    """
    phases = PHASE_GRID if phases is None else np.asarray(phases, dtype=np.float64)
    archs = list(rmse_curves)
    matrix = np.stack([np.asarray(rmse_curves[a], dtype=np.float64) for a in archs])
    if matrix.shape[1] != phases.size:
        raise ValueError(f"RMSE curves have {matrix.shape[1]} phases, grid has {phases.size}")
    window = phases <= critical_phase + 1e-9
    sub = matrix[:, window]
    best = sub.min(axis=0)
    ratios = np.empty_like(sub)
    zero_rmse = []
    for j in range(sub.shape[1]):
        if best[j] > 0:
            ratios[:, j] = best[j] / sub[:, j]
        else:
            ratios[:, j] = (sub[:, j] == 0).astype(np.float64)
            for i in np.flatnonzero(sub[:, j] == 0):
                zero_rmse.append(f"{archs[i]}@{phases[window][j]:.2f}")
    if zero_rmse:
        logger.warning(f"{context}:{modality}: zero RMSE at {', '.join(zero_rmse)}; scored by the limit convention")
    scores = ratios.mean(axis=1)
    return ModelScore(
        context=context,
        modality=modality,
        critical_phase=float(critical_phase),
        psi=phases[window].tolist(),
        archs=archs,
        scores=scores.tolist(),
        normalized=(scores / scores.max()).tolist(),
        zero_rmse=zero_rmse,
    )


def relative_rmse_gap(best_rmse: np.ndarray, baseline_rmse: np.ndarray) -> np.ndarray:
    """(baseline - modality) / baseline per phase; zero where the baseline RMSE is zero."""
    best_rmse = np.asarray(best_rmse, dtype=np.float64)
    baseline_rmse = np.asarray(baseline_rmse, dtype=np.float64)
    if best_rmse.shape != baseline_rmse.shape:
        raise ValueError(f"curves differ in length: {best_rmse.shape} vs {baseline_rmse.shape}")
    safe = np.where(baseline_rmse > 0, baseline_rmse, 1.0)
    return np.where(baseline_rmse > 0, (baseline_rmse - best_rmse) / safe, 0.0)


def critical_phase(best_rmse: np.ndarray, baseline_rmse: np.ndarray, phases: np.ndarray | None = None) -> float:
    """Phase of the largest relative RMSE gap to the baseline; the earliest on ties."""
    phases = PHASE_GRID if phases is None else np.asarray(phases, dtype=np.float64)
    gap = relative_rmse_gap(best_rmse, baseline_rmse)
    return float(phases[int(np.argmax(gap))])
