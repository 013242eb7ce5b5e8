"""Evaluation report documents."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CurveRow(BaseModel):
    x: float
    y: float


class CoverageRow(BaseModel):
    """Nominal coverage level 1 - alpha with the observed fraction inside the region."""

    level: float = Field(gt=0, lt=1)
    coverage: float = Field(ge=0, le=1)


class MethodComparisonRow(BaseModel):
    method: str
    coverage: float = Field(ge=0, le=1)
    efficiency: float = Field(ge=0, le=1)
    quantile: float | None = None


class FidelityMetrics(BaseModel):
    ks_mean: float = Field(ge=0, le=1)
    wasserstein_mean: float = Field(ge=0)
    downstream_accuracy: float = Field(ge=0, le=1)


class MetricsReport(FidelityMetrics):
    """report.json; calibration entries are absent when no calibrator was given."""

    coverage_at_alpha: dict[str, float] | None = None
    real_coverage: float | None = Field(default=None, ge=0, le=1)
    efficiency: float | None = Field(default=None, ge=0, le=1)
    ece: float | None = Field(default=None, ge=0)
    width_density_spearman: float | None = Field(default=None, ge=-1, le=1)
    method_comparison: list[MethodComparisonRow] | None = None
    curves: dict[str, list[CurveRow]] = Field(default_factory=dict)


class SeedComparison(BaseModel):
    seed: int
    baseline: FidelityMetrics
    conformal: FidelityMetrics
    ece_baseline: float = Field(ge=0)
    ece_conformal: float = Field(ge=0)
    r_icp_early: float = Field(ge=0)
    r_icp_late: float = Field(ge=0)
    generalization_baseline: float = Field(ge=0)
    generalization_conformal: float = Field(ge=0)


class ComparisonSummary(BaseModel):
    seeds: int
    accuracy_not_worse: int
    ks_not_worse: int
    ece_improved: int
    r_icp_decreased: int
    median_accuracy_conformal: float
    median_accuracy_baseline: float


class ComparisonReport(BaseModel):
    rows: list[SeedComparison]
    summary: ComparisonSummary
