"""Per-iteration training log record."""

from pydantic import BaseModel, Field


class TrainRecord(BaseModel):
    """One line of train_log.ndjson."""

    t: int = Field(ge=1)
    loss_d: float
    loss_g: float
    r_icp: float = Field(ge=0)
    c_g: float = Field(ge=0)
    grad_penalty: float = Field(ge=0)
    coverage: float = Field(ge=0, le=1)
