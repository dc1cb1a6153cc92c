from pydantic import BaseModel, Field, field_validator


def _plain_label(value: str) -> str:
    if not value or any(ch in value for ch in ",=\n#"):
        raise ValueError("labels must be non-empty and free of ',', '=', '#' and newlines")
    return value


class SessionRecordRow(BaseModel):
    """One row of a session log CSV."""

    chunk_id: int = Field(..., ge=0)
    config: str = Field(..., pattern=r"^(text|L\d+)$", description="text or L<level>")
    start_s: float = Field(..., ge=0, description="Transfer start")
    end_s: float = Field(..., ge=0, description="Transfer end")
    bytes: int = Field(..., ge=0, description="Bytes sent over the network")
    throughput_bps: float = Field(..., ge=0, description="Throughput measured on this chunk")
    cumulative_s: float = Field(..., ge=0, description="Time at which the chunk's KV is ready")


class SessionSummary(BaseModel):
    """Trailing summary line of a session log."""

    trace: str
    policy: str
    slo_s: float = Field(..., gt=0)
    violated: bool
    finish_s: float = Field(..., ge=0)
    quality_text: float = Field(0.0, ge=0, le=1)
    quality_L0: float = Field(0.0, ge=0, le=1)
    quality_L1: float = Field(0.0, ge=0, le=1)
    quality_L2: float = Field(0.0, ge=0, le=1)
    quality_L3: float = Field(0.0, ge=0, le=1)

    @field_validator("trace", "policy")
    @classmethod
    def _no_separators(cls, value: str) -> str:
        return _plain_label(value)


class ReportRow(BaseModel):
    """Aggregate of every session that shares a trace label and SLO."""

    trace: str
    slo_s: float = Field(..., gt=0)
    violation_rate: float = Field(..., ge=0, le=1)
    mean_finish_s: float = Field(..., ge=0)
    quality_text: float = Field(..., ge=0, le=1)
    quality_L0: float = Field(..., ge=0, le=1)
    quality_L1: float = Field(..., ge=0, le=1)
    quality_L2: float = Field(..., ge=0, le=1)
    quality_L3: float = Field(..., ge=0, le=1)

    @field_validator("trace")
    @classmethod
    def _no_separators(cls, value: str) -> str:
        return _plain_label(value)


class ManifestChunk(BaseModel):
    """A ``chunk`` line of a library manifest."""

    chunk_id: int = Field(..., ge=0)
    start: int = Field(..., ge=0)
    end: int = Field(..., gt=0)
    sizes: dict[int, int] = Field(..., description="Encoded bytes per level id")

    @field_validator("sizes")
    @classmethod
    def _positive_sizes(cls, value: dict[int, int]) -> dict[int, int]:
        if not value or any(size <= 0 for size in value.values()):
            raise ValueError("every level needs a positive size")
        return value
