from .schemas import ManifestChunk, ReportRow, SessionRecordRow, SessionSummary

__all__ = ["ManifestChunk", "ReportRow", "SessionRecordRow", "SessionSummary"]
