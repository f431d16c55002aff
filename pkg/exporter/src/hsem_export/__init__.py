from .export import ExportJob, ExportSummary, Encoder, export

__all__ = ["ExportJob", "ExportSummary", "Encoder", "export"]
