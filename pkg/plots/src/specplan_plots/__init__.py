from .figures import CSV_SCHEMA_VERSION, KINDS, PlotSpec, SchemaError, render

__version__ = "0.1.0"
