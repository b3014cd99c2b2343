import importlib.metadata

__version__ = importlib.metadata.version("stimpdc")
__author__ = "The StimPDC Developers"
