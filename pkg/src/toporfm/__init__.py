"""Topological RFM clustering, consensus ensembles and clusterwise demand forecasting."""

__version__ = "0.1.0"
