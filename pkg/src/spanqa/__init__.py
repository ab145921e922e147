"""Extractive QA over gold snippets: span scoring, beam decoding,
threshold-tuned list answers, ensembling, and MRR / list-F1 evaluation."""

__version__ = "0.1.0"
