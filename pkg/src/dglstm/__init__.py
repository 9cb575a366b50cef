"""Recurrent language models with depth-gated LSTM cells, trained with exact BPTT."""

__version__ = "0.1.0"
