"""svlab: a desk-scale speaker verification laboratory.

Embedding extractors (TDNN and ResNet families with squeeze-excitation
variants and frequency positional encodings), trained with additive angular
margin losses on a custom reverse-mode autodiff engine, plus the full
scoring, calibration, fusion and evaluation chain — all runnable end to end
on a deterministic synthetic speaker corpus.
"""

__version__ = "0.1.0"
