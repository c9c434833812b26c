"""
Ensemble adversarial debiasing against hypothesis-only bias

Modules:
    autodiff  reverse-mode differentiation with gradient reversal
    nn        encoders and classifier heads
    data      synthetic and JSON-lines NLI corpora
    train     the minimax objective, training loop and checkpoints
    probe     relearning the bias from a frozen encoder
    stats     bootstrap and Mann-Whitney significance tests
"""

__version__ = "1.0.0"
