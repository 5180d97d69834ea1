"""loopgen: one-bar music-loop generation on mel-spectrograms.

A small adversarial training framework whose discriminators operate on
frozen, randomly projected feature spaces, plus the evaluation metrics and
synthetic corpus needed to exercise it end to end on a single machine.
"""

__version__ = "0.1.0"
