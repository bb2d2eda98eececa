"""Image-to-spoken-word waveform translation at desk scale.

Subpackages cover the numeric core (:mod:`img2wav.tensor`), the model
(:mod:`img2wav.model`), training objectives (:mod:`img2wav.losses`), the
two-phase trainer (:mod:`img2wav.training`), a deterministic synthetic
paired dataset (:mod:`img2wav.dataset`), evaluation metrics
(:mod:`img2wav.metrics`), and a batch CLI (:mod:`img2wav.cli`).
"""

__version__ = "0.1.0"
