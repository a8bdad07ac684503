"""Information-separation, global-focal adversarial transfer for noisy 1-D fault signals."""

__version__ = "0.1.0"
