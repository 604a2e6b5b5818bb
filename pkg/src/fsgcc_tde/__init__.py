"""Time delay estimation with frequency-sliding GCC and a U-Net denoiser."""

__version__ = "0.1.0"
