"""RIS-assisted XL-MIMO cascaded channel simulation, classical estimators and a patch-trained UNet3+ denoiser."""

__version__ = "0.1.0"
