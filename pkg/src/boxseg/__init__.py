"""Box-supervised class-agnostic segmentation on a from-scratch autodiff core."""

__version__ = "0.1.0"
