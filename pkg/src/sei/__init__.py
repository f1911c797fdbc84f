"""Scale-equivariant self-supervised imaging for deblurring and super-resolution."""

__version__ = "0.1.0"
