"""E(3)-equivariant surrogate for transient wall shear stress on vessel surfaces."""

__version__ = "0.1.0"
