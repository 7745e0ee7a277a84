"""Affine Hermitian-Yang-Mills heat flow on flat Higgs bundles over model affine charts."""

__version__ = "0.1.0"
