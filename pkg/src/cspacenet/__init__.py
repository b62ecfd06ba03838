"""Configuration-space construction for a planar dual-arm robot, with a
convolutional encoder-decoder that predicts C-space images from workspace
images."""

__version__ = "0.1.0"
