"""stitchguard: deepfake-audio detection with LFCC features, a ResNet-34
embedding network, temporal pooling, and stitched inference."""

__version__ = "0.1.0"
