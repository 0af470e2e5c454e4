"""Category-wise sparse (SCA) and dense (DCA) attacks on anchor-free keypoint detectors."""

__version__ = "0.1.0"
