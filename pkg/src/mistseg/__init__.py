"""mistseg: weakly-supervised RGB-D salient object detection at desk scale."""

__version__ = "0.1.0"
