"""Respiratory-cycle classification toolkit.

Cycle-annotated lung-sound recordings go in; log-mel/MFCC feature images,
a frozen convolutional extractor with a trained softmax head, and
patient-disjoint cross-validation reports come out.
"""

from .dataset import ClassLabel, CycleAnnotation, LabeledCycle, AudioClip, RecordingMeta

__all__ = ["ClassLabel", "CycleAnnotation", "LabeledCycle", "AudioClip", "RecordingMeta"]
__version__ = "0.1.0"
