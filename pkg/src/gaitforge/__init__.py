"""Insole + video gait analysis: streams, synchronization, recurrent models, KAM estimation.

Subpackages/modules:

- ``core``     domain types, subject-level splitting, %BW*ht normalization
- ``formats``  binary insole files, pose/mocap CSV, dataset manifest
- ``dsp``      filtering, resampling, synchronization, stride segmentation
- ``nn``       GRU/LSTM/dense layers with manual backpropagation, Adam, losses
- ``pipeline`` window assembly, classifier ensemble, per-activity KAM regression
- ``syngen``   deterministic synthetic gait generator with a closed-form KAM oracle
- ``cli``      command-line entry point (``gaitforge``)
"""

__version__ = "0.1.0"
