"""Trans-rectal ultrasound prostate biopsy trainer: volume slicing engine,
pivot-constrained probe kinematics, 12-zone protocol scoring, graded
exercises, persistence, and a streaming service."""

__version__ = "0.1.0"
