"""Equivariance, augmentation and regularization dynamics lab."""

__version__ = "0.1.0"
__title__ = "eqaug"
__author__ = "Zeta labs"
__license__ = "MIT"
__copyright__ = "Copyright (c) 2022 Zeta labs"

from .commandtree import CommandTree
from .lab import Lab

__all__ = ("CommandTree", "Lab")
