"""Quality-assurance toolkit for digital pathology slides.

Tiles pyramidal slide containers, classifies tiles into artifact classes
vs negative, and triages slides for human review.
"""

__version__ = "0.1.0"
