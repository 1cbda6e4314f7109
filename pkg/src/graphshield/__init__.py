"""Autonomous incident-response training range.

A two-player network defense game, a relational message-passing defender
trained with clipped-surrogate policy optimization on a from-scratch
autodiff core, and an evaluation harness for zero-shot transfer across
network variants.
"""

__version__ = "0.1.0"
