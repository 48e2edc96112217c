"""Neural correction of Coriolis mass-flow readings under three-phase flow."""

__version__ = "0.1.0"
