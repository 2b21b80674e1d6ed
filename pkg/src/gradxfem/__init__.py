"""Strain-gradient plasticity (CMSG) with XFEM crack-tip enrichment."""

__version__ = "0.1.0"
