"""Numerical toolkit for Diederich-Fornaess exponents, Levi-form geometry and
complex Monge-Ampere bookkeeping on domains given by explicit defining functions."""

__version__ = "0.1.0"
