"""Finite-blocklength converse bounds via LP relaxation of joint source-channel coding."""

__version__ = "0.1.0"
