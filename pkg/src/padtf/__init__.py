"""padtf: compile constant-depth Boolean circuits into exact fixed-point
Transformer models that compute over pause tokens, run them, and prove
bit-exact equivalence against brute-force circuit evaluation."""

from . import circuit, compiler, encoder, fixedpoint, verify, vm

__all__ = ["circuit", "compiler", "encoder", "fixedpoint", "verify", "vm"]
