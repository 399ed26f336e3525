"""Sensitivity-guided selective sealing of tensor-train network parameters.

The package scores tensor-train cores by how much a black-box attacker
gains from seeing them, calibrates how much total sensitivity must stay
hidden, picks a minimum-byte encryption set for that budget, seals the
selected cores with authenticated AES, and stress-tests the result with
substitute-model transfer attacks.
"""

__version__ = "0.1.0"
