"""Predict-then-decide turn taking: should the agent wait for more user input or answer now?"""
__version__ = "0.1.0"
