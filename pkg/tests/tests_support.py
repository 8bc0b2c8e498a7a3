"""Shared state between the acceptance module and the terminal summary hook."""

ACCEPTANCE_LINES = []
