"""Dynamic task allocation with task experience, exclusion and an output gate
for multi-robot cooperative transport."""

__version__ = "0.1.0"
