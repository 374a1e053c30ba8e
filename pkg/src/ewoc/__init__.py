"""Escalation with overdose control: Bayesian adaptive dose finding.

Subpackages: dose-toxicity models, grid posteriors with an importance
sampling oracle, the sequential trial state machine, a simulation harness
for operating characteristics, and a file-backed conduct service with an
HTTP API and CLI.
"""

__version__ = "0.1.0"
