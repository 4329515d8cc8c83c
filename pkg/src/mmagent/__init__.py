"""Post-training toolkit for multimodal web-search agents.

Synthesizes multi-hop browsing tasks, rolls out ReAct trajectories against
pluggable web tools, judges and filters them, and prepares SFT and GRPO
training data. Everything can run offline against a deterministic simulated
web (:mod:`mmagent.simweb`).
"""

__version__ = "0.1.0"
