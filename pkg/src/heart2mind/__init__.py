"""Heart2Mind: RRI-based psychiatric disorder screening with contestation.

Subpackages follow the pipeline: signal_store (session capture/replay),
windowing (datasets), autodiff + mstft (model), trainer (cross-validation),
sae (explanation discrepancies), hrv (metrics), contest (LLM challenge
protocol), api/cli (service front door).
"""

__version__ = "0.1.0"
