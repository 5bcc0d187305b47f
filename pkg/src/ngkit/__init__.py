"""ngkit: LTE control-channel telemetry toolkit.

Simulates a downlink control channel, blind-decodes it, turns the decoded
allocations into per-millisecond capacity, and drives congestion-control and
adaptive-bitrate experiments with that capacity.
"""

__version__ = "0.1.0"
