"""Mutual authentication, session keys, secure unicast and two-way ranging
for underwater assets over JANUS baseline packets."""

__version__ = "0.1.0"
