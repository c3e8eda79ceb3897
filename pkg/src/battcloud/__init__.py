"""Battery cloud analytics: telemetry, SOC, SOH and thermal anomaly detection."""

__version__ = "0.1.0"
