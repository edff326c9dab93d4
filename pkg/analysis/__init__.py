"""Effect aggregation, interpretation and balance diagnostics."""
