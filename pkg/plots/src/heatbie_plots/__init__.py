"""Figure generation for heatbie CSV artifacts."""
