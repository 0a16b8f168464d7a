"""Two AM2 chemostats in series with distinct removal rates: steady states,
stability, simulation and operating diagrams."""

__version__ = "0.1.0"
