"""Net-ecosystem-exchange case study: respiration ODE, flux data, gap filling."""
