"""Configuration, ensembles, sweeps, acceptance suite, reports and the command line."""
