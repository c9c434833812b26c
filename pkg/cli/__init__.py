"""
Command-line package
Experiment configuration, report aggregation and the run.py subcommands
"""
