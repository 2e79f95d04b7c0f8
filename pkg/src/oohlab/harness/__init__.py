"""Experiment configuration, pipelines and the command-line front end."""
