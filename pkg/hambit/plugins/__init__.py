"""
Experiment plugins: one per CLI subcommand
"""
