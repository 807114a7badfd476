"""
Execution modules for Hambit
"""
