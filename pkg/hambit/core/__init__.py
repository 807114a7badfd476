"""
Core numerical modules for the Hambit toolkit
"""
