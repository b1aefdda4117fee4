"""
Controllers package for the SGP registration toolkit.
"""
