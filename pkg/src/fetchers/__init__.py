"""
Fetchers for public benchmark datasets
"""
