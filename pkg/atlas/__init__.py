"""
atlas: deprivation, crime and vacancy analysis of census block groups.

"""
__version__ = "0.1.0"
