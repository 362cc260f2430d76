"""Refracted vs Lambertian feature distinguisher for 4D light fields."""
__version__ = '0.3.0'
