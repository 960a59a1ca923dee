# Test package for CeleryApp
