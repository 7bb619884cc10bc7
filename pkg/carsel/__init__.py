"""
carsel - shrinkage CAR/CAT score feature selection for d >> n regression
"""

__version__ = "0.1.0"
TOOL_NAME = "carsel"
