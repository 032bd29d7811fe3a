"""Симулятор децентрализованной медианной регрессии (deSMR)"""

__version__ = "0.1.0"
