#!/usr/bin/env python3
"""
Exception hierarchy shared by the library and the command-line driver.
Each class carries the process exit code the CLI returns for it.
"""

from typing import Optional


class CarselError(Exception):
    """Base class for all carsel errors"""
    exit_code = 1


class UsageError(CarselError):
    """Invalid flags or configuration values"""
    exit_code = 1


class DataError(CarselError):
    """File, parse or validation error in user-supplied data"""
    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[str] = None):
        self.path = path
        self.line = line
        self.column = column
        super().__init__(message)

    def __str__(self) -> str:
        message = super().__str__()
        location = []
        if self.path:
            location.append(str(self.path))
        if self.line is not None:
            location.append(f"line {self.line}")
        if self.column is not None:
            location.append(f"column {self.column}")
        if location:
            return f"{message} ({', '.join(location)})"
        return message


class GenotypeDataError(DataError):
    """Genotype or phenotype content problem"""


class NumericalError(CarselError):
    """Rank deficiency, zero variance or otherwise degenerate numerics"""
    exit_code = 3
