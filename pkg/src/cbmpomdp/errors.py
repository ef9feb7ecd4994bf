"""Error families shared across the package.

DataError covers bad inputs (malformed files, shape mismatches, unknown
action ids). NumericalError covers failures of the algorithms themselves
(zero-probability observations, diverging likelihood). The CLI maps the
former to exit code 2 and the latter to exit code 3.
"""


class DataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass
