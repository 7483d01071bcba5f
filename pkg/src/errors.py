"""
Exception hierarchy shared by the library and the command line
"""


class PairFairError(Exception):
    """Base class; carries the process exit code the CLI should use"""
    exit_code = 5


class ConfigError(PairFairError):
    exit_code = 2


class DataError(PairFairError):
    exit_code = 3


class InfeasibleError(PairFairError):
    """The shrinking LP has no feasible mixture of snapshots"""
    exit_code = 4


class SolverError(PairFairError):
    exit_code = 5
