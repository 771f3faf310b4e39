"""Error taxonomy shared by all modules.

The CLI maps these onto exit codes: ConfigError -> 1, ParseError -> 2,
GateFailure -> 3. Plain ValueError is used for invalid arguments to pure
math routines.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad enum value, inconsistent sizes, missing inputs."""


class ParseError(ValueError):
    """Malformed serialized data. Messages carry byte offsets / block coordinates."""


class DegeneratePoseError(ValueError):
    """Rotation too close to gimbal lock to recover Euler angles."""


class GateFailure(AssertionError):
    """A gated directional check on a committed configuration did not hold."""
