"""Exception hierarchy shared by all subpackages."""


class TPAVCError(Exception):
    pass


class DimensionError(TPAVCError, ValueError):
    """Array shapes do not conform."""


class NumericError(TPAVCError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class TopologyError(TPAVCError, ValueError):
    """Feeder description is not a valid radial network."""


class PowerFlowDivergence(TPAVCError, RuntimeError):
    """Voltage collapsed during the sweep iteration."""


class CapacityError(TPAVCError, ValueError):
    """PV active output exceeds the inverter rating."""


class LifecycleError(TPAVCError, RuntimeError):
    """Environment used outside its episode lifecycle."""


class ProfileError(TPAVCError, ValueError):
    """Profile data is malformed or out of range."""


class ConfigError(TPAVCError, ValueError):
    """Invalid or incomplete configuration."""


class CompatibilityError(TPAVCError, ValueError):
    """Checkpoint contents do not fit the requested model."""


class SamplingError(TPAVCError, ValueError):
    """Replay buffer cannot serve the requested batch."""


class HorizonError(TPAVCError, IndexError):
    """A requested window runs past the end of the profile data."""
