import enum


class StrategyName(str, enum.Enum):
    """Flight-configuration strategy enumeration"""
    OPTIMIZED = "optimized"
    EXPERT = "expert"
    RANDOM = "random"
    FIXED = "fixed"


class OracleType(str, enum.Enum):
    """Attenuation oracle enumeration"""
    FIELD = "field"
    SURROGATE = "surrogate"


class FieldSource(str, enum.Enum):
    """Where true turbulence fields come from"""
    GENERATOR = "generator"
    IMPORT = "import"


class Activation(str, enum.Enum):
    TANH = "tanh"
    SILU = "silu"


class OptimizerKind(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"
