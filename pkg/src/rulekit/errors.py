"""Exception hierarchy. Each class carries the CLI exit code for its stage."""


class RulekitError(Exception):
    """Base for all rulekit errors."""

    exit_code = 1


class ConfigError(RulekitError):
    exit_code = 2


class DataError(RulekitError):
    exit_code = 3


class TripleParseError(DataError):
    """Malformed triple line; message carries file path and line number."""


class GraphFormatError(DataError):
    """Input violates a reserved-name or structural constraint."""


class RuleGrammarError(DataError):
    """Rule line does not match the rule grammar."""


class RuleResolutionError(DataError):
    """Rule references a relation name unknown to the graph."""


class MiningError(RulekitError):
    exit_code = 4


class ScoringError(RulekitError):
    exit_code = 5


class TrainingError(RulekitError):
    exit_code = 6


class EvaluationError(RulekitError):
    exit_code = 7
