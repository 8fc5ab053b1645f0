from typing import Any

from termcolor import colored


class RosaError(ValueError):
    """
    Root of every error raised by the laboratory.

    Arguments and Attributes:
        - ``message (str):`` Human readable description.
        - ``details (dict):`` Machine readable context (row index, path,
        epoch...). Serialized as-is by the CLI.
    """

    code = 'RosaError'

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {
            'error': self.code,
            'message': self.message,
            'details': self.details,
        }


class MissingColumn(RosaError):
    code = 'MissingColumn'


class MalformedRow(RosaError):
    code = 'MalformedRow'


class EmptyInput(RosaError):
    code = 'EmptyInput'


class IncompatibleRates(RosaError):
    code = 'IncompatibleRates'


class TooFewSegments(RosaError):
    code = 'TooFewSegments'


class InvalidSpec(RosaError):
    code = 'InvalidSpec'


class InvalidGeometry(RosaError):
    code = 'InvalidGeometry'


class HorizonMismatch(RosaError):
    code = 'HorizonMismatch'


class LengthMismatch(RosaError):
    code = 'LengthMismatch'


class AlignmentError(RosaError):
    code = 'AlignmentError'


class DegenerateBounds(RosaError):
    code = 'DegenerateBounds'


class WindowTooShort(RosaError):
    code = 'WindowTooShort'


class UnknownOffset(RosaError):
    code = 'UnknownOffset'


class EmptyDataset(RosaError):
    code = 'EmptyDataset'


class DivergedLoss(RosaError):
    code = 'DivergedLoss'


class NonFiniteLoss(RosaError):
    code = 'NonFiniteLoss'


class ParameterFileError(RosaError):
    code = 'ParameterFileError'


class NegativeDistance(RosaError):
    code = 'NegativeDistance'


class NonPositiveTime(RosaError):
    code = 'NonPositiveTime'


class InvalidAdvisoryInput(RosaError):
    code = 'InvalidAdvisoryInput'


class OffRoute(RosaError):
    code = 'OffRoute'


class BackgroundExhausted(RosaError):
    code = 'BackgroundExhausted'


class EmptyLog(RosaError):
    code = 'EmptyLog'


class EmptyBatch(RosaError):
    code = 'EmptyBatch'


class BatchIncomplete(RosaError):
    code = 'BatchIncomplete'


def _parameter_message(name: str, value: Any, rule: str) -> str:
    return colored(
        f'✗ THE "{name}" PARAMETER MUST BE {rule}.[** "{value}"({type(value)}):INVALID **]',
        'red',
    )


def validate_positive(value, name: str, error=InvalidSpec) -> float:
    """
    Checks whether the provided value is a finite number greater than zero.
    """
    if (
        isinstance(value, bool)
        or not isinstance(value, (int, float))
        or not value > 0
        or value == float('inf')
    ):
        raise error(
            _parameter_message(name, value, 'A POSITIVE NUMBER'),
            parameter=name,
        )
    return value


def validate_non_negative(value, name: str, error=InvalidSpec) -> float:
    """
    Checks whether the provided value is a finite number greater than or
    equal to zero.
    """
    if (
        isinstance(value, bool)
        or not isinstance(value, (int, float))
        or not value >= 0
        or value == float('inf')
    ):
        raise error(
            _parameter_message(name, value, 'A NON-NEGATIVE NUMBER'),
            parameter=name,
        )
    return value


def validate_count(value, name: str, minimum: int = 1, error=InvalidSpec) -> int:
    """
    Checks whether the provided value is of type ``int`` and not below
    ``minimum``.
    """
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise error(
            _parameter_message(name, value, f'AN INTEGER >= {minimum}'),
            parameter=name,
        )
    return value
