import logging
import traceback

from rest_framework import serializers

from .exceptions import ConfigError, PointflowError

logger = logging.getLogger(__name__)


def get_response(message="", result=None, status=False, status_code=0):
    return {
        "message": message,
        "result": result if result is not None else {},
        "status": status,
        "status_code": status_code,
    }


def get_error_message(error_dict):
    field = next(iter(error_dict))
    response = error_dict[field]
    if isinstance(response, dict):
        response = get_error_message(response)
    elif isinstance(response, list):
        response_message = response[0]
        if isinstance(response_message, dict):
            response = get_error_message(response_message)
        else:
            response = f"{field}: {response[0]}"
    return str(response)


def handle_exception(exc):
    """
    Map an exception raised by a command onto the response record.

    Validation errors coming out of a serializer are flattened to their first message and
    reported as configuration errors. Anything that is not a PointflowError is reported with
    exit code 1.
    """
    if isinstance(exc, serializers.ValidationError):
        detail = exc.detail
        if isinstance(detail, dict):
            message = get_error_message(detail)
        elif isinstance(detail, list) and detail:
            message = str(detail[0])
        else:
            message = str(detail)
        exc = ConfigError(message)

    if isinstance(exc, PointflowError):
        return get_response(
            message=str(exc),
            result={"error_class": exc.error_class},
            status_code=exc.exit_code,
        )

    logger.debug(traceback.format_exc())
    return get_response(
        message=f"Internal error, please check the run log. Details: {exc}",
        result={"error_class": type(exc).__name__},
        status_code=1,
    )


def format_error_line(response):
    """One machine-parsable line: ``error_class=<name> exit_code=<n> message=<text>``."""
    message = " ".join(str(response["message"]).split())
    return (
        f"error_class={response['result'].get('error_class', 'Error')} "
        f"exit_code={response['status_code']} message={message}"
    )
