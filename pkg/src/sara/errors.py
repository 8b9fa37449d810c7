"""Exception taxonomy shared by every sara module."""

from __future__ import annotations


class SaraError(Exception):
    """Base class for every error raised by this package."""


# --- scene graph ---

class UnknownNode(SaraError):
    pass


class UnknownParent(SaraError):
    pass


class DuplicateNodeId(SaraError):
    pass


class CannotDetachRoot(SaraError):
    pass


class UnknownPropertyPath(SaraError):
    pass


class ValueShapeMismatch(SaraError):
    pass


class MalformedSnapshot(SaraError):
    pass


# --- event codec ---

class MalformedJson(SaraError):
    pass


class UnknownEventType(SaraError):
    pass


class PayloadShapeMismatch(SaraError):
    pass


class UnsupportedFormat(SaraError):
    pass


class MalformedState(SaraError):
    pass


class UdpPayloadPolicy(SaraError):
    pass


# --- interpreters ---

class UnknownGesture(SaraError):
    pass


# --- conflict manager ---

class MergeShapeMismatch(SaraError):
    pass


# --- users service ---

class DuplicateName(SaraError):
    pass


class UnknownUser(SaraError):
    pass


class BadToken(SaraError):
    pass


class UserStillLoggedIn(SaraError):
    pass


# --- communication service ---

class PortInUse(SaraError):
    pass


class BrokerUnreachable(SaraError):
    pass


class ProtocolViolation(SaraError):
    pass


class UnknownSession(SaraError):
    pass


class NotInSession(SaraError):
    pass


# --- client sdk ---

class NotConnected(SaraError):
    pass


# --- configuration / sim harness ---

class ConfigError(SaraError):
    pass


class ScenarioParseError(SaraError):
    pass


class ExpectationFailed(SaraError):
    pass
