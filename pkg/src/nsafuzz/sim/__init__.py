"""Desk-scale simulator of the NSA attach flow."""

from .behaviors import BehaviorRegistry, CommandDefect, ProfileError, seeded_behavior_table
from .codec import (
    DecodeError,
    WireMessage,
    decode_message,
    decode_rrc_connection_request,
    encode_message,
    encode_rrc_connection_request,
)
from .session import Action, AdversaryScript, ScriptError, SessionPhase, Transcript, run_session

__all__ = [
    "Action", "AdversaryScript", "BehaviorRegistry", "CommandDefect", "DecodeError", "ProfileError",
    "ScriptError", "SessionPhase", "Transcript", "WireMessage", "decode_message",
    "decode_rrc_connection_request", "encode_message", "encode_rrc_connection_request",
    "run_session", "seeded_behavior_table",
]
