"""Exception hierarchy shared by every module.

Each error carries the name of the module that raised it so the CLI can
print a structured ``error[origin]: message`` line.
"""

from __future__ import annotations


class GuiRLError(Exception):
    origin = "guirl"


class DomainError(GuiRLError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ParseError(GuiRLError, ValueError):
    origin = "action_schema"

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ConfigError(GuiRLError, ValueError):
    origin = "config"
