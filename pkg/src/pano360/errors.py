class DomainError(ValueError):
    """Input outside an operation's domain (bad shape, index, or value)."""


class FormatError(ValueError):
    """Malformed file: bad magic, version, or header."""
