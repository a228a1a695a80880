"""Error types with machine-parsable categories (mirrors the consumer's
convention: the CLI prints "error:<category>: message")."""


class ExportError(Exception):
    category = "error"


class ConfigError(ExportError):
    category = "config"


class DataError(ExportError):
    category = "data"
