"""Domain exceptions.

Bad input raises a ValueError subclass; engine or solver state problems raise a
RuntimeError subclass.
"""


class EmptyScan(ValueError):
    pass


class WindowTooLarge(ValueError):
    pass


class MalformedPacket(ValueError):
    pass


class CarmenParseError(ValueError):
    pass


class RelationsParseError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ReuseWithoutLoad(RuntimeError):
    pass


class NotConnected(RuntimeError):
    pass


class RankDeficient(RuntimeError):
    pass


class NoResolvableRelations(RuntimeError):
    pass


def reject_unknown_keys(section: str, data: dict, allowed) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"Unknown keys in [{section}]: {', '.join(unknown)}")
