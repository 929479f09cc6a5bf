"""Fixed label space and actor groups shared by every module."""

LABELS = ("V", "B", "E", "P", "R", "S")

LABEL_NAMES = {
    "V": "Violence against civilians",
    "B": "Battles",
    "E": "Explosions/Remote violence",
    "P": "Protests",
    "R": "Riots",
    "S": "Strategic developments",
}

# ACLED exports carry the long event_type name; accept both forms on ingest.
_NAME_TO_CODE = {name.lower(): code for code, name in LABEL_NAMES.items()}
_NAME_TO_CODE["explosions"] = "E"
_NAME_TO_CODE["remote violence"] = "E"

STATE = "State"
NON_STATE = "NonState"
OTHER = "Other"
ACTOR_GROUPS = (STATE, NON_STATE, OTHER)


def to_code(value: str) -> str | None:
    """Map a label code or an ACLED event_type name to its code, else None."""
    if value is None:
        return None
    v = value.strip()
    if v in LABELS:
        return v
    return _NAME_TO_CODE.get(v.lower())
