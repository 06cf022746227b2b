"""Canonical JSON text encoding of hri_model messages.

Keys are sorted, separators carry no whitespace and floats are written
with 9 significant digits, so equal bytes imply equal values.
"""
import json
import math
from enum import Enum
from typing import Annotated, Any, List, Optional, Tuple, Type, Union, get_args, get_origin

import numpy as np
from pydantic import BaseModel

from .exceptions import CodecError, MessageValidationError, ParseError, SchemaError
from .hri_model import SIGNIFICANT_DIGITS, MessageModel, resolve_schema, validate


def format_float(value: float) -> str:
    if not math.isfinite(value):
        raise CodecError(f"non-finite float {value!r} has no canonical form")
    text = format(value, f".{SIGNIFICANT_DIGITS}g")
    if not any(marker in text for marker in ".e"):
        text += ".0"
    return text


def canonical_dumps(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return canonical_dumps(value.value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, BaseModel):
        return canonical_dumps(value.model_dump(mode="json"))
    if isinstance(value, dict):
        items = sorted((str(key), item) for key, item in value.items())
        return "{" + ",".join(f"{json.dumps(key, ensure_ascii=False)}:{canonical_dumps(item)}"
                              for key, item in items) + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(canonical_dumps(item) for item in value) + "]"
    raise CodecError(f"cannot encode value of type {type(value).__name__}")


def encode(message: MessageModel) -> str:
    return canonical_dumps(message.model_dump(mode="json"))


def loads(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.pos, exc.lineno, exc.colno) from None


def _nested_model(annotation: Any) -> Optional[Tuple[Type[MessageModel], bool]]:
    """The message type carried by a field, and whether it is a list of them."""
    if isinstance(annotation, type) and issubclass(annotation, MessageModel):
        return annotation, False
    origin, args = get_origin(annotation), get_args(annotation)
    if origin is Annotated:
        return _nested_model(args[0])
    if origin is Union:
        members = [arg for arg in args if arg is not type(None)]
        return _nested_model(members[0]) if len(members) == 1 else None
    if origin in (list, tuple) and args:
        inner = _nested_model(args[0])
        return (inner[0], True) if inner and not inner[1] else None
    return None


def _shape_mismatch(data: dict, cls: Type[MessageModel], prefix: str = "") -> Tuple[List[str], List[str]]:
    missing = [prefix + name for name in cls.model_fields if name not in data]
    extra = [prefix + name for name in data if name not in cls.model_fields]
    for name, info in cls.model_fields.items():
        nested = _nested_model(info.annotation)
        if nested is None or data.get(name) is None:
            continue
        model, many = nested
        value = data[name]
        if many:
            items = [(f"{name}[{index}]", item) for index, item in enumerate(value)] if isinstance(value, list) else []
        else:
            items = [(name, value)]
        for path, item in items:
            if isinstance(item, dict):
                inner_missing, inner_extra = _shape_mismatch(item, model, f"{prefix}{path}.")
                missing += inner_missing
                extra += inner_extra
    return missing, extra


def from_payload(data: Any, schema: Union[str, Type[MessageModel]]) -> MessageModel:
    cls = resolve_schema(schema)
    if not isinstance(data, dict):
        raise SchemaError(cls.__name__, list(cls.model_fields), [])
    missing, extra = _shape_mismatch(data, cls)
    if missing or extra:
        raise SchemaError(cls.__name__, missing, extra)
    report = validate(data, cls)
    if not report.ok:
        raise MessageValidationError(cls.__name__, report)
    return cls.model_validate(data)


def decode(text: str, schema: Union[str, Type[MessageModel]]) -> MessageModel:
    return from_payload(loads(text), schema)
