"""Jinja rendering with strict undefined handling."""

from __future__ import annotations

from typing import Any

import jinja2

from .errors import TemplateError

_ENV = jinja2.Environment(
    undefined=jinja2.StrictUndefined,
    keep_trailing_newline=True,
    autoescape=False,
)


def render(source: str, name: str = "<template>", /, **context: Any) -> str:
    try:
        return _ENV.from_string(source).render(**context)
    except jinja2.TemplateError as exc:
        raise TemplateError(name, str(exc)) from exc


def check_syntax(source: str, name: str = "<template>") -> None:
    try:
        _ENV.parse(source)
    except jinja2.TemplateSyntaxError as exc:
        raise TemplateError(name, f"line {exc.lineno}: {exc.message}") from exc
