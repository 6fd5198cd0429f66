from __future__ import annotations

import argparse
import logging
import os
import threading
import types
import typing
from inspect import getdoc
from pathlib import Path
from types import NoneType
from typing import Any
from typing import get_args
from typing import get_origin

import tomlkit
from pydantic import BaseModel
from pydantic import ValidationError

from gaitscale.config.model import SettingsModel
from gaitscale.const import COMMANDS
from gaitscale.const import ENV_PREFIX
from gaitscale.errors import ConfigInvalid

log = logging.getLogger(__name__)

_SCALAR_TYPES = (bool, int, float, str)


class MagicDefault:
    pass


def _is_settings_group(field_detail) -> bool:
    factory = field_detail.default_factory
    return isinstance(factory, type) and issubclass(factory, BaseModel)


def _scalar_args(type_hint: Any) -> list[Any] | None:
    """The scalar member types of a hint, or None for lists, dicts and models."""
    origin = get_origin(type_hint)
    if origin is None:
        return [type_hint] if type_hint in _SCALAR_TYPES else None
    if origin in (typing.Union, types.UnionType):
        args = [arg for arg in get_args(type_hint) if arg is not NoneType]
        if all(arg in _SCALAR_TYPES for arg in args):
            return args
    return None


def iter_cli_fields(settings_model: type[BaseModel] = SettingsModel):
    """Yield ``(group, field_name, type_hint, field_detail)`` for every scalar field."""
    seen: set[str] = set()
    for group_name, group_detail in settings_model.model_fields.items():
        if not _is_settings_group(group_detail):
            continue
        group_model = group_detail.default_factory
        hints = typing.get_type_hints(group_model)
        for field_name, field_detail in group_model.model_fields.items():
            if _scalar_args(hints[field_name]) is None:
                continue
            if field_name in seen:
                log.critical(f"duplicate field name: {field_name}")
                raise ValueError(f"duplicate field name: {field_name}")
            seen.add(field_name)
            yield group_name, field_name, hints[field_name], field_detail


def build_args_parser(
    parser: argparse.ArgumentParser | None = None,
    settings_model: type[BaseModel] = SettingsModel,
) -> argparse.ArgumentParser:
    if parser is None:
        parser = argparse.ArgumentParser(
            prog="gaitscale",
            description="Foot-placement control timescales from locomotion data",
        )
    parser.add_argument(
        "command",
        nargs="?",
        default="all",
        choices=COMMANDS,
        help="Pipeline stage to run (default: all)",
    )
    groups: dict[str, argparse._ArgumentGroup] = {}
    for group_name, field_name, type_hint, field_detail in iter_cli_fields(settings_model):
        if group_name not in groups:
            group_model = settings_model.model_fields[group_name].default_factory
            groups[group_name] = parser.add_argument_group(
                title=group_model.__name__, description=getdoc(group_model)
            )
        group = groups[group_name]
        args_name = field_name.replace("_", "-").lower()
        for arg in _scalar_args(type_hint):
            if arg is bool:
                if field_detail.default is False:
                    group.add_argument(
                        f"--{args_name}",
                        dest=field_name,
                        action="store_true",
                        default=MagicDefault,
                        help=field_detail.description,
                    )
                else:
                    group.add_argument(
                        f"--no-{args_name}",
                        dest=field_name,
                        action="store_false",
                        default=MagicDefault,
                        help=f"Disable: {field_detail.description}",
                    )
            else:
                group.add_argument(
                    f"--{args_name}",
                    dest=field_name,
                    type=arg,
                    default=MagicDefault,
                    help=field_detail.description,
                )
            break
    return parser


class ConfigManager:
    """Singleton configuration manager"""

    _instance: ConfigManager | None = None
    _settings: SettingsModel | None = None
    _command: str = "all"
    _config_file_lock = threading.Lock()

    def __new__(cls) -> ConfigManager:
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def _read_toml_file(self, file_path: Path) -> dict:
        """Read and parse a TOML file

        Args:
            file_path: Path to the TOML file

        Returns:
            Parsed TOML content as dictionary
        """
        try:
            with self._config_file_lock:
                with file_path.open(encoding="utf-8") as f:
                    content = tomlkit.load(f).unwrap()
        except FileNotFoundError as e:
            raise ConfigInvalid(f"config file does not exist: {file_path}") from e
        except Exception as e:
            raise ConfigInvalid(f"cannot parse config file {file_path}: {e}") from e
        return self._process_toml_content(content)

    def _process_toml_content(self, content):
        """Convert "null" strings back to None, recursively."""
        if isinstance(content, dict):
            return {k: self._process_toml_content(v) for k, v in content.items()}
        if isinstance(content, list):
            return [self._process_toml_content(v) for v in content]
        if isinstance(content, str) and content == "null":
            return None
        return content

    def _write_toml_file(self, file_path: Path, content: dict) -> None:
        """Write content to a TOML file

        Args:
            file_path: Path to write the TOML file
            content: Nested content as dictionary
        """

        def convert_none_to_null(value):
            if value is None:
                return "null"
            if isinstance(value, dict):
                return {k: convert_none_to_null(v) for k, v in value.items()}
            if isinstance(value, list):
                return [convert_none_to_null(v) for v in value]
            return value

        content = convert_none_to_null(content)
        try:
            with self._config_file_lock:
                with file_path.open("w", encoding="utf-8") as f:
                    tomlkit.dump(content, f)
        except Exception as e:
            log.warning(f"Error writing config file {file_path}: {e}")
            raise

    def parse_env_vars(self, environ: typing.Mapping[str, str] | None = None) -> dict:
        if environ is None:
            environ = os.environ
        return self.parse_dict_vars(dict(environ), prefix=ENV_PREFIX)

    def parse_dict_vars(self, dict_vars: dict, prefix: str = "") -> dict:
        """Parse flat variables into a nested settings dictionary

        Args:
            dict_vars: Flat name -> value mapping (CLI namespace or environment)
            prefix: Name prefix, e.g. ``GAITSCALE_`` for environment variables

        Returns:
            Dictionary keyed by settings group
        """
        dict_vars = {k.replace("-", "_").upper(): v for k, v in dict_vars.items()}
        settings: dict[str, dict] = {}
        for group_name, field_name, type_hint, _ in iter_cli_fields():
            name = f"{prefix}{field_name.upper()}"
            if name not in dict_vars:
                continue
            value = dict_vars[name]
            try:
                converted = self._convert_env_value(value, type_hint, get_origin(type_hint), get_args(type_hint))
            except (ValueError, TypeError) as e:
                raise ConfigInvalid(f"cannot convert {name}={value!r}: {e}") from e
            settings.setdefault(group_name, {})[field_name] = converted
        log.debug(f"parsed settings ({prefix or 'cli'}): {settings}")
        return settings

    def _convert_env_value(
        self, value: Any, type_hint: Any, origin_type: Any, type_args: tuple
    ) -> Any:
        """
        Convert a string value to the field type

        Args:
            value: Raw value (string from the environment, typed from argparse)
            type_hint: The type hint for the field
            origin_type: The origin type of the hint
            type_args: Type arguments for union hints

        Returns:
            Converted value matching the expected type
        """
        if not isinstance(value, str):
            return value
        if origin_type in (typing.Union, types.UnionType):
            for arg in type_args:
                if arg is NoneType and value.lower() in ("none", "null", ""):
                    return None
            for arg in type_args:
                if arg is NoneType:
                    continue
                try:
                    return self._convert_env_value(value, arg, get_origin(arg), get_args(arg))
                except (ValueError, TypeError):
                    continue
            raise ValueError(f"Could not convert '{value}' to any of the types: {type_args}")
        if type_hint is bool:
            return value.lower() in ("true", "1", "yes", "y", "on")
        if type_hint is int:
            return int(value)
        if type_hint is float:
            return float(value)
        if type_hint is str:
            return value
        return type_hint(value)

    def _deep_merge(self, target: dict, source: dict) -> dict:
        """
        Deep merge two dictionaries; lists from a higher-priority source replace.

        Args:
            target: Target dictionary to merge into
            source: Source dictionary to merge from

        Returns:
            Merged dictionary
        """
        for key, value in source.items():
            if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                self._deep_merge(target[key], value)
            else:
                target[key] = value
        return target

    def merge_settings(self, config_dicts: list[dict]) -> dict:
        """
        Merge multiple configuration dictionaries based on priority

        Args:
            config_dicts: List of config dictionaries, ordered by priority (highest first)

        Returns:
            Merged configuration dictionary
        """
        result: dict = {}
        for config in reversed(config_dicts):
            self._deep_merge(result, config)
        return result

    def initialize_config(
        self,
        argv: list[str] | None = None,
        environ: typing.Mapping[str, str] | None = None,
    ) -> tuple[str, SettingsModel]:
        """Initialize configuration from all sources: CLI > environment > TOML > defaults."""
        parser = build_args_parser()
        args = parser.parse_args(argv)
        cli_args = {k: v for k, v in vars(args).items() if v is not MagicDefault}
        self._command = cli_args.pop("command")
        cli_parsed_args = self.parse_dict_vars(cli_args)
        env_vars = self.parse_env_vars(environ)

        merged_args = self.merge_settings([cli_parsed_args, env_vars])
        config_file = merged_args.get("basic", {}).get("config")
        if config_file:
            user_config = self._read_toml_file(Path(config_file))
            merged_args = self.merge_settings([merged_args, user_config])

        self._settings = self._build_model_from_args(SettingsModel, merged_args)
        self._settings.validate_settings()
        log.debug(f"Initialized settings: {self._settings.model_dump_json()}")
        return self._command, self._settings

    def write_config_snapshot(self, settings: SettingsModel, path: Path) -> None:
        """Write the effective configuration so a run can be reproduced from it."""
        self._write_toml_file(path, settings.model_dump(mode="json"))

    def _build_model_from_args(self, model_class: type[BaseModel], args_dict: dict) -> BaseModel:
        try:
            return model_class(**args_dict)
        except ValidationError as e:
            raise ConfigInvalid(f"invalid configuration: {e}") from e

    @property
    def settings(self) -> SettingsModel:
        """Get current settings"""
        if self._settings is None:
            raise RuntimeError("Settings not initialized")
        return self._settings

    @property
    def command(self) -> str:
        return self._command
