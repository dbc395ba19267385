# Node names as CSV column headers
from __future__ import annotations

from emoji import demojize
from unidecode import unidecode

from ..base import NodeId
from ..types import Final


COLUMN_NAME_MAX: Final[int] = 64
PLACEHOLDER: Final[str] = 'node'
VALID_CHARS: Final[set[str]] = {
  *'abcdefghijklmnopqrstuvwxyz',
  *'ABCDEFGHIJKLMNOPQRSTUVWXYZ',
  *'0123456789',
  '_', '-', '.',
}


def get_node_label(name: str, node_id: NodeId = '') -> str:
  # emoji become their names, the rest of the text is transliterated to ascii
  label = unidecode(demojize(name, delimiters=('_', '_'))).strip().replace(' ', '_')

  # brackets, commas and quotes would break header parsing
  label = ''.join(
    char
    for char in label
    if char in VALID_CHARS
  )

  if label:
    return label[:COLUMN_NAME_MAX]

  # if there is no name left after normalizing, fall back to the id
  if node_id and node_id != name:
    return get_node_label(node_id)

  return PLACEHOLDER


def get_column_name(name: str, index: int, prefix: str = '') -> str:
  return f'{prefix}{get_node_label(name)}[{index}]'


def parse_column_name(column: str) -> tuple[str, str, int]:
  """Split `prefix:name[k]` (prefix optional) into its parts."""
  prefix, sep, rest = column.rpartition(':')
  head = prefix + sep
  name, _, index = rest.partition('[')

  if not index.endswith(']') or not index[:-1].isdigit():
    return head, rest, 0

  return head, name, int(index[:-1])
