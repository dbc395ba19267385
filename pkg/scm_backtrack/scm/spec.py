from __future__ import annotations

import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Optional

from ..base import Paths
from ..errors import IoFailure, ModelNotFound, UnknownMechanismKind
from ..mechanisms import mechanism_from_dict
from .graph import CausalGraph, Node
from .model import Scm


NODES_KEY: str = 'nodes'
MECHANISM_KEY: str = 'mechanism'


def scm_to_dict(scm: Scm) -> dict[str, Any]:
  return {
    NODES_KEY: [
      {
        'id': node.id,
        'name': node.name,
        'dim': node.dim,
        'parents': list(node.parents),
        MECHANISM_KEY: scm.mechanisms[node.id].to_dict(),
      }
      for node in scm.graph.nodes
    ],
  }


def scm_from_dict(data: Mapping[str, Any]) -> Scm:
  try:
    entries = data[NODES_KEY]
    nodes = [
      Node(
        id=str(entry['id']),
        name=entry.get('name', ''),
        dim=int(entry.get('dim', 1)),
        parents=tuple(str(parent) for parent in entry.get('parents', ())),
      )
      for entry in entries
    ]
    mechanisms = {
      str(entry['id']): mechanism_from_dict(entry[MECHANISM_KEY])
      for entry in entries
    }

  except UnknownMechanismKind:
    raise

  except (KeyError, TypeError) as e:
    raise IoFailure(f'Malformed SCM specification: missing or invalid field {e}') from e

  return Scm(CausalGraph(nodes), mechanisms)


def save_scm(scm: Scm, path: Paths, extra: Optional[Mapping[str, Any]] = None):
  data = scm_to_dict(scm)

  if extra:
    data.update(extra)

  try:
    with open(path, 'w') as file:
      json.dump(data, file, indent=2)

  except OSError as e:
    raise IoFailure(f'Could not write SCM to {path}: {e}') from e

  logging.info(f'Saved SCM with {len(scm.graph)} nodes to {path}')


def read_document(path: Paths) -> dict[str, Any]:
  path = Path(path)

  if not path.is_file():
    raise ModelNotFound(f'No model file at {path}')

  try:
    with open(path) as file:
      return json.load(file)

  except (OSError, json.JSONDecodeError) as e:
    raise IoFailure(f'Could not read SCM from {path}: {e}') from e


def load_scm(path: Paths) -> Scm:
  return scm_from_dict(read_document(path))
