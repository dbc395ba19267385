from __future__ import annotations

from .graph import CausalGraph, Node, node_key, topological_order, validate_order
from .vector import Layout, StructuredVector
from .model import Antecedent, Scm, ScmCheck, ValidationReport, signature_mismatches, validate_scm
from .spec import load_scm, read_document, save_scm, scm_from_dict, scm_to_dict
from .compat import get_column_name, get_node_label, parse_column_name
