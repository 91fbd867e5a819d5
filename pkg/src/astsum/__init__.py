"""AST-structured code summarization with relation-masked multi-head attention."""

__version__ = "0.1.0"

from .ast_core import Ast, AstNode, ast_from_json, ast_to_json, parse_minilang, parse_source, tokenize_minilang
from .config import ModelConfig, RunConfig
from .linearize import POT, SBT, LinearSeq, linearize
from .relations import NONE, ancestor_matrix, build_head_masks, sibling_matrix

__all__ = [
    "Ast", "AstNode", "ast_from_json", "ast_to_json", "parse_minilang", "parse_source", "tokenize_minilang",
    "ModelConfig", "RunConfig", "POT", "SBT", "LinearSeq", "linearize",
    "NONE", "ancestor_matrix", "build_head_masks", "sibling_matrix",
]
