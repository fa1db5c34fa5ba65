# Sphinx configuration for the jpegxs_uep documentation.
import os
import sys

sys.path.insert(0, os.path.abspath(".."))

# docs builds must not touch a database file
os.environ.setdefault("JPEGXS_UEP_DATABASE_URL", "sqlite://")
os.environ.setdefault("JPEGXS_UEP_AUTO_CREATE_TABLES", "false")

project = "JPEG-XS unequal error protection"
copyright = "2025, NewJerseyStyle"
author = "NewJerseyStyle"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_rtd_theme",
    "myst_parser",
]

napoleon_google_docstring = True
napoleon_numpy_docstring = False
autodoc_member_order = "bysource"
autodoc_typehints = "description"

exclude_patterns = ["_build"]

html_theme = "sphinx_rtd_theme"
html_title = project
