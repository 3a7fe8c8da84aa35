# type: ignore
# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import re
import sys

# -- Path setup --------------------------------------------------------------
sys.path.insert(0, os.path.abspath("../.."))


# -- Project information -----------------------------------------------------

project = "eqaug"
copyright = "2022, Zeta labs"
author = "Zeta labs"

# The full version, including alpha/beta/rc tags

version = ""
with open("../../eqaug/__init__.py", encoding="utf-8") as f:
    version = re.search(
        r'^__version__\s*=\s*[\'"]([^\'"]*)[\'"]', f.read(), re.MULTILINE
    ).group(1)

release = version

extlinks = {
    "issue": ("https://github.com/Zeta-Labs-HQ/eqaug/issues/%s", "issue %s"),
}


# -- General configuration ---------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.extlinks",
    "sphinx.ext.intersphinx",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
]

# Links used for cross-referencing stuff
intersphinx_mapping = {
    "py": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}

templates_path = ["_templates"]

exclude_patterns = ["_build"]

master_doc = "index"


# -- Options for HTML output -------------------------------------------------

html_theme = "basic"

pygments_style = "friendly"

html_copy_source = False

# Autodoc options
autodoc_member_order = "bysource"
autodoc_typehints = "none"
autodoc_default_options = {
    "members": True,
    "show-inheritance": True,
}

autodoc_typehints_format = "short"
