# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Path setup --------------------------------------------------------------

import os
import sys

sys.path.insert(0, os.path.abspath('../'))

import semsec

# -- Project information -----------------------------------------------------

project = 'semsec'
copyright = '2024, the semsec developers'
author = 'the semsec developers'
version = str(semsec.__version__)

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.napoleon',
    'sphinx.ext.autosummary',
    'sphinx_copybutton',
]

templates_path = ['_templates']

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']


# -- Options for HTML output -------------------------------------------------

html_theme = 'furo'

napoleon_google_docstring = False
napoleon_use_ivar = True
napoleon_use_admonition_for_examples = True

copybutton_prompt_text = ">>> "

autodoc_typehints = "none"
