from setuptools import setup, find_packages
from pathlib import Path

# from scm_backtrack import __version__


PKGS: list[str] = list({
  'scm_backtrack',
  'scm_backtrack.scm',
  'scm_backtrack.mechanisms',
  'scm_backtrack.harness',
  *find_packages(exclude=['tests', 'tests.*', 'examples', 'examples.*']),
})

REQS: list[str] = Path('requirements.txt') \
  .read_text() \
  .splitlines()

REQS: list[str] = [
  req
  for req in REQS
  if req.strip() and not req.strip().startswith('#')
]

README: str = Path('README.md').read_text()


setup(
  name="scm_backtrack",
  version='0.1.0',
  description="↩️ Backtracking counterfactuals in structural causal models.",
  long_description=README,
  long_description_content_type="text/markdown",
  license="AGPL-3.0",
  packages=PKGS,
  zip_safe=True,
  install_requires=REQS,
  python_requires='>=3.10',
  entry_points={
    'console_scripts': [
      'scm-backtrack = scm_backtrack.harness.cli:main',
    ],
  },
)
