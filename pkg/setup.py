#!/usr/bin/env python3
"""
carsel setup script - package metadata and the `carsel` console command
"""

import os

from setuptools import find_packages, setup

HERE = os.path.dirname(os.path.abspath(__file__))


def read_requirements():
    """Runtime requirements; the test runner stays out of install_requires"""
    with open(os.path.join(HERE, 'requirements.txt'), encoding='utf-8') as handle:
        lines = [line.strip() for line in handle]
    return [line for line in lines if line and not line.startswith(('#', 'pytest'))]


def read_version():
    about = {}
    with open(os.path.join(HERE, 'carsel', '__init__.py'), encoding='utf-8') as handle:
        exec(handle.read(), about)
    return about['__version__']


setup(
    name='carsel',
    version=read_version(),
    description='Shrinkage correlation-adjusted (CAR/CAT) marker scores for SNP selection',
    long_description=open(os.path.join(HERE, 'README.md'), encoding='utf-8').read(),
    long_description_content_type='text/markdown',
    python_requires='>=3.8',
    packages=find_packages(include=('carsel', 'carsel.*')),
    py_modules=['app'],
    install_requires=read_requirements(),
    extras_require={'test': ['pytest>=7.4.0']},
    entry_points={'console_scripts': ['carsel=app:main']},
)
