"""Installation details for the fxrl package"""
from setuptools import setup

setup(
    name='fxrl',
    version='0.1.0',
    packages=['fxrl'],
    url='',
    license='',
    description='Friction-aware reinforcement learning lab for Forex',
    install_requires=['numpy>=1.24', 'pandas>=2.0', 'scipy>=1.10',
                      'matplotlib>=3.7', 'PyYAML>=6.0', 'gymnasium>=0.29'],
    entry_points={'console_scripts': ['fxrl=fxrl.cli:main']},
)
