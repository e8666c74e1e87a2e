from setuptools import setup

setup(
    name='pybnl',
    version='0.1.0',
    packages=['pybnl', 'pybnl.apps', 'pybnl.tests'],
    package_data={'pybnl.apps': ['bnl.ini']},
    license='LICENSE',
    description='Bearing-based network localisation by randomised gossip: rigidity, spectral bounds and simulation',
    python_requires='>=3.8',
    install_requires=[
        "joblib",
        "numpy",
        "pandas",
        "pip",
        "pytest",
        "scipy",
        "setuptools",
        "tqdm"
    ],
    entry_points={
        'console_scripts': ['bnl=pybnl.apps.bnl:main'],
    },
)
