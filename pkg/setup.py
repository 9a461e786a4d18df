import os
import setuptools


def read(filename):
    with open(os.path.join(os.path.dirname(__file__), filename)) as file:
        content = file.read()
    return content


setuptools.setup(
    name="diaopt",
    version=read("VERSION").strip(),
    description="Optimal deferred income annuity purchases over the "
    "lifecycle",
    long_description=read("README.rst"),
    long_description_content_type="text/x-rst",
    author="diaopt developers",
    url="",
    packages=setuptools.find_packages(exclude=("tests", "docs")),
    license="BSD",
    keywords=[
        "annuity",
        "retirement",
        "stochastic control",
        "HJB equation",
        "finite differences",
        "Monte Carlo",
    ],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "License :: OSI Approved :: BSD License",
        "Operating System :: OS Independent",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Financial and Insurance Industry",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Development Status :: 3 - Alpha",
    ],
    install_requires=[
        "numpy",
        "scipy>=1.6",
        "pandas>=1.5",
    ],
    extras_require={
        "dev": [
            "prospector",
            "pyroma",
            "bandit",
            "black",
        ],
        "docs": [
            "sphinx",
            "sphinx-rtd-theme",
            "sphinx_multiversion",
        ],
        "deployment": [
            "build",
            "twine",
        ],
    },
    entry_points={
        "console_scripts": [
            "diaopt = diaopt.cli:main",
        ],
    },
    python_requires=">=3.8",
    include_package_data=True,
)
