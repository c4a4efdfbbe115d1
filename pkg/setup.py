from setuptools import find_packages, setup

setup(
    name="mrtsim",  # Required
    version="0.1.0",  # Required
    description="Micro-randomized trial engine, fault-injecting simulator and analysis pipeline",
    classifiers=[  # Optional
        # How mature is this project? Common values are
        #   3 - Alpha
        #   4 - Beta
        #   5 - Production/Stable
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
    ],
    packages=find_packages(exclude=["contrib", "docs", "tests"]),  # Required
    python_requires=">=3.9",
    install_requires=["numpy>=1.22", "scipy>=1.8", "pandas>=1.5", "python-dateutil"],
    entry_points={"console_scripts": ["mrtsim=mrtsim.cli:main"]},
)
