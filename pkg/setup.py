from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="action-forecast",
    version="0.1.0",
    description="Anticipating future activities from partially observed videos",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=find_packages(include=["actionforecast*"]),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.9",
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "pandas>=1.4",
        "matplotlib>=3.5",
        "click>=8.0",
        "pillow",
    ],
    entry_points={"console_scripts": ["actionforecast=actionforecast.cli:main"]},
    keywords="action anticipation activity forecasting rnn cnn",
)
