from setuptools import setup, find_packages

setup(
    name="structpol",
    version="0.1.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    python_requires=">=3.9",
    install_requires=[
        "click>=8.0.0",
        "numpy>=1.22",
        "Pillow",
        "pydantic>=2",
        "python-dotenv",
        "scipy>=1.8",
    ],
    extras_require={
        "test": ["pytest>=7"],
    },
    entry_points={
        "console_scripts": [
            "structpol=structpol.cli:main",
        ],
    },
)
