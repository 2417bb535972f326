from setuptools import setup, find_packages

# Read long description from README.md
with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    name="engagedetector",
    version="1.0.0",
    description="Detect the intention of engagement with a companion robot from lidar, skeleton, face and audio streams",
    long_description=long_description,
    long_description_content_type="text/markdown",
    license="MIT",
    packages=find_packages(include=["engagedetector", "engagedetector.*"]),
    python_requires=">=3.8",
    install_requires=[
        "numpy>=1.23",
        "scipy>=1.9",
        "pandas>=1.5",
        "scikit-learn>=1.2",
        "packaging>=23.0",
    ],
    extras_require={
        "dev": [
            "build>=0.10.0",
            "flake8>=6.0.0",
            "pytest>=7.3.1",
        ],
    },
    entry_points={
        "console_scripts": [
            "engagedetector=engagedetector.main:main",
        ],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "License :: OSI Approved :: MIT License",
        "Operating System :: POSIX :: Linux",
    ],
    keywords="human-robot interaction, engagement, lidar, multimodal fusion, mrmr, svm",
)
