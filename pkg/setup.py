from setuptools import setup, find_packages

setup(
    name="pairfair",
    version="0.1.0",
    packages=find_packages(exclude=["tests"]),
    install_requires=[
        'numpy==1.26.4',
        'pandas==2.2.0',
        'rich==13.7.0',
        'aiohttp==3.9.1',
        'python-dotenv==1.0.0',
        'certifi==2024.2.2',
    ],
    extras_require={
        'test': ['pytest==8.0.0'],
    },
    entry_points={
        'console_scripts': [
            'pairfair=src.pair_fair:main',
        ],
    },
)
