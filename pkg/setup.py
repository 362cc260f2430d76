from setuptools import setup, find_packages

with open('requirements.txt') as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith('pytest')]

setup(
    name='lfrefract',
    version='0.3.0',
    description='Refracted vs Lambertian feature distinguisher for 4D light fields',
    packages=find_packages(include=['lfrefract', 'lfrefract.*']),
    install_requires=requirements,
    entry_points={'console_scripts': ['lfrefract=lfrefract.cli:main']},
    python_requires='>=3.9',
)
