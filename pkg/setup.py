from setuptools import setup


setup(name='spectralrank',
      version='0.3.0',
      description='Spectral against Euclidean gradient steps, decided by '
                  'stable and nuclear ranks',
      license='GPLv3',
      classifiers=['Development Status :: 3 - Alpha',
                   'Environment :: Console',
                   'License :: OSI Approved :: GNU General Public License v3 (GPLv3)',
                   'Natural Language :: English',
                   'Operating System :: OS Independent',
                   'Programming Language :: Python :: 3 :: Only',
                   'Intended Audience :: Science/Research',
                   'Topic :: Scientific/Engineering :: Mathematics'],
      keywords='optimization spectral gradient stable rank',
      packages=['spectralrank', ],
      install_requires=['numpy>=1.20', 'scipy>=1.7'],
      scripts=["scripts/spectralrank", ])
