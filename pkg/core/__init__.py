# ssep-lab core: lattice spectra, particle simulation, Gaussian limit and CLT harness
