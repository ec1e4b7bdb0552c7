#pragma once

#include <vector>

#include "qfm/feature_map.hpp"

namespace qfm {

/// All 2^N eigenvalues of the composite block generator sum_m w_m sigma^m / 2:
/// the signed sums sum_m (+-w_m/2), sorted ascending, duplicates retained.
RVector composite_eigenvalues(const EncodingBlock& block, const RVector& theta_f);

/// Pairwise positive differences of the eigenvalues, deduplicated within
/// `dedup_tol` and sorted ascending. This is the frequency set the model can
/// express on the block's feature dimension.
RVector spectral_gaps(const RVector& eigenvalues, double dedup_tol = 1e-9);

struct DftSpectrum {
    RVector omega;     // angular frequencies, one-sided from 0
    RVector magnitude; // amplitude-normalised: a unit cosine peaks at ~1
};

/// Discrete Fourier transform of samples on a uniform grid. The grid is
/// treated as one period of span = xs.back() - xs.front(), so bin k sits at
/// omega = 2*pi*k / span; the duplicated endpoint sample is dropped.
DftSpectrum dft_spectrum(const RVector& xs, const RVector& ys);

struct SpectralPeak {
    double omega = 0.0;
    double magnitude = 0.0;
};

/// Local maxima of the magnitude spectrum at or above
/// rel_threshold * max(magnitude).
std::vector<SpectralPeak> spectral_peaks(const DftSpectrum& spectrum,
                                         double rel_threshold = 0.05);

enum class SpectrumMode { qnn_gaps, kernel_eigenvalues };

struct SpectrumReport {
    SpectrumMode mode = SpectrumMode::qnn_gaps;
    RVector eigenvalues;
    RVector frequencies; // gaps in qnn_gaps mode, eigenvalues in kernel mode
};

SpectrumReport make_spectrum_report(const EncodingBlock& block, const RVector& theta_f,
                                    SpectrumMode mode, double dedup_tol = 1e-9);

} // namespace qfm
