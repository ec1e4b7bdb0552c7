#include "qfm/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qfm {

RVector composite_eigenvalues(const EncodingBlock& block, const RVector& theta_f) {
    const int n = static_cast<int>(block.gamma.size());
    if (n < 1 || n > kDefaultQubitCap) {
        throw capacity_error("block qubit count out of range: " + std::to_string(n));
    }
    const RVector w = block_weights(block, theta_f);
    const Eigen::Index count = Eigen::Index{1} << n;
    RVector eigs(count);
    for (Eigen::Index bits = 0; bits < count; ++bits) {
        double acc = 0.0;
        for (int m = 0; m < n; ++m) {
            acc += ((bits >> m) & 1) ? 0.5 * w[m] : -0.5 * w[m];
        }
        eigs[bits] = acc;
    }
    std::sort(eigs.data(), eigs.data() + eigs.size());
    return eigs;
}

RVector spectral_gaps(const RVector& eigenvalues, double dedup_tol) {
    std::vector<double> diffs;
    diffs.reserve(static_cast<std::size_t>(eigenvalues.size() * eigenvalues.size()) / 2);
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
        for (Eigen::Index j = i + 1; j < eigenvalues.size(); ++j) {
            const double d = std::abs(eigenvalues[j] - eigenvalues[i]);
            if (d > dedup_tol) diffs.push_back(d);
        }
    }
    std::sort(diffs.begin(), diffs.end());
    RVector gaps(static_cast<Eigen::Index>(diffs.size()));
    Eigen::Index out = 0;
    for (double d : diffs) {
        if (out == 0 || d - gaps[out - 1] > dedup_tol) {
            gaps[out++] = d;
        }
    }
    gaps.conservativeResize(out);
    return gaps;
}

DftSpectrum dft_spectrum(const RVector& xs, const RVector& ys) {
    if (xs.size() != ys.size()) {
        throw input_error("dft_spectrum needs matching xs/ys lengths");
    }
    if (xs.size() < 2) {
        throw input_error("dft_spectrum needs at least two samples");
    }
    const Eigen::Index n = xs.size();
    const double span = xs[n - 1] - xs[0];
    if (span <= 0.0) {
        throw input_error("dft_spectrum needs increasing sample positions");
    }
    const double dx = span / static_cast<double>(n - 1);
    for (Eigen::Index i = 1; i < n; ++i) {
        if (std::abs((xs[i] - xs[i - 1]) - dx) > 1e-9 * std::max(1.0, std::abs(span))) {
            throw input_error("dft_spectrum requires a uniform grid");
        }
    }

    // The last sample duplicates the first under span-periodic extension.
    const Eigen::Index m = n - 1;
    const Eigen::Index half = m / 2;
    DftSpectrum out;
    out.omega.resize(half + 1);
    out.magnitude.resize(half + 1);
    const double base = 2.0 * std::numbers::pi / span;
    for (Eigen::Index k = 0; k <= half; ++k) {
        double re = 0.0;
        double im = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double phase = base * static_cast<double>(k) * (xs[j] - xs[0]);
            re += ys[j] * std::cos(phase);
            im -= ys[j] * std::sin(phase);
        }
        const bool shared_bin = (k == 0) || (2 * k == m);
        const double scale = (shared_bin ? 1.0 : 2.0) / static_cast<double>(m);
        out.omega[k] = base * static_cast<double>(k);
        out.magnitude[k] = scale * std::hypot(re, im);
    }
    return out;
}

std::vector<SpectralPeak> spectral_peaks(const DftSpectrum& spectrum, double rel_threshold) {
    const Eigen::Index n = spectrum.magnitude.size();
    std::vector<SpectralPeak> peaks;
    if (n == 0) return peaks;
    const double cutoff = rel_threshold * spectrum.magnitude.maxCoeff();
    for (Eigen::Index k = 0; k < n; ++k) {
        const double mag = spectrum.magnitude[k];
        if (mag < cutoff) continue;
        const bool left_ok = (k == 0) || (spectrum.magnitude[k - 1] <= mag);
        const bool right_ok = (k == n - 1) || (spectrum.magnitude[k + 1] < mag);
        if (left_ok && right_ok) {
            peaks.push_back({spectrum.omega[k], mag});
        }
    }
    return peaks;
}

SpectrumReport make_spectrum_report(const EncodingBlock& block, const RVector& theta_f,
                                    SpectrumMode mode, double dedup_tol) {
    SpectrumReport report;
    report.mode = mode;
    report.eigenvalues = composite_eigenvalues(block, theta_f);
    report.frequencies = (mode == SpectrumMode::qnn_gaps)
                             ? spectral_gaps(report.eigenvalues, dedup_tol)
                             : report.eigenvalues;
    return report;
}

} // namespace qfm
