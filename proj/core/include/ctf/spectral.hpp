#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace ctf::spectral {

using Complex = std::complex<double>;

/// |X_k| for k = 0..n/2 of a length-n real sequence.
struct AmplitudeSpectrum {
  std::size_t n = 0;
  std::vector<double> amplitudes;
  double sample_rate = 1.0;  // samples per time unit

  double frequency(std::size_t bin) const {
    return static_cast<double>(bin) * sample_rate / static_cast<double>(n);
  }
  double nyquist() const { return sample_rate / 2.0; }
};

/// Half-open frequency band [lo, hi) in cycles per time unit. A band whose
/// upper edge reaches the Nyquist frequency also includes the Nyquist bin.
struct Band {
  double lo = 0.0;
  double hi = 0.0;
};

// The three bands used for frequency-bias reporting (cycles per sample).
inline constexpr Band kLowBand{0.00, 0.10};
inline constexpr Band kMidBand{0.10, 0.25};
inline constexpr Band kHighBand{0.25, 0.50};

inline constexpr double kDefaultKappa = 4.0;

bool is_power_of_two(std::size_t n);
std::size_t next_power_of_two(std::size_t n);

// Iterative radix-2 Cooley-Tukey. Inputs of non-power-of-two length are
// zero-padded, so the result has next_power_of_two(n) bins.
std::vector<Complex> fft(std::span<const double> x);
std::vector<Complex> fft_complex(std::vector<Complex> x, bool inverse = false);
// Unnormalized inverse is scaled by 1/n so that ifft(fft(x)) == x.
std::vector<Complex> ifft(std::vector<Complex> spectrum);

// O(n^2) reference DFT at the exact input length.
std::vector<Complex> naive_dft(std::span<const double> x);

// Exact-length DFT: radix-2 FFT when n is a power of two, naive DFT otherwise.
std::vector<Complex> exact_dft(std::span<const double> x);

std::vector<double> zero_centered(std::span<const double> x);

AmplitudeSpectrum amplitude_spectrum(std::span<const double> x, double sample_rate = 1.0);

/// Strongest non-DC bin of an amplitude spectrum when its amplitude is at
/// least kappa times the mean of the remaining non-DC bins.
std::optional<std::size_t> dominant_bin(const AmplitudeSpectrum& spectrum, double kappa);

/// Zero-centers x, then applies dominant_bin to its exact-length spectrum.
std::optional<std::size_t> dominant_frequency(std::span<const double> x,
                                              double kappa = kDefaultKappa);

// Plain argmax over bins 1..n/2 (no strength test); nullopt for an all-zero
// spectrum.
std::optional<std::size_t> argmax_bin(const AmplitudeSpectrum& spectrum);

double band_rmse(const AmplitudeSpectrum& pred, const AmplitudeSpectrum& truth, Band band);

struct DistortionReport {
  std::size_t n = 0;
  std::size_t factor = 1;
  std::vector<double> original_amplitude;
  std::vector<double> interpolated_amplitude;
  std::vector<double> attenuation;  // |X~_k| / |X_k|, 1 where |X_k| is ~0
  std::vector<double> phase_delay;  // angle(X~_k) - angle(X_k) wrapped to (-pi, pi]
  std::vector<double> sinc2_reference;  // closed-form reference curve only
};

// Keeps every r-th sample of x and linearly interpolates back to the fine
// grid; positions after the last kept sample hold its value.
std::vector<double> subsample_and_interpolate(std::span<const double> x, std::size_t r);

DistortionReport interp_distortion_report(std::span<const double> x, std::size_t r);

double wrap_phase(double phi);

}  // namespace ctf::spectral
